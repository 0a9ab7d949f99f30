import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from lfi_lab.exceptions import DegenerateProblemError, DomainError
from lfi_lab.problems import (
    Component,
    ContinuousProblem,
    DiscreteProblem,
    GaussianFactor,
    LaplaceFactor,
    TargetFunction,
    discrete_gaussian_problem,
    evidence,
    exact_posterior,
    laplace_problem,
    linear_problem,
    load_problem,
    model_posterior,
    model_selection_problem,
    posterior_expectation,
    problem_from_dict,
    simulate,
    ten_point_problem,
    two_param_problem,
)

probs = st.floats(0.01, 1.0)


def test_two_param_posterior():
    np.testing.assert_allclose(exact_posterior(two_param_problem()), [6 / 7, 1 / 7], rtol=1e-12)


def test_flat_likelihood_returns_prior():
    pr = DiscreteProblem([0.2, 0.3, 0.5], [0.4, 0.4, 0.4], [0, 1, 2])
    np.testing.assert_allclose(exact_posterior(pr), pr.prior)


def test_gaussian_grid_posterior():
    grid = np.linspace(-5, 5, 101)
    w = np.exp(-grid**2 / 2)
    np.testing.assert_allclose(exact_posterior(discrete_gaussian_problem()), w / w.sum(), rtol=1e-12)


def test_zero_evidence_is_degenerate():
    with pytest.raises(DegenerateProblemError):
        exact_posterior(DiscreteProblem([1.0, 0.0], [0.0, 0.5], [0, 1]))
    with pytest.raises(ValueError):
        DiscreteProblem([0.5, 0.5], [0.0, 0.0], [0, 1])


def test_invalid_prior_rejected():
    with pytest.raises(ValueError):
        DiscreteProblem([0.5, 0.6], [0.1, 0.1], [0, 1])
    with pytest.raises(ValueError):
        DiscreteProblem([0.5, 0.5], [0.1, 1.1], [0, 1])


def test_posterior_expectations():
    assert posterior_expectation(two_param_problem(), TargetFunction.equals(1.0)) == pytest.approx(6 / 7)
    assert posterior_expectation(two_param_problem(), TargetFunction.constant(3.5)) == pytest.approx(3.5)
    assert posterior_expectation(ten_point_problem(), TargetFunction.column()) == pytest.approx(5.5, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 1), probs), min_size=2, max_size=6))
def test_posterior_is_distribution(pairs):
    w = np.array([a for a, _ in pairs])
    pr = DiscreteProblem(w / w.sum(), [p for _, p in pairs], np.arange(len(pairs)))
    post = exact_posterior(pr)
    assert post.sum() == pytest.approx(1.0)
    assert np.all(post >= 0)
    # likelihood scaling leaves the posterior unchanged
    scaled = DiscreteProblem(pr.prior, pr.likelihood * 0.5, pr.values)
    np.testing.assert_allclose(exact_posterior(scaled), post, rtol=1e-12)


def test_problem_arrays_are_read_only():
    pr = two_param_problem()
    with pytest.raises(ValueError):
        pr.prior[0] = 1.0


@pytest.mark.parametrize("p, expect", [(1.0, True), (0.0, False)])
def test_simulate_certain_events(p, expect):
    pr = DiscreteProblem([0.5, 0.5], [p, 0.5], [0, 1])
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert bool(simulate(pr, 0, rng).accepted) is expect


def test_simulate_acceptance_rate():
    pr = DiscreteProblem([1.0], [0.3], [0])
    out = simulate(pr, np.zeros(10**5, dtype=int), np.random.default_rng(2))
    assert np.mean(out.accepted) == pytest.approx(0.3, abs=0.005)


def test_simulate_reproducible():
    pr = laplace_problem()
    theta = np.linspace(-30, 50, 200)
    a = simulate(pr, theta, np.random.default_rng(5)).accepted
    b = simulate(pr, theta, np.random.default_rng(5)).accepted
    np.testing.assert_array_equal(a, b)


def test_simulate_outside_support():
    with pytest.raises(DomainError):
        simulate(laplace_problem(), np.array([100.0]), np.random.default_rng(0))
    with pytest.raises(DomainError):
        simulate(two_param_problem(), 5, np.random.default_rng(0))


def test_laplace_oracles():
    pr = laplace_problem()
    z = integrate.quad(lambda t: 0.01 * math.exp(-abs(t)), -40, 60, points=[0])[0]
    assert evidence(pr) == pytest.approx(z, rel=1e-8)
    m = integrate.quad(lambda t: 0.01 * t * math.exp(-abs(t)), -40, 60, points=[0])[0] / z
    assert posterior_expectation(pr, TargetFunction.column()) == pytest.approx(m, abs=1e-9)


def test_linear_oracle():
    pr = linear_problem()
    assert posterior_expectation(pr, TargetFunction.column()) == pytest.approx(2 / 3, rel=1e-8)


def test_model_selection_posterior():
    p = model_posterior(model_selection_problem())
    assert p.sum() == pytest.approx(1.0)
    assert p[0] == pytest.approx(0.9089, abs=5e-4)
    f = TargetFunction.equals(1.0, 0)
    assert posterior_expectation(model_selection_problem(), f) == pytest.approx(p[0], abs=1e-9)


def test_model_labels_are_one_based():
    pr = model_selection_problem()
    rows = pr.sample_prior(np.random.default_rng(0), 1000)
    assert set(np.unique(rows[:, 0])) == {1.0, 2.0}
    assert np.all(pr.in_support(rows))


def test_continuous_prior_density_integrates_to_one():
    pr = laplace_problem()
    assert integrate.quad(lambda t: pr.prior_density(np.array([t]))[0], -40, 60)[0] == pytest.approx(1.0)


def test_round_trip_json(tmp_path):
    for pr in (two_param_problem(), laplace_problem(), model_selection_problem()):
        path = tmp_path / "p.json"
        path.write_text(json.dumps(pr.to_dict()))
        back = load_problem(path)
        assert back.to_dict() == pr.to_dict()
        assert problem_from_dict(pr.to_dict()).to_dict() == pr.to_dict()


def test_custom_continuous_problem():
    comp = Component(bounds=[(-5.0, 5.0)], likelihood=[GaussianFactor(0.0, 1.0)])
    pr = ContinuousProblem([comp])
    assert evidence(pr) == pytest.approx(math.sqrt(2 * math.pi) * 0.1, rel=1e-6)
    assert posterior_expectation(pr, TargetFunction.power(0, 2)) == pytest.approx(1.0, rel=1e-4)


def test_laplace_factor_breakpoint():
    assert 0.0 in tuple(LaplaceFactor(0.0, 1.0).breakpoints)
