import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from lfi_lab.estimators import (
    CountTable,
    NadarayaWatsonLikelihood,
    WeightedParticles,
    kernel_posterior_expectation,
    mle_expectation,
    mle_posterior,
    weighted_expectation,
)
from lfi_lab.exceptions import DegenerateEstimateError, UndefinedLikelihoodError, ZeroTotalWeightError
from lfi_lab.problems import TargetFunction, laplace_problem, linear_problem, two_param_problem
from lfi_lab.samplers import rejection_sampling

X = TargetFunction.column()


def test_weighted_expectation_examples():
    assert weighted_expectation(WeightedParticles([1.0, 3.0], [1, 1], [True, True]), X) == 2
    assert weighted_expectation(WeightedParticles([1.0, 0.0], [3, 1], [True, True]), X) == 0.75
    with pytest.raises(ZeroTotalWeightError):
        weighted_expectation(WeightedParticles([1.0, 0.0], [0, 0], [False, False]), X)


def test_weighted_expectation_vector_target():
    p = WeightedParticles([[1.0, 2.0], [3.0, 4.0]], [1, 3], [True, True])
    f = TargetFunction(lambda t: t, label="identity")
    np.testing.assert_allclose(weighted_expectation(p, f), [2.5, 3.5])


def test_rejected_particles_must_have_zero_weight():
    with pytest.raises(ValueError):
        WeightedParticles([1.0], [1.0], [False])
    with pytest.raises(ValueError):
        WeightedParticles([1.0], [-1.0], [True])


def test_rejection_estimates_are_unbiased_enough():
    pr = two_param_problem()
    f = TargetFunction.equals(1.0)
    rng = np.random.default_rng(11)
    est = [weighted_expectation(rejection_sampling(pr, 1000, rng), f) for _ in range(1000)]
    assert abs(np.mean(est) - 6 / 7) <= 3 * math.sqrt(0.00064)
    # random splits: asymptotic variance fbar (1 - fbar) / (N p(x*))
    assert np.var(est) == pytest.approx((6 / 7) * (1 / 7) / (1000 * 0.175), rel=0.15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=20), st.floats(1e-3, 1e3))
def test_weighted_expectation_weight_scaling(w, c):
    theta = np.arange(len(w), dtype=float)
    a = weighted_expectation(WeightedParticles(theta, w, np.ones(len(w), bool)), X)
    b = weighted_expectation(WeightedParticles(theta, np.multiply(w, c), np.ones(len(w), bool)), X)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-12)
    assert theta.min() - 1e-9 <= a <= theta.max() + 1e-9


def test_csv_round_trip(tmp_path):
    p = WeightedParticles([[1.0, 2.0], [0.1, 1e-17]], [0.25, 0.0], [True, False], [2, 3], [0.5, 7.0])
    p.to_csv(tmp_path / "p.csv")
    back = WeightedParticles.from_csv(tmp_path / "p.csv")
    for name in ("theta", "weight", "accepted", "round", "discrepancy"):
        np.testing.assert_array_equal(getattr(back, name), getattr(p, name))
    q = WeightedParticles([1.5, 2.5], [1.0, 2.0], [True, True])
    q.to_csv(tmp_path / "q.csv")
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "theta,weight,round,accepted"
    np.testing.assert_array_equal(WeightedParticles.from_csv(tmp_path / "q.csv").theta, q.theta)


def test_concat():
    a = WeightedParticles([1.0], [1.0], [True], [0])
    b = WeightedParticles([2.0, 3.0], [0.0, 2.0], [False, True], [1, 1])
    c = WeightedParticles.concat([a, b])
    assert len(c) == 3 and c.n_accepted == 2 and c.total_weight == 3.0
    np.testing.assert_array_equal(c.round, [0, 1, 1])


def test_mle_posterior_examples():
    pr = two_param_problem()
    np.testing.assert_allclose(mle_posterior(CountTable([10, 10], [3, 0]), pr), [1, 0])
    np.testing.assert_allclose(mle_posterior(CountTable([10, 10], [10, 10]), pr), [0.5, 0.5])
    np.testing.assert_allclose(mle_posterior(CountTable([100, 100], [30, 5]), pr), [6 / 7, 1 / 7])
    assert mle_expectation(CountTable([100, 100], [30, 5]), pr, TargetFunction.equals(1.0)) == pytest.approx(6 / 7)


def test_mle_posterior_errors():
    pr = two_param_problem()
    with pytest.raises(UndefinedLikelihoodError):
        mle_posterior(CountTable([10, 0], [3, 0]), pr)
    with pytest.raises(DegenerateEstimateError):
        mle_posterior(CountTable([10, 10], [0, 0]), pr)
    with pytest.raises(ValueError):
        CountTable([1, 1], [2, 0])


def test_nadaraya_watson_basics():
    x = np.linspace(0, 1, 200)
    y = (x > 0.5).astype(float)
    m = NadarayaWatsonLikelihood(bandwidth=0.02).fit(x, y)
    pred = m.predict(np.array([0.1, 0.5, 0.9]))
    np.testing.assert_allclose(pred, [0, 0.5, 1], atol=1e-3)
    assert clone(m).get_params() == {"bandwidth": 0.02}
    assert NadarayaWatsonLikelihood().fit(x, y).bandwidth_ == pytest.approx(200**-0.5)
    with pytest.raises(ValueError):
        NadarayaWatsonLikelihood(bandwidth=-1.0).fit(x, y)
    with pytest.raises(ValueError):
        NadarayaWatsonLikelihood().fit(np.ones((3, 2)), [0, 1, 0])


def test_nadaraya_watson_far_from_data_does_not_underflow():
    m = NadarayaWatsonLikelihood(bandwidth=1e-3).fit([0.0, 0.001], [1.0, 0.0])
    pred, bad = m.predict_with_flags(np.array([50.0]))
    assert not bad.any() and pred[0] == pytest.approx(0.0, abs=1e-12)


def test_kernel_estimate_constant_target():
    rng = np.random.default_rng(3)
    pr = laplace_problem()
    theta = pr.sample_prior(rng, 300)
    p = WeightedParticles(theta, np.ones(300), np.ones(300, bool))
    assert kernel_posterior_expectation(p, pr, TargetFunction.constant(2.5)) == pytest.approx(2.5)
    # every simulation accepted: the likelihood estimate is flat and the prior mean comes back
    assert kernel_posterior_expectation(p, pr, X) == pytest.approx(10.0, rel=1e-8)


def test_kernel_estimate_is_consistent():
    pr = linear_problem()
    rng = np.random.default_rng(4)
    theta = pr.sample_prior(rng, 4000)
    acc = rng.random(4000) < theta[:, 0]
    p = WeightedParticles(theta, acc.astype(float), acc)
    value, info = kernel_posterior_expectation(p, pr, X, return_info=True)
    assert info.converged and info.n_underflow == 0
    assert value == pytest.approx(2 / 3, abs=0.02)


def test_kernel_estimate_rejects_bad_input():
    pr = laplace_problem()
    with pytest.raises(ZeroTotalWeightError):
        kernel_posterior_expectation(WeightedParticles([0.0, 1.0], [0, 0], [False, False]), pr, X)
