import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lfi_lab.allocation import (
    AllocationKind,
    AllocationPlan,
    adaptive_allocate,
    delta_method_variance,
    estimate_variance,
    integerize,
    optimal_proportions,
)
from lfi_lab.estimators import CountTable, mle_expectation
from lfi_lab.exceptions import (
    DegenerateTargetError,
    InfeasibleAllocationError,
    UndefinedLikelihoodError,
)
from lfi_lab.problems import DiscreteProblem, TargetFunction, posterior_expectation, ten_point_problem, two_param_problem

IND = TargetFunction.equals(1.0)
N1_OPT = math.sqrt(0.05 * 0.7) / (math.sqrt(0.05 * 0.7) + math.sqrt(0.3 * 0.95))


def test_delta_method_examples():
    pr = two_param_problem()
    assert delta_method_variance(pr, IND, [500, 500]) * 1000 == pytest.approx(0.6397, abs=1e-4)
    n1 = 0.2595
    assert delta_method_variance(pr, IND, [n1 * 1000, (1 - n1) * 1000]) * 1000 == pytest.approx(0.5196, abs=1e-4)
    assert delta_method_variance(pr, TargetFunction.constant(2.0), [500, 500]) == 0
    assert delta_method_variance(pr, IND, AllocationPlan([1000, 0], 1000)) == math.inf


def test_optimal_proportion_examples():
    pr = two_param_problem()
    assert optimal_proportions(pr, AllocationKind.mse_optimal(IND))[0] == pytest.approx(N1_OPT, abs=1e-12)
    assert N1_OPT == pytest.approx(0.2595, abs=1e-4)
    assert optimal_proportions(pr, AllocationKind.ESS_OPTIMAL)[0] == pytest.approx(0.7100, abs=5e-4)
    assert optimal_proportions(pr, AllocationKind.INVERSE_BINOMIAL)[0] == pytest.approx(0.1429, abs=1e-4)
    np.testing.assert_allclose(optimal_proportions(pr, AllocationKind.POSTERIOR), [6 / 7, 1 / 7])
    np.testing.assert_allclose(optimal_proportions(pr, AllocationKind.UNIFORM), [0.5, 0.5])
    np.testing.assert_allclose(optimal_proportions(pr, AllocationKind.PRIOR), [0.5, 0.5])


def test_optimal_proportion_errors():
    pr = DiscreteProblem([0.5, 0.5], [0.0, 0.4], [1.0, 2.0])
    with pytest.raises(UndefinedLikelihoodError):
        optimal_proportions(pr, AllocationKind.INVERSE_BINOMIAL)
    with pytest.raises(DegenerateTargetError):
        optimal_proportions(two_param_problem(), AllocationKind.mse_optimal(TargetFunction.constant(1.0)))
    with pytest.raises(ValueError):
        AllocationKind("bogus")
    with pytest.raises(ValueError):
        AllocationKind("mse-opt")


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(-5, 5), st.floats(-5, 5))
def test_two_point_optimum_ignores_prior_and_target(prior1, a, b):
    if abs(a - b) < 1e-3:
        return
    pr = DiscreteProblem([prior1, 1 - prior1], [0.3, 0.05], [0.0, 1.0])
    vals = np.array([a, b])
    f = TargetFunction(lambda t: vals[t.astype(int)], depends_on=(0,))
    assert optimal_proportions(pr, AllocationKind.mse_optimal(f))[0] == pytest.approx(N1_OPT, abs=1e-9)


def test_integerize_examples():
    np.testing.assert_array_equal(integerize([0.5, 0.5], 10).counts, [5, 5])
    np.testing.assert_array_equal(integerize([0.2595, 0.7405], 100).counts, [26, 74])
    c = integerize([1 / 3] * 3, 10).counts
    assert c.sum() == 10 and set(c) <= {3, 4}
    np.testing.assert_array_equal(c, [4, 3, 3])  # tie goes to the lowest index
    np.testing.assert_array_equal(integerize([0.0, 1.0], 5, min_count=1).counts, [0, 5])
    np.testing.assert_array_equal(integerize([0.01, 0.99], 10, min_count=2).counts, [2, 8])
    with pytest.raises(InfeasibleAllocationError):
        integerize([0.5, 0.5], 1, min_count=1)
    with pytest.raises(ValueError):
        integerize([0.5, 0.6], 10)


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 12), elements=st.floats(0, 10)), st.integers(0, 10**6))
def test_integerize_properties(w, n):
    if not w.sum() > 0:
        return
    p = w / w.sum()
    c = integerize(p, n).counts
    assert c.sum() == n and np.all(c >= 0)
    assert np.all(np.abs(c - n * p) < 1 + 1e-9)


def test_plan_json_round_trip():
    plan = integerize([0.3, 0.7], 17)
    assert AllocationPlan.from_json(plan.to_json()) == plan
    with pytest.raises(ValueError):
        AllocationPlan([3, 3], 7)


def test_estimate_variance_matches_truth_at_expected_counts():
    pr = DiscreteProblem([0.5, 0.5], [0.3, 0.05], [1.0, 2.0])
    counts = CountTable([100, 200], [30, 10])
    assert estimate_variance(counts, pr, IND) == pytest.approx(delta_method_variance(pr, IND, [100, 200]))


def test_estimate_variance_degenerate():
    var, flag = estimate_variance(CountTable([10, 10], [4, 0]), two_param_problem(), IND, return_flag=True)
    assert var == 0 and flag


def test_adaptive_single_parameter():
    pr = DiscreteProblem([1.0], [0.4], [3.0])
    res = adaptive_allocate(pr, TargetFunction.column(), 64, np.random.default_rng(0), M=2)
    assert res.counts.n.tolist() == [64] and res.estimate == 3.0


def test_adaptive_budget_and_rounds():
    pr = ten_point_problem()
    res = adaptive_allocate(pr, TargetFunction.column(), 1000, np.random.default_rng(1))
    assert res.counts.budget == 1000 and len(res.round_counts) == 16
    assert [int(r.sum()) for r in res.round_counts] == list(np.diff((np.arange(17) * 1000) // 16))
    np.testing.assert_array_equal(res.round_counts[0], integerize(pr.prior, 62).counts)
    with pytest.raises(InfeasibleAllocationError):
        adaptive_allocate(pr, TargetFunction.column(), 100, np.random.default_rng(0))
    with pytest.raises(ValueError):
        adaptive_allocate(pr, TargetFunction.column(), 1000, np.random.default_rng(0), M=1)


def test_adaptive_degenerate_flag():
    pr = DiscreteProblem([0.5, 0.5], [1e-9, 1e-9], [0.0, 1.0])
    res = adaptive_allocate(pr, TargetFunction.column(), 64, np.random.default_rng(0), M=2)
    assert res.degenerate and res.estimate is None


def test_adaptive_reaches_optimum_at_large_budget():
    pr = ten_point_problem()
    f = TargetFunction.column()
    q = optimal_proportions(pr, AllocationKind.mse_optimal(f))
    n = adaptive_allocate(pr, f, 2**18, np.random.default_rng(2)).counts.n / 2**18
    # the central parameters dominate the plan and are learned quickly
    np.testing.assert_allclose(n[2:8], (q[2:8] + 2**-9) / (1 + 10 * 2**-9), rtol=0.1)


def test_adaptive_small_budget_not_worse_than_prior():
    pr = ten_point_problem()
    f = TargetFunction.column()
    truth = posterior_expectation(pr, f)
    rng = np.random.default_rng(3)
    ad, pri = [], []
    plan = integerize(pr.prior, 320).counts
    for _ in range(500):
        r = adaptive_allocate(pr, f, 320, rng)
        if r.estimate is not None:
            ad.append((r.estimate - truth) ** 2)
        pri.append((mle_expectation(CountTable(plan, rng.binomial(plan, pr.likelihood)), pr, f) - truth) ** 2)
    assert np.mean(ad) <= 2 * np.mean(pri)
