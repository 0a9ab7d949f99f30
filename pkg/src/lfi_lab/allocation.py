"""Simulation allocation over discrete parameters.

Asymptotic variances of the plug-in posterior expectation, closed-form
optimal allocations for several scores, integer rounding, and a multi-round
adaptive allocator that learns the optimal split from its own simulations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .estimators import CountTable, mle_expectation
from .exceptions import (
    DegenerateEstimateError,
    DegenerateTargetError,
    InfeasibleAllocationError,
    UndefinedLikelihoodError,
)
from .problems import DiscreteProblem, TargetFunction, exact_posterior, posterior_expectation


@dataclass(frozen=True, eq=False)
class AllocationPlan:
    counts: np.ndarray
    budget: int

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if np.any(c < 0) or int(c.sum()) != int(self.budget):
            raise ValueError("counts must be non-negative and sum to the budget")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "budget", int(self.budget))

    def __eq__(self, other):
        if not isinstance(other, AllocationPlan):
            return NotImplemented
        return self.budget == other.budget and np.array_equal(self.counts, other.counts)

    __hash__ = None

    def to_json(self) -> str:
        return json.dumps({"counts": self.counts.tolist(), "budget": self.budget})

    @classmethod
    def from_json(cls, text: str) -> "AllocationPlan":
        d = json.loads(text)
        return cls(d["counts"], d["budget"])


_TOKENS = ("mse-opt", "ess-opt", "unnorm-opt", "ibs", "prior", "posterior", "uniform")


@dataclass(frozen=True)
class AllocationKind:
    """Which score an allocation optimises.  ``mse-opt`` carries its target function."""

    name: str
    target: TargetFunction | None = None

    def __post_init__(self):
        if self.name not in _TOKENS:
            raise ValueError(f"unknown allocation {self.name!r}; choose from {', '.join(_TOKENS)}")
        if self.name == "mse-opt" and self.target is None:
            raise ValueError("mse-opt needs a target function")

    @classmethod
    def from_token(cls, token: str, target: TargetFunction | None = None) -> "AllocationKind":
        return cls(token, target if token == "mse-opt" else None)

    @classmethod
    def mse_optimal(cls, f):
        return cls("mse-opt", f)

    ESS_OPTIMAL = None  # filled below
    UNNORMALIZED_OPTIMAL = None
    INVERSE_BINOMIAL = None
    PRIOR = None
    POSTERIOR = None
    UNIFORM = None


AllocationKind.ESS_OPTIMAL = AllocationKind("ess-opt")
AllocationKind.UNNORMALIZED_OPTIMAL = AllocationKind("unnorm-opt")
AllocationKind.INVERSE_BINOMIAL = AllocationKind("ibs")
AllocationKind.PRIOR = AllocationKind("prior")
AllocationKind.POSTERIOR = AllocationKind("posterior")
AllocationKind.UNIFORM = AllocationKind("uniform")


def _sq_deviation(vals, fbar) -> np.ndarray:
    d = vals - fbar
    return d**2 if d.ndim == 1 else np.sum(d**2, axis=1)


def delta_method_variance(problem: DiscreteProblem, f: TargetFunction, plan) -> float:
    """First-order variance of the plug-in posterior expectation of ``f``.

    ``plan`` is an :class:`AllocationPlan` or any array of (possibly
    real-valued) counts.  Returns ``inf`` if a parameter that contributes to
    the variance gets no simulations.
    """
    n = np.asarray(plan.counts if isinstance(plan, AllocationPlan) else plan, dtype=float)
    pi, p = problem.prior, problem.likelihood
    dev = _sq_deviation(f(problem.values), posterior_expectation(problem, f))
    num = pi**2 * p * (1 - p) * dev
    need = num > 0
    if np.any(need & (n <= 0)):
        return float("inf")
    return float(np.sum(num[need] / n[need]) / problem.evidence**2)


def _mse_weights(prior, lik, dev):
    return prior * np.sqrt(lik * (1 - lik) * dev)


def optimal_proportions(problem: DiscreteProblem, kind: AllocationKind) -> np.ndarray:
    """Fraction of the budget per parameter under allocation ``kind``."""
    pi, p = problem.prior, problem.likelihood
    if kind.name == "mse-opt":
        f = kind.target
        w = _mse_weights(pi, p, _sq_deviation(f(problem.values), posterior_expectation(problem, f)))
        if not w.sum() > 0:
            raise DegenerateTargetError("target has zero posterior variance; every allocation is optimal")
    elif kind.name == "ess-opt":
        w = pi * np.sqrt(p)
    elif kind.name == "unnorm-opt":
        w = pi * np.sqrt(p * (1 - p))
        if not w.sum() > 0:
            raise DegenerateTargetError("all likelihoods are 0 or 1")
    elif kind.name == "ibs":
        if np.any(p == 0):
            raise UndefinedLikelihoodError("inverse binomial allocation needs every likelihood positive")
        w = 1.0 / p
    elif kind.name == "prior":
        w = pi.copy()
    elif kind.name == "posterior":
        w = exact_posterior(problem)
    else:
        w = np.ones(problem.k)
    return w / w.sum()


def integerize(proportions, N: int, min_count: int = 0) -> AllocationPlan:
    """Round ``N * proportions`` to integers summing to ``N`` by largest remainders.

    Ties go to the lowest index.  With ``min_count > 0`` every parameter with
    positive proportion first receives ``min_count`` simulations and the rest
    of the budget is rounded proportionally.
    """
    p = np.asarray(proportions, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("proportions must be non-negative and sum to 1")
    N = int(N)
    if N < 0:
        raise ValueError("budget must be non-negative")
    p = p / p.sum()
    floor = np.zeros(len(p), dtype=np.int64)
    if min_count > 0:
        pos = p > 0
        if N < min_count * pos.sum():
            raise InfeasibleAllocationError(f"budget {N} cannot give {min_count} to {pos.sum()} parameters")
        floor[pos] = min_count
    rest = N - int(floor.sum())
    exact = rest * p
    base = np.floor(exact).astype(np.int64)
    rem = exact - base
    short = rest - int(base.sum())
    order = np.lexsort((np.arange(len(p)), -rem))
    base[order[:short]] += 1
    return AllocationPlan(floor + base, N)


def estimate_variance(counts: CountTable, problem: DiscreteProblem, f: TargetFunction, return_flag: bool = False):
    """Plug-in version of :func:`delta_method_variance`.

    Likelihoods are replaced by ``n_star / n`` and the posterior mean by its
    plug-in estimate.  The flag marks degenerate plug-in posteriors (accepted
    simulations at one parameter only), for which the estimate is 0.
    Raises :class:`DegenerateEstimateError` if nothing was accepted.
    """
    if np.any(counts.n < 1):
        raise UndefinedLikelihoodError("every parameter needs at least one simulation")
    p_hat = counts.n_star / counts.n
    pi = problem.prior
    z = float(pi @ p_hat)
    if not z > 0:
        raise DegenerateEstimateError("no accepted simulations")
    vals = f(problem.values)
    fbar = mle_expectation(counts, problem, f)
    var = float(np.sum(pi**2 * p_hat * (1 - p_hat) * _sq_deviation(vals, fbar) / counts.n) / z**2)
    degenerate = int(np.count_nonzero(counts.n_star)) < 2
    return (var, degenerate) if return_flag else var


@dataclass
class AdaptiveResult:
    estimate: float | None
    counts: CountTable
    variance_estimate: float | None
    degenerate: bool
    round_counts: list[np.ndarray] = field(default_factory=list)


def _water_fill(gap: np.ndarray, b: int) -> np.ndarray:
    """Closest non-negative ``x`` with ``sum x = b`` to ``gap`` in Euclidean norm: ``max(gap - lam, 0)``."""
    d = np.sort(gap)[::-1]
    csum = np.cumsum(d) - b
    j = np.nonzero(d - csum / np.arange(1, len(d) + 1) > 0)[0][-1]
    return np.maximum(gap - csum[j] / (j + 1), 0.0)


def _round_budgets(N: int, M: int) -> np.ndarray:
    cum = (np.arange(M + 1) * N) // M
    return np.diff(cum)


def adaptive_allocate(
    problem: DiscreteProblem,
    f: TargetFunction,
    N: int,
    rng: np.random.Generator,
    M: int = 16,
    kind: str = "mse-opt",
) -> AdaptiveResult:
    """Allocate ``N`` simulations over ``M`` rounds, re-estimating the optimum each round.

    Round 1 follows the prior.  Before each later round the optimal
    proportions are computed from the plug-in likelihoods of all simulations
    so far, ``1/sqrt(N)`` is added to each and the result renormalised.  The
    round's simulations are then placed so that the cumulative counts come as
    close as possible (Euclidean distance) to that share of the cumulative
    budget without removing earlier simulations.  ``kind`` selects the
    allocation being learned (``mse-opt`` or ``posterior``).

    Simulations are drawn as binomial acceptance counts from the problem's
    likelihood.
    """
    if M < 2:
        raise ValueError("need at least two rounds")
    if N < M * problem.k:
        raise InfeasibleAllocationError(f"budget {N} is below rounds * parameters = {M * problem.k}")
    if kind not in ("mse-opt", "posterior"):
        raise ValueError("kind must be 'mse-opt' or 'posterior'")
    pi, lik = problem.prior, problem.likelihood
    vals = f(problem.values)
    n = np.zeros(problem.k, dtype=np.int64)
    s = np.zeros(problem.k, dtype=np.int64)
    history = []
    floor = 1.0 / np.sqrt(N)
    for m, b in enumerate(_round_budgets(N, M)):
        if m == 0:
            alloc = integerize(pi, b).counts
        else:
            seen = n > 0
            p_hat = np.where(seen, s / np.maximum(n, 1), 0.0)
            joint = pi * p_hat
            if joint.sum() > 0:
                if kind == "mse-opt":
                    fbar = np.tensordot(joint / joint.sum(), vals, axes=1)
                    w = _mse_weights(pi, p_hat, _sq_deviation(vals, fbar))
                else:
                    w = joint
            else:
                w = np.zeros(problem.k)
            rel = w / w.sum() if w.sum() > 0 else pi.copy()
            rel = rel + floor
            rel /= rel.sum()
            target = rel * (n.sum() + b)
            alloc = integerize(_water_fill(target - n, b) / b, b).counts
        s += rng.binomial(alloc, lik)
        n += alloc
        history.append(np.asarray(alloc))
    counts = CountTable(n, s)
    try:
        est = mle_expectation(counts, problem, f)
        var, degen = estimate_variance(counts, problem, f, return_flag=True)
        return AdaptiveResult(est, counts, var, degen, history)
    except (DegenerateEstimateError, UndefinedLikelihoodError):
        return AdaptiveResult(None, counts, None, True, history)
