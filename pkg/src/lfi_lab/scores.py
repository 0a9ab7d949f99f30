"""Accuracy scores for approximate posteriors."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimators import WeightedParticles, weighted_expectation
from .exceptions import LfiError, ZeroTotalWeightError
from .problems import DiscreteProblem, TargetFunction, exact_posterior


def squared_error(estimate, truth) -> float:
    """``||estimate - truth||^2``."""
    e = np.asarray(estimate, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape:
        raise ValueError(f"shape mismatch {e.shape} vs {t.shape}")
    return float(np.sum((e - t) ** 2))


def effective_sample_size(weights) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if not s > 0:
        raise ZeroTotalWeightError("all weights are zero")
    # normalise first so huge or tiny weights do not overflow
    w = w / w.max()
    return float(w.sum() ** 2 / np.dot(w, w))


def _check_pair(q_hat, q):
    a = np.asarray(q_hat, dtype=float)
    b = np.asarray(q, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("distributions must be 1-D of equal length")
    for name, v in (("q_hat", a), ("q", b)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} must be a probability vector")
    return a, b


def kl_divergence(q_hat, q) -> float:
    """``sum q_hat log(q_hat / q)`` with ``0 log 0 = 0``; infinite off the support of ``q``."""
    a, b = _check_pair(q_hat, q)
    pos = a > 0
    if np.any(b[pos] == 0):
        return math.inf
    return float(max(np.sum(a[pos] * np.log(a[pos] / b[pos])), 0.0))


def phi_quadratic_approx(q_hat, q, phi_second_deriv_at_1: float = 1.0) -> float:
    """Second-order expansion ``phi''(1)/2 * sum (q_hat - q)^2 / q`` of a phi-divergence."""
    a, b = _check_pair(q_hat, q)
    d = a - b
    if np.any((b == 0) & (d != 0)):
        return math.inf
    nz = b > 0
    return float(0.5 * phi_second_deriv_at_1 * np.sum(d[nz] ** 2 / b[nz]))


def rescaled_kl(q_hat, q) -> float:
    """KL for two outcomes scaled to the squared error of the first probability.

    Near ``q`` this is ``(q_hat_1 - q_1)^2``, so it is directly comparable
    with the squared error of an indicator expectation.
    """
    a, b = _check_pair(q_hat, q)
    if len(b) != 2:
        raise ValueError("rescaling is defined for two-outcome distributions")
    return 2.0 * b[0] * b[1] * kl_divergence(a, b)


def _json_value(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return None
    return v


def _from_json_value(v):
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return v


@dataclass
class ScoreReport:
    """Scores from one trial.  Fields that could not be computed are ``None`` and named in ``flags``."""

    mse: float | None
    acceptance_rate: float
    ess: float | None
    kl: float | None = None
    kl_quadratic: float | None = None
    n_trials: int = 1
    estimate: float | list | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: _json_value(v) for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreReport":
        return cls(**{k: _from_json_value(v) for k, v in d.items()})


def _particle_posterior(particles: WeightedParticles, problem: DiscreteProblem) -> np.ndarray:
    idx = np.searchsorted(problem.values, particles.theta)
    q = np.bincount(idx, weights=particles.weight, minlength=problem.k)
    return q / q.sum()


def score_battery(particles: WeightedParticles, problem, f: TargetFunction, truth) -> ScoreReport:
    """Fill a :class:`ScoreReport` from one trial's particles.

    Estimator failures become flags rather than exceptions.  KL scores are
    only computed for discrete problems, where the weighted particles define
    a distribution on the grid.
    """
    flags = []
    rate = particles.n_accepted / len(particles)
    try:
        est = weighted_expectation(particles, f)
        mse = squared_error(est, truth)
        ess = effective_sample_size(particles.weight)
    except LfiError as err:
        flags.append(type(err).__name__)
        return ScoreReport(None, rate, None, None, None, 1, None, flags)
    kl = klq = None
    if isinstance(problem, DiscreteProblem):
        q_hat = _particle_posterior(particles, problem)
        q = exact_posterior(problem)
        kl = kl_divergence(q_hat, q)
        klq = phi_quadratic_approx(q_hat, q, 1.0)
    est_out = est if np.ndim(est) == 0 else np.asarray(est).tolist()
    return ScoreReport(mse, rate, ess, kl, klq, 1, est_out, flags)
