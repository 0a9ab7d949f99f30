"""Posterior-expectation estimators built from simulation outcomes."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DegenerateEstimateError, UndefinedLikelihoodError, ZeroTotalWeightError
from .problems import ContinuousProblem, DiscreteProblem, TargetFunction
from .quadrature import integrate


@dataclass(frozen=True)
class WeightedParticles:
    """Simulated parameters with importance weights and provenance.

    ``theta`` is 1-D (scalar parameters or discrete labels) or 2-D with one row
    per particle.  Rejected particles carry zero weight.
    """

    theta: np.ndarray
    weight: np.ndarray
    accepted: np.ndarray
    round: np.ndarray | None = None
    discrepancy: np.ndarray | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        w = np.asarray(self.weight, dtype=float)
        acc = np.asarray(self.accepted, dtype=bool)
        n = len(w)
        rnd = np.zeros(n, dtype=int) if self.round is None else np.asarray(self.round, dtype=int)
        if n == 0:
            raise ValueError("particles must contain at least one entry")
        if theta.shape[0] != n or acc.shape != (n,) or rnd.shape != (n,):
            raise ValueError("theta, weight, accepted and round must have matching lengths")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        if np.any(w[~acc] != 0):
            raise ValueError("rejected particles must have zero weight")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "accepted", acc)
        object.__setattr__(self, "round", rnd)
        if self.discrepancy is not None:
            object.__setattr__(self, "discrepancy", np.asarray(self.discrepancy, dtype=float))

    def __len__(self):
        return len(self.weight)

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())

    @property
    def total_weight(self) -> float:
        return float(self.weight.sum())

    @classmethod
    def concat(cls, parts) -> "WeightedParticles":
        parts = list(parts)
        disc = None
        if all(p.discrepancy is not None for p in parts):
            disc = np.concatenate([p.discrepancy for p in parts])
        return cls(
            np.concatenate([p.theta for p in parts]),
            np.concatenate([p.weight for p in parts]),
            np.concatenate([p.accepted for p in parts]),
            np.concatenate([p.round for p in parts]),
            disc,
        )

    def _theta_columns(self):
        if self.theta.ndim == 1:
            return ["theta"], self.theta[:, None]
        return [f"theta{j + 1}" for j in range(self.theta.shape[1])], self.theta

    def to_csv(self, path) -> None:
        names, cols = self._theta_columns()
        header = names + ["weight"] + (["discrepancy"] if self.discrepancy is not None else []) + ["round", "accepted"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for i in range(len(self)):
                row = [repr(float(v)) for v in cols[i]] + [repr(float(self.weight[i]))]
                if self.discrepancy is not None:
                    row.append(repr(float(self.discrepancy[i])))
                row += [int(self.round[i]), int(self.accepted[i])]
                wr.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "WeightedParticles":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no particles")
        keys = list(rows[0])
        tcols = ["theta"] if "theta" in keys else sorted((k for k in keys if k.startswith("theta")), key=lambda k: int(k[5:]))
        theta = np.array([[float(r[c]) for c in tcols] for r in rows])
        if tcols == ["theta"]:
            theta = theta[:, 0]
        disc = np.array([float(r["discrepancy"]) for r in rows]) if "discrepancy" in keys else None
        return cls(
            theta,
            np.array([float(r["weight"]) for r in rows]),
            np.array([bool(int(r["accepted"])) for r in rows]),
            np.array([int(r["round"]) for r in rows]),
            disc,
        )


def weighted_expectation(particles: WeightedParticles, f: TargetFunction):
    """Self-normalised estimate  sum w_i f(theta_i) / sum w_i."""
    w = particles.weight
    total = w.sum()
    if not total > 0:
        raise ZeroTotalWeightError("all particle weights are zero")
    keep = w > 0
    vals = f(particles.theta[keep])
    est = np.tensordot(w[keep], vals, axes=1) / total
    return float(est) if np.ndim(est) == 0 else est


@dataclass(frozen=True)
class CountTable:
    """Per-parameter simulation counts ``n`` and acceptance counts ``n_star``."""

    n: np.ndarray
    n_star: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.int64)
        s = np.asarray(self.n_star, dtype=np.int64)
        if n.shape != s.shape or n.ndim != 1:
            raise ValueError("n and n_star must be 1-D of equal length")
        if np.any(s < 0) or np.any(s > n):
            raise ValueError("need 0 <= n_star <= n")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "n_star", s)

    @property
    def budget(self) -> int:
        return int(self.n.sum())


def mle_posterior(counts: CountTable, problem: DiscreteProblem) -> np.ndarray:
    """Plug-in posterior with likelihood estimates ``n_star / n``."""
    if np.any(counts.n < 1):
        raise UndefinedLikelihoodError("every parameter needs at least one simulation")
    joint = problem.prior * (counts.n_star / counts.n)
    z = joint.sum()
    if not z > 0:
        raise DegenerateEstimateError("no accepted simulations")
    return joint / z


def mle_expectation(counts: CountTable, problem: DiscreteProblem, f: TargetFunction):
    """Posterior expectation of ``f`` under the plug-in posterior."""
    post = mle_posterior(counts, problem)
    vals = f(problem.values)
    return float(post @ vals) if vals.ndim == 1 else post @ vals


class NadarayaWatsonLikelihood(RegressorMixin, BaseEstimator):
    """Gaussian-kernel Nadaraya-Watson regression of acceptance indicators.

    ``predict`` returns  sum_i y_i K_h(x - x_i) / sum_i K_h(x - x_i).  Kernel
    values are shifted by the nearest training point so the denominator is at
    least one and never underflows; the ratio is unchanged.

    Parameters
    ----------
    bandwidth : float or None
        Kernel standard deviation; ``None`` uses ``n_samples ** -0.5``.
    """

    def __init__(self, bandwidth=None):
        self.bandwidth = bandwidth

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_2d=False, y_numeric=True)
        X = X.reshape(len(X), -1)
        if X.shape[1] != 1:
            raise ValueError("only one-dimensional inputs are supported")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        self.x_ = X[:, 0].astype(float)
        self.y_ = np.asarray(y, dtype=float)
        self.bandwidth_ = float(self.bandwidth) if self.bandwidth is not None else len(self.x_) ** -0.5
        self.n_features_in_ = 1
        return self

    def _ratio(self, x):
        h2 = 2.0 * self.bandwidth_**2
        num = np.empty(len(x))
        den = np.empty(len(x))
        for s in range(0, len(x), 2048):
            d2 = (x[s : s + 2048, None] - self.x_[None, :]) ** 2
            k = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / h2)
            num[s : s + 2048] = k @ self.y_
            den[s : s + 2048] = k.sum(axis=1)
        return num, den

    def predict_with_flags(self, X):
        """Predictions plus a mask of points whose kernel denominator was zero (set to 0)."""
        check_is_fitted(self, "x_")
        x = check_array(X, ensure_2d=False).reshape(-1)
        num, den = self._ratio(x.astype(float))
        bad = ~(den > 0)
        out = np.where(bad, 0.0, num / np.where(bad, 1.0, den))
        return out, bad

    def predict(self, X):
        return self.predict_with_flags(X)[0]


@dataclass
class KernelEstimateInfo:
    value: float
    bandwidth: float
    n_underflow: int
    quad_error: float
    converged: bool


def kernel_posterior_expectation(
    particles: WeightedParticles,
    problem: ContinuousProblem,
    f: TargetFunction,
    bandwidth: float | None = None,
    quad_order: int = 20,
    return_info: bool = False,
):
    """Integrate ``f`` against prior times a kernel-smoothed likelihood.

    The likelihood estimate regresses acceptance indicators on the simulated
    parameters, so the particles' sampling distribution does not enter.  Both
    integrals are computed together by adaptive Gauss-Kronrod quadrature with
    ``quad_order`` Gauss points over the prior support.
    """
    if problem.model_index or problem.dim != 1:
        raise ValueError("kernel estimation supports one-dimensional problems only")
    theta = np.asarray(particles.theta, dtype=float).reshape(len(particles), -1)[:, 0]
    if len(np.unique(theta)) < 2:
        raise ValueError("need at least two distinct parameter values")
    if particles.n_accepted == 0:
        raise ZeroTotalWeightError("no accepted simulations")
    model = NadarayaWatsonLikelihood(bandwidth).fit(theta, particles.accepted.astype(float))
    lo, hi = problem.components[0].bounds[0]
    underflow = 0

    def integrand(x):
        nonlocal underflow
        lik, bad = model.predict_with_flags(x)
        underflow += int(bad.sum())
        pw = lik * problem.prior_density(x[:, None])
        return np.stack([pw * f(x[:, None]), pw], axis=1)

    res = integrate(integrand, lo, hi, order=quad_order, rtol=1e-9, max_intervals=4000, breakpoints=f.breakpoints)
    num, den = res.value
    if not den > 0:
        raise ZeroTotalWeightError("kernel likelihood integrates to zero")
    value = float(num / den)
    if return_info:
        return value, KernelEstimateInfo(value, model.bandwidth_, underflow, res.error, res.converged)
    return value
