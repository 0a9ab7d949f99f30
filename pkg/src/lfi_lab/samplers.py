"""Parameter samplers: rejection, importance and stratified sampling.

Continuous importance densities are piecewise constant on a grid of cells
per coordinate, with cell masses from Simpson's rule on the unnormalised
weight function.  Sampling inverts the piecewise-linear CDF, so the density
used for importance weights is exactly the one sampled from.  For problems
with a model index the component is drawn from its exact mass first.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .estimators import WeightedParticles, weighted_expectation
from .exceptions import DegenerateTargetError, InconsistentDensityError
from .problems import (
    ContinuousProblem,
    DiscreteProblem,
    TargetFunction,
    evidence,
    exact_posterior,
    posterior_expectation,
)

GRID_CELLS = 4096


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellGrid:
    """Piecewise-constant density on ``[lo, hi]`` split into equal cells."""

    lo: float
    hi: float
    mass: np.ndarray  # normalised cell probabilities

    @classmethod
    def from_function(cls, g, lo: float, hi: float, cells: int = GRID_CELLS) -> tuple["CellGrid", float]:
        """Grid for ``g`` and the integral of its Simpson approximation."""
        edges = np.linspace(lo, hi, cells + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        ge = np.asarray(g(edges), dtype=float)
        gm = np.asarray(g(mids), dtype=float)
        width = (hi - lo) / cells
        m = width * (ge[:-1] + 4 * gm + ge[1:]) / 6.0
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("density weight function must be finite and non-negative")
        total = float(m.sum())
        if not total > 0:
            raise DegenerateTargetError("density weight function is identically zero")
        return cls(lo, hi, m / total), total

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / len(self.mass)

    @property
    def cdf(self) -> np.ndarray:
        c = np.concatenate([[0.0], np.cumsum(self.mass)])
        c[-1] = 1.0
        return c

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        i = np.clip(((x - self.lo) / self.width).astype(np.int64), 0, len(self.mass) - 1)
        return np.where(inside, self.mass[np.where(inside, i, 0)] / self.width, 0.0)

    def ppf(self, u) -> np.ndarray:
        """Inverse CDF, linear within each cell."""
        u = np.asarray(u, dtype=float)
        cdf = self.cdf
        i = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(self.mass) - 1)
        # skip empty cells so draws never land where the density is zero
        m = self.mass[i]
        frac = np.where(m > 0, (u - cdf[i]) / np.where(m > 0, m, 1.0), 0.5)
        return self.lo + (i + np.clip(frac, 0.0, 1.0)) * self.width

    def cell_edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, len(self.mass) + 1)


@dataclass(frozen=True)
class GridDensity:
    """Importance density for a continuous problem.

    Each component (model) ``j`` has probability ``component_mass[j]`` and a
    product of one :class:`CellGrid` per coordinate.
    """

    problem: ContinuousProblem
    component_mass: np.ndarray
    grids: tuple[tuple[CellGrid, ...], ...]
    label: str

    def pdf(self, theta) -> np.ndarray:
        pr = self.problem
        rows = pr.as_rows(theta)
        inside = pr.in_support(rows)
        comp = pr.component_of(np.where(inside[:, None], rows, 1.0))
        out = np.zeros(len(rows))
        x = rows[:, pr.offset:]
        for j, grids in enumerate(self.grids):
            sel = inside & (comp == j)
            if not sel.any():
                continue
            val = np.full(sel.sum(), self.component_mass[j])
            for d, g in enumerate(grids):
                val *= g.pdf(x[sel, d])
            out[sel] = val
        return out

    def transform(self, u_comp, u) -> np.ndarray:
        """Map uniforms to parameters: ``u_comp`` picks the model, column ``d`` of ``u`` coordinate ``d``."""
        pr = self.problem
        n = len(u)
        out = np.empty((n, pr.n_columns))
        if pr.model_index:
            cm = np.cumsum(self.component_mass)
            cm[-1] = 1.0
            comp = np.searchsorted(cm, u_comp, side="right")
            comp = np.minimum(comp, len(cm) - 1)
            out[:, 0] = comp + 1
        else:
            comp = np.zeros(n, dtype=int)
        for j, grids in enumerate(self.grids):
            sel = comp == j
            for d, g in enumerate(grids):
                out[sel, pr.offset + d] = g.ppf(u[sel, d])
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u_comp = rng.random(n) if self.problem.model_index else None
        return self.transform(u_comp, rng.random((n, self.problem.dim)))

    def component_fraction(self) -> np.ndarray:
        """Probability the density puts on each model."""
        return np.asarray(self.component_mass)


@dataclass(frozen=True)
class DiscreteDensity:
    """Importance distribution over the grid of a discrete problem."""

    problem: DiscreteProblem
    probs: np.ndarray
    label: str

    def pdf(self, theta) -> np.ndarray:
        idx = np.searchsorted(self.problem.values, np.asarray(theta, dtype=float))
        return self.probs[idx]

    def sample_index(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(n), side="right")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.problem.values[self.sample_index(rng, n)]


def _deviation(f: TargetFunction, f_bar):
    fb = np.asarray(f_bar, dtype=float)

    def dev(t):
        d = f(t) - fb
        return np.abs(d) if d.ndim == 1 else np.sqrt(np.sum(d**2, axis=1))

    return dev


def _separable_density(problem: ContinuousProblem, label, lik_fn, target=None) -> GridDensity:
    """Grid density  prior(theta) * prod_d lik_fn(L_d(x_d)) * target(theta).

    ``lik_fn`` acts on each coordinate's likelihood factor.  ``target`` must
    read at most one continuous coordinate (or only the model label).
    """
    pr = problem
    deps = None if target is None else target[1]
    if target is not None:
        if deps is None:
            if pr.dim > 1:
                raise ValueError("target of unknown dependence on a multi-coordinate problem is not separable")
            deps = tuple(range(pr.n_columns))
        cont = {c - pr.offset for c in deps if c >= pr.offset}
        if len(cont) > 1:
            raise ValueError("target reads several coordinates; the density is not separable")
    masses, grids = [], []
    for j, comp in enumerate(pr.components):
        base = np.array([0.5 * (lo + hi) for lo, hi in comp.bounds])

        def rows(d, x, j=j, base=base):
            t = np.empty((len(x), pr.n_columns))
            if pr.offset:
                t[:, 0] = j + 1
            t[:, pr.offset:] = base
            t[:, pr.offset + d] = x
            return t

        mass = comp.weight / comp.volume
        const = 1.0
        if target is not None and not cont:
            const = float(target[0](rows(0, base[:1]))[0])
        gs = []
        for d, ((lo, hi), fac) in enumerate(zip(comp.bounds, comp.likelihood)):
            if target is not None and d in cont:
                g = lambda x, fac=fac, d=d: lik_fn(fac(x)) * target[0](rows(d, x))
            else:
                g = lambda x, fac=fac: lik_fn(fac(x))
            try:
                grid, total = CellGrid.from_function(g, lo, hi)
            except DegenerateTargetError:
                grid, total = None, 0.0
            gs.append(grid)
            mass *= total
        mass *= const
        masses.append(mass if all(g is not None for g in gs) else 0.0)
        grids.append(tuple(gs))
    masses = np.array(masses)
    if not masses.sum() > 0:
        raise DegenerateTargetError(f"{label} density is identically zero")
    return GridDensity(pr, masses / masses.sum(), tuple(grids), label)


def prior_density(problem):
    if isinstance(problem, DiscreteProblem):
        return DiscreteDensity(problem, problem.prior.copy(), "prior")
    return _separable_density(problem, "prior", lambda l: np.ones_like(l))


def posterior_density(problem):
    if isinstance(problem, DiscreteProblem):
        return DiscreteDensity(problem, exact_posterior(problem), "posterior")
    return _separable_density(problem, "posterior", lambda l: l)


def ess_optimal_density(problem):
    """Density proportional to prior times the square root of the likelihood."""
    if isinstance(problem, DiscreteProblem):
        w = problem.prior * np.sqrt(problem.likelihood)
        return DiscreteDensity(problem, w / w.sum(), "ess-opt")
    return _separable_density(problem, "ess-opt", np.sqrt)


def targeted_density(problem, f: TargetFunction, f_bar=None):
    """Variance-minimising independent density  prior * sqrt(L) * |f - f_bar|.

    ``f_bar`` defaults to the exact posterior expectation.  Raises
    :class:`DegenerateTargetError` for targets constant on the support.
    """
    if f_bar is None:
        f_bar = posterior_expectation(problem, f)
    dev = _deviation(f, f_bar)
    if isinstance(problem, DiscreteProblem):
        w = problem.prior * np.sqrt(problem.likelihood) * dev(problem.values)
        if not w.sum() > 0:
            raise DegenerateTargetError("target is constant where the posterior has mass")
        return DiscreteDensity(problem, w / w.sum(), "targeted")
    return _separable_density(problem, "targeted", np.sqrt, (dev, f.depends_on))


def stratified_base_density(problem: ContinuousProblem, f: TargetFunction, f_bar=None):
    """Base density for stratification,  prior * |f - f_bar| * sqrt(L (1 - L)).

    The likelihood enters through its Bernoulli standard deviation, which is
    not separable, so only one-coordinate problems are supported.
    """
    if not isinstance(problem, ContinuousProblem) or problem.model_index or problem.dim != 1:
        raise ValueError("stratified sampling needs a one-coordinate continuous problem")
    if f_bar is None:
        f_bar = posterior_expectation(problem, f)
    dev = _deviation(f, f_bar)
    return _separable_density(
        problem, "stratified-targeted", lambda l: np.sqrt(np.clip(l * (1 - l), 0.0, None)), (dev, f.depends_on)
    )


DENSITY_TOKENS = ("prior", "posterior", "ess-opt", "targeted", "stratified-targeted")


def make_density(token: str, problem, f: TargetFunction | None = None, f_bar=None):
    """Density by CLI token."""
    if token == "prior":
        return prior_density(problem)
    if token == "posterior":
        return posterior_density(problem)
    if token == "ess-opt":
        return ess_optimal_density(problem)
    if token == "targeted":
        return targeted_density(problem, f, f_bar)
    if token == "stratified-targeted":
        return stratified_base_density(problem, f, f_bar)
    raise ValueError(f"unknown density {token!r}; choose from {', '.join(DENSITY_TOKENS)}")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _draw(problem, q, n, rng):
    """Parameters from ``q`` and the problem's likelihood at them."""
    if isinstance(problem, DiscreteProblem):
        idx = q.sample_index(rng, n)
        return problem.values[idx], problem.likelihood[idx], q.probs[idx], problem.prior[idx]
    theta = q.sample(rng, n)
    return theta, problem.likelihood(theta), q.pdf(theta), problem.prior_density(theta)


def importance_sampling(problem, q, N: int, rng: np.random.Generator) -> WeightedParticles:
    """Draw ``N`` parameters from ``q``; accepted ones get weight prior/q."""
    theta, lik, qd, pd = _draw(problem, q, N, rng)
    if np.any(qd <= 0):
        raise InconsistentDensityError(f"{q.label} density is zero at a sampled point")
    acc = rng.random(N) < lik
    return WeightedParticles(theta, np.where(acc, pd / qd, 0.0), acc)


def rejection_sampling(problem, N: int, rng: np.random.Generator) -> WeightedParticles:
    """Draw from the prior and keep accepted simulations with unit weight.

    Consumes random numbers exactly like :func:`importance_sampling` with the
    prior density, so paired seeds give identical parameters and decisions.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    theta, lik, _, _ = _draw(problem, prior_density(problem), N, rng)
    acc = rng.random(N) < lik
    return WeightedParticles(theta, acc.astype(float), acc)


def stratified_particles(
    problem: ContinuousProblem, base: GridDensity, N: int, rng: np.random.Generator, n_strata: int | None = None
) -> WeightedParticles:
    """Stratified draws: ``n_strata`` equal-probability strata under ``base`` (default one per simulation).

    Stratum ``k`` receives ``n_k`` draws from ``base`` restricted to it, and an
    accepted draw carries weight ``prior / (n_k * K * base)``.
    """
    if problem.model_index or problem.dim != 1:
        raise ValueError("stratified sampling needs a one-coordinate continuous problem")
    K = N if n_strata is None else int(n_strata)
    if not 1 <= K <= N:
        raise ValueError("need 1 <= n_strata <= N")
    n_k = np.diff((np.arange(K + 1) * N) // K)
    stratum = np.repeat(np.arange(K), n_k)
    u = (stratum + rng.random(N)) / K
    theta = base.transform(None, u[:, None])
    qd = base.pdf(theta)
    if np.any(qd <= 0):
        raise InconsistentDensityError("base density is zero at a sampled point")
    acc = rng.random(N) < problem.likelihood(theta)
    w = problem.prior_density(theta) / (n_k[stratum] * K * qd)
    return WeightedParticles(theta, np.where(acc, w, 0.0), acc)


def stratified_sampling(problem, base, N: int, rng: np.random.Generator, f: TargetFunction, n_strata=None) -> float:
    """Stratified estimate  sum_k R_k / sum_k S_k  of the posterior expectation of ``f``."""
    return weighted_expectation(stratified_particles(problem, base, N, rng, n_strata), f)


# ---------------------------------------------------------------------------
# asymptotic variance of independent sampling
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _cellwise_integral(g, grid: CellGrid) -> tuple[float, bool]:
    """Integral of g(x) / grid.pdf(x); the flag marks mass where the density is zero."""
    edges = grid.cell_edges()
    half = 0.5 * grid.width
    mids = 0.5 * (edges[:-1] + edges[1:])
    x = mids[:, None] + half * _GL_X[None, :]
    vals = np.asarray(g(x.ravel()), dtype=float).reshape(x.shape)
    cell = half * vals @ _GL_W
    dens = grid.mass / grid.width
    bad = (dens <= 0) & (cell > 0)
    return float(np.sum(cell[dens > 0] / dens[dens > 0])), bool(bad.any())


def independent_sampling_variance(problem, q, f: TargetFunction, N: int, f_bar=None) -> float:
    """Asymptotic variance of the self-normalised estimate from ``N`` i.i.d. draws of ``q``.

    ``(N Z^2)^-1 * integral (f - f_bar)^2 prior^2 L / q``, with ``Z`` the
    evidence.  Returns ``inf`` (with a warning) where the integrand has mass
    that ``q`` cannot reach.
    """
    if f_bar is None:
        f_bar = posterior_expectation(problem, f)
    dev = _deviation(f, f_bar)
    z = evidence(problem)
    if isinstance(problem, DiscreteProblem):
        num = problem.prior**2 * problem.likelihood * dev(problem.values) ** 2
        if np.any((q.probs <= 0) & (num > 0)):
            warnings.warn("importance density misses posterior mass; variance is infinite", RuntimeWarning)
            return math.inf
        keep = num > 0
        return float(np.sum(num[keep] / q.probs[keep]) / (N * z**2))
    pr = problem
    deps = f.depends_on
    if deps is None:
        if pr.dim > 1:
            raise ValueError("target of unknown dependence on a multi-coordinate problem")
        deps = tuple(range(pr.n_columns))
    cont = {c - pr.offset for c in deps if c >= pr.offset}
    if len(cont) > 1:
        raise ValueError("target reads several coordinates")
    total = 0.0
    for j, comp in enumerate(pr.components):
        qm = q.component_mass[j]
        base = np.array([0.5 * (lo + hi) for lo, hi in comp.bounds])

        def rows(d, x, j=j, base=base):
            t = np.empty((len(x), pr.n_columns))
            if pr.offset:
                t[:, 0] = j + 1
            t[:, pr.offset:] = base
            t[:, pr.offset + d] = x
            return t

        const = (comp.weight / comp.volume) ** 2
        if not cont:
            const *= float(dev(rows(0, base[:1]))[0]) ** 2
        if const == 0:
            continue
        if qm <= 0:
            warnings.warn("importance density gives a model zero mass; variance is infinite", RuntimeWarning)
            return math.inf
        part = const / qm
        for d, fac in enumerate(comp.likelihood):
            if d in cont:
                g = lambda x, fac=fac, d=d: fac(x) * dev(rows(d, x)) ** 2
            else:
                g = lambda x, fac=fac: fac(x)
            val, bad = _cellwise_integral(g, q.grids[j][d])
            if bad:
                warnings.warn("importance density misses posterior mass; variance is infinite", RuntimeWarning)
                return math.inf
            part *= val
        total += part
    return float(total / (N * z**2))
