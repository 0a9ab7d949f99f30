"""Inference problems with a Bernoulli simulation oracle and exact ground truth.

A simulation either reproduces the observed data (``accepted``) or not, with
probability given by the problem's likelihood at the simulated parameter.
Discrete problems are finite grids; continuous problems are unions of
axis-aligned boxes (one box per model index) with uniform priors and
likelihoods that factorise across coordinates.

Parameters of a continuous problem are rows of a 2-D array.  When the problem
carries a model index, column 0 holds the model label (1 for the first
component, 2 for the second, ...) and the continuous coordinates follow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate

from .exceptions import DegenerateProblemError, DomainError

PROB_TOL = 1e-12
QUAD_TOL = 1e-6


# ---------------------------------------------------------------------------
# likelihood factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantFactor:
    """Likelihood factor that ignores its coordinate."""

    value: float = 1.0
    name = "constant"
    breakpoints: tuple[float, ...] = ()

    def __call__(self, x):
        return np.full(np.shape(x), float(self.value))

    def to_dict(self):
        return {"name": self.name, "value": self.value}


@dataclass(frozen=True)
class GaussianFactor:
    """``exp(-(x - center)^2 / (2 scale^2))``."""

    center: float = 0.0
    scale: float = 1.0
    name = "gaussian_likelihood"
    breakpoints: tuple[float, ...] = ()

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.scale
        return np.exp(-0.5 * z * z)

    def to_dict(self):
        return {"name": self.name, "center": self.center, "scale": self.scale}


@dataclass(frozen=True)
class LaplaceFactor:
    """``exp(-|x - center| / scale)``."""

    center: float = 0.0
    scale: float = 1.0
    name = "laplace_likelihood"

    @property
    def breakpoints(self):
        return (self.center,)

    def __call__(self, x):
        return np.exp(-np.abs(np.asarray(x, dtype=float) - self.center) / self.scale)

    def to_dict(self):
        return {"name": self.name, "center": self.center, "scale": self.scale}


@dataclass(frozen=True)
class LinearFactor:
    """Acceptance probability equal to the coordinate itself, clipped to [0, 1]."""

    name = "linear_likelihood"
    breakpoints: tuple[float, ...] = ()

    def __call__(self, x):
        return np.clip(np.asarray(x, dtype=float), 0.0, 1.0)

    def to_dict(self):
        return {"name": self.name}


_FACTORS = {
    "constant": ConstantFactor,
    "gaussian_likelihood": GaussianFactor,
    "laplace_likelihood": LaplaceFactor,
    "linear_likelihood": LinearFactor,
}


def make_factor(spec: dict | str):
    """Build a likelihood factor from its JSON form (a name or a dict with ``name``)."""
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name")
    try:
        cls = _FACTORS[name]
    except KeyError:
        raise ValueError(f"unknown likelihood factor {name!r}; known: {sorted(_FACTORS)}") from None
    return cls(**spec)


# ---------------------------------------------------------------------------
# target functions
# ---------------------------------------------------------------------------


def _column(theta, c):
    theta = np.asarray(theta, dtype=float)
    return theta[..., c] if theta.ndim == 2 else theta


@dataclass(frozen=True)
class TargetFunction:
    """A function of the parameter whose posterior expectation is estimated.

    ``func`` is vectorised: it maps an array of parameters (1-D for discrete
    problems, one row per parameter for continuous ones) to a 1-D array of
    values, or to a 2-D array for vector-valued targets.

    ``depends_on`` lists the parameter columns ``func`` reads (``None`` if
    unknown).  Separable quadrature and grid densities use it to avoid
    tensor-product grids.  ``breakpoints`` are coordinates where ``func`` is
    discontinuous, handed to quadrature routines.
    """

    func: Callable[[np.ndarray], np.ndarray]
    label: str = "f"
    depends_on: tuple[int, ...] | None = None
    breakpoints: tuple[float, ...] = ()

    def __call__(self, theta) -> np.ndarray:
        return np.asarray(self.func(np.asarray(theta, dtype=float)), dtype=float)

    @classmethod
    def column(cls, c: int = 0, label: str | None = None) -> "TargetFunction":
        return cls(lambda t: _column(t, c), label or f"theta[{c}]", depends_on=(c,))

    @classmethod
    def power(cls, c: int, k: int, label: str | None = None) -> "TargetFunction":
        return cls(lambda t: _column(t, c) ** k, label or f"theta[{c}]^{k}", depends_on=(c,))

    @classmethod
    def constant(cls, value: float) -> "TargetFunction":
        return cls(lambda t: np.full(np.shape(t)[0], float(value)), f"const({value})", depends_on=())

    @classmethod
    def equals(cls, value: float, c: int = 0, label: str | None = None) -> "TargetFunction":
        """Indicator that column ``c`` equals ``value`` (a discrete label or model index)."""
        return cls(
            lambda t: (_column(t, c) == value).astype(float),
            label or f"1(theta[{c}]=={value})",
            depends_on=(c,),
        )

    @classmethod
    def below(cls, threshold: float, c: int = 0, label: str | None = None) -> "TargetFunction":
        return cls(
            lambda t: (_column(t, c) < threshold).astype(float),
            label or f"1(theta[{c}]<{threshold})",
            depends_on=(c,),
            breakpoints=(threshold,),
        )

    @classmethod
    def abs_below(cls, threshold: float, c: int = 0, label: str | None = None) -> "TargetFunction":
        return cls(
            lambda t: (np.abs(_column(t, c)) < threshold).astype(float),
            label or f"1(|theta[{c}]|<{threshold})",
            depends_on=(c,),
            breakpoints=(-threshold, threshold),
        )

    @classmethod
    def one_hot(cls, values: Sequence[float], label: str = "posterior") -> "TargetFunction":
        """Vector target ``e_i`` at grid value ``values[i]``; its expectation is the posterior."""
        grid = np.asarray(values, dtype=float)
        return cls(
            lambda t: (np.asarray(t, dtype=float).reshape(-1, 1) == grid[None, :]).astype(float),
            label,
            depends_on=(0,),
        )


# ---------------------------------------------------------------------------
# discrete problems
# ---------------------------------------------------------------------------


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiscreteProblem:
    """Finite parameter grid with prior ``prior[i]`` and acceptance probability ``likelihood[i]``."""

    prior: np.ndarray
    likelihood: np.ndarray
    values: np.ndarray | None = None

    def __post_init__(self):
        prior = _frozen(self.prior)
        lik = _frozen(self.likelihood)
        values = _frozen(np.arange(len(prior)) if self.values is None else self.values)
        if prior.ndim != 1 or len(prior) < 1:
            raise ValueError("prior must be a non-empty 1-D sequence")
        if lik.shape != prior.shape or values.shape[0] != prior.shape[0]:
            raise ValueError("values, prior and likelihood must have equal length")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"prior must be non-negative and sum to 1 (sum={prior.sum()!r})")
        if np.any((lik < 0) | (lik > 1)) or not np.any(lik > 0):
            raise ValueError("likelihood values must lie in [0, 1] with at least one positive")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "likelihood", lik)
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return len(self.prior)

    @property
    def evidence(self) -> float:
        return float(np.dot(self.prior, self.likelihood))

    def to_dict(self) -> dict:
        return {
            "kind": "discrete",
            "values": self.values.tolist(),
            "prior": self.prior.tolist(),
            "likelihood": self.likelihood.tolist(),
        }


# ---------------------------------------------------------------------------
# continuous problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Component:
    """One model: a uniform prior on a box and a coordinate-wise product likelihood."""

    bounds: tuple[tuple[float, float], ...]
    likelihood: tuple[Any, ...]
    weight: float = 1.0

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if any(not hi > lo for lo, hi in bounds):
            raise ValueError(f"empty interval in bounds {bounds}")
        if len(self.likelihood) != len(bounds):
            raise ValueError("need one likelihood factor per coordinate")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "likelihood", tuple(self.likelihood))

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))


@dataclass(frozen=True)
class ContinuousProblem:
    """Uniform-prior problem on one box, or on several boxes indexed by a model number."""

    components: tuple[Component, ...]
    model_index: bool = False

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("need at least one component")
        if len(comps) > 1 and not self.model_index:
            raise ValueError("several components require model_index=True")
        if len({len(c.bounds) for c in comps}) != 1:
            raise ValueError("all components must have the same number of coordinates")
        w = np.array([c.weight for c in comps])
        if np.any(w < 0) or abs(w.sum() - 1.0) > PROB_TOL:
            raise ValueError("component weights must be non-negative and sum to 1")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        """Number of continuous coordinates."""
        return len(self.components[0].bounds)

    @property
    def offset(self) -> int:
        return 1 if self.model_index else 0

    @property
    def n_columns(self) -> int:
        return self.dim + self.offset

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def as_rows(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            theta = theta.reshape(1, -1) if theta.shape[0] == self.n_columns else theta.reshape(-1, 1)
        if theta.ndim != 2 or theta.shape[1] != self.n_columns:
            raise ValueError(f"expected parameters with {self.n_columns} columns, got shape {theta.shape}")
        return theta

    def component_of(self, theta) -> np.ndarray:
        theta = self.as_rows(theta)
        if not self.model_index:
            return np.zeros(len(theta), dtype=int)
        return theta[:, 0].astype(int) - 1

    def in_support(self, theta) -> np.ndarray:
        theta = self.as_rows(theta)
        out = np.zeros(len(theta), dtype=bool)
        if self.model_index:
            m = theta[:, 0]
            valid = (m == np.round(m)) & (m >= 1) & (m <= len(self.components))
        else:
            valid = np.ones(len(theta), dtype=bool)
        comp = np.where(valid, self.component_of(np.where(valid[:, None], theta, 1.0)), -1)
        x = theta[:, self.offset:]
        for j, c in enumerate(self.components):
            rows = comp == j
            inside = np.ones(rows.sum(), dtype=bool)
            for d, (lo, hi) in enumerate(c.bounds):
                inside &= (x[rows, d] >= lo) & (x[rows, d] <= hi)
            out[rows] = inside
        return out

    def prior_density(self, theta) -> np.ndarray:
        theta = self.as_rows(theta)
        inside = self.in_support(theta)
        dens = np.zeros(len(theta))
        comp = self.component_of(np.where(inside[:, None], theta, 1.0))
        for j, c in enumerate(self.components):
            rows = inside & (comp == j)
            dens[rows] = c.weight / c.volume
        return dens

    def likelihood(self, theta) -> np.ndarray:
        theta = self.as_rows(theta)
        inside = self.in_support(theta)
        out = np.zeros(len(theta))
        comp = self.component_of(np.where(inside[:, None], theta, 1.0))
        x = theta[:, self.offset:]
        for j, c in enumerate(self.components):
            rows = inside & (comp == j)
            if not rows.any():
                continue
            val = np.ones(rows.sum())
            for d, fac in enumerate(c.likelihood):
                val *= fac(x[rows, d])
            out[rows] = val
        return out

    def sample_prior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(len(self.components), size=n, p=self.weights) if self.model_index else np.zeros(n, int)
        out = np.empty((n, self.n_columns))
        if self.model_index:
            out[:, 0] = comp + 1
        for j, c in enumerate(self.components):
            rows = comp == j
            lo = np.array([b[0] for b in c.bounds])
            hi = np.array([b[1] for b in c.bounds])
            out[rows, self.offset:] = lo + (hi - lo) * rng.random((rows.sum(), self.dim))
        return out

    def to_dict(self) -> dict:
        def comp_dict(c):
            return {
                "weight": c.weight,
                "support": [list(b) for b in c.bounds],
                "prior": "uniform",
                "likelihood": [f.to_dict() for f in c.likelihood],
            }

        if not self.model_index:
            d = comp_dict(self.components[0])
            d.pop("weight")
            return {"kind": "continuous", **d}
        return {"kind": "continuous", "models": [comp_dict(c) for c in self.components]}


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationOutcome:
    theta: Any
    accepted: Any


def likelihood_at(problem, theta) -> np.ndarray:
    """Acceptance probability at ``theta`` (grid indices for discrete problems)."""
    if isinstance(problem, DiscreteProblem):
        idx = np.asarray(theta)
        if not np.issubdtype(idx.dtype, np.integer) or np.any((idx < 0) | (idx >= problem.k)):
            raise DomainError(f"discrete parameter index out of range 0..{problem.k - 1}: {theta!r}")
        return problem.likelihood[idx]
    rows = problem.as_rows(theta)
    if not np.all(problem.in_support(rows)):
        raise DomainError("parameter outside the problem support")
    return problem.likelihood(rows)


def simulate(problem, theta, rng: np.random.Generator) -> SimulationOutcome:
    """Run the simulator: accept with probability equal to the likelihood at ``theta``.

    ``theta`` is a grid index (or array of indices) for a discrete problem and a
    parameter row (or 2-D array of rows) for a continuous one.
    """
    p = likelihood_at(problem, theta)
    accepted = rng.random(np.shape(p)) < p
    if np.ndim(accepted) == 0:
        accepted = bool(accepted)
    elif isinstance(problem, ContinuousProblem) and np.ndim(theta) == 1 and len(accepted) == 1:
        accepted = bool(accepted[0])
    return SimulationOutcome(theta=theta, accepted=accepted)


# ---------------------------------------------------------------------------
# exact ground truth
# ---------------------------------------------------------------------------


def exact_posterior(problem: DiscreteProblem) -> np.ndarray:
    """Posterior probabilities ``prior_i * lik_i / evidence``."""
    joint = problem.prior * problem.likelihood
    z = joint.sum()
    if z <= 0:
        raise DegenerateProblemError("evidence is zero")
    return joint / z


def _quad_1d(func, lo, hi, breakpoints=()) -> float:
    pts = sorted({p for p in breakpoints if lo < p < hi})
    val, _ = integrate.quad(func, lo, hi, points=pts or None, limit=500, epsabs=1e-14, epsrel=1e-12)
    return val


def _component_integral(problem: ContinuousProblem, j: int, f: TargetFunction | None) -> float:
    """Integral of prior * likelihood * f over component ``j`` (f=None means 1)."""
    c = problem.components[j]
    off = problem.offset
    base = np.array([0.5 * (lo + hi) for lo, hi in c.bounds])

    def rows(d, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = np.empty((len(x), problem.n_columns))
        if off:
            t[:, 0] = j + 1
        t[:, off:] = base
        t[:, off + d] = x
        return t

    deps = None if f is None else f.depends_on
    cont_deps = None if deps is None else {c_ - off for c_ in deps if c_ >= off}
    scale = c.weight / c.volume
    if f is not None and deps is None and problem.dim > 1:
        # general fallback: full-dimensional quadrature
        def integrand(*xs):
            t = np.empty((1, problem.n_columns))
            if off:
                t[0, 0] = j + 1
            t[0, off:] = xs
            return float(problem.likelihood(t)[0] * f(t)[0])

        val, _ = integrate.nquad(integrand, [list(b) for b in c.bounds], opts={"limit": 200})
        return scale * val
    if f is not None and deps is None:
        cont_deps = {0}
    if cont_deps is not None and len(cont_deps) > 1:
        raise ValueError("targets reading several continuous coordinates need depends_on=None")
    total = scale
    fac_const = 1.0
    if f is not None and not cont_deps:
        fac_const = float(f(rows(0, [base[0]]))[0])
    for d, (lo, hi) in enumerate(c.bounds):
        lik = c.likelihood[d]
        if f is not None and cont_deps and d in cont_deps:
            g = lambda x, d=d, lik=lik: float(lik(x) * f(rows(d, x))[0])
            bps = tuple(lik.breakpoints) + tuple(f.breakpoints)
        else:
            g = lambda x, lik=lik: float(lik(x))
            bps = tuple(lik.breakpoints)
        total *= _quad_1d(g, lo, hi, bps)
    return total * fac_const


def evidence(problem) -> float:
    """Marginal acceptance probability ``p(x*)``."""
    if isinstance(problem, DiscreteProblem):
        return problem.evidence
    return sum(_component_integral(problem, j, None) for j in range(len(problem.components)))


def posterior_expectation(problem, f: TargetFunction):
    """Exact posterior expectation of ``f`` (array-valued for vector targets)."""
    if isinstance(problem, DiscreteProblem):
        post = exact_posterior(problem)
        vals = f(problem.values)
        return float(post @ vals) if vals.ndim == 1 else post @ vals
    z = evidence(problem)
    if z <= 0:
        raise DegenerateProblemError("evidence is zero")
    num = sum(_component_integral(problem, j, f) for j in range(len(problem.components)))
    return num / z


def model_posterior(problem: ContinuousProblem) -> np.ndarray:
    """Posterior probability of each component."""
    mass = np.array([_component_integral(problem, j, None) for j in range(len(problem.components))])
    return mass / mass.sum()


# ---------------------------------------------------------------------------
# construction from JSON and built-in problems
# ---------------------------------------------------------------------------


def _component_from_dict(d: dict, weight: float) -> Component:
    prior = d.get("prior", "uniform")
    if prior != "uniform":
        raise ValueError(f"only uniform priors are supported, got {prior!r}")
    support = d["support"]
    lik = d["likelihood"]
    if isinstance(lik, (str, dict)):
        lik = [lik] + ["constant"] * (len(support) - 1)
    return Component(tuple(tuple(b) for b in support), tuple(make_factor(s) for s in lik), weight)


def problem_from_dict(d: dict):
    """Build a problem from its JSON description."""
    kind = d.get("kind")
    if kind == "discrete":
        return DiscreteProblem(prior=d["prior"], likelihood=d["likelihood"], values=d.get("values"))
    if kind == "continuous":
        if "models" in d:
            comps = tuple(_component_from_dict(m, float(m["weight"])) for m in d["models"])
            return ContinuousProblem(comps, model_index=True)
        return ContinuousProblem((_component_from_dict(d, 1.0),))
    raise ValueError(f"unknown problem kind {kind!r}")


def load_problem(path: str | Path):
    return problem_from_dict(json.loads(Path(path).read_text()))


def two_param_problem() -> DiscreteProblem:
    """Two hypotheses with equal prior and acceptance probabilities 0.3 and 0.05."""
    return DiscreteProblem(prior=[0.5, 0.5], likelihood=[0.3, 0.05], values=[1.0, 2.0])


def discrete_gaussian_problem(k: int = 101) -> DiscreteProblem:
    grid = np.linspace(-5.0, 5.0, k)
    return DiscreteProblem(prior=np.full(k, 1.0 / k), likelihood=np.exp(-0.5 * grid**2), values=grid)


def ten_point_problem() -> DiscreteProblem:
    grid = np.arange(1.0, 11.0)
    return DiscreteProblem(prior=np.full(10, 0.1), likelihood=np.exp(-0.5 * (grid - 5.5) ** 2), values=grid)


def laplace_problem() -> ContinuousProblem:
    """Uniform prior on [-40, 60], likelihood exp(-|theta|)."""
    return ContinuousProblem((Component(((-40.0, 60.0),), (LaplaceFactor(),)),))


def linear_problem() -> ContinuousProblem:
    """Uniform prior on [0, 1], likelihood theta."""
    return ContinuousProblem((Component(((0.0, 1.0),), (LinearFactor(),)),))


def model_selection_problem() -> ContinuousProblem:
    """Two equally likely models on [-10, 15]^2.

    Model 1 has likelihood exp(-theta_1^2/2) and ignores theta_2; model 2 has
    exp(-(theta_1^2 + theta_2^2)/2).
    """
    box = ((-10.0, 15.0), (-10.0, 15.0))
    return ContinuousProblem(
        (
            Component(box, (GaussianFactor(), ConstantFactor()), 0.5),
            Component(box, (GaussianFactor(), GaussianFactor()), 0.5),
        ),
        model_index=True,
    )
