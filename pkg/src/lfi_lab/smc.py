"""ABC sequential Monte Carlo on the ellipsoid problem.

The model has parameters theta in [-50, 50]^2 with a uniform prior and one
observation y ~ Normal(m(theta), 1), where

    m(theta) = (theta_1 - 2 theta_2)^2 + (theta_2 - 4)^2.

The observed value is y* = 0 and the discrepancy is |y|.  In the sheared
coordinates u = (theta_1 - 2 theta_2, theta_2 - 4) the mean is |u|^2, which
gives closed forms for the exact posterior and for the ABC posterior
covariance.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .estimators import WeightedParticles, weighted_expectation
from .exceptions import MixtureUnderflowError, ZeroTotalWeightError
from .problems import TargetFunction
from .scores import effective_sample_size

SHEAR = np.array([[5.0, 2.0], [2.0, 1.0]])
SLOW_SCHEDULE = (30.0, 16.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0)
FAST_SCHEDULE = (30.0, 5.0, 1.0)


def _norm_cdf(x):
    return special.ndtr(x)


@dataclass(frozen=True)
class EllipsoidProblem:
    half_width: float = 50.0
    noise_sd: float = 1.0

    @property
    def bounds(self):
        return ((-self.half_width, self.half_width),) * 2

    @property
    def prior_pdf_value(self) -> float:
        return 1.0 / (2 * self.half_width) ** 2

    def in_support(self, theta) -> np.ndarray:
        return np.all(np.abs(np.asarray(theta)) <= self.half_width, axis=-1)

    def prior_density(self, theta) -> np.ndarray:
        return np.where(self.in_support(theta), self.prior_pdf_value, 0.0)

    def sample_prior(self, rng, n) -> np.ndarray:
        return rng.uniform(-self.half_width, self.half_width, size=(n, 2))

    @staticmethod
    def mean_discrepancy(theta) -> np.ndarray:
        t = np.asarray(theta, dtype=float)
        return (t[..., 0] - 2 * t[..., 1]) ** 2 + (t[..., 1] - 4) ** 2

    def simulate(self, theta, rng) -> np.ndarray:
        """Discrepancy |y| for each parameter row."""
        m = self.mean_discrepancy(theta)
        return np.abs(m + self.noise_sd * rng.standard_normal(np.shape(m)))

    def acceptance_probability(self, theta, epsilon: float) -> np.ndarray:
        """P(|y| < epsilon | theta)."""
        m = self.mean_discrepancy(theta)
        s = self.noise_sd
        return _norm_cdf((epsilon - m) / s) - _norm_cdf((-epsilon - m) / s)


# ---------------------------------------------------------------------------
# perturbation kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalMVN:
    """Gaussian perturbation with covariance ``scale`` times the weighted particle covariance."""

    scale: float = 2.0
    name = "local-mvn"

    def fit(self, theta, weight) -> "FittedKernel":
        w = weight / weight.sum()
        mu = w @ theta
        d = theta - mu
        cov = self.scale * (d.T * w) @ d
        if len(theta) < 2 or np.linalg.det(cov) <= 0:
            # degenerate population; fall back to a small isotropic kernel
            cov = cov + np.eye(2) * max(1e-6, 1e-3 * np.trace(cov))
        return _FittedMVN(cov)

    def to_dict(self):
        return {"name": self.name, "scale": self.scale}


@dataclass(frozen=True)
class UniformBox:
    """Uniform perturbation on a box with half-widths ``scale`` times the particle range."""

    scale: float = 0.5
    name = "uniform-box"

    def fit(self, theta, weight) -> "FittedKernel":
        span = theta.max(axis=0) - theta.min(axis=0)
        half = self.scale * span
        half = np.where(half > 0, half, 1e-3)
        return _FittedBox(half)

    def to_dict(self):
        return {"name": self.name, "scale": self.scale}


class _FittedMVN:
    def __init__(self, cov):
        self.cov = cov
        self.chol = np.linalg.cholesky(cov)
        self.prec = np.linalg.inv(cov)
        self.norm = 1.0 / (2 * np.pi * math.sqrt(np.linalg.det(cov)))

    def perturb(self, centers, rng):
        return centers + rng.standard_normal(centers.shape) @ self.chol.T

    def density(self, x, centers):
        d = x[:, None, :] - centers[None, :, :]
        q = np.einsum("ijk,kl,ijl->ij", d, self.prec, d)
        return self.norm * np.exp(-0.5 * q)


class _FittedBox:
    def __init__(self, half):
        self.half = np.asarray(half, dtype=float)
        self.norm = 1.0 / np.prod(2 * self.half)

    def perturb(self, centers, rng):
        return centers + rng.uniform(-1.0, 1.0, centers.shape) * self.half

    def density(self, x, centers):
        inside = np.all(np.abs(x[:, None, :] - centers[None, :, :]) <= self.half, axis=2)
        return inside * self.norm


def make_kernel(spec) -> LocalMVN | UniformBox:
    if isinstance(spec, (LocalMVN, UniformBox)):
        return spec
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name")
    if name in ("local-mvn", "mvn"):
        return LocalMVN(**spec)
    if name in ("uniform-box", "uniform"):
        return UniformBox(**spec)
    raise ValueError(f"unknown kernel {name!r}")


@dataclass(frozen=True)
class MixtureProposal:
    """Weighted mixture of kernels centred on the previous round's accepted particles."""

    centers: np.ndarray
    weights: np.ndarray
    kernel: object

    def density(self, x, chunk: int = 2048) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = self.weights / self.weights.sum()
        out = np.empty(len(x))
        for s in range(0, len(x), chunk):
            out[s : s + chunk] = self.kernel.density(x[s : s + chunk], self.centers) @ w
        return out

    def sample(self, rng, n, problem: EllipsoidProblem, max_attempts: int = 1000) -> np.ndarray:
        """Draw ``n`` points, redrawing ancestor and perturbation for any outside the prior box."""
        cdf = np.cumsum(self.weights / self.weights.sum())
        cdf[-1] = 1.0
        out = np.empty((n, 2))
        todo = np.arange(n)
        for _ in range(max_attempts):
            anc = np.searchsorted(cdf, rng.random(len(todo)), side="right")
            x = self.kernel.perturb(self.centers[anc], rng)
            ok = problem.in_support(x)
            out[todo[ok]] = x[ok]
            todo = todo[~ok]
            if len(todo) == 0:
                return out
        raise RuntimeError("could not draw proposals inside the prior support")


# ---------------------------------------------------------------------------
# configuration and runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmcConfig:
    """Tolerance schedule, kernel and budget of an ABC-SMC run.

    With ``target_mode="simulations"`` every round runs ``per_round_target``
    simulations (default: the budget split evenly over the rounds).  With
    ``"acceptances"`` a round simulates until ``per_round_target`` particles
    are accepted or the total budget is spent.
    """

    epsilon_schedule: tuple[float, ...]
    kernel: object = field(default_factory=LocalMVN)
    total_budget: int = 34000
    per_round_target: int | None = None
    target_mode: str = "simulations"

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilon_schedule)
        if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilon schedule must be positive and strictly decreasing")
        if self.total_budget < 1:
            raise ValueError("budget must be positive")
        if self.target_mode not in ("simulations", "acceptances"):
            raise ValueError("target_mode must be 'simulations' or 'acceptances'")
        object.__setattr__(self, "epsilon_schedule", eps)
        object.__setattr__(self, "kernel", make_kernel(self.kernel))

    @classmethod
    def preset(cls, name: str, kernel="local-mvn", total_budget: int = 34000) -> "SmcConfig":
        schedules = {"slow": SLOW_SCHEDULE, "fast": FAST_SCHEDULE, "rejection": (1.0,)}
        return cls(schedules[name], make_kernel(kernel), total_budget)

    def round_target(self, k: int) -> int:
        if self.per_round_target is not None:
            return int(self.per_round_target)
        K = len(self.epsilon_schedule)
        return int((k + 1) * self.total_budget // K - k * self.total_budget // K)

    @classmethod
    def from_dict(cls, d: dict) -> "SmcConfig":
        return cls(
            tuple(d["epsilon_schedule"]),
            make_kernel(d.get("kernel", "local-mvn")),
            int(d.get("total_budget", 34000)),
            d.get("per_round_target"),
            d.get("target_mode", "simulations"),
        )

    def to_dict(self) -> dict:
        return {
            "epsilon_schedule": list(self.epsilon_schedule),
            "kernel": self.kernel.to_dict(),
            "total_budget": self.total_budget,
            "per_round_target": self.per_round_target,
            "target_mode": self.target_mode,
        }


@dataclass
class SmcRound:
    epsilon: float
    particles: WeightedParticles
    proposal: MixtureProposal | None

    @property
    def n_sims(self) -> int:
        return len(self.particles)

    @property
    def n_acc(self) -> int:
        return self.particles.n_accepted

    @property
    def acceptance_rate(self) -> float:
        return self.n_acc / self.n_sims


@dataclass
class SmcRun:
    rounds: list[SmcRound]
    config: SmcConfig
    stopped_early: str | None = None

    def __len__(self):
        return len(self.rounds)

    def __getitem__(self, i):
        return self.rounds[i]

    def __iter__(self):
        return iter(self.rounds)

    @property
    def n_sims(self) -> int:
        return sum(r.n_sims for r in self.rounds)

    def dump_csv(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for k, r in enumerate(self.rounds):
            p = d / f"round{k + 1}.csv"
            r.particles.to_csv(p)
            paths.append(p)
        return paths


def _simulate_round(problem, rng, n, epsilon, proposal, k):
    if proposal is None:
        theta = problem.sample_prior(rng, n)
        qd = np.full(n, problem.prior_pdf_value)
    else:
        theta = proposal.sample(rng, n, problem)
        qd = None
    disc = problem.simulate(theta, rng)
    acc = disc < epsilon
    w = np.zeros(n)
    if proposal is None:
        w[acc] = 1.0
    elif acc.any():
        qa = proposal.density(theta[acc])
        if np.any(qa <= 0):
            raise MixtureUnderflowError("proposal mixture density is zero at an accepted particle")
        w[acc] = problem.prior_pdf_value / qa
    return theta, w, acc, disc


def run_smc(problem: EllipsoidProblem, config: SmcConfig, rng: np.random.Generator) -> SmcRun:
    """Run ABC-SMC.  Round 1 samples the prior; later rounds perturb resampled particles.

    Accepted particles are weighted by prior over proposal mixture density.
    The run stops early, keeping completed rounds, if a round accepts nothing
    or the budget runs out.
    """
    rounds: list[SmcRound] = []
    used = 0
    proposal = None
    for k, eps in enumerate(config.epsilon_schedule):
        remaining = config.total_budget - used
        if remaining <= 0:
            return SmcRun(rounds, config, "budget exhausted")
        if config.target_mode == "simulations":
            n = min(config.round_target(k), remaining)
            theta, w, acc, disc = _simulate_round(problem, rng, n, eps, proposal, k)
        else:
            target = config.round_target(k)
            parts = []
            got = 0
            while got < target and used + sum(len(p[0]) for p in parts) < config.total_budget:
                batch = min(max(target, 256), config.total_budget - used - sum(len(p[0]) for p in parts))
                part = _simulate_round(problem, rng, batch, eps, proposal, k)
                parts.append(part)
                got += int(part[2].sum())
            theta, w, acc, disc = (np.concatenate([p[i] for p in parts]) for i in range(4))
            if got > target:
                stop = int(np.flatnonzero(acc)[target - 1]) + 1
                theta, w, acc, disc = theta[:stop], w[:stop], acc[:stop], disc[:stop]
        used += len(theta)
        particles = WeightedParticles(theta, w, acc, np.full(len(theta), k + 1), disc)
        rounds.append(SmcRound(eps, particles, proposal))
        if not acc.any():
            return SmcRun(rounds, config, f"round {k + 1} accepted no simulations")
        if k + 1 < len(config.epsilon_schedule):
            kern = config.kernel.fit(theta[acc], w[acc])
            proposal = MixtureProposal(theta[acc], w[acc], kern)
    return SmcRun(rounds, config, None)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def final_round_particles(run: SmcRun) -> WeightedParticles:
    return run.rounds[-1].particles


def all_rounds_particles(run: SmcRun, epsilon: float | None = None) -> WeightedParticles:
    """Particles from every round whose discrepancy is below ``epsilon`` (default: the last tolerance).

    Round ``k`` enters with weight ``alpha_k * w / W_k``, where ``W_k`` is the
    round's total qualifying weight and ``alpha_k`` its effective sample size.
    """
    eps = run.rounds[-1].epsilon if epsilon is None else epsilon
    parts = []
    for r in run.rounds:
        p = r.particles
        ok = p.accepted & (p.discrepancy < eps)
        w = np.where(ok, p.weight, 0.0)
        if w.sum() > 0:
            w = effective_sample_size(w[ok]) * w / w.sum()
        parts.append(WeightedParticles(p.theta, w, ok, p.round, p.discrepancy))
    return WeightedParticles.concat(parts)


def all_rounds_estimate(run: SmcRun, f: TargetFunction, epsilon: float | None = None):
    """ESS-weighted average of per-round importance estimates at the final tolerance."""
    return weighted_expectation(all_rounds_particles(run, epsilon), f)


def particle_mean_cov(particles: WeightedParticles) -> tuple[np.ndarray, np.ndarray]:
    w = particles.weight
    if not w.sum() > 0:
        raise ZeroTotalWeightError("all particle weights are zero")
    w = w / w.sum()
    mu = w @ particles.theta
    d = particles.theta - mu
    return mu, (d.T * w) @ d


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def ellipsoid_true_posterior() -> tuple[np.ndarray, np.ndarray, float]:
    """Mean, covariance and normaliser of the exact posterior, proportional to exp(-m(theta)^2 / 2)."""
    mean = np.array([8.0, 4.0])
    cov = SHEAR / math.sqrt(2 * math.pi)
    return mean, cov, math.sqrt(math.pi**3 / 2)


@dataclass
class MonteCarloMoments:
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray
    n_draws: int


def _weighted_moments(chunks) -> MonteCarloMoments:
    """Self-normalised moments with delta-method standard errors from (theta, w) chunks."""
    # first pass: sums for mean
    sw = 0.0
    s1 = np.zeros(2)
    s2 = np.zeros((2, 2))
    n = 0
    store = []
    for theta, w in chunks:
        sw += w.sum()
        s1 += w @ theta
        s2 += (theta.T * w) @ theta
        n += len(w)
        keep = w > 0
        store.append((theta[keep], w[keep]))
    mu = s1 / sw
    cov = s2 / sw - np.outer(mu, mu)
    vm = np.zeros(2)
    vc = np.zeros((2, 2))
    for theta, w in store:
        d = theta - mu
        vm += (w**2) @ (d**2)
        g = d[:, :, None] * d[:, None, :] - cov
        vc += np.einsum("i,ijk->jk", w**2, g**2)
    return MonteCarloMoments(mu, cov, np.sqrt(vm) / sw, np.sqrt(vc) / sw, n)


def ellipsoid_posterior_monte_carlo(n: int = 10**7, seed: int = 0, chunk: int = 10**6) -> MonteCarloMoments:
    """Brute-force posterior moments from prior draws weighted by exp(-m^2 / 2)."""
    prob = EllipsoidProblem()
    rng = np.random.default_rng(seed)

    def chunks():
        left = n
        while left > 0:
            b = min(chunk, left)
            theta = prob.sample_prior(rng, b)
            m = prob.mean_discrepancy(theta)
            yield theta, np.exp(-0.5 * m * m)
            left -= b

    return _weighted_moments(chunks())


def abc_covariance_quadrature(epsilon: float) -> np.ndarray:
    """ABC posterior covariance from a one-dimensional integral.

    The ABC likelihood depends on theta only through r^2 = |u|^2, whose
    distribution under a flat prior on u is flat, so the covariance of u is
    E[r^2]/2 times the identity.  Valid while the region of non-negligible
    acceptance lies inside the prior box.
    """
    g = lambda m: _norm_cdf(epsilon - m) - _norm_cdf(-epsilon - m)
    hi = epsilon + 40.0
    num, _ = integrate.quad(lambda m: m * g(m), 0, hi, points=[epsilon], limit=200)
    den, _ = integrate.quad(g, 0, hi, points=[epsilon], limit=200)
    return SHEAR * (num / den) / 2.0


def _cache_path(cache) -> Path:
    if cache is not None:
        return Path(cache)
    root = os.environ.get("LFI_LAB_CACHE", str(Path.home() / ".cache" / "lfi_lab"))
    return Path(root) / "abc_covariance.json"


def abc_covariance_reference(
    epsilon: float, n: int = 10**7, seed: int = 0, cache: str | Path | None = None, use_cache: bool = True
) -> np.ndarray:
    """Covariance of the epsilon-tolerance ABC posterior by importance sampling.

    The proposal mixes the prior with a uniform disk of radius^2 = epsilon + 10
    around the posterior ridge (in sheared coordinates), half each, so both
    small and large tolerances are covered.  Results are cached in a JSON file
    keyed by epsilon, draw count and seed.
    """
    path = _cache_path(cache)
    key = f"{float(epsilon)!r}|{int(n)}|{int(seed)}"
    if use_cache and path.exists():
        stored = json.loads(path.read_text())
        if key in stored:
            return np.array(stored[key])
    prob = EllipsoidProblem()
    rng = np.random.default_rng([int(seed), int(round(float(epsilon) * 1e6))])
    r2 = float(epsilon) + 10.0
    disk_pdf = 1.0 / (math.pi * r2)

    def chunks():
        left = n
        while left > 0:
            b = min(10**6, left)
            from_disk = rng.random(b) < 0.5
            theta = prob.sample_prior(rng, b)
            k = int(from_disk.sum())
            rad = np.sqrt(r2 * rng.random(k))
            ang = 2 * np.pi * rng.random(k)
            u1, u2 = rad * np.cos(ang), rad * np.sin(ang)
            theta[from_disk, 1] = u2 + 4.0
            theta[from_disk, 0] = u1 + 2 * theta[from_disk, 1]
            inside = prob.in_support(theta)
            m = prob.mean_discrepancy(theta)
            q = 0.5 * prob.prior_pdf_value * inside + 0.5 * disk_pdf * (m <= r2)
            w = np.where(inside, prob.prior_pdf_value * prob.acceptance_probability(theta, epsilon) / q, 0.0)
            yield theta, w
            left -= b

    cov = _weighted_moments(chunks()).cov
    if use_cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        stored = json.loads(path.read_text()) if path.exists() else {}
        stored[key] = cov.tolist()
        path.write_text(json.dumps(stored, indent=1, sort_keys=True))
    return cov


def tune_population(
    problem: EllipsoidProblem,
    schedule,
    kernel="local-mvn",
    total: int = 34000,
    rng: np.random.Generator | None = None,
    pilot: int = 200,
    pilot_runs: int = 5,
) -> int:
    """Accepted particles per round so that a full run uses about ``total`` simulations.

    Simulation cost is roughly proportional to the population size, so a few
    pilot runs at ``pilot`` particles per round fix the ratio.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    cfg = SmcConfig(tuple(schedule), make_kernel(kernel), 10**9, pilot, "acceptances")
    used = np.mean([run_smc(problem, cfg, rng).n_sims for _ in range(pilot_runs)])
    return max(1, int(round(pilot * total / used)))
