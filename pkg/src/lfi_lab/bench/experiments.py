"""Registered experiments.

Each experiment prepares shared state once (problem, target, densities) and
then produces one record per (budget, trial, strategy).  Random numbers come
from :func:`lfi_lab.rng.stream`, keyed so a record can be recomputed alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..allocation import (
    AllocationKind,
    adaptive_allocate,
    delta_method_variance,
    estimate_variance,
    integerize,
    optimal_proportions,
)
from ..estimators import (
    CountTable,
    WeightedParticles,
    kernel_posterior_expectation,
    mle_expectation,
    mle_posterior,
    weighted_expectation,
)
from ..exceptions import LfiError
from ..problems import (
    TargetFunction,
    discrete_gaussian_problem,
    evidence,
    exact_posterior,
    laplace_problem,
    linear_problem,
    model_posterior,
    model_selection_problem,
    posterior_expectation,
    ten_point_problem,
    two_param_problem,
)
from ..rng import stream
from ..samplers import (
    importance_sampling,
    independent_sampling_variance,
    make_density,
    prior_density,
    rejection_sampling,
    stratified_base_density,
    stratified_particles,
)
from ..scores import effective_sample_size, kl_divergence, phi_quadratic_approx, rescaled_kl, squared_error
from ..smc import (
    FAST_SCHEDULE,
    SLOW_SCHEDULE,
    EllipsoidProblem,
    SmcConfig,
    abc_covariance_quadrature,
    abc_covariance_reference,
    all_rounds_particles,
    ellipsoid_true_posterior,
    final_round_particles,
    make_kernel,
    particle_mean_cov,
    run_smc,
    tune_population,
)


@dataclass
class Context:
    """Per-run settings handed to every trial."""

    seed: int
    mode: str = "benchmark"
    target: str | None = None
    dump: bool = False
    cache: dict = field(default_factory=dict)


@dataclass
class Experiment:
    name: str
    default_n: tuple[int, ...]
    default_trials: int
    default_strategies: tuple[str, ...]
    trial: Callable[[Context, int, int, int, str], tuple[dict, Any]]
    oracle: Callable[[Context], dict]
    baseline: str | None = None
    check_strategy: Callable[[str], None] | None = None


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _degenerate(reason: str, **extra) -> dict:
    return {"degenerate": True, "reason": reason, "estimate": None, "sq_error": None, **extra}


# ---------------------------------------------------------------------------
# two-param
# ---------------------------------------------------------------------------

TWO_PARAM_TOKENS = ("prior", "rejection", "ess-opt", "unnorm-opt", "ibs", "mse-opt", "posterior", "uniform")


def _two_param_counts(problem, f, strategy: str, n: int, rng_draw) -> np.ndarray:
    if strategy.startswith("split:"):
        x = float(strategy.split(":", 1)[1])
        if not 0.0 <= x <= 1.0:
            raise ValueError("split fraction must lie in [0, 1]")
        return integerize([x, 1.0 - x], n).counts
    if strategy == "rejection":
        n1 = int(rng_draw.binomial(n, problem.prior[0]))
        return np.array([n1, n - n1])
    return integerize(optimal_proportions(problem, AllocationKind.from_token(strategy, f)), n).counts


def _check_two_param(strategy):
    if strategy.startswith("split:"):
        float(strategy.split(":", 1)[1])
    elif strategy not in TWO_PARAM_TOKENS:
        raise ValueError(f"unknown strategy {strategy!r}")


def _discrete_alloc_record(problem, f, counts, n_star, truth) -> dict:
    post = exact_posterior(problem)
    ct = CountTable(counts, n_star)
    acc = int(n_star.sum())
    rec = {"counts": counts.tolist(), "n_star": n_star.tolist(), "acceptance_rate": acc / int(counts.sum())}
    if np.any(counts == 0):
        # a parameter never simulated: its likelihood (and the estimate) is undefined
        return {**rec, **_degenerate("unsimulated parameter")}
    if acc == 0:
        return {**rec, **_degenerate("no accepted simulations")}
    try:
        q_hat = mle_posterior(ct, problem)
    except LfiError as err:
        return {**rec, **_degenerate(type(err).__name__)}
    vals = f(problem.values)
    est = q_hat @ vals
    w = problem.prior / np.maximum(counts, 1)
    ess = (n_star @ w) ** 2 / (n_star @ w**2)
    rec.update(
        degenerate=False,
        estimate=est.tolist() if np.ndim(est) else float(est),
        sq_error=squared_error(est, truth),
        ess=float(ess),
        kl=_finite(kl_divergence(q_hat, post)),
        kl_quadratic=_finite(phi_quadratic_approx(q_hat, post)),
    )
    if problem.k == 2:
        rec["rescaled_kl"] = _finite(rescaled_kl(q_hat, post))
    return rec


def _two_param_trial(ctx: Context, n: int, trial: int, s_idx: int, strategy: str):
    problem = two_param_problem()
    f = TargetFunction.equals(1.0, label="1(theta=theta_1)")
    truth = posterior_expectation(problem, f)
    counts = _two_param_counts(problem, f, strategy, n, stream(ctx.seed, "two-param", trial, 10_000 + s_idx))
    # common random numbers: simulation j at parameter i uses the same uniform for every strategy
    n_star = np.empty(2, dtype=np.int64)
    for i in range(2):
        u = stream(ctx.seed, "two-param", trial, 1_000_000 + i).random(n)
        n_star[i] = np.count_nonzero(u[: counts[i]] < problem.likelihood[i])
    return _discrete_alloc_record(problem, f, counts, n_star, truth), None


def _two_param_oracle(ctx: Context) -> dict:
    problem = two_param_problem()
    f = TargetFunction.equals(1.0)
    base = delta_method_variance(problem, f, problem.prior)
    out = {"posterior": exact_posterior(problem).tolist(), "truth": posterior_expectation(problem, f),
           "evidence": problem.evidence, "variance_times_n": {}, "efficiency_vs_prior": {}, "proportions": {}}
    for tok in ("prior", "ess-opt", "unnorm-opt", "ibs", "mse-opt", "posterior", "uniform"):
        q = optimal_proportions(problem, AllocationKind.from_token(tok, f))
        v = delta_method_variance(problem, f, q)
        out["proportions"][tok] = q.tolist()
        out["variance_times_n"][tok] = v
        out["efficiency_vs_prior"][tok] = base / v
    q = optimal_proportions(problem, AllocationKind.ESS_OPTIMAL)
    ess = problem.evidence**2 / np.sum(problem.prior**2 * problem.likelihood / q)
    out["ess_ratio_ess_opt_vs_prior"] = ess / problem.evidence
    return out


# ---------------------------------------------------------------------------
# discrete-gaussian
# ---------------------------------------------------------------------------


def _dg_target(name: str | None, problem) -> TargetFunction:
    name = name or "posterior"
    if name == "posterior":
        return TargetFunction.one_hot(problem.values)
    if name == "mean":
        return TargetFunction.column(0, "theta")
    if name == "second-moment":
        return TargetFunction.power(0, 2, "theta^2")
    if name == "ci95":
        return TargetFunction.abs_below(1.96, label="1(|theta|<1.96)")
    raise ValueError(f"unknown target {name!r}; choose posterior, mean, second-moment, ci95")


def _dg_trial(ctx: Context, n: int, trial: int, s_idx: int, strategy: str):
    problem = discrete_gaussian_problem()
    f = _dg_target(ctx.target, problem)
    truth = posterior_expectation(problem, f)
    k = problem.k
    if n < k:
        raise ValueError(f"budget must be at least {k}")
    rng = stream(ctx.seed, "discrete-gaussian", trial, s_idx)
    if strategy == "adaptive":
        res = adaptive_allocate(problem, f, n, rng)
        counts, n_star = res.counts.n, res.counts.n_star
    else:
        # one simulation per parameter first, the rest by the chosen allocation
        props = optimal_proportions(problem, AllocationKind.from_token(strategy, f))
        counts = 1 + integerize(props, n - k).counts
        n_star = rng.binomial(counts, problem.likelihood)
    return _discrete_alloc_record(problem, f, counts, n_star, truth), None


def _dg_oracle(ctx: Context) -> dict:
    problem = discrete_gaussian_problem()
    f = _dg_target(ctx.target, problem)
    out = {"target": f.label, "evidence": problem.evidence, "variance_times_n": {}}
    for tok in ("prior", "ess-opt", "unnorm-opt", "mse-opt", "posterior", "uniform"):
        q = optimal_proportions(problem, AllocationKind.from_token(tok, f))
        out["variance_times_n"][tok] = delta_method_variance(problem, f, q)
    t = posterior_expectation(problem, f)
    out["truth"] = t.tolist() if np.ndim(t) else t
    return out


# ---------------------------------------------------------------------------
# adaptive
# ---------------------------------------------------------------------------


def _floored(props, n):
    p = np.asarray(props) + n**-0.5
    return p / p.sum()


def _adaptive_trial(ctx: Context, n: int, trial: int, s_idx: int, strategy: str):
    problem = ten_point_problem()
    f = TargetFunction.column(0, "theta")
    truth = posterior_expectation(problem, f)
    rng = stream(ctx.seed, "adaptive", trial, s_idx)
    if strategy in ("adaptive", "adaptive-posterior"):
        res = adaptive_allocate(problem, f, n, rng, kind="mse-opt" if strategy == "adaptive" else "posterior")
        counts, n_star = res.counts.n, res.counts.n_star
    elif strategy in ("prior", "optimal"):
        kind = AllocationKind.PRIOR if strategy == "prior" else AllocationKind.mse_optimal(f)
        counts = integerize(_floored(optimal_proportions(problem, kind), n), n).counts
        n_star = rng.binomial(counts, problem.likelihood)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    rec = _discrete_alloc_record(problem, f, counts, n_star, truth)
    if not rec["degenerate"]:
        var, flag = estimate_variance(CountTable(counts, n_star), problem, f, return_flag=True)
        rec["variance_estimate"] = var
        rec["variance_estimate_degenerate"] = flag
    return rec, None


def _adaptive_oracle(ctx: Context) -> dict:
    problem = ten_point_problem()
    f = TargetFunction.column(0)
    q = optimal_proportions(problem, AllocationKind.mse_optimal(f))
    return {
        "truth": posterior_expectation(problem, f),
        "optimal_proportions": q.tolist(),
        "variance_times_n": {
            "optimal": delta_method_variance(problem, f, q),
            "prior": delta_method_variance(problem, f, problem.prior),
            "posterior": delta_method_variance(problem, f, exact_posterior(problem)),
        },
    }


# ---------------------------------------------------------------------------
# continuous importance sampling (laplace, model selection)
# ---------------------------------------------------------------------------

PILOT_FRACTION = 0.1


def _f_bar_for(ctx, problem, f, n, rng):
    """Target mean used to build targeted densities: exact, or from a pilot rejection run."""
    if ctx.mode == "benchmark":
        return posterior_expectation(problem, f), 0
    n_pilot = max(1, int(round(PILOT_FRACTION * n)))
    pilot = rejection_sampling(problem, n_pilot, rng)
    if pilot.n_accepted == 0:
        # nothing accepted: fall back to the prior mean of f
        prior_draws = problem.sample_prior(rng, 4096)
        return float(np.mean(f(prior_draws))), n_pilot
    return weighted_expectation(pilot, f), n_pilot


def _density_for(ctx, key, problem, f, token, n, rng):
    needs_fbar = token in ("targeted", "stratified-targeted", "stratified-density")
    tok = "stratified-targeted" if token == "stratified-density" else token
    if not needs_fbar or ctx.mode == "benchmark":
        ck = (key, tok)
        if ck not in ctx.cache:
            ctx.cache[ck] = make_density(tok, problem, f)
        return ctx.cache[ck], 0
    f_bar, used = _f_bar_for(ctx, problem, f, n, rng)
    return make_density(tok, problem, f, f_bar), used


def _is_record(problem, f, truth, particles, extra=None) -> dict:
    rec = {"acceptance_rate": particles.n_accepted / len(particles), "n_accepted": particles.n_accepted}
    rec.update(extra or {})
    if particles.n_accepted == 0:
        rec.update(_degenerate("no accepted simulations", ess=0.0))
        return rec
    est = weighted_expectation(particles, f)
    rec.update(degenerate=False, estimate=float(est), sq_error=squared_error(est, truth),
               ess=effective_sample_size(particles.weight))
    return rec


def _continuous_like_trial(name, problem_fn, target_fn):
    def trial(ctx: Context, n: int, t: int, s_idx: int, strategy: str):
        problem = problem_fn()
        f = target_fn()
        truth = ctx.cache.setdefault((name, "truth"), posterior_expectation(problem, f))
        rng = stream(ctx.seed, name, t, s_idx)
        if strategy == "rejection":
            particles, used = rejection_sampling(problem, n, rng), 0
        else:
            q, used = _density_for(ctx, name, problem, f, strategy, n, rng)
            particles = importance_sampling(problem, q, n - used, rng)
        extra = {"pilot_sims": used}
        if problem.model_index:
            extra["model1_fraction"] = float(np.mean(particles.theta[:, 0] == 1))
        return _is_record(problem, f, truth, particles, extra), particles

    return trial


def _continuous_oracle(name, problem_fn, target_fn, tokens):
    def oracle(ctx: Context) -> dict:
        problem = problem_fn()
        f = target_fn()
        out = {"truth": posterior_expectation(problem, f), "evidence": evidence(problem),
               "inverse_evidence": 1.0 / evidence(problem), "variance_times_n": {}}
        if problem.model_index:
            out["model_posterior"] = model_posterior(problem).tolist()
            out["model1_mass"] = {}
        for tok in tokens:
            q = make_density(tok, problem, f)
            out["variance_times_n"][tok] = independent_sampling_variance(problem, q, f, 1)
            if problem.model_index:
                out["model1_mass"][tok] = float(q.component_mass[0])
        return out

    return oracle


def _laplace_target():
    return TargetFunction.column(0, "theta")


def _model_target():
    return TargetFunction.equals(1.0, 0, "1(M=1)")


# ---------------------------------------------------------------------------
# kde (stratified sampling and kernel regression)
# ---------------------------------------------------------------------------

KDE_TOKENS = ("stratified-targeted", "posterior", "stratified-density", "prior", "ess-opt", "targeted")


def _kde_target():
    return TargetFunction.below(0.5, 0, "1(theta<0.5)")


def _kde_trial(ctx: Context, n: int, t: int, s_idx: int, strategy: str):
    problem = linear_problem()
    f = _kde_target()
    truth = ctx.cache.setdefault(("kde", "truth"), posterior_expectation(problem, f))
    rng = stream(ctx.seed, "kde", t, s_idx)
    if strategy == "stratified-targeted":
        base, used = _density_for(ctx, "kde", problem, f, strategy, n, rng)
        particles = stratified_particles(problem, base, n - used, rng)
    elif strategy in KDE_TOKENS:
        q, used = _density_for(ctx, "kde", problem, f, strategy, n, rng)
        particles = importance_sampling(problem, q, n - used, rng)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    rec = _is_record(problem, f, truth, particles, {"pilot_sims": used})
    # kernel estimate on the same particles
    try:
        kest, info = kernel_posterior_expectation(particles, problem, f, return_info=True)
        rec.update(kernel_estimate=kest, kernel_sq_error=squared_error(kest, truth),
                   kernel_underflow=info.n_underflow, kernel_converged=info.converged)
    except LfiError as err:
        rec.update(kernel_estimate=None, kernel_sq_error=None, kernel_error=type(err).__name__)
    return rec, particles


def _kde_oracle(ctx: Context) -> dict:
    problem = linear_problem()
    f = _kde_target()
    out = {"truth": posterior_expectation(problem, f), "variance_times_n": {}}
    for tok in ("prior", "posterior", "ess-opt", "targeted", "stratified-targeted"):
        key = "stratified-density" if tok == "stratified-targeted" else tok
        out["variance_times_n"][key] = independent_sampling_variance(problem, make_density(tok, problem, f), f, 1)
    return out


# ---------------------------------------------------------------------------
# smc
# ---------------------------------------------------------------------------

SMC_SCHEDULES = {"slow": SLOW_SCHEDULE, "fast": FAST_SCHEDULE, "slow2": SLOW_SCHEDULE[:-1]}
SMC_KERNELS = {"mvn": "local-mvn", "box": "uniform-box"}


def _parse_smc(strategy: str):
    if strategy == "rejection":
        return (1.0,), "local-mvn"
    try:
        sched, kern = strategy.split("-")
        return SMC_SCHEDULES[sched], SMC_KERNELS[kern]
    except (ValueError, KeyError):
        raise ValueError(
            f"unknown smc strategy {strategy!r}; use rejection or <slow|fast|slow2>-<mvn|box>"
        ) from None


def _smc_config(ctx: Context, strategy: str, n: int) -> SmcConfig:
    key = ("smc-config", strategy, n)
    if key not in ctx.cache:
        sched, kern = _parse_smc(strategy)
        if strategy == "rejection":
            cfg = SmcConfig(sched, make_kernel(kern), n, n, "simulations")
        else:
            pop = tune_population(EllipsoidProblem(), sched, kern, n, stream(ctx.seed, "smc-tune", 0, hash_token(strategy)))
            cfg = SmcConfig(sched, make_kernel(kern), 10**9, pop, "acceptances")
        ctx.cache[key] = cfg
    return ctx.cache[key]


def hash_token(token: str) -> int:
    import zlib

    return zlib.crc32(token.encode())


def _abc_cov(ctx: Context, eps: float) -> np.ndarray:
    key = ("abc-cov", eps)
    if key not in ctx.cache:
        ctx.cache[key] = abc_covariance_reference(eps)
    return ctx.cache[key]


def _smc_trial(ctx: Context, n: int, t: int, s_idx: int, strategy: str):
    cfg = _smc_config(ctx, strategy, n)
    run = run_smc(EllipsoidProblem(), cfg, stream(ctx.seed, "smc", t, s_idx))
    mu, cov, _ = ellipsoid_true_posterior()
    eps = run[-1].epsilon
    rec = {
        "n_sims": run.n_sims,
        "population": cfg.per_round_target,
        "stopped_early": run.stopped_early,
        "round_acceptance": [r.acceptance_rate for r in run],
        "final_epsilon": eps,
        "final_acceptance_rate": run[-1].n_acc / run.n_sims,
    }
    if run.stopped_early or run[-1].n_acc < 2:
        rec.update(_degenerate(run.stopped_early or "fewer than two accepted particles"))
        return rec, run
    abc_cov = _abc_cov(ctx, eps)
    for tag, parts in (("", final_round_particles(run)), ("all_", all_rounds_particles(run))):
        m, c = particle_mean_cov(parts)
        rec[tag + "mean_sq_error"] = squared_error(m, mu)
        rec[tag + "abc_cov_sq_error"] = squared_error(c, abc_cov)
        rec[tag + "true_cov_sq_error"] = squared_error(c, cov)
        rec[tag + "ess"] = effective_sample_size(parts.weight)
        if not tag:
            rec["estimate"] = m.tolist()
    rec.update(degenerate=False, sq_error=rec["mean_sq_error"])
    return rec, run


def _smc_oracle(ctx: Context) -> dict:
    mu, cov, z = ellipsoid_true_posterior()
    return {
        "true_mean": mu.tolist(),
        "true_cov": cov.tolist(),
        "normalizer": z,
        "abc_cov_quadrature": {str(e): abc_covariance_quadrature(e).tolist() for e in (1.0, 2.0, 4.0, 8.0)},
        "schedules": {k: list(v) for k, v in SMC_SCHEDULES.items()},
    }


def _check_smc(strategy):
    _parse_smc(strategy)


def _check_in(tokens):
    def check(strategy):
        if strategy not in tokens:
            raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(tokens)}")

    return check


IS_TOKENS = ("rejection", "prior", "posterior", "ess-opt", "targeted")

EXPERIMENTS: dict[str, Experiment] = {
    "two-param": Experiment(
        "two-param", (1000,), 10_000,
        ("prior", "rejection", "ibs", "ess-opt", "unnorm-opt", "mse-opt"),
        _two_param_trial, _two_param_oracle, "prior", _check_two_param,
    ),
    "discrete-gaussian": Experiment(
        "discrete-gaussian", (10_000,), 1000,
        ("prior", "posterior", "ess-opt", "unnorm-opt", "mse-opt", "uniform"),
        _dg_trial, _dg_oracle, "prior",
        _check_in(("prior", "posterior", "ess-opt", "unnorm-opt", "mse-opt", "uniform", "ibs", "adaptive")),
    ),
    "adaptive": Experiment(
        "adaptive", (320, 2**14), 1000, ("prior", "adaptive-posterior", "adaptive", "optimal"),
        _adaptive_trial, _adaptive_oracle, "optimal",
        _check_in(("prior", "adaptive-posterior", "adaptive", "optimal")),
    ),
    "continuous": Experiment(
        "continuous", (3200,), 1000, ("prior", "posterior", "ess-opt", "targeted"),
        _continuous_like_trial("continuous", laplace_problem, _laplace_target),
        _continuous_oracle("continuous", laplace_problem, _laplace_target, ("prior", "posterior", "ess-opt", "targeted")),
        "targeted", _check_in(IS_TOKENS),
    ),
    "kde": Experiment(
        "kde", (1000,), 500, KDE_TOKENS, _kde_trial, _kde_oracle, "prior", _check_in(KDE_TOKENS),
    ),
    "model-selection": Experiment(
        "model-selection", (3200,), 1000, ("prior", "posterior", "ess-opt", "targeted"),
        _continuous_like_trial("model-selection", model_selection_problem, _model_target),
        _continuous_oracle("model-selection", model_selection_problem, _model_target,
                           ("prior", "posterior", "ess-opt", "targeted")),
        "targeted", _check_in(IS_TOKENS),
    ),
    "smc": Experiment(
        "smc", (34000,), 100, ("rejection", "slow-mvn", "fast-mvn", "slow-box", "fast-box", "slow2-mvn"),
        _smc_trial, _smc_oracle, "rejection", _check_smc,
    ),
}
