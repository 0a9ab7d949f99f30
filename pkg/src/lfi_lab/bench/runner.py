"""Trial orchestration, aggregation and output files."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .experiments import EXPERIMENTS, Context

SCHEMA_VERSION = 1
PERCENTILE_CONVENTION = (
    "nearest rank: the p-th percentile of n sorted values is the value at rank ceil((n + 1) p / 100), "
    "clipped to [1, n]"
)
SE_CAVEAT = (
    "standard errors are naive standard errors of the mean; ratios of means ignore the variance "
    "of the denominator and likely understate variability"
)


@dataclass
class ExperimentConfig:
    experiment: str
    n: tuple[int, ...] | None = None
    trials: int | None = None
    seed: int = 0
    strategies: tuple[str, ...] | None = None
    out: str | None = None
    mode: str = "benchmark"
    target: str | None = None
    dump_particles: bool = False
    workers: int = 1

    def resolved(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise KeyError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        exp = EXPERIMENTS[self.experiment]
        n = tuple(int(v) for v in (self.n or exp.default_n))
        trials = int(self.trials if self.trials is not None else exp.default_trials)
        strategies = tuple(self.strategies or exp.default_strategies)
        if trials < 1 or any(v < 1 for v in n):
            raise ValueError("trials and budgets must be positive")
        if self.mode not in ("benchmark", "honest"):
            raise ValueError("mode must be 'benchmark' or 'honest'")
        if exp.check_strategy is not None:
            for s in strategies:
                exp.check_strategy(s)
        return ExperimentConfig(self.experiment, n, trials, int(self.seed), strategies, self.out, self.mode,
                                self.target, self.dump_particles, max(1, int(self.workers)))


def nearest_rank(sorted_vals, p: float):
    n = len(sorted_vals)
    rank = min(n, max(1, math.ceil((n + 1) * p / 100.0)))
    return sorted_vals[rank - 1]


def _numeric(v):
    if isinstance(v, bool) or v is None:
        return None
    if isinstance(v, (int, float)):
        return float(v)
    if v == "inf":
        return math.inf
    return None


def summarize(records, metric: str = "sq_error") -> dict:
    """Mean, nearest-rank quartiles and standard error of ``metric`` plus means of other scalar fields.

    Degenerate records are counted and excluded from the statistics.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    good = [r for r in records if not r.get("degenerate") and _numeric(r.get(metric)) is not None]
    out = {"n_trials": len(records), "n_degenerate": len(records) - len(good), "metric": metric}
    if not good:
        out["empty"] = True
        return out
    vals = np.array([_numeric(r[metric]) for r in good])
    srt = np.sort(vals)
    out.update(
        empty=False,
        mean=float(vals.mean()),
        se=float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0,
        q25=float(nearest_rank(srt, 25)),
        median=float(nearest_rank(srt, 50)),
        q75=float(nearest_rank(srt, 75)),
    )
    means = {}
    keys = sorted({k for r in good for k in r})
    for k in keys:
        if k == metric:
            continue
        xs = [_numeric(r.get(k)) for r in good]
        xs = [x for x in xs if x is not None]
        if xs and len(xs) == len(good):
            arr = np.array(xs)
            means[k] = float(arr.mean())
            means[k + "_se"] = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    out["means"] = means
    return out


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.generic):
        return _json_safe(v.item())
    if isinstance(v, np.ndarray):
        return _json_safe(v.tolist())
    return v


def _run_cells(args):
    cfg, cells = args
    exp = EXPERIMENTS[cfg.experiment]
    ctx = Context(cfg.seed, cfg.mode, cfg.target, cfg.dump_particles)
    out = []
    for n, trial, s_idx, strategy in cells:
        rec, particles = exp.trial(ctx, n, trial, s_idx, strategy)
        rec = {"experiment": cfg.experiment, "n": n, "trial": trial, "strategy": strategy, **rec}
        out.append((_json_safe(rec), particles if cfg.dump_particles else None))
    return out


def _cells(cfg: ExperimentConfig):
    return [
        (n, t, s_idx, s)
        for n in cfg.n
        for t in range(cfg.trials)
        for s_idx, s in enumerate(cfg.strategies)
    ]


def run_records(cfg: ExperimentConfig):
    """All records in (budget, trial, strategy) order, independent of ``workers``."""
    cfg = cfg.resolved()
    cells = _cells(cfg)
    if cfg.workers == 1:
        return _run_cells((cfg, cells))
    # contiguous chunks keep the output order equal to the serial order
    k = cfg.workers * 4
    chunks = [cells[i * len(cells) // k : (i + 1) * len(cells) // k] for i in range(k)]
    with ProcessPoolExecutor(cfg.workers) as pool:
        parts = pool.map(_run_cells, [(cfg, c) for c in chunks if c])
    return [x for part in parts for x in part]


def build_summary(cfg: ExperimentConfig, records) -> dict:
    cfg = cfg.resolved()
    exp = EXPERIMENTS[cfg.experiment]
    groups = []
    for n in cfg.n:
        by_strategy = {}
        for s in cfg.strategies:
            rs = [r for r in records if r["n"] == n and r["strategy"] == s]
            by_strategy[s] = summarize(rs)
        base = by_strategy.get(exp.baseline)
        for s, summ in by_strategy.items():
            if base and not base.get("empty") and not summ.get("empty") and summ["mean"] > 0:
                summ["mse_ratio_baseline_over_strategy"] = base["mean"] / summ["mean"]
            groups.append({"n": n, "strategy": s, **summ})
    return _json_safe({
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "config": {k: v for k, v in asdict(cfg).items() if k not in ("out", "workers")},
        "baseline": exp.baseline,
        "percentile_convention": PERCENTILE_CONVENTION,
        "standard_error_caveat": SE_CAVEAT,
        "groups": groups,
    })


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run trials, write ``trials.jsonl`` and ``summary.json`` (and particle CSVs) under ``cfg.out``."""
    cfg = cfg.resolved()
    out = Path(cfg.out) if cfg.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results = run_records(cfg)
    records = [r for r, _ in results]
    summary = build_summary(cfg, records)
    if out is not None:
        with open(out / "trials.jsonl", "w") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        if cfg.dump_particles:
            pdir = out / "particles"
            pdir.mkdir(exist_ok=True)
            for r, parts in results:
                if parts is None:
                    continue
                stem = f"n{r['n']}_{r['strategy'].replace(':', '-')}_t{r['trial']}"
                if hasattr(parts, "dump_csv"):
                    parts.dump_csv(pdir / stem)
                else:
                    parts.to_csv(pdir / f"{stem}.csv")
    return summary
