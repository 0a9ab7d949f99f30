"""Command line entry point: ``lfi-lab run`` and ``lfi-lab oracle``."""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import EXPERIMENTS, Context
from .runner import ExperimentConfig, _json_safe, run_experiment


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or comma-separated integers, got {text!r}")


def _tokens(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfi-lab", description="Likelihood-free inference experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment and write trials.jsonl and summary.json")
    run.add_argument("experiment", choices=sorted(EXPERIMENTS))
    run.add_argument("--n", type=_ints, help="budget or comma-separated budgets")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--strategies", type=_tokens, help="comma-separated strategy tokens")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--mode", choices=("benchmark", "honest"), default="benchmark",
                     help="benchmark: targeted densities use the exact target mean; honest: a pilot run")
    run.add_argument("--target", help="target function (discrete-gaussian: posterior, mean, second-moment, ci95)")
    run.add_argument("--dump-particles", action="store_true")
    run.add_argument("--workers", type=int, default=1)
    orc = sub.add_parser("oracle", help="print exact ground-truth values")
    orc.add_argument("experiment", choices=sorted(EXPERIMENTS))
    orc.add_argument("--target")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "oracle":
        out = EXPERIMENTS[args.experiment].oracle(Context(0, target=args.target))
        print(json.dumps(_json_safe(out), indent=1, sort_keys=True))
        return 0
    cfg = ExperimentConfig(
        args.experiment, args.n, args.trials, args.seed, args.strategies, args.out,
        args.mode, args.target, args.dump_particles, args.workers,
    )
    try:
        summary = run_experiment(cfg)
    except (KeyError, ValueError) as err:
        print(f"lfi-lab: error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"lfi-lab: cannot write output: {err}", file=sys.stderr)
        return 1
    for g in summary["groups"]:
        mean = g.get("mean")
        print(f"n={g['n']:>7} {g['strategy']:<22} mse={mean if mean is None else f'{mean:.4g}'} "
              f"degenerate={g['n_degenerate']}/{g['n_trials']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
