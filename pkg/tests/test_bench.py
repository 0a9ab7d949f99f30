import json
import math

import numpy as np
import pytest

from lfi_lab.bench.cli import main
from lfi_lab.bench.experiments import EXPERIMENTS
from lfi_lab.bench.runner import ExperimentConfig, build_summary, nearest_rank, run_experiment, run_records, summarize
from lfi_lab.rng import stream


def _rec(v, **kw):
    return {"sq_error": v, "degenerate": False, **kw}


def test_summarize_small_sample():
    s = summarize([_rec(v) for v in (1, 2, 3, 4)])
    assert s["mean"] == 2.5 and s["q25"] == 2 and s["q75"] == 4 and s["median"] == 3
    assert s["n_trials"] == 4 and s["n_degenerate"] == 0


def test_summarize_constant_and_single():
    s = summarize([_rec(0.7, ess=3.0)] * 5)
    assert s["se"] == 0 and s["means"]["ess"] == 3.0
    one = summarize([_rec(0.25)])
    assert one["q25"] == one["median"] == one["q75"] == one["mean"] == 0.25


def test_summarize_degenerate_handling():
    recs = [_rec(1.0), {"sq_error": None, "degenerate": True}, _rec(3.0)]
    s = summarize(recs)
    assert s["n_degenerate"] == 1 and s["mean"] == 2.0
    empty = summarize([{"sq_error": None, "degenerate": True}])
    assert empty["empty"] is True
    with pytest.raises(ValueError):
        summarize([])


def test_nearest_rank_bounds():
    vals = list(range(1, 11))
    assert nearest_rank(vals, 0) == 1 and nearest_rank(vals, 100) == 10
    assert nearest_rank(vals, 50) == 6


def test_streams_are_independent_and_reproducible():
    a = stream(3, "x", 1, 2).random(4)
    np.testing.assert_array_equal(a, stream(3, "x", 1, 2).random(4))
    assert not np.array_equal(a, stream(3, "x", 1, 3).random(4))
    assert not np.array_equal(a, stream(3, "y", 1, 2).random(4))


@pytest.mark.parametrize("exp", sorted(EXPERIMENTS))
def test_every_experiment_runs(exp, tmp_path):
    n = {"smc": 3000, "adaptive": 640}.get(exp, 200)
    cfg = ExperimentConfig(exp, (n,), 2, 0, None, str(tmp_path))
    summary = run_experiment(cfg)
    lines = (tmp_path / "trials.jsonl").read_text().splitlines()
    assert len(lines) == 2 * len(EXPERIMENTS[exp].default_strategies)
    assert summary["schema_version"] == 1 and "nearest rank" in summary["percentile_convention"]
    assert json.loads((tmp_path / "summary.json").read_text()) == summary
    recs = [json.loads(l) for l in lines]
    assert {r["n"] for r in recs} == {n}
    for r in recs:
        assert r["degenerate"] or r["sq_error"] is not None
        if "counts" in r:
            assert sum(r["counts"]) == n


def test_determinism_and_parallelism(tmp_path):
    base = dict(experiment="continuous", n=(300,), trials=6, seed=5, strategies=("prior", "targeted"))
    run_experiment(ExperimentConfig(**base, out=str(tmp_path / "a")))
    run_experiment(ExperimentConfig(**base, out=str(tmp_path / "b")))
    run_experiment(ExperimentConfig(**base, out=str(tmp_path / "c"), workers=2))
    a = (tmp_path / "a" / "trials.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "trials.jsonl").read_bytes() == (tmp_path / "c" / "trials.jsonl").read_bytes()
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "c" / "summary.json").read_bytes()


def test_baseline_ratio_in_summary():
    cfg = ExperimentConfig("two-param", (200,), 50, 0, ("prior", "mse-opt"))
    summ = build_summary(cfg, [r for r, _ in run_records(cfg)])
    g = {x["strategy"]: x for x in summ["groups"]}
    assert g["prior"]["mse_ratio_baseline_over_strategy"] == 1.0
    assert g["mse-opt"]["mse_ratio_baseline_over_strategy"] == pytest.approx(g["prior"]["mean"] / g["mse-opt"]["mean"])


def test_two_param_error_curve_shape():
    splits = [round(0.05 * i, 2) for i in range(1, 20)]
    cfg = ExperimentConfig("two-param", (100,), 2000, 0, tuple(f"split:{x}" for x in splits))
    summ = build_summary(cfg, [r for r, _ in run_records(cfg)])
    means = [g["mean"] for g in summ["groups"]]
    best = splits[int(np.argmin(means))]
    assert 0.2 <= best <= 0.35


def test_honest_mode_uses_pilot(tmp_path):
    cfg = ExperimentConfig("continuous", (400,), 3, 0, ("targeted",), mode="honest")
    recs = [r for r, _ in run_records(cfg)]
    assert all(r["pilot_sims"] == 40 for r in recs)


def test_dump_particles(tmp_path):
    run_experiment(ExperimentConfig("kde", (100,), 1, 0, ("prior",), str(tmp_path), dump_particles=True))
    run_experiment(ExperimentConfig("smc", (2000,), 1, 0, ("fast-mvn",), str(tmp_path / "s"), dump_particles=True))
    assert (tmp_path / "particles" / "n100_prior_t0.csv").exists()
    assert sorted(p.name for p in (tmp_path / "s" / "particles" / "n2000_fast-mvn_t0").iterdir())[0] == "round1.csv"


def test_discrete_gaussian_targets():
    for target in ("posterior", "mean", "second-moment", "ci95"):
        cfg = ExperimentConfig("discrete-gaussian", (500,), 2, 0, ("prior", "mse-opt"), target=target)
        assert len(run_records(cfg)) == 4
    with pytest.raises(ValueError):
        run_records(ExperimentConfig("discrete-gaussian", (500,), 1, 0, ("prior",), target="median"))


def test_cli_run_and_oracle(tmp_path, capsys):
    assert main(["run", "two-param", "--n", "100,200", "--trials", "3", "--strategies", "prior,ibs",
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "ibs" in out and "n=    200" in out
    assert len((tmp_path / "trials.jsonl").read_text().splitlines()) == 12
    assert main(["oracle", "two-param"]) == 0
    oracle = json.loads(capsys.readouterr().out)
    assert oracle["truth"] == pytest.approx(6 / 7)
    assert main(["oracle", "model-selection"]) == 0
    assert json.loads(capsys.readouterr().out)["truth"] == pytest.approx(0.9089, abs=5e-4)


def test_cli_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "nope", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert main(["run", "two-param", "--strategies", "bogus", "--trials", "1", "--out", str(tmp_path)]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "two-param", "--trials", "1", "--n", "10", "--out", str(blocker / "sub")]) == 1
    err = capsys.readouterr().err
    assert "lfi-lab" in err


def test_infinite_scores_serialise(tmp_path):
    cfg = ExperimentConfig("two-param", (20,), 30, 0, ("split:0.1",), str(tmp_path))
    run_experiment(cfg)
    recs = [json.loads(l) for l in (tmp_path / "trials.jsonl").read_text().splitlines()]
    assert any(r["degenerate"] for r in recs)
    for r in recs:
        for v in r.values():
            assert not (isinstance(v, float) and not math.isfinite(v))
