import json

import pytest

from pipeline import FIXTURES, run_pipeline, snapshot
from proctrace.cli import EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    work = tmp_path_factory.mktemp("pipeline")
    return work, run_pipeline(work)


def test_pipeline_exit_codes(run):
    _, codes = run
    assert all(c == EXIT_OK for c in codes.values()), codes


def test_ingest_one_output_per_input(tmp_path):
    assert main(["ingest", str(FIXTURES / "raw"), "--out", str(tmp_path)]) == EXIT_OK
    assert sorted(p.name for p in tmp_path.iterdir()) == ["chat_delegate.jsonl", "chat_repeat.jsonl",
                                                          "chat_small.jsonl"]


def test_ingest_mixed_reports_partial(tmp_path, capsys):
    assert main(["ingest", str(FIXTURES / "mixed"), "--out", str(tmp_path)]) == EXIT_PARTIAL
    assert len(list(tmp_path.iterdir())) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "broken.jsonl" in err[0] and "byte" in err[0]


def test_ingest_rerun_identical(tmp_path):
    main(["ingest", str(FIXTURES / "raw"), "--out", str(tmp_path / "a")])
    main(["ingest", str(FIXTURES / "raw"), "--out", str(tmp_path / "b")])
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_analyze_writes_scorecards_and_summary(run):
    work, _ = run
    cards = sorted((work / "cards").glob("*.scorecard.json"))
    assert len(cards) == 51
    summary = json.loads((work / "cards" / "summary.json").read_text())
    assert summary["schema"] == "run-summary/1"
    card = json.loads((work / "cards" / "beta-00.scorecard.json").read_text())
    assert card["pb"] == pytest.approx(card["eta"] * card["q_def"] + (1 - card["eta"]) * card["cp"])


def test_analyze_needs_model_for_learned_methods(tmp_path, capsys):
    code = main(["analyze", str(FIXTURES / "corpus" / "alpha-00.jsonl"), "--method", "beta_smoothed",
                 "--out", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "model" in capsys.readouterr().err


def test_injected_duplicate_reaches_error_band(tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text("injections:\n  - {defect: duplicate_step, intensity: 1.0}\n")
    assert main(["synth", "--spec", str(spec), "--count", "1", "--seed", "3", "--out", str(tmp_path / "s")]) == 0
    traj = next((tmp_path / "s").glob("*[!h].jsonl"))
    assert main(["analyze", str(traj), "--out", str(tmp_path / "c")]) == EXIT_OK
    card = json.loads(next((tmp_path / "c").glob("*.scorecard.json")).read_text())
    dup = next(f for f in card["findings"] if f["defect"] == "duplicate_step")
    assert dup["severity"] == "error"


def test_invalid_trajectory_skipped_or_strict(tmp_path, capsys):
    good = FIXTURES / "corpus" / "alpha-00.jsonl"
    bad = tmp_path / "bad.jsonl"
    bad.write_text(good.read_text()[:200] + "\n")
    assert main(["analyze", str(good), str(bad), "--out", str(tmp_path / "o")]) == EXIT_PARTIAL
    assert (tmp_path / "o" / "alpha-00.scorecard.json").exists()
    assert main(["analyze", str(bad), str(good), "--strict", "--out", str(tmp_path / "s")]) == EXIT_PARTIAL
    assert not (tmp_path / "s" / "alpha-00.scorecard.json").exists()


def test_calibrate_refuses_eval_cases(run, tmp_path, capsys):
    work, _ = run
    splits = json.loads((work / "tables" / "splits.json").read_text())
    leak = work / "hard" / f"{splits['evaluation'][0]}.scorecard.json"
    code = main(["calibrate", str(leak), "--annotations", str(FIXTURES / "annotations.jsonl"),
                 "--splits", str(work / "tables" / "splits.json"), "--out", str(tmp_path / "m.json")])
    assert code == EXIT_USAGE
    assert "split leakage" in capsys.readouterr().err


def test_split_keeps_cases_together(run):
    work, _ = run
    splits = json.loads((work / "tables" / "splits.json").read_text())
    side = {}
    for part in ("development", "calibration", "evaluation"):
        for tid in splits[part]:
            card = json.loads((work / "hard" / f"{tid}.scorecard.json").read_text())
            assert side.setdefault(card.get("case_id") or tid, part) == part


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_bootstrap_on_eval_split_any_seed(tmp_path, seed):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"seed: {seed}\nevaluation: {{bootstrap_replicates: 20}}\n")
    hard = tmp_path / "hard"
    assert main(["--config", str(cfg), "analyze", str(FIXTURES / "corpus"), "--out", str(hard)]) == EXIT_OK
    assert main(["--config", str(cfg), "evaluate", str(hard), "--analyses", "split", "--out", str(tmp_path)]) == EXIT_OK
    code = main(["--config", str(cfg), "evaluate", str(hard), "--splits", str(tmp_path / "splits.json"),
                 "--analyses", "bootstrap,rank_shift", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert json.loads((tmp_path / "bootstrap.json").read_text())["rows"]


def test_model_round_trips(run):
    from proctrace.calibration import CalibrationSet
    work, _ = run
    data = json.loads((work / "model.json").read_text())
    assert CalibrationSet.from_dict(data).to_dict() == data


def test_evaluate_writes_one_table_per_analysis(run):
    work, _ = run
    names = {p.stem for p in (work / "tables").glob("*.json")}
    assert names == {"splits", "metrics", "ece", "reliability", "kappa", "correlation", "bootstrap",
                     "eta_sweep", "rank_shift"}
    for n in names - {"splits"}:
        t = json.loads((work / "tables" / f"{n}.json").read_text())
        assert t["schema_version"] == "table/1" and t["columns"]


def test_kappa_without_dual_annotations(run, tmp_path, capsys):
    work, _ = run
    single = tmp_path / "single.jsonl"
    lines = [l for l in (FIXTURES / "annotations.jsonl").read_text().splitlines() if '"adjudicator"' in l]
    single.write_text("\n".join(lines) + "\n")
    code = main(["evaluate", str(work / "cards"), "--annotations", str(single), "--analyses", "kappa",
                 "--out", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "dual annotations" in capsys.readouterr().err


def test_metrics_need_annotations(run, tmp_path, capsys):
    work, _ = run
    assert main(["evaluate", str(work / "cards"), "--analyses", "metrics", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "annotation" in capsys.readouterr().err


def test_synth_counts_and_determinism(tmp_path):
    assert main(["synth", "--count", "0", "--out", str(tmp_path / "none")]) == EXIT_OK
    assert not (tmp_path / "none").exists() or not any((tmp_path / "none").iterdir())
    spec = FIXTURES / "synth_spec.yaml"
    for d in ("a", "b"):
        assert main(["synth", "--spec", str(spec), "--count", "10", "--seed", "4", "--out", str(tmp_path / d)]) == 0
    a = snapshot(tmp_path / "a")
    assert len(a) == 20 and a == snapshot(tmp_path / "b")
    truth = [json.loads(v) for k, v in a.items() if k.endswith(".truth.json")]
    assert all(t["labels"]["duplicate_step"] == "present" and t["labels"]["ghost_context"] == "present"
               for t in truth)


def test_infeasible_synth_spec(tmp_path, capsys):
    spec = tmp_path / "bad.yaml"
    spec.write_text("topology: cyclic\nn_units: 1\n")
    assert main(["synth", "--spec", str(spec), "--count", "1", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "infeasible" in capsys.readouterr().err


def test_inputs_not_mutated(tmp_path):
    before = snapshot(FIXTURES)
    run_pipeline(tmp_path)
    assert snapshot(FIXTURES) == before
