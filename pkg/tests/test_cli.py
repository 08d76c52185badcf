import json

import pytest

from pdupower.cli import RunConfig, main

SMALL = ["--clusters", "1", "--pdus-per-cluster", "3", "--machines-per-pdu", "4", "--days", "9"]
FOREST = ["--trees", "3", "--samples-per-group", "200"]


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _simulate(capsys, data_dir, *extra):
    code, out, _ = _run(capsys, "--data-dir", str(data_dir), "simulate", *SMALL, *extra)
    assert code == 0
    return json.loads(out)["run"]


def test_clean_simulation_preprocesses_to_zero_removals(tmp_path, capsys):
    # realistic PDU sizes; a 4-machine PDU can dip below 80% of its daily median
    run = _simulate(capsys, tmp_path, "--noise", "0", "--machines-per-pdu", "12")
    code, out, _ = _run(capsys, "--data-dir", str(tmp_path), "preprocess", "--run", run)
    assert code == 0 and json.loads(out)["n_removed"] == 0


def test_evaluate_without_model_is_missing_model(tmp_path, capsys):
    run = _simulate(capsys, tmp_path)
    _run(capsys, "--data-dir", str(tmp_path), "preprocess", "--run", run)
    code, _, err = _run(capsys, "--data-dir", str(tmp_path), "evaluate", "--run", run)
    assert code == 4 and "error[missing-model]" in err


def test_error_categories(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("PDUPOWER_DATA_DIR", str(tmp_path))
    code, _, err = _run(capsys, "preprocess", "--run", "nothing-here")
    assert code == 3 and "error[missing-input]" in err
    run = _simulate(capsys, tmp_path)
    code, _, err = _run(capsys, "train-perpdu", "--run", run)
    assert code == 3 and "preprocess" in err
    code, _, err = _run(capsys, "simulate", "--days", "0")
    assert code == 2 and "error[config]" in err
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"fleet": {"bogus": 1}}))
    code, _, err = _run(capsys, "simulate", "--config", str(cfg))
    assert code == 2
    (tmp_path / "runs" / run / "raw.tsv").write_bytes(b"#pdupower-telemetry\tversion=5\n")
    code, _, err = _run(capsys, "preprocess", "--run", run)
    assert code == 6 and "error[version]" in err


def test_run_config_round_trip():
    cfg = RunConfig()
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert RunConfig.from_dict(cfg.to_dict()).digest() == cfg.digest()


def _pipeline(data_dir, capsys, n_jobs):
    base = ["--data-dir", str(data_dir)]
    code, out, _ = _run(capsys, *base, "simulate", *SMALL, "--spikes", "1", "--gaps", "1")
    assert code == 0
    run = json.loads(out)["run"]
    steps = [
        ["preprocess"],
        ["train-perpdu", "--day", "6"],
        ["train-um", *FOREST, "--n-jobs", n_jobs],
        ["train-updu", *FOREST, "--n-jobs", n_jobs],
        ["predict", "--kind", "unified_machine", "--n-jobs", n_jobs],
        ["predict", "--kind", "per_pdu"],
        ["evaluate", "--n-jobs", n_jobs],
        ["report"],
    ]
    for step in steps:
        code, _, err = _run(capsys, *base, step[0], "--run", run, *step[1:])
        assert code == 0, (step, err)
    root = data_dir / "runs" / run
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_is_byte_identical_across_runs_and_threads(tmp_path, capsys):
    a = _pipeline(tmp_path / "a", capsys, "1")
    b = _pipeline(tmp_path / "b", capsys, "3")
    assert sorted(a) == sorted(b)
    assert "models/unified_machine-day0006.json" in a and "reports/evaluate.json" in a
    for name in a:
        assert a[name] == b[name], name
    report = json.loads(a["reports/evaluate.json"])
    assert set(report["summaries"]) == {"per_pdu", "unified_machine", "unified_pdu"}


def test_predict_rejects_training_day(tmp_path, capsys):
    run = _simulate(capsys, tmp_path)
    base = ["--data-dir", str(tmp_path)]
    _run(capsys, *base, "preprocess", "--run", run)
    _run(capsys, *base, "train-perpdu", "--run", run, "--day", "6")
    code, _, err = _run(capsys, *base, "predict", "--run", run, "--day", "5")
    assert code == 2 and "training window" in err


def test_powerdrop_command(tmp_path, capsys):
    code, out, _ = _run(capsys, "--data-dir", str(tmp_path), "powerdrop", "--clusters", "2",
                        "--pdus-per-cluster", "1", "--machines-per-pdu", "4", "--train-days", "2",
                        *FOREST)
    assert code == 0
    summary = json.loads(out)
    assert set(summary["per_cluster"]) == {"c00", "c01"}


def test_drop_split_across_tiers():
    from pdupower.cli import _tier_drop

    assert _tier_drop(0.6, (0.5, 0.3, 0.2)) == pytest.approx((1.0, 1 / 3, 0.0))
    assert _tier_drop(0.0, (0.5, 0.3, 0.2)) == (0.0, 0.0, 0.0)
