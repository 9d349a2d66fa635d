import dataclasses
import json
import shutil

import pandas as pd
import pytest

from ehrfm.pipeline import (
    STAGE_NAMES,
    ConfigError,
    Manifest,
    MissingArtifactError,
    RunConfig,
    StaleArtifactError,
    hash_path,
    report_hashes,
    run_experiment,
    run_stage,
)
from ehrfm.pipeline import cli, stages

CLI_VERBS = ["ingest", "synth", "vocab", "tokenize", "split", "pretrain", "extract", "forest",
             "classify-rep", "finetune", "finetune-urt", "finetune-local", "dynamics", "curves",
             "pca", "summarize", "report"]

TINY = {
    "seed": 0,
    "sites": {"source": {"name": "A", "synth": {"profile": "A", "n_patients": 1000},
                         "ratios": [0.7, 0.1, 0.2]},
              "target": {"name": "B", "synth": {"profile": "B", "n_patients": 300},
                         "ratios": [0.1, 0.1, 0.8]}},
    "model": {"d_model": 8, "n_heads": 2, "d_ff": 16},
    "pretrain": {"epochs": 1},
    "finetune": {"epochs": 1},
    "finetune_urt": {"epochs": 1},
    "finetune_local": {"search_space": [{"lr": 0.0, "epochs": 0}, {"lr": 1e-3, "epochs": 1}]},
    "curves": {"n_per_class": 10},
}


def tiny_config(out, **changes):
    obj = json.loads(json.dumps(TINY))
    obj.update(changes)
    obj["out"] = str(out)
    return RunConfig.from_dict(obj)


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    cfg = tiny_config(out)
    run_experiment(cfg)
    return cfg


# ------------------------------------------------------------------ config


def test_config_defaults_and_overrides(tmp_path):
    cfg = tiny_config(tmp_path)
    assert cfg.raw["tokenizer"]["max_len"] == 1024
    assert cfg.with_overrides(seed=9, out="x").seed == 9


@pytest.mark.parametrize("change", [
    {"bogus": 1},
    {"seed": -1},
    {"model": {"d_model": 8, "n_heads": 3}},
    {"outcomes": ["not_an_outcome"]},
    {"sites": {"source": {"name": "A", "directory": "/does/not/exist", "ratios": [0.7, 0.1, 0.2]},
               "target": {"name": "B", "synth": {"profile": "B", "n_patients": 5},
                          "ratios": [0.1, 0.1, 0.8]}}},
    {"sites": {"source": {"name": "A", "synth": {"profile": "A", "n_patients": 5},
                          "ratios": [0.7, 0.1, 0.1]},
               "target": {"name": "B", "synth": {"profile": "B", "n_patients": 5},
                          "ratios": [0.1, 0.1, 0.8]}}},
])
def test_invalid_configs(change):
    obj = {**TINY, **change}
    with pytest.raises(ConfigError):
        RunConfig.from_dict(obj)


def test_cli_verbs_exist():
    assert set(CLI_VERBS) <= set(STAGE_NAMES)
    parser = cli.build_parser()
    for verb in CLI_VERBS + ["run-all"]:
        assert parser.parse_args([verb, "--config", "c.json"]).verb == verb
    args = parser.parse_args(["--config", "c.json", "--stage", "pca", "--seed", "4", "--force",
                              "--out", "o"])
    assert (args.stage, args.seed, args.force, args.out) == ("pca", 4, True, "o")


# ------------------------------------------------------------------ manifest


def test_hash_path_tracks_content(tmp_path):
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "a.txt").write_text("x")
    h = hash_path(tmp_path / "d")
    (tmp_path / "d" / "a.txt").write_text("y")
    assert hash_path(tmp_path / "d") != h
    (tmp_path / "d" / "a.txt").write_text("x")
    assert hash_path(tmp_path / "d") == h


def test_manifest_detects_changed_inputs(tmp_path):
    m = Manifest(tmp_path)
    f = tmp_path / "a.txt"
    f.write_text("1")
    m.record("make", {"inputs": {}, "outputs": {"a.txt": hash_path(f)}})
    assert m.check_inputs([f])[1] == []
    f.write_text("2")
    assert m.check_inputs([f])[1]
    with pytest.raises(MissingArtifactError):
        m.check_inputs([tmp_path / "nope"])
    assert Manifest(tmp_path).stages["make"]["outputs"]


def test_stage_before_its_inputs_is_missing(tmp_path):
    with pytest.raises(MissingArtifactError):
        run_stage(tiny_config(tmp_path / "out"), "tokenize")


# ------------------------------------------------------------------ full run


def test_report_bundle_contents(finished_run):
    root = finished_run.out
    report = json.loads((root / "reports" / "report.json").read_text())
    grids = pd.read_csv(root / "reports" / "auc_grids.csv")
    for model in ("representation_lr", "sft"):
        g = grids[grids["model"] == model]
        assert len(g) == 2 * 3 * 4
        assert set(g["site"]) == {"A", "B"}
    local = grids[grids["model"] == "local_sft"]
    assert len(local) == 3 * 4 and set(local["site"]) == {"B"}
    assert set(report) >= {"leakage"}
    for name in ("sft.csv", "sft_urt.csv", "lr_urt.csv"):
        curves = pd.read_csv(root / "reports" / "curves" / name)
        assert set(curves["label"]) == {0, 1}
    for site in ("A", "B"):
        assert (root / "reports" / "cohort" / f"{site}.json").exists()
        assert (root / "reports" / "dynamics" / f"{site}.json").exists()
    pca = pd.read_csv(root / "reports" / "pca" / "deciles.csv")
    assert len(pca) == 10


def test_manifest_entries(finished_run):
    m = Manifest(finished_run.out)
    assert set(m.stages) == set(STAGE_NAMES)
    for name, entry in m.stages.items():
        assert entry["seed"] == 0
        assert entry["wall_time_s"] >= 0
        assert entry["outputs"], name
    assert m.failed is None


def test_leakage_checks_recorded(finished_run):
    m = Manifest(finished_run.out)
    checks = [c for e in m.stages.values() for c in e["info"].get("leakage", [])]
    assert checks
    assert all(c["test_overlap"] == 0 for c in checks)


def test_rerun_reproduces_outputs(finished_run, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(finished_run.out, out)
    cfg = finished_run.with_overrides(out=str(out))
    before = Manifest(out).stages["pca"]["outputs"]
    assert run_stage(cfg, "pca")["outputs"] == before


def test_stale_inputs_refused_then_forced(finished_run, tmp_path):
    out = tmp_path / "stale"
    shutil.copytree(finished_run.out, out)
    cfg = finished_run.with_overrides(out=str(out))
    vocab_file = out / "vocab" / "vocab.json"
    vocab_file.write_text(vocab_file.read_text() + " ")
    with pytest.raises(StaleArtifactError):
        run_stage(cfg, "tokenize")
    entry = run_stage(cfg, "tokenize", force=True)
    assert entry["forced"]
    assert any("stale" in w or "changed" in w for w in entry["warnings"])
    assert Manifest(out).stages["tokenize"]["forced"]
    # pretrain read the old vocabulary, so anything consuming its checkpoint is stale
    with pytest.raises(StaleArtifactError):
        run_stage(cfg, "extract")


def test_failed_stage_is_recorded(finished_run, tmp_path, monkeypatch):
    out = tmp_path / "fail"
    shutil.copytree(finished_run.out, out)
    cfg = finished_run.with_overrides(out=str(out))

    def boom(run):
        raise RuntimeError("exploded")

    monkeypatch.setitem(stages._BY_NAME, "pca",
                        dataclasses.replace(stages._BY_NAME["pca"], fn=boom))
    with pytest.raises(RuntimeError):
        run_stage(cfg, "pca")
    assert Manifest(out).failed == {"stage": "pca", "error": "RuntimeError: exploded"}


# ------------------------------------------------------------------ CLI exit codes


def _write(tmp_path, obj):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(obj))
    return str(path)


def test_exit_code_config_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["synth", "--config", str(path)]) == cli.EXIT_CONFIG == 2
    assert cli.main(["synth", "--config", str(tmp_path / "missing.json")]) == 2


def test_exit_code_missing_artifact(tmp_path):
    cfg = _write(tmp_path, {**TINY, "out": str(tmp_path / "out")})
    assert cli.main(["vocab", "--config", cfg]) == cli.EXIT_ARTIFACT == 3


def test_exit_code_numeric_failure(finished_run, tmp_path, monkeypatch):
    from ehrfm.seqmodel import NumericalError

    out = tmp_path / "num"
    shutil.copytree(finished_run.out, out)
    cfg = _write(tmp_path, {**TINY, "out": str(out)})

    def nan_loss(run):
        raise NumericalError("non-finite loss")

    monkeypatch.setitem(stages._BY_NAME, "pca",
                        dataclasses.replace(stages._BY_NAME["pca"], fn=nan_loss))
    assert cli.main(["--config", cfg, "--stage", "pca"]) == cli.EXIT_NUMERIC == 4


def test_cli_runs_a_stage(finished_run, tmp_path, capsys):
    out = tmp_path / "ok"
    shutil.copytree(finished_run.out, out)
    cfg = _write(tmp_path, {**TINY, "out": str(out)})
    assert cli.main(["pca", "--config", cfg]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["seed"] == 0


def test_report_hashes_cover_reports(finished_run):
    hashes = report_hashes(finished_run.out)
    assert "report.json" in hashes and "auc_grids.csv" in hashes
