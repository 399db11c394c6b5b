import json

import pytest

from monoheight import cli
from monoheight import pipeline as pl
from monoheight.config import (
    DEFAULTS,
    canonical_json,
    check_sidecar,
    config_hash,
    load_config,
    sidecar_path,
    stage_seed,
    write_sidecar,
)
from monoheight.errors import ConfigHashMismatch, DivergenceFault, InputMissing, SpecError, StageFailure

SMALL = """
[synth]
n = 300

[training]
max_epochs = 3

[regressors]
widths = [16, 16, 16]
stream_widths = [16, 8]
fusion_width = 8
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


# --- config -------------------------------------------------------------------------


def test_defaults_and_overrides(small_config):
    assert load_config() == DEFAULTS
    cfg = load_config(small_config, {"run": {"seed": 5}})
    assert cfg["synth"]["n"] == 300 and cfg["run"]["seed"] == 5 and cfg["training"]["lr"] == 0.01


@pytest.mark.parametrize("text", ["[training]\nlearning_rate = 1\n", "[assignment]\ntau = 1.5\n", "[run]\nstages = ['train', 'synth']\n",
                                  "[regressors]\narch = 'huge'\n", "not toml ["])
def test_bad_configs(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(SpecError):
        load_config(path)
    with pytest.raises(SpecError):
        load_config(tmp_path / "absent.toml")


def test_config_hash_tracks_resolved_values(tmp_path):
    explicit = tmp_path / "explicit.toml"
    explicit.write_text("[assignment]\ntau = 0.9\n")
    assert config_hash(load_config(explicit)) == config_hash(load_config())
    assert config_hash(load_config(None, {"run": {"seed": 1}})) != config_hash(load_config())
    assert canonical_json({"b": 1, "a": [1.5]}) == b'{"a":[1.5],"b":1}'


def test_stage_seeds_are_named_and_stable():
    assert stage_seed(0, "train") == stage_seed(0, "train")
    assert len({stage_seed(0, s) for s in ("synth", "split", "train")}) == 3
    assert stage_seed(0, "train") != stage_seed(1, "train")


def test_sidecar_refusal_and_force(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("a\n")
    check_sidecar(f, "abc")  # no sidecar: external input accepted
    write_sidecar(f, "abc", "test", {"k": 1})
    assert json.loads(sidecar_path(f).read_text()) == {"config_hash": "abc", "producer": "test", "k": 1}
    check_sidecar(f, "abc")
    with pytest.raises(ConfigHashMismatch):
        check_sidecar(f, "def")
    check_sidecar(f, "def", force=True)


# --- pipeline -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "small.toml"
    cfg.write_text(SMALL)
    manifest = pl.run_pipeline(cfg, root / "out")
    return cfg, root / "out", manifest


def test_pipeline_outputs_and_manifest(small_run):
    _, out, manifest = small_run
    assert [s["name"] for s in manifest["stages"]] == list(DEFAULTS["run"]["stages"])
    for stage in manifest["stages"]:
        for name, digest in stage["outputs"].items():
            assert pl.file_digest(out / name) == digest
            assert json.loads(sidecar_path(out / name).read_text())["config_hash"] == manifest["config_hash"]
    assert set(manifest["seeds"]) == set(DEFAULTS["run"]["stages"])
    assert manifest["versions"]["kernel_backend"] in ("numpy", "numba")
    on_disk = json.loads((out / "manifest.json").read_text())
    assert on_disk == json.loads(json.dumps(manifest))
    report = (out / "report.csv").read_text().splitlines()
    assert report[0] == "group,n,mae" and report[1].startswith("all,")


def test_pipeline_rerun_is_byte_identical(small_run, tmp_path):
    cfg, out, manifest = small_run
    again = pl.run_pipeline(cfg, tmp_path / "again")
    assert again["stages"] == manifest["stages"]
    assert (tmp_path / "again" / "manifest.json").read_bytes() == (out / "manifest.json").read_bytes()


def test_stage_failure_quarantines_partial_outputs(small_run, tmp_path):
    cfg, out, _ = small_run
    d = tmp_path / "partial"
    d.mkdir()
    for name in ("examples.jsonl", "split.json", "model.ckpt"):  # everything evaluate needs but posenet_raw.csv
        for f in (out / name, sidecar_path(out / name)):
            (d / f.name).write_bytes(f.read_bytes())
    cfg_eval = tmp_path / "eval.toml"
    cfg_eval.write_text(SMALL + "\n[run]\nstages = ['evaluate']\n")
    with pytest.raises(StageFailure) as info:
        pl.run_pipeline(cfg_eval, d, force=True)
    assert info.value.stage == "evaluate" and isinstance(info.value.cause, InputMissing)
    assert "posenet_raw.csv" in str(info.value)
    assert (d / "report.csv.quarantine").exists() and not (d / "report.csv").exists()
    assert not (d / "manifest.json").exists()


def test_divergence_surfaces_as_stage_failure(small_run, tmp_path):
    cfg = tmp_path / "explode.toml"
    cfg.write_text(SMALL.replace("max_epochs = 3", "max_epochs = 3\nlr = 1e12\nmomentum = 0.0"))
    with pytest.raises(StageFailure) as info:
        pl.run_pipeline(cfg, tmp_path / "explode")
    assert info.value.stage == "train" and isinstance(info.value.cause, DivergenceFault)
    assert cli.exit_code(info.value) == cli.EXIT_DIVERGENCE


# --- command line ----------------------------------------------------------------------


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


def test_cli_chain(small_config, tmp_path, capsys):
    d = tmp_path / "cli"
    common = ["--config", small_config, "--out-dir", d]
    assert run_cli("synth", "population", "--n", 200, *common) == 0
    assert run_cli("propagate", "--detections", d / "detections.jsonl", "--subjects", d / "subjects.jsonl", *common) == 0
    assert run_cli("audit", "--assignments", d / "assignments.jsonl", "--truth", d / "truth.jsonl", *common) == 0
    assert run_cli("preprocess", "--assignments", d / "assignments.jsonl", "--poses", d / "poses.jsonl",
                   "--subjects", d / "subjects.jsonl", "--detections", d / "detections.jsonl", *common) == 0
    assert run_cli("split", "--examples", d / "examples.jsonl", "--write-sets", *common) == 0
    assert run_cli("train", "--arch", "shallow", "--train", d / "train.jsonl", "--val", d / "val.jsonl", *common) == 0
    assert run_cli("predict", "--model", d / "model.ckpt", "--examples", d / "test.jsonl", *common) == 0
    ev_args = ["--examples", d / "examples.jsonl", "--splits", d / "split.json"]
    assert run_cli("evaluate", "--model", d / "model.ckpt", *ev_args, *common) == 0
    assert run_cli("baseline", "--kind", "gendermean", *ev_args, *common) == 0
    assert run_cli("baseline", "--kind", "posenet-offset", "--raw", d / "posenet_raw.csv", *ev_args, *common) == 0
    out = capsys.readouterr().out
    assert "precision" in out and "MAE" in out
    header = (d / "predictions.csv").read_text().splitlines()[0]
    assert header == "example_id,height_cm,label_cm,gender"
    assert json.loads(sidecar_path(d / "subjects.jsonl").read_text())["n"] == 200


def test_cli_refuses_foreign_hash_unless_forced(small_config, tmp_path, capsys):
    d = tmp_path / "hash"
    assert run_cli("synth", "population", "--config", small_config, "--out-dir", d) == 0
    args = ["propagate", "--detections", d / "detections.jsonl", "--subjects", d / "subjects.jsonl",
            "--config", small_config, "--out-dir", d]
    assert run_cli(*args, "--seed", 3) == cli.EXIT_VALIDATION
    assert "--force" in capsys.readouterr().err
    assert run_cli(*args, "--seed", 3, "--force") == 0


def test_cli_missing_input_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    assert run_cli("split", "--examples", missing, "--out-dir", tmp_path) == cli.EXIT_VALIDATION
    assert str(missing) in capsys.readouterr().err


def test_cli_run_and_exit_codes(small_config, tmp_path, capsys):
    assert run_cli("run", "--config", small_config, "--out-dir", tmp_path / "r") == 0
    assert (tmp_path / "r" / "manifest.json").exists()
    bad = tmp_path / "bad.toml"
    bad.write_text("[assignment]\ntau = 2.0\n")
    assert run_cli("run", "--config", bad, "--out-dir", tmp_path / "r2") == cli.EXIT_VALIDATION
    assert cli.exit_code(RuntimeError("boom")) == cli.EXIT_STAGE
    assert cli.exit_code(StageFailure("train", RuntimeError("boom"))) == cli.EXIT_STAGE
    with pytest.raises(SystemExit):
        cli.main(["--version"])


def test_divergence_reports_first_step():
    import numpy as np

    from monoheight.regressors import RegressorSpec, TrainConfig, build_model, train_regressor

    rng = np.random.default_rng(0)
    batch = {"keypoints": rng.normal(size=(8, 36)), "face": rng.normal(size=(8, 4))}
    y = 170 + rng.normal(size=8)
    model = build_model(RegressorSpec("shallow", widths=(8, 8, 8)), batch)
    with pytest.raises(DivergenceFault) as info:
        train_regressor(model, (batch, y), (batch, y), TrainConfig(lr=1e200, momentum=0.0, batch_size=8))
    assert info.value.epoch == 0 and info.value.step in (1, 2)
