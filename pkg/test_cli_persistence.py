"""Tests for checkpoints, dataset archives, scenario configs and the mconn command line"""
import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml
from pydantic import ValidationError

from curve_space.curves import init_curve
from data_forge.idx import save_idx
from data_forge.poisoning import poison
from mconn_cli.checkpoints import load_curve, load_dataset, load_model, save_curve, save_dataset, save_model
from mconn_cli.config import apply_overrides, load_scenario, parse_override
from mconn_cli.main import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from nn_core.engine import init_model
from shared.errors import CheckpointFormatError, ConfigError, DatasetFormatError
from shared.schemas import SingleTarget, TriggerSpec
from shared.storage import Manifest, encode_checkpoint, read_checkpoint, write_csv

SCENARIO_DIR = Path(__file__).parent / "scenarios"

TINY_SCENARIO = {
    "name": "tiny-backdoor",
    "kind": "backdoor",
    "seed": 0,
    "dataset": {"num_classes": 4, "samples_per_class": 20, "image_size": 8, "noise_level": 0.05},
    "model": {"architecture": "mlp", "hidden": [8]},
    "training": {"epochs": 2, "batch_size": 16},
    "attack": {"poison_fraction": 0.1, "rule": {"variant": "single_target", "target": 1}},
    "repair": {
        "bonafide_sizes": [10],
        "path": {"epochs": 1, "batch_size": 8},
        "finetune": {"epochs": 1, "batch_size": 8},
        "baselines": ["finetune", "scratch", "noise", "prune"],
        "noise_repetitions": 2,
    },
    "analysis": {"t_grid": [0.0, 0.5, 1.0], "similarity_samples": 10},
}


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_SCENARIO))
    return path


def test_model_checkpoint_round_trip_is_bit_exact(cnn, tmp_path):
    save_model(tmp_path / "m.ckpt", cnn, {"seed": 2})
    loaded = load_model(tmp_path / "m.ckpt")
    assert loaded.spec == cnn.spec
    assert np.array_equal(loaded.weights.data, cnn.weights.data)
    header, _ = read_checkpoint(tmp_path / "m.ckpt")
    assert header["lineage"] == {"seed": 2}


def test_curve_checkpoint_holds_three_weight_vectors(mlp, tmp_path):
    curve = init_curve(mlp, init_model(mlp.spec, 9), "polychain1", endpoints_trainable=True)
    save_curve(tmp_path / "c.ckpt", curve)
    _, payload = read_checkpoint(tmp_path / "c.ckpt")
    assert payload.size == 3 * len(mlp.weights)
    loaded = load_curve(tmp_path / "c.ckpt")
    assert loaded.kind == "polychain1" and loaded.endpoints_trainable
    assert np.array_equal(loaded.theta.data, curve.theta.data)
    with pytest.raises(CheckpointFormatError):
        load_model(tmp_path / "c.ckpt")


def test_corrupt_checkpoints_are_rejected(mlp, tmp_path):
    path = save_model(tmp_path / "m.ckpt", mlp)
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.ckpt"
    bad_magic.write_bytes(b"NOTACKPT" + raw[8:])
    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(raw[:-8])
    future = tmp_path / "future.ckpt"
    future.write_bytes(encode_checkpoint({"format_version": 99, "kind": "model"}, mlp.weights.data))

    for broken in (bad_magic, truncated, future):
        with pytest.raises(CheckpointFormatError):
            load_model(broken)


def test_dataset_archive_keeps_poisoning_metadata(tiny_data, tmp_path):
    poisoned = poison(tiny_data, 0.2, SingleTarget(target=0), TriggerSpec(), seed=1)
    save_dataset(tmp_path / "p.npz", poisoned)
    loaded = load_dataset(tmp_path / "p.npz")
    assert np.array_equal(loaded.images, poisoned.images)
    assert np.array_equal(loaded.poisoned, poisoned.poisoned)
    assert np.array_equal(loaded.original_labels, poisoned.original_labels)
    assert (loaded.source, loaded.num_classes) == (poisoned.source, poisoned.num_classes)


def test_unreadable_dataset_archive(tmp_path):
    path = tmp_path / "junk.npz"
    path.write_bytes(b"definitely not an archive")
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_manifest_records_lineage(tmp_path):
    manifest = Manifest(tmp_path, run={"scenario": "x"})
    manifest.json("a.json", {"v": 1}, {"stage": "s1"})
    manifest.finalize("ok")
    body = json.loads((tmp_path / "manifest.json").read_text())
    assert body["status"] == "ok"
    assert body["artifacts"] == [{"path": "a.json", "kind": "json", "lineage": {"stage": "s1"}}]


def test_csv_column_order_is_fixed(tmp_path):
    write_csv(tmp_path / "r.csv", [{"b": 2, "a": 1.5}], ["a", "b"])
    assert (tmp_path / "r.csv").read_text() == "a,b\n1.5,2\n"


def test_parse_override_values():
    assert parse_override("repair.path.epochs=5") == (["repair", "path", "epochs"], 5)
    assert parse_override("analysis.t_grid=[0, 0.5, 1]") == (["analysis", "t_grid"], [0, 0.5, 1])
    with pytest.raises(ConfigError):
        parse_override("repair.path.epochs")


def test_apply_overrides_copies_and_creates_blocks():
    raw = {"name": "n", "repair": {"path": {"epochs": 100}}}
    merged = apply_overrides(raw, ["repair.path.epochs=3", "analysis.similarity=false"])
    assert raw["repair"]["path"]["epochs"] == 100
    assert merged["repair"]["path"]["epochs"] == 3
    assert merged["analysis"] == {"similarity": False}
    with pytest.raises(ConfigError):
        apply_overrides({"name": "n"}, ["name.inner=1"])


@pytest.mark.parametrize("path", sorted(SCENARIO_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_scenarios_validate(path):
    config = load_scenario(path)
    assert config.name == path.stem


def test_overrides_apply_to_shipped_scenario():
    config = load_scenario(SCENARIO_DIR / "backdoor-single-target.yaml",
                           ["repair.path.epochs=3", "seed=7", "analysis.t_grid=[0, 0.5, 1]"])
    assert config.repair.path.epochs == 3
    assert config.seed == 7
    assert config.analysis.t_grid == [0, 0.5, 1]


def test_config_digest_tracks_content(tiny_yaml):
    a = load_scenario(tiny_yaml)
    assert a.digest() == load_scenario(tiny_yaml).digest()
    assert a.digest() != load_scenario(tiny_yaml, ["seed=1"]).digest()


def test_invalid_scenarios(tmp_path, tiny_yaml):
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.yaml")
    listing = tmp_path / "list.yaml"
    listing.write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        load_scenario(listing)
    with pytest.raises(ValidationError):
        load_scenario(tiny_yaml, ["attack.rule.target=7"])
    with pytest.raises(ValidationError):
        load_scenario(tiny_yaml, ["attack.trigger.height=9"])


def test_cli_config_errors_exit_with_two(tmp_path, tiny_yaml):
    assert main(["scenario", "run", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert main(["scenario", "run", str(tiny_yaml), "--set", "kind=unknown"]) == EXIT_CONFIG
    assert main(["scenario", "run", str(tiny_yaml), "--set", "no-equals-sign"]) == EXIT_CONFIG


def test_cli_pipeline_train_connect_profile(tmp_path):
    def run(*argv):
        assert main([str(a) for a in argv]) == EXIT_OK

    train, test = tmp_path / "train.npz", tmp_path / "test.npz"
    run("gen-data", "--out", train, "--test-out", test, "--num-classes", 4, "--samples-per-class", 15,
        "--image-size", 8, "--seed", 1)
    for seed in (0, 1):
        run("train", "--data", train, "--out", tmp_path / f"w{seed}.ckpt", "--arch", "mlp", "--hidden", 8,
            "--epochs", 2, "--batch-size", 16, "--seed", seed)
    run("connect", "--w1", tmp_path / "w0.ckpt", "--w2", tmp_path / "w1.ckpt", "--data", train,
        "--out", tmp_path / "curve.ckpt", "--epochs", 1, "--batch-size", 16)
    run("profile", "--curve", tmp_path / "curve.ckpt", "--data", test, "--out", tmp_path / "profile.csv",
        "--grid", 0.25, 0.5, 0.75)
    run("hessian", "--model", tmp_path / "w0.ckpt", "--data", test, "--max-iter", 20,
        "--report", tmp_path / "hessian.json")

    frame = pd.read_csv(tmp_path / "profile.csv")
    assert list(frame.columns) == ["t", "clean_loss", "clean_accuracy", "clean_error", "errors"]
    assert frame["t"].tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert set(json.loads((tmp_path / "hessian.json").read_text())) >= {"lambda_max", "converged"}


def test_scenario_run_is_reproducible(tiny_yaml, tmp_path):
    first, second = tmp_path / "run1", tmp_path / "run2"
    assert main(["scenario", "run", str(tiny_yaml), "--output-dir", str(first)]) == EXIT_OK
    assert main(["scenario", "run", str(tiny_yaml), "--output-dir", str(second)]) == EXIT_OK

    manifest = json.loads((first / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    written = {a["path"] for a in manifest["artifacts"]}
    assert {"checkpoints/w1.ckpt", "profile_n10.csv", "repair_report.csv", "similarity_n10.csv"} <= written
    assert all(a["lineage"]["config_digest"] == manifest["run"]["config_digest"] for a in manifest["artifacts"])

    for name in ("profile_n10.csv", "repair_report.csv", "similarity_n10.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    report = pd.read_csv(first / "repair_report.csv")
    assert set(report["method"]) == {"endpoint_w1", "endpoint_w2", "path_connection",
                                     "finetune", "scratch", "noise", "prune"}


def _run_with_idx(tiny_yaml, out, images, labels):
    return main(["scenario", "run", str(tiny_yaml), "--output-dir", str(out),
                 "--set", "dataset.source=idx",
                 "--set", f"dataset.idx_images={images}",
                 "--set", f"dataset.idx_labels={labels}"])


def _failed_stage(out):
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    return manifest["failed_stage"]


def test_missing_idx_files_are_a_configuration_error(tiny_yaml, tmp_path):
    out = tmp_path / "missing"
    code = _run_with_idx(tiny_yaml, out, tmp_path / "none-images.idx", tmp_path / "none-labels.idx")
    assert code == EXIT_CONFIG
    assert _failed_stage(out) == "data"


def test_idx_shape_mismatch_is_a_configuration_error(tiny_yaml, tmp_path):
    rng = np.random.default_rng(0)
    images, labels = tmp_path / "wide-images.idx", tmp_path / "wide-labels.idx"
    save_idx(rng.random((12, 1, 10, 10)), np.arange(12) % 4, images, labels)
    out = tmp_path / "wide"
    assert _run_with_idx(tiny_yaml, out, images, labels) == EXIT_CONFIG
    assert _failed_stage(out) == "data"


def test_corrupt_idx_is_a_stage_failure(tiny_yaml, tmp_path):
    images, labels = tmp_path / "junk-images.idx", tmp_path / "junk-labels.idx"
    images.write_bytes(b"\x00\x00\x08\x03junk")
    labels.write_bytes(b"\x00\x00\x08\x01")
    out = tmp_path / "junk"
    assert _run_with_idx(tiny_yaml, out, images, labels) == EXIT_STAGE
    assert _failed_stage(out) == "data"


def test_evasion_scenario_reports_barriers_and_correlation(tmp_path):
    config = dict(TINY_SCENARIO, name="tiny-evasion", kind="evasion")
    config["training"] = {"epochs": 1, "batch_size": 16}
    config["attack"] = {"pgd": {"epsilon": 0.03, "steps": 2}}
    config["analysis"] = {"t_grid": [0.0, 0.5, 1.0], "eval_samples": 8, "hessian_samples": 2,
                          "ensemble_t": [0.0, 0.5, 1.0]}
    path = tmp_path / "evasion.yaml"
    path.write_text(yaml.safe_dump(config))

    assert main(["scenario", "run", str(path), "--output-dir", str(tmp_path / "out")]) == EXIT_OK
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    for label in ("regular-regular", "regular-robust", "robust-robust"):
        assert {"barrier_clean_loss", "barrier_robustness_loss", "barrier_clean_loss_linear",
                "pcc_robustness_lambda_max"} <= set(summary[label])
    assert summary["prop1"]["pcc"] > 0.999
    assert len(summary["ensemble"]["member_clean_accuracy"]) == 3
