import hashlib
import json
from pathlib import Path

import pytest

from physdyn.cli import dispatch


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "world"
    code = dispatch([
        "synth", "--out", str(out), "--seed", "3",
        "--n-trajectories", "160", "--n-objects", "24", "--n-object-types", "12",
    ])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def manifest_path(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("split") / "manifest.json"
    code = dispatch([
        "split", "--dataset", str(dataset_dir), "--train", "100", "--val", "20",
        "--test", "-1", "--seed", "1", "--out", str(out),
    ])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def caches(dataset_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("caches")
    boxes = root / "boxes.pvfc"
    text = root / "text.pvfc"
    assert dispatch(["cache-features", "--dataset", str(dataset_dir), "--kind", "boxes",
                     "--out", str(boxes), "--n-boxes", "4", "--box-dim", "16"]) == 0
    assert dispatch(["cache-features", "--dataset", str(dataset_dir), "--kind", "text",
                     "--out", str(text), "--text-dim", "16"]) == 0
    return boxes, text


def tree_hash(root: Path) -> str:
    # metadata.json records the invocation (including the output path), so it
    # is not part of the dataset bytes under comparison
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "metadata.json":
            digest.update(path.relative_to(root).as_posix().encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def test_synth_seed_determinism(tmp_path):
    args = ["--n-trajectories", "30", "--n-objects", "16", "--seed", "7"]
    assert dispatch(["synth", "--out", str(tmp_path / "a"), *args]) == 0
    assert dispatch(["synth", "--out", str(tmp_path / "b"), *args]) == 0
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_synth_writes_metadata(dataset_dir):
    meta = json.loads((dataset_dir / "metadata.json").read_text())
    assert meta["command"] == "synth"
    assert meta["seed"] == 3
    assert meta["config"]["n_trajectories"] == 160


def test_filter_with_paper_thresholds(dataset_dir, tmp_path, capsys):
    report_path = tmp_path / "report.json"
    code = dispatch([
        "filter", "--dataset", str(dataset_dir),
        "--max-changed", "400000", "--min-max-change", "0.2",
        "--report", str(report_path),
    ])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["n_input"] == 160
    assert report["n_kept"] + len(report["rejections"]) == 160
    # synthetic scenes are small; invisible-effect actions get filtered out
    assert report["reason_counts"].get("no salient change", 0) > 0


def test_missing_required_flag_exits_1(capsys):
    code = dispatch(["pretrain"])
    captured = capsys.readouterr()
    assert code == 1
    assert "missing required option" in captured.err


def test_unknown_flag_exits_1(capsys):
    code = dispatch(["synth", "--frobnicate"])
    assert code == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_input_file_exits_2(tmp_path, capsys):
    code = dispatch(["filter", "--dataset", str(tmp_path / "nope"),
                     "--report", str(tmp_path / "r.json")])
    assert code == 2


def test_config_file_precedence(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"n_trajectories": 25, "seed": 9}))
    out = tmp_path / "w"
    assert dispatch(["synth", "--config", str(config), "--out", str(out),
                     "--seed", "4", "--n-objects", "16"]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["config"]["n_trajectories"] == 25  # from file
    assert meta["config"]["seed"] == 4  # flag beats file


def test_config_file_unknown_key_rejected(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"not_a_key": 1}))
    code = dispatch(["synth", "--config", str(config), "--out", str(tmp_path / "w")])
    assert code == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_env_var_sets_dataset_root(dataset_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("PHYSDYN_DATA_DIR", str(dataset_dir))
    report = tmp_path / "r.json"
    assert dispatch(["filter", "--report", str(report)]) == 0
    assert report.is_file()


def test_help_documents_paper_defaults(capsys):
    for command in ("filter", "pretrain", "finetune"):
        with pytest.raises(SystemExit):
            dispatch([command, "--help"])
        text = " ".join(capsys.readouterr().out.split())  # undo argparse wrapping
        assert "paper default" in text, command


def test_all_subcommands_exist(capsys):
    with pytest.raises(SystemExit):
        dispatch(["--help"])
    text = capsys.readouterr().out
    for name in ("synth", "filter", "split", "cache-features", "pretrain",
                 "finetune", "eval", "attn-maps", "report"):
        assert name in text


def test_full_pipeline(dataset_dir, manifest_path, caches, tmp_path, capsys):
    boxes, text = caches
    run_dir = tmp_path / "run"
    code = dispatch([
        "pretrain", "--dataset", str(dataset_dir), "--manifest", str(manifest_path),
        "--setup", "base+symbolic+images", "--profile", "desk",
        "--seed", "1", "--out", str(run_dir),
        "--epochs", "2", "--batch-size", "32",
        "--finetune-reserve", "40", "--finetune-val-reserve", "8",
        "--box-cache", str(boxes), "--text-cache", str(text),
        "--hidden-size", "16",
    ])
    assert code == 0, capsys.readouterr().err
    assert (run_dir / "checkpoint.pt").is_file()
    assert (run_dir / "history.csv").is_file()
    assert (run_dir / "metadata.json").is_file()

    ft_dir = tmp_path / "ft"
    code = dispatch([
        "finetune", "--dataset", str(dataset_dir), "--manifest", str(manifest_path),
        "--checkpoint", str(run_dir), "--profile", "desk", "--seed", "1",
        "--out", str(ft_dir), "--epochs", "2", "--batch-size", "16",
        "--finetune-reserve", "40", "--finetune-val-reserve", "8",
        "--box-cache", str(boxes), "--text-cache", str(text),
    ])
    assert code == 0, capsys.readouterr().err

    eval_path = tmp_path / "eval.json"
    code = dispatch([
        "eval", "--dataset", str(dataset_dir), "--manifest", str(manifest_path),
        "--checkpoint", str(ft_dir), "--out", str(eval_path),
        "--box-cache", str(boxes), "--text-cache", str(text), "--seed", "1",
    ])
    assert code == 0, capsys.readouterr().err
    report = json.loads(eval_path.read_text())
    assert 0.0 <= report["overall_accuracy"] <= 100.0
    assert report["metadata"]["setup"] == "base+symbolic+images"

    maps_dir = tmp_path / "maps"
    some_record = json.loads(Path(manifest_path).read_text())["test_ids"][0]
    code = dispatch([
        "attn-maps", "--dataset", str(dataset_dir), "--checkpoint", str(ft_dir),
        "--record-id", some_record, "--out", str(maps_dir),
        "--text-cache", str(text),
    ])
    assert code == 0, capsys.readouterr().err
    assert len(list(maps_dir.glob("*.png"))) == 5

    code = dispatch(["report", "--runs", str(eval_path),
                     "--out-csv", str(tmp_path / "agg.csv")])
    out = capsys.readouterr().out
    assert code == 0
    assert "base+symbolic+images" in out
    assert (tmp_path / "agg.csv").is_file()


def test_eval_missing_cache_validation(dataset_dir, manifest_path, tmp_path, capsys):
    code = dispatch([
        "eval", "--dataset", str(dataset_dir), "--manifest", str(manifest_path),
        "--checkpoint", str(tmp_path / "missing.pt"), "--out", str(tmp_path / "e.json"),
    ])
    assert code == 2  # missing checkpoint is an I/O error
