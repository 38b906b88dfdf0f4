"""Command-line entry point for the full pipeline.

Subcommands: synth, filter, split, cache-features, pretrain, finetune, eval,
attn-maps, report. Flags beat config-file values, which beat defaults; every
run writes a metadata JSON (command, effective config, seed, input hashes)
sufficient to replay it. Exit codes: 0 success, 1 validation error, 2 I/O
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation, experiments, features, filtering, model as model_mod
from . import schema as schema_mod
from . import splits as splits_mod
from . import synthetic, training

PROFILE_NAMES = ("paper", "desk")


class UsageError(Exception):
    """Validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise UsageError(f"{message}\n{self.format_usage()}")


def _data_dir_default() -> str | None:
    return os.environ.get("PHYSDYN_DATA_DIR")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_metadata(path: Path, command: str, config: dict, inputs: list[Path]) -> None:
    doc = {
        "command": command,
        "config": {k: v for k, v in sorted(config.items())},
        "seed": config.get("seed"),
        "input_hashes": {str(p): _sha256(p) for p in inputs if p and p.is_file()},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _effective_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """flags > config file > defaults; unknown config-file keys rejected."""
    config = dict(parser_defaults)
    file_path = getattr(args, "config", None)
    if file_path:
        try:
            loaded = json.loads(Path(file_path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {file_path} is not valid JSON: {exc}")
        unknown = set(loaded) - set(parser_defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        config.update(loaded)
    for key in parser_defaults:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _require(config: dict, *keys: str) -> None:
    for key in keys:
        if config.get(key) is None:
            raise UsageError(f"missing required option --{key.replace('_', '-')}")


def _load_dataset(dataset_dir: str):
    root = Path(dataset_dir)
    schema = schema_mod.AttributeSchema.load(root / "schema.json")
    records = schema_mod.read_records(root / "records.jsonl")
    return root, schema, records


def _profile(name: str) -> experiments.ExperimentProfile:
    if name not in experiments.PROFILES:
        raise UsageError(f"unknown profile {name!r}; choose from {PROFILE_NAMES}")
    return experiments.PROFILES[name]


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_synth(config: dict) -> int:
    _require(config, "out")
    world = synthetic.generate_synthetic_world(
        synthetic.WorldConfig(
            n_objects=config["n_objects"],
            n_object_types=config["n_object_types"],
            n_trajectories=config["n_trajectories"],
            image_size=config["image_size"],
            render=not config["no_render"],
        ),
        seed=config["seed"],
    )
    out = Path(config["out"])
    synthetic.save_world(world, out)
    _write_metadata(out / "metadata.json", "synth", config, [])
    print(f"wrote {len(world.records)} trajectories to {out}")
    return 0


def _cmd_filter(config: dict) -> int:
    _require(config, "dataset", "report")
    root, schema, records = _load_dataset(config["dataset"])
    assets = synthetic.load_images(root)
    thresholds = filtering.FilterThresholds(
        max_changed_pixels=config["max_changed"],
        min_max_change=config["min_max_change"],
    )
    kept, report = filtering.apply_visual_filters(records, assets, thresholds)
    report.save(config["report"])
    if config.get("out_records"):
        schema_mod.write_records(config["out_records"], kept)
    _write_metadata(
        Path(config["report"]).with_suffix(".meta.json"), "filter", config,
        [root / "records.jsonl"],
    )
    counts = report.reason_counts
    print(f"kept {len(kept)}/{len(records)}; rejections: {counts or 'none'}")
    return 0


def _cmd_split(config: dict) -> int:
    _require(config, "dataset", "out")
    root, schema, records = _load_dataset(config["dataset"])
    excluded_objects = (
        splits_mod.parse_object_list(config["excluded_objects"])
        if config.get("excluded_objects") else []
    )
    excluded_pairs = (
        splits_mod.parse_pair_list(config["excluded_pairs"])
        if config.get("excluded_pairs") else []
    )
    n_test = config["test"] if config["test"] >= 0 else None
    manifest = splits_mod.build_zero_shot_split(
        records, schema, excluded_objects, excluded_pairs,
        sizes=(config["train"], config["val"], n_test), seed=config["seed"],
    )
    violations = splits_mod.audit_split(manifest, records, schema)
    if violations:
        raise UsageError(f"split audit failed: {violations[:3]}")
    manifest.save(config["out"])
    _write_metadata(
        Path(config["out"]).with_suffix(".meta.json"), "split", config,
        [root / "records.jsonl"],
    )
    print(
        f"train/val/test = {len(manifest.train_ids)}/{len(manifest.val_ids)}/"
        f"{len(manifest.test_ids)} (zero-shot {len(manifest.zero_shot_test_ids)})"
    )
    return 0


def _cmd_cache_features(config: dict) -> int:
    _require(config, "dataset", "out", "kind")
    root, schema, records = _load_dataset(config["dataset"])
    if config["kind"] == "boxes":
        scenes = synthetic.load_scene_meta(root / "world_meta.json")
        adapter = features.StubBoxAdapter(
            scenes, n_boxes=config["n_boxes"], dim=config["box_dim"],
            image_size=config["image_size"],
        )
        refs = sorted(scenes)
        features.write_feature_cache(config["out"], refs, adapter)
    elif config["kind"] == "text":
        adapter = features.StubTextAdapter(dim=config["text_dim"])
        entries: dict[str, np.ndarray] = {}
        for record in records:
            text = record.action.text or synthetic.action_sentence(schema, record.action)
            entries[f"action:{record.id}"] = adapter.embed(text)
        for name in schema.object_names:
            entries[f"name:{name}"] = adapter.embed(name.lower())
        features.write_feature_cache(
            config["out"], list(entries), lambda ref: entries[ref]
        )
    else:
        raise UsageError("--kind must be 'boxes' or 'text'")
    _write_metadata(
        Path(config["out"]).with_suffix(".meta.json"), "cache-features", config,
        [root / "records.jsonl"],
    )
    print(f"wrote {config['kind']} cache to {config['out']}")
    return 0


def _tensor_lookups(config: dict, needs_boxes: bool, needs_text: bool, needs_names: bool):
    box_lookup = text_lookup = name_lookup = None
    box_shape = None
    text_dim = None
    if needs_boxes:
        _require(config, "box_cache")
        cache = features.FeatureCache(config["box_cache"])
        box_lookup = lambda ref: cache.get(ref).features
        box_shape = (cache.n_boxes, cache.dim)
    if needs_text or needs_names:
        _require(config, "text_cache")
        tcache = features.FeatureCache(config["text_cache"])
        text_dim = tcache.dim
        if needs_text:
            text_lookup = lambda rid: tcache.get(f"action:{rid}").features[0]
        if needs_names:
            name_lookup = lambda name: tcache.get(f"name:{name}").features[0]
    return box_lookup, text_lookup, name_lookup, box_shape, text_dim


def _split_records(records, manifest, config):
    by_id = {r.id: r for r in records}
    train = [by_id[i] for i in manifest.train_ids]
    val = [by_id[i] for i in manifest.val_ids]
    test = [by_id[i] for i in manifest.test_ids]
    ft_train = config["finetune_reserve"]
    ft_val = config["finetune_val_reserve"]
    if ft_train >= len(train) or ft_val >= len(val):
        raise UsageError("fine-tune reservations exceed the train/val split")
    roles = {
        "pretrain_train": train[: len(train) - ft_train],
        "pretrain_val": val[: len(val) - ft_val],
        "finetune_train": train[len(train) - ft_train :],
        "finetune_val": val[len(val) - ft_val :],
        "test": test,
    }
    return roles


def _model_config_from(config: dict, setup: str, schema, box_shape, text_dim):
    profile = _profile(config["profile"])
    overrides = dict(profile.model)
    for key, flag in [("hidden_size", "hidden_size"), ("dropout", "dropout")]:
        if config.get(flag) is not None:
            overrides[key] = config[flag]
    if box_shape is not None:
        overrides["n_boxes"], overrides["box_dim"] = box_shape
    if text_dim is not None:
        overrides["text_embed_dim"] = text_dim
    layout = model_mod.AttributeLayout.from_schema(schema)
    return model_mod.ModelConfig.for_setup(setup, layout, **overrides)


def _train_config(config: dict, profile, phase: str) -> training.TrainConfig:
    base = profile.pretrain if phase == "pretrain" else profile.finetune
    return replace(
        base,
        epochs=config["epochs"] if config.get("epochs") is not None else base.epochs,
        batch_size=config["batch_size"] if config.get("batch_size") is not None else base.batch_size,
        learning_rate=config["learning_rate"] if config.get("learning_rate") is not None else base.learning_rate,
        patience=config["patience"] if config.get("patience") is not None else base.patience,
        seed=config["seed"],
    )


def _cmd_pretrain(config: dict) -> int:
    _require(config, "dataset", "manifest", "out")
    root, schema, records = _load_dataset(config["dataset"])
    manifest = splits_mod.SplitManifest.load(config["manifest"])
    setup = config["setup"]
    if setup not in model_mod.SETUPS:
        raise UsageError(f"unknown setup {setup!r}; choose from {model_mod.SETUPS}")
    needs_boxes = "images" in setup
    needs_names = "text-labels" in setup
    box_lookup, text_lookup, name_lookup, box_shape, text_dim = _tensor_lookups(
        config, needs_boxes, needs_names, needs_names
    )
    roles = _split_records(records, manifest, config)
    tensors = {
        role: training.tensorize_records(
            recs, schema, box_lookup=box_lookup,
            text_lookup=text_lookup, name_text_lookup=name_lookup,
        )
        for role, recs in roles.items()
        if role in ("pretrain_train", "pretrain_val")
    }
    model_config = _model_config_from(config, setup, schema, box_shape, text_dim)
    train_config = _train_config(config, _profile(config["profile"]), "pretrain")
    result = training.run_pretraining(
        model_config, tensors["pretrain_train"], tensors["pretrain_val"], train_config
    )
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    model_mod.save_checkpoint(out / "checkpoint.pt", result.model,
                              extra={"setup": setup, "phase": "pretrain"})
    training.write_history_csv(out / "history.csv", result.history)
    _write_metadata(out / "metadata.json", "pretrain", config,
                    [root / "records.jsonl", Path(config["manifest"])])
    print(f"pretrained {setup}: best epoch {result.best_epoch}, "
          f"val loss {result.best_val_loss:.4f}")
    return 0


def _cmd_finetune(config: dict) -> int:
    _require(config, "dataset", "manifest", "out", "checkpoint")
    root, schema, records = _load_dataset(config["dataset"])
    manifest = splits_mod.SplitManifest.load(config["manifest"])
    pretrained, extra = model_mod.load_checkpoint(_checkpoint_path(config["checkpoint"]))
    setup = extra.get("setup", pretrained.config.setup_name)
    needs_boxes = pretrained.config.use_images
    box_lookup, text_lookup, name_lookup, box_shape, text_dim = _tensor_lookups(
        config, needs_boxes, True, pretrained.config.use_text_labels
    )
    roles = _split_records(records, manifest, config)
    tensors = {
        role: training.tensorize_records(
            recs, schema, box_lookup=box_lookup,
            text_lookup=text_lookup, name_text_lookup=name_lookup,
        )
        for role, recs in roles.items()
        if role in ("finetune_train", "finetune_val")
    }
    train_config = _train_config(config, _profile(config["profile"]), "finetune")
    result = training.run_finetuning(
        pretrained, tensors["finetune_train"], tensors["finetune_val"],
        train_config, text_embed_dim=text_dim,
    )
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    model_mod.save_checkpoint(out / "checkpoint.pt", result.model,
                              extra={"setup": setup, "phase": "finetune"})
    training.write_history_csv(out / "history.csv", result.history)
    _write_metadata(out / "metadata.json", "finetune", config,
                    [root / "records.jsonl", Path(config["manifest"])])
    print(f"fine-tuned {setup}: best epoch {result.best_epoch}")
    return 0


def _checkpoint_path(arg: str) -> Path:
    path = Path(arg)
    if path.is_dir():
        path = path / "checkpoint.pt"
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def _cmd_eval(config: dict) -> int:
    _require(config, "dataset", "manifest", "out", "checkpoint")
    root, schema, records = _load_dataset(config["dataset"])
    manifest = splits_mod.SplitManifest.load(config["manifest"])
    model, extra = model_mod.load_checkpoint(_checkpoint_path(config["checkpoint"]))
    cfg = model.config
    box_lookup, text_lookup, name_lookup, _, _ = _tensor_lookups(
        config, cfg.use_images, cfg.action_input == "text", cfg.use_text_labels
    )
    by_id = {r.id: r for r in records}
    test_records = [by_id[i] for i in manifest.test_ids]
    tensors = training.tensorize_records(
        test_records, schema, box_lookup=box_lookup,
        text_lookup=text_lookup, name_text_lookup=name_lookup,
    )
    predictions = evaluation.predict(model, tensors, test_records)
    report = evaluation.evaluate_predictions(
        predictions, schema, manifest, seed=config["seed"]
    )
    report.metadata["setup"] = extra.get("setup", cfg.setup_name)
    report.save(config["out"])
    _write_metadata(Path(config["out"]).with_suffix(".meta.json"), "eval", config,
                    [root / "records.jsonl", Path(config["manifest"])])
    zs = report.zero_shot_accuracy
    print(f"overall {report.overall_accuracy:.2f}"
          + (f", zero-shot {zs:.2f}" if zs is not None else ""))
    return 0


def _cmd_attn_maps(config: dict) -> int:
    _require(config, "dataset", "checkpoint", "record_id", "out")
    root, schema, records = _load_dataset(config["dataset"])
    model, _ = model_mod.load_checkpoint(_checkpoint_path(config["checkpoint"]))
    if not model.config.use_images:
        raise UsageError("checkpoint has no vision branch; attention maps need images")
    scenes = synthetic.load_scene_meta(root / "world_meta.json")
    adapter = features.StubBoxAdapter(
        scenes, n_boxes=model.config.n_boxes, dim=model.config.box_dim,
        image_size=json.loads((root / "metadata.json").read_text())["config"]["image_size"]
        if (root / "metadata.json").is_file() else 64,
    )
    images = synthetic.load_images(root)
    by_id = {r.id: r for r in records}
    if config["record_id"] not in by_id:
        raise UsageError(f"record {config['record_id']!r} not in dataset")
    record = by_id[config["record_id"]]
    text_lookup = name_lookup = None
    if model.config.action_input == "text" or model.config.use_text_labels:
        _, text_lookup, name_lookup, _, _ = _tensor_lookups(
            config, False, model.config.action_input == "text", model.config.use_text_labels
        )
    tensors = training.tensorize_records(
        [record], schema, box_lookup=adapter.features,
        text_lookup=text_lookup, name_text_lookup=name_lookup,
    )
    geometry = {
        record.image_pre_ref: adapter.boxes(record.image_pre_ref),
        record.image_post_ref: adapter.boxes(record.image_post_ref),
    }
    paths = evaluation.export_attention_maps(
        model, record, tensors, images, geometry, config["out"]
    )
    _write_metadata(Path(config["out"]) / "metadata.json", "attn-maps", config, [])
    print(f"wrote {len(paths)} attention maps to {config['out']}")
    return 0


def _cmd_report(config: dict) -> int:
    _require(config, "runs")
    by_setup: dict[str, list[evaluation.EvalReport]] = {}
    for run_dir in config["runs"]:
        path = Path(run_dir)
        eval_path = path if path.is_file() else path / "eval.json"
        if not eval_path.is_file():
            raise FileNotFoundError(f"no eval report at {eval_path}")
        report = evaluation.EvalReport.load(eval_path)
        setup = report.metadata.get("setup", "unknown")
        by_setup.setdefault(setup, []).append(report)
    aggregates = {s: evaluation.aggregate_runs(r) for s, r in sorted(by_setup.items())}
    table = evaluation.aggregate_table(aggregates)
    print(table)
    inputs = [Path(r) if Path(r).is_file() else Path(r) / "eval.json" for r in config["runs"]]
    if config.get("out_csv"):
        evaluation.write_aggregate_csv(config["out_csv"], aggregates)
        _write_metadata(Path(config["out_csv"]).with_suffix(".meta.json"),
                        "report", config, inputs)
    if config.get("out_table"):
        Path(config["out_table"]).write_text(table + "\n")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def _build_parser() -> tuple[_Parser, dict[str, dict]]:
    parser = _Parser(prog="physdyn", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    defaults: dict[str, dict] = {}

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, add_help=True)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="JSON config file; flags override its values")
        return p

    p = add("synth", _cmd_synth, "generate a synthetic world dataset")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--seed", type=int, help="generation seed (default: 0)")
    p.add_argument("--n-trajectories", dest="n_trajectories", type=int,
                   help="number of trajectories (default: 1000)")
    p.add_argument("--n-objects", dest="n_objects", type=int,
                   help="instance pool size (default: 64)")
    p.add_argument("--n-object-types", dest="n_object_types", type=int,
                   help="number of object types (default: 12)")
    p.add_argument("--image-size", dest="image_size", type=int,
                   help="rendered image side in pixels (default: 64)")
    p.add_argument("--no-render", dest="no_render", action="store_const", const=True,
                   help="skip image rendering")
    defaults["synth"] = dict(out=None, seed=0, n_trajectories=1000, n_objects=64,
                             n_object_types=12, image_size=64, no_render=False)

    p = add("filter", _cmd_filter, "apply viewpoint/salience pixel filters")
    p.add_argument("--dataset", help="dataset directory (env PHYSDYN_DATA_DIR)")
    p.add_argument("--max-changed", dest="max_changed", type=int,
                   help="reject pairs with more changed positions (paper default: 400000)")
    p.add_argument("--min-max-change", dest="min_max_change", type=float,
                   help="keep pairs with max change strictly above this (paper default: 0.2)")
    p.add_argument("--report", help="output report JSON path")
    p.add_argument("--out-records", dest="out_records", help="write kept records here")
    defaults["filter"] = dict(dataset=_data_dir_default(), max_changed=400_000,
                              min_max_change=0.2, report=None, out_records=None)

    p = add("split", _cmd_split, "build the zero-shot split manifest")
    p.add_argument("--dataset", help="dataset directory (env PHYSDYN_DATA_DIR)")
    p.add_argument("--excluded-objects", dest="excluded_objects",
                   help="newline-delimited object names to exclude")
    p.add_argument("--excluded-pairs", dest="excluded_pairs",
                   help="newline-delimited (action,object) pairs to exclude")
    p.add_argument("--train", type=int, help="train size")
    p.add_argument("--val", type=int, help="validation size")
    p.add_argument("--test", type=int, help="test size; -1 for the remainder")
    p.add_argument("--seed", type=int, help="shuffle seed (default: 0)")
    p.add_argument("--out", help="manifest JSON output path")
    defaults["split"] = dict(dataset=_data_dir_default(), excluded_objects=None,
                             excluded_pairs=None, train=0, val=0, test=-1, seed=0,
                             out=None)

    p = add("cache-features", _cmd_cache_features, "run an adapter and cache its outputs")
    p.add_argument("--dataset", help="dataset directory (env PHYSDYN_DATA_DIR)")
    p.add_argument("--kind", choices=["boxes", "text"], help="adapter kind")
    p.add_argument("--out", help="cache file path")
    p.add_argument("--n-boxes", dest="n_boxes", type=int,
                   help="boxes per image (paper default: 100)")
    p.add_argument("--box-dim", dest="box_dim", type=int,
                   help="box feature width (paper default: 256)")
    p.add_argument("--text-dim", dest="text_dim", type=int,
                   help="text embedding width (stub default: 96)")
    p.add_argument("--image-size", dest="image_size", type=int,
                   help="image side used for background boxes (default: 64)")
    p.add_argument("--seed", type=int, help="unused; kept for metadata replay")
    defaults["cache-features"] = dict(dataset=_data_dir_default(), kind=None, out=None,
                                      n_boxes=6, box_dim=48, text_dim=96,
                                      image_size=64, seed=0)

    train_flags = [
        ("--epochs", "epochs", int, "training epochs (paper default: 80 pretrain / 60 finetune)"),
        ("--batch-size", "batch_size", int, "batch size (paper default: 256)"),
        ("--learning-rate", "learning_rate", float,
         "learning rate (paper default: 1e-3 pretrain / 1e-5 finetune)"),
        ("--patience", "patience", int, "early-stopping patience (paper default: 10)"),
        ("--hidden-size", "hidden_size", int, "model hidden size (paper default: 64)"),
        ("--dropout", "dropout", float, "dropout between layers (paper default: 0.1)"),
    ]

    def add_train_flags(p):
        for flag, dest, typ, help_text in train_flags:
            p.add_argument(flag, dest=dest, type=typ, help=help_text)
        p.add_argument("--profile", choices=PROFILE_NAMES,
                       help="paper profile (paper defaults) or minutes-scale desk profile")
        p.add_argument("--seed", type=int, help="run seed (paper default: seeds 1..10)")
        p.add_argument("--finetune-reserve", dest="finetune_reserve", type=int,
                       help="train records reserved for fine-tuning (default per profile)")
        p.add_argument("--finetune-val-reserve", dest="finetune_val_reserve", type=int,
                       help="val records reserved for fine-tuning (default per profile)")
        p.add_argument("--box-cache", dest="box_cache", help="box feature cache file")
        p.add_argument("--text-cache", dest="text_cache", help="text embedding cache file")

    train_defaults = dict(
        dataset=_data_dir_default(), manifest=None, out=None, profile="paper",
        seed=1, epochs=None, batch_size=None, learning_rate=None, patience=None,
        hidden_size=None, dropout=None, finetune_reserve=300, finetune_val_reserve=100,
        box_cache=None, text_cache=None,
    )

    p = add("pretrain", _cmd_pretrain, "pretrain a setup on symbolic actions")
    p.add_argument("--dataset", help="dataset directory (env PHYSDYN_DATA_DIR)")
    p.add_argument("--manifest", help="split manifest JSON")
    p.add_argument("--setup", help=f"one of {', '.join(model_mod.SETUPS)}")
    p.add_argument("--out", help="run directory")
    add_train_flags(p)
    defaults["pretrain"] = dict(train_defaults, setup="base+symbolic")

    p = add("finetune", _cmd_finetune, "fine-tune a checkpoint on text actions")
    p.add_argument("--dataset", help="dataset directory (env PHYSDYN_DATA_DIR)")
    p.add_argument("--manifest", help="split manifest JSON")
    p.add_argument("--checkpoint", help="pretrained checkpoint file or run dir")
    p.add_argument("--out", help="run directory")
    add_train_flags(p)
    defaults["finetune"] = dict(train_defaults, checkpoint=None)

    p = add("eval", _cmd_eval, "evaluate a checkpoint on the test split")
    p.add_argument("--dataset", help="dataset directory (env PHYSDYN_DATA_DIR)")
    p.add_argument("--manifest", help="split manifest JSON")
    p.add_argument("--checkpoint", help="checkpoint file or run dir")
    p.add_argument("--out", help="eval report JSON output")
    p.add_argument("--seed", type=int, help="seed recorded in the report")
    p.add_argument("--box-cache", dest="box_cache", help="box feature cache file")
    p.add_argument("--text-cache", dest="text_cache", help="text embedding cache file")
    defaults["eval"] = dict(dataset=_data_dir_default(), manifest=None, checkpoint=None,
                            out=None, seed=1, box_cache=None, text_cache=None)

    p = add("attn-maps", _cmd_attn_maps, "export attention-map overlays for one record")
    p.add_argument("--dataset", help="dataset directory (env PHYSDYN_DATA_DIR)")
    p.add_argument("--checkpoint", help="checkpoint file or run dir")
    p.add_argument("--record-id", dest="record_id", help="trajectory id to visualize")
    p.add_argument("--out", help="output directory for PNG panels")
    p.add_argument("--text-cache", dest="text_cache", help="text embedding cache file")
    p.add_argument("--seed", type=int, help="unused; kept for metadata replay")
    defaults["attn-maps"] = dict(dataset=_data_dir_default(), checkpoint=None,
                                 record_id=None, out=None, text_cache=None, seed=0)

    p = add("report", _cmd_report, "aggregate eval reports across seeds")
    p.add_argument("--runs", nargs="+", help="run directories or eval.json files")
    p.add_argument("--out-csv", dest="out_csv", help="write per-metric CSV here")
    p.add_argument("--out-table", dest="out_table", help="write the text table here")
    defaults["report"] = dict(runs=None, out_csv=None, out_table=None)

    return parser, defaults


def dispatch(argv: list[str]) -> int:
    parser, defaults = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        config = _effective_config(args, defaults[args.command])
        return args.fn(config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
