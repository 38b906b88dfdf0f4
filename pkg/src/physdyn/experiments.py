"""End-to-end experiment harness over the synthetic world.

Two profiles exist: the full-scale "paper" profile (h=64, batch 256, epochs
80/60, learning rates 1e-3/1e-5, seeds 1..10) and the minutes-scale "desk"
profile used by the acceptance suite, which shrinks the model and schedule so
a full setup comparison finishes on a laptop CPU.

A run is: pretrain on symbolic actions, fine-tune with the text action
encoder, evaluate on the held-out test set (overall + zero-shot + grouped
accuracies).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch

from .evaluation import EvalReport, evaluate_predictions, predict
from .features import StubBoxAdapter, StubTextAdapter
from .model import ModelConfig, PhysicalDynamicsModel
from .schema import AttributeSchema, TrajectoryRecord
from .splits import SplitManifest, build_zero_shot_split
from .synthetic import (
    DEFAULT_EXCLUDED_OBJECTS,
    DEFAULT_EXCLUDED_PAIRS,
    SyntheticWorld,
    WorldConfig,
    generate_synthetic_world,
)
from .training import (
    TrainConfig,
    TrainResult,
    run_finetuning,
    run_pretraining,
    tensorize_records,
)


@dataclass(frozen=True)
class ExperimentProfile:
    name: str
    model: dict
    world: WorldConfig
    pretrain: TrainConfig
    finetune: TrainConfig
    seeds: tuple[int, ...]
    text_dim: int
    # records reserved per role, drawn from the manifest's train/val sets
    n_pretrain_train: int
    n_pretrain_val: int
    n_finetune_train: int
    n_finetune_val: int
    excluded_objects: tuple[str, ...] = DEFAULT_EXCLUDED_OBJECTS
    excluded_pairs: tuple[tuple[str, str], ...] = DEFAULT_EXCLUDED_PAIRS


PAPER_PROFILE = ExperimentProfile(
    name="paper",
    model=dict(
        hidden_size=64, dropout=0.1, encoder_layers=3, encoder_heads=4,
        decoder_layers=3, decoder_heads=4, ffn_size=2048, n_boxes=100, box_dim=256,
    ),
    world=WorldConfig(n_objects=256, n_object_types=12, n_trajectories=50_000, render=False),
    pretrain=TrainConfig(phase="pretrain", epochs=80, batch_size=256,
                         learning_rate=1e-3, patience=10),
    finetune=TrainConfig(phase="finetune", epochs=60, batch_size=256,
                         learning_rate=1e-5, patience=10),
    seeds=tuple(range(1, 11)),
    text_dim=256,
    n_pretrain_train=40_000,
    n_pretrain_val=4_000,
    n_finetune_train=750,
    n_finetune_val=367,
)

# Desk profile: same architecture family, scaled until a nine-run setup
# comparison fits in tens of minutes on two CPU cores. Deviations from the
# paper schedule (smaller/shallower model, no dropout, bigger batch with a
# matching learning rate, faster fine-tune rate) trade fidelity for wall time.
DESK_PROFILE = ExperimentProfile(
    name="desk",
    model=dict(
        hidden_size=32, dropout=0.0, encoder_layers=2, encoder_heads=4,
        decoder_layers=2, decoder_heads=4, ffn_size=64, n_boxes=6, box_dim=48,
    ),
    world=WorldConfig(n_objects=64, n_object_types=12, n_trajectories=6_600, render=False),
    pretrain=TrainConfig(phase="pretrain", epochs=24, batch_size=512,
                         learning_rate=2e-3, patience=10),
    finetune=TrainConfig(phase="finetune", epochs=16, batch_size=64,
                         learning_rate=1e-4, patience=10,
                         new_param_learning_rate=1e-2),
    seeds=(1, 2, 3),
    text_dim=96,
    n_pretrain_train=5_000,
    n_pretrain_val=400,
    n_finetune_train=300,
    n_finetune_val=100,
)

PROFILES = {"paper": PAPER_PROFILE, "desk": DESK_PROFILE}


@dataclass
class ExperimentData:
    """Synthetic world, split manifest, and tensorized batches per role.

    Tensor bags carry every input modality (symbolic states, box features,
    text embeddings); each setup's forward reads only what its config needs.
    """

    schema: AttributeSchema
    manifest: SplitManifest
    profile: ExperimentProfile
    tensors: dict[str, dict[str, torch.Tensor]]
    test_records: list[TrajectoryRecord]
    box_adapter: StubBoxAdapter
    text_adapter: StubTextAdapter


def prepare_experiment_data(
    profile: ExperimentProfile,
    data_seed: int = 0,
    world: SyntheticWorld | None = None,
) -> ExperimentData:
    """Generate the world, build the zero-shot split, and tensorize all roles."""
    if world is None:
        world = generate_synthetic_world(profile.world, data_seed)
    schema = world.schema
    n_train = profile.n_pretrain_train + profile.n_finetune_train
    n_val = profile.n_pretrain_val + profile.n_finetune_val
    manifest = build_zero_shot_split(
        world.records,
        schema,
        profile.excluded_objects,
        profile.excluded_pairs,
        sizes=(n_train, n_val, None),
        seed=data_seed,
    )
    by_id = {r.id: r for r in world.records}
    train = [by_id[i] for i in manifest.train_ids]
    val = [by_id[i] for i in manifest.val_ids]
    test = [by_id[i] for i in manifest.test_ids]

    roles = {
        "pretrain_train": train[: profile.n_pretrain_train],
        "pretrain_val": val[: profile.n_pretrain_val],
        "finetune_train": train[profile.n_pretrain_train :],
        "finetune_val": val[profile.n_pretrain_val :],
        "test": test,
    }

    box_adapter = StubBoxAdapter(
        world.scenes,
        n_boxes=profile.model["n_boxes"],
        dim=profile.model["box_dim"],
        image_size=profile.world.image_size,
    )
    text_adapter = StubTextAdapter(dim=profile.text_dim)
    sentence_by_id = {r.id: r.action.text for r in world.records}

    def text_lookup(record_id: str) -> np.ndarray:
        return text_adapter.embed(sentence_by_id[record_id])

    def name_text_lookup(name: str) -> np.ndarray:
        return text_adapter.embed(name.lower())

    tensors = {
        role: tensorize_records(
            records,
            schema,
            box_lookup=box_adapter.features,
            text_lookup=text_lookup,
            name_text_lookup=name_text_lookup,
        )
        for role, records in roles.items()
    }
    return ExperimentData(
        schema=schema,
        manifest=manifest,
        profile=profile,
        tensors=tensors,
        test_records=roles["test"],
        box_adapter=box_adapter,
        text_adapter=text_adapter,
    )


@dataclass
class RunResult:
    setup: str
    seed: int
    report: EvalReport
    pretrain: TrainResult
    finetune: TrainResult | None


def model_config_for(
    setup: str, data: ExperimentData, profile: ExperimentProfile | None = None
) -> ModelConfig:
    profile = profile or data.profile
    overrides = dict(profile.model)
    if "text-labels" in setup:
        overrides["text_embed_dim"] = profile.text_dim
    from .model import AttributeLayout

    return ModelConfig.for_setup(setup, AttributeLayout.from_schema(data.schema), **overrides)


def run_experiment(
    data: ExperimentData,
    setup: str,
    seed: int,
    do_finetune: bool = True,
) -> RunResult:
    """One full (pretrain, fine-tune, evaluate) run for a setup and seed."""
    profile = data.profile
    config = model_config_for(setup, data)
    pretrain = run_pretraining(
        config,
        data.tensors["pretrain_train"],
        data.tensors["pretrain_val"],
        replace(profile.pretrain, seed=seed),
    )
    final_model: PhysicalDynamicsModel = pretrain.model
    finetune = None
    if do_finetune:
        finetune = run_finetuning(
            pretrain.model,
            data.tensors["finetune_train"],
            data.tensors["finetune_val"],
            replace(profile.finetune, seed=seed),
            text_embed_dim=profile.text_dim,
        )
        final_model = finetune.model
    predictions = predict(final_model, data.tensors["test"], data.test_records)
    report = evaluate_predictions(predictions, data.schema, data.manifest, seed=seed)
    report.metadata.update({"setup": setup, "profile": profile.name,
                            "finetuned": bool(do_finetune)})
    return RunResult(setup=setup, seed=seed, report=report,
                     pretrain=pretrain, finetune=finetune)


_WORKER_DATA: ExperimentData | None = None


def _worker_init(profile: ExperimentProfile, data_seed: int) -> None:
    global _WORKER_DATA
    torch.set_num_threads(1)
    _WORKER_DATA = prepare_experiment_data(profile, data_seed)


def _worker_run(job: tuple[str, int, bool]) -> tuple[str, int, dict]:
    setup, seed, do_finetune = job
    result = run_experiment(_WORKER_DATA, setup, seed, do_finetune=do_finetune)
    return setup, seed, result.report.to_json()


def run_matrix(
    data: ExperimentData,
    setups: Sequence[str],
    seeds: Sequence[int] | None = None,
    n_workers: int = 1,
    data_seed: int = 0,
    do_finetune: bool = True,
) -> dict[str, list[EvalReport]]:
    """Multi-seed sweep over setups.

    Runs are independent (no shared mutable state), so with n_workers > 1
    they execute in separate worker processes, each rebuilding the dataset
    from (profile, data_seed). Results are deterministic either way.
    """
    seeds = list(seeds if seeds is not None else data.profile.seeds)
    jobs = [(setup, seed, do_finetune) for setup in setups for seed in seeds]
    reports: dict[tuple[str, int], EvalReport] = {}
    if n_workers <= 1:
        for setup, seed, ft in jobs:
            reports[(setup, seed)] = run_experiment(data, setup, seed, do_finetune=ft).report
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(
            max_workers=n_workers,
            initializer=_worker_init,
            initargs=(data.profile, data_seed),
        ) as pool:
            for setup, seed, doc in pool.map(_worker_run, jobs):
                reports[(setup, seed)] = EvalReport.from_json(doc)
    return {setup: [reports[(setup, seed)] for seed in seeds] for setup in setups}


def pooled_std(a: Sequence[float], b: Sequence[float]) -> float:
    """Pooled standard deviation of two equally treated samples."""
    va = float(np.var(a, ddof=1)) if len(a) > 1 else 0.0
    vb = float(np.var(b, ddof=1)) if len(b) > 1 else 0.0
    return float(np.sqrt((va + vb) / 2.0))
