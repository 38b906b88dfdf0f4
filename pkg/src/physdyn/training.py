"""Pre-training and fine-tuning loops with early stopping.

Both phases share one loop: adaptive-moment gradient descent, per-epoch
validation, strictly-lower-is-better early stopping, and the best-validation
weights restored at the end. All randomness (init, shuffles, dropout) flows
from the run seed, so identical (config, seed) pairs give identical loss
histories.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .model import (
    ModelConfig,
    PhysicalDynamicsModel,
    compute_loss,
)
from .schema import AttributeSchema, TrajectoryRecord


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "pretrain"  # or "finetune"
    epochs: int = 80
    batch_size: int = 256
    learning_rate: float = 1e-3
    patience: int = 10
    seed: int = 1
    checkpoint_dir: str | None = None
    # Optional higher rate for freshly initialized parameters (the text
    # projection swapped in at fine-tune time). None keeps one rate for all
    # parameter groups.
    new_param_learning_rate: float | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.patience <= 0:
            raise ValueError("epochs must be >= 0, batch size and patience positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.new_param_learning_rate is not None and self.new_param_learning_rate <= 0:
            raise ValueError("new_param_learning_rate must be positive")

    @classmethod
    def paper_pretrain(cls, **overrides) -> "TrainConfig":
        return cls(phase="pretrain", epochs=80, batch_size=256,
                   learning_rate=1e-3, patience=10, **overrides)

    @classmethod
    def paper_finetune(cls, **overrides) -> "TrainConfig":
        return cls(phase="finetune", epochs=60, batch_size=256,
                   learning_rate=1e-5, patience=10, **overrides)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    model: PhysicalDynamicsModel
    history: list[EpochStats]
    best_epoch: int
    best_val_loss: float


# ---------------------------------------------------------------------------
# Record tensorization
# ---------------------------------------------------------------------------

def tensorize_records(
    records: Sequence[TrajectoryRecord],
    schema: AttributeSchema,
    box_lookup: Callable[[str], np.ndarray] | None = None,
    text_lookup: Callable[[str], np.ndarray] | None = None,
    name_text_lookup: Callable[[str], np.ndarray] | None = None,
) -> dict[str, torch.Tensor]:
    """Turn records into the tensor bag the model's forward consumes.

    Value indices are globalized (offset by each attribute's position in the
    concatenated vocabulary). Optional lookups supply cached box features per
    image ref, cached action-text embeddings per record id, and cached name
    embeddings per object-name string.
    """
    offsets = schema.offsets  # (S,)
    n = len(records)
    s = len(schema.attributes)

    pre = np.zeros((n, 2, s), dtype=np.int64)
    post = np.zeros((n, 2, s), dtype=np.int64)
    names = np.zeros((n, 2), dtype=np.int64)
    scored = np.zeros((n, 2), dtype=bool)
    action_id = np.zeros(n, dtype=np.int64)
    action_obj = np.zeros(n, dtype=np.int64)
    action_rec = np.zeros(n, dtype=np.int64)
    name_slot_offset = offsets[0]

    for i, record in enumerate(records):
        for k in range(2):
            pre[i, k] = offsets + np.asarray(record.objects_pre[k].values)
            post[i, k] = offsets + np.asarray(record.objects_post[k].values)
            names[i, k] = name_slot_offset + record.objects_pre[k].values[0]
            scored[i, k] = not record.objects_pre[k].is_none
        action_id[i] = record.action.action_id
        action_obj[i] = name_slot_offset + record.action.object_name
        action_rec[i] = name_slot_offset + record.action.receptacle_name

    batch: dict[str, torch.Tensor] = {
        "pre_global": torch.from_numpy(pre),
        "post_global": torch.from_numpy(post),
        "name_global": torch.from_numpy(names),
        "scored_mask": torch.from_numpy(scored),
        "action_id": torch.from_numpy(action_id),
        "action_object_global": torch.from_numpy(action_obj),
        "action_receptacle_global": torch.from_numpy(action_rec),
    }

    if box_lookup is not None and records:
        boxes_pre = np.stack([box_lookup(r.image_pre_ref) for r in records])
        boxes_post = np.stack([box_lookup(r.image_post_ref) for r in records])
        batch["boxes_pre"] = torch.from_numpy(boxes_pre.astype(np.float32))
        batch["boxes_post"] = torch.from_numpy(boxes_post.astype(np.float32))

    if text_lookup is not None and records:
        embs = np.stack([text_lookup(r.id) for r in records])
        batch["action_text_emb"] = torch.from_numpy(embs.astype(np.float32))

    if name_text_lookup is not None and records:
        name_embs = np.stack(
            [
                [
                    name_text_lookup(state.value(schema, "ObjectName"))
                    for state in record.objects_pre
                ]
                for record in records
            ]
        )
        batch["name_text_emb"] = torch.from_numpy(name_embs.astype(np.float32))

    return batch


def n_records(tensors: Mapping[str, torch.Tensor]) -> int:
    return int(tensors["action_id"].shape[0])


def slice_batch(tensors: Mapping[str, torch.Tensor], idx) -> dict[str, torch.Tensor]:
    return {k: v[idx] for k, v in tensors.items()}


# ---------------------------------------------------------------------------
# Loop machinery
# ---------------------------------------------------------------------------

class EarlyStopper:
    """Strictly-lower validation loss counts as improvement; after
    ``patience`` consecutive non-improving epochs, training stops."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def _batch_loss(model: PhysicalDynamicsModel, batch: Mapping[str, torch.Tensor]) -> torch.Tensor:
    out = model(batch)
    return compute_loss(
        out.logits_post,
        batch["post_global"],
        out.logits_pre,
        batch["pre_global"],
        batch["scored_mask"],
        model=model,
    )


def evaluate_loss(
    model: PhysicalDynamicsModel,
    tensors: Mapping[str, torch.Tensor],
    batch_size: int,
) -> float:
    model.eval()
    total, weight = 0.0, 0
    with torch.no_grad():
        for start in range(0, n_records(tensors), batch_size):
            batch = slice_batch(tensors, slice(start, start + batch_size))
            b = n_records(batch)
            total += float(_batch_loss(model, batch)) * b
            weight += b
    model.train()
    return total / weight


def _train_loop(
    model: PhysicalDynamicsModel,
    train: Mapping[str, torch.Tensor],
    val: Mapping[str, torch.Tensor],
    config: TrainConfig,
    new_param_prefixes: tuple[str, ...] = (),
) -> TrainResult:
    if n_records(train) == 0:
        raise ValueError("empty training dataset")
    if config.new_param_learning_rate is not None and new_param_prefixes:
        fresh = [p for name, p in model.named_parameters()
                 if name.startswith(new_param_prefixes)]
        body = [p for name, p in model.named_parameters()
                if not name.startswith(new_param_prefixes)]
        optimizer = torch.optim.Adam(
            [
                {"params": fresh, "lr": config.new_param_learning_rate},
                {"params": body, "lr": config.learning_rate},
            ]
        )
    else:
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    stopper = EarlyStopper(config.patience)
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    history: list[EpochStats] = []
    n = n_records(train)
    model.train()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total, weight = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size])
            batch = slice_batch(train, idx)
            loss = _batch_loss(model, batch)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
            weight += len(idx)
        val_loss = evaluate_loss(model, val, config.batch_size)
        if stopper.update(epoch, val_loss):
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=total / weight,
                val_loss=val_loss,
                lr=config.learning_rate,
                seconds=time.perf_counter() - t0,
            )
        )
        if stopper.should_stop:
            break
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(
        model=model,
        history=history,
        best_epoch=stopper.best_epoch,
        best_val_loss=stopper.best if history else float("nan"),
    )


def run_pretraining(
    model_config: ModelConfig,
    train: Mapping[str, torch.Tensor],
    val: Mapping[str, torch.Tensor],
    config: TrainConfig,
) -> TrainResult:
    """Train a freshly initialized model; returns the best-validation weights
    and the per-epoch history."""
    torch.manual_seed(config.seed)
    model = PhysicalDynamicsModel(model_config)
    return _train_loop(model, train, val, config)


FINETUNE_FRESH_PREFIXES = ("text_action_proj.",)
FINETUNE_DROPPED_PREFIXES = ("action_embedding.", "action_mlp.")


def finetune_config(pretrained: ModelConfig, text_embed_dim: int) -> ModelConfig:
    """Swap the symbolic action encoder for the text path."""
    if pretrained.text_embed_dim is not None and pretrained.text_embed_dim != text_embed_dim:
        raise ValueError(
            f"checkpoint text dim {pretrained.text_embed_dim} does not match "
            f"adapter dim {text_embed_dim}"
        )
    return replace(pretrained, action_input="text", text_embed_dim=text_embed_dim)


def build_finetune_model(
    pretrained: PhysicalDynamicsModel,
    text_embed_dim: int,
    seed: int,
) -> PhysicalDynamicsModel:
    """New model with the text action encoder; every other weight copies the
    pretrained checkpoint. Raises on any shape/config mismatch."""
    config = finetune_config(pretrained.config, text_embed_dim)
    torch.manual_seed(seed)
    model = PhysicalDynamicsModel(config)
    result = model.load_state_dict(pretrained.state_dict(), strict=False)
    for key in result.missing_keys:
        if not key.startswith(FINETUNE_FRESH_PREFIXES):
            raise ValueError(f"checkpoint is missing unexpected weight {key!r}")
    for key in result.unexpected_keys:
        if not key.startswith(FINETUNE_DROPPED_PREFIXES):
            raise ValueError(f"checkpoint holds incompatible weight {key!r}")
    return model


def run_finetuning(
    pretrained: PhysicalDynamicsModel,
    train: Mapping[str, torch.Tensor],
    val: Mapping[str, torch.Tensor],
    config: TrainConfig,
    text_embed_dim: int,
) -> TrainResult:
    """Fine-tune from a pretrained model on text-described actions.

    The training tensors must carry ``action_text_emb``; with epochs=0 the
    returned model equals the input plus a fresh text projection.
    """
    if "action_text_emb" not in train:
        raise ValueError("fine-tuning data must carry cached action text embeddings")
    model = build_finetune_model(pretrained, text_embed_dim, config.seed)
    if config.epochs == 0:
        model.eval()
        return TrainResult(model=model, history=[], best_epoch=0, best_val_loss=float("nan"))
    return _train_loop(model, train, val, config,
                       new_param_prefixes=FINETUNE_FRESH_PREFIXES)


# ---------------------------------------------------------------------------
# History and fingerprints
# ---------------------------------------------------------------------------

def write_history_csv(path: str | Path, history: Sequence[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr", "seconds"])
        for row in history:
            writer.writerow([row.epoch, row.train_loss, row.val_loss, row.lr, row.seconds])


def read_history_csv(path: str | Path) -> list[EpochStats]:
    out = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            out.append(
                EpochStats(
                    epoch=int(row["epoch"]),
                    train_loss=float(row["train_loss"]),
                    val_loss=float(row["val_loss"]),
                    lr=float(row["lr"]),
                    seconds=float(row["seconds"]),
                )
            )
    return out


def parameter_hash(model: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for key in sorted(model.state_dict()):
        digest.update(key.encode())
        digest.update(model.state_dict()[key].numpy().tobytes())
    return digest.hexdigest()
