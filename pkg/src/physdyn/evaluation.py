"""Accuracy metrics, multi-seed aggregation, and attention-map export.

An object counts as correct under the overall (exact match) metric only when
all of its predicted attribute values equal the ground truth. Accuracy is
computed per object (two scorable objects per trajectory); None-placeholder
objects are skipped entirely. An object's action group is its trajectory's
action whether it was the target or the distractor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .model import PhysicalDynamicsModel
from .schema import ACTION_NAMES, AttributeSchema, TrajectoryRecord
from .splits import SplitManifest
from .training import n_records, slice_batch


@dataclass
class PredictionSet:
    """Per-scored-object predictions and targets as local value indices."""

    values: np.ndarray  # (n_objects, S)
    targets: np.ndarray  # (n_objects, S)
    action_ids: np.ndarray  # (n_objects,)
    record_ids: list[str]  # trajectory id per scored object

    def __post_init__(self):
        if self.values.shape != self.targets.shape:
            raise ValueError(
                f"prediction shape {self.values.shape} != target shape {self.targets.shape}"
            )
        if len(self.record_ids) != self.values.shape[0] or len(self.action_ids) != self.values.shape[0]:
            raise ValueError("per-object metadata length mismatch")

    @property
    def exact_match(self) -> np.ndarray:
        return (self.values == self.targets).all(axis=1)


def predict(
    model: PhysicalDynamicsModel,
    tensors: Mapping[str, torch.Tensor],
    records: Sequence[TrajectoryRecord],
    batch_size: int = 512,
) -> PredictionSet:
    """Argmax predictions for every scored object in the tensorized records."""
    offsets = np.asarray(model.config.layout.offsets)
    values, targets, action_ids, record_ids = [], [], [], []
    model.eval()
    with torch.no_grad():
        for start in range(0, n_records(tensors), batch_size):
            idx = slice(start, start + batch_size)
            batch = slice_batch(tensors, idx)
            predicted = model.predict_post(batch).numpy()  # (b, 2, S) global
            target = batch["post_global"].numpy()
            scored = batch["scored_mask"].numpy()
            for b, record in enumerate(records[start : start + batch_size]):
                for k in range(2):
                    if not scored[b, k]:
                        continue
                    values.append(predicted[b, k] - offsets)
                    targets.append(target[b, k] - offsets)
                    action_ids.append(record.action.action_id)
                    record_ids.append(record.id)
    return PredictionSet(
        values=np.asarray(values),
        targets=np.asarray(targets),
        action_ids=np.asarray(action_ids),
        record_ids=record_ids,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def exact_match_accuracy(
    predictions: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray | None = None,
) -> float:
    """Percentage of objects whose predicted values all equal the targets."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    correct = (predictions == targets).all(axis=1)
    if mask is not None:
        correct = correct[np.asarray(mask)]
    if correct.size == 0:
        raise ValueError("no objects to score")
    # integer count over integer size: bit-identical to a naive double loop
    return 100.0 * int(correct.sum()) / int(correct.size)


def grouped_accuracy(
    predictions: PredictionSet,
    schema: AttributeSchema,
    group_by: str,
) -> dict[str, float]:
    """Exact match per action, or per-attribute value accuracy."""
    if group_by == "action":
        out = {}
        for action_id, name in enumerate(ACTION_NAMES):
            mask = predictions.action_ids == action_id
            if mask.any():
                out[name] = exact_match_accuracy(
                    predictions.values, predictions.targets, mask
                )
        return out
    if group_by == "attribute":
        hits = (predictions.values == predictions.targets).sum(axis=0)
        n = predictions.values.shape[0]
        return {
            attr.name: 100.0 * int(hits[slot]) / n
            for slot, attr in enumerate(schema.attributes)
        }
    raise ValueError(f"unknown group key {group_by!r}")


def zero_shot_accuracy(predictions: PredictionSet, manifest: SplitManifest) -> float:
    """Exact-match accuracy restricted to zero-shot-tagged test records."""
    zero_shot = set(manifest.zero_shot_test_ids)
    if not zero_shot:
        raise ValueError("manifest has no zero-shot test records")
    mask = np.asarray([rid in zero_shot for rid in predictions.record_ids])
    if not mask.any():
        raise ValueError("no scored objects fall in the zero-shot set")
    return exact_match_accuracy(predictions.values, predictions.targets, mask)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    overall_accuracy: float
    zero_shot_accuracy: float | None
    per_action_accuracy: dict[str, float]
    per_attribute_accuracy: dict[str, float]
    n_objects_scored: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        values = [self.overall_accuracy, *self.per_action_accuracy.values(),
                  *self.per_attribute_accuracy.values()]
        if self.zero_shot_accuracy is not None:
            values.append(self.zero_shot_accuracy)
        for v in values:
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"accuracy {v} outside [0, 100]")
        if self.per_attribute_accuracy:
            floor = min(self.per_attribute_accuracy.values())
            if self.overall_accuracy > floor + 1e-9:
                raise ValueError(
                    "overall exact match cannot exceed any per-attribute accuracy"
                )

    def to_json(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "zero_shot_accuracy": self.zero_shot_accuracy,
            "per_action_accuracy": self.per_action_accuracy,
            "per_attribute_accuracy": self.per_attribute_accuracy,
            "n_objects_scored": self.n_objects_scored,
            "seed": self.seed,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvalReport":
        return cls(
            overall_accuracy=doc["overall_accuracy"],
            zero_shot_accuracy=doc["zero_shot_accuracy"],
            per_action_accuracy=dict(doc["per_action_accuracy"]),
            per_attribute_accuracy=dict(doc["per_attribute_accuracy"]),
            n_objects_scored=doc["n_objects_scored"],
            seed=doc["seed"],
            metadata=dict(doc.get("metadata", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_json(json.loads(Path(path).read_text()))


def evaluate_predictions(
    predictions: PredictionSet,
    schema: AttributeSchema,
    manifest: SplitManifest | None = None,
    seed: int = 0,
) -> EvalReport:
    zero_shot = None
    if manifest is not None and manifest.zero_shot_test_ids:
        zero_shot = zero_shot_accuracy(predictions, manifest)
    return EvalReport(
        overall_accuracy=exact_match_accuracy(predictions.values, predictions.targets),
        zero_shot_accuracy=zero_shot,
        per_action_accuracy=grouped_accuracy(predictions, schema, "action"),
        per_attribute_accuracy=grouped_accuracy(predictions, schema, "attribute"),
        n_objects_scored=int(predictions.values.shape[0]),
        seed=seed,
        metadata={"action_attribution": "trajectory"},
    )


# ---------------------------------------------------------------------------
# Multi-seed aggregation
# ---------------------------------------------------------------------------

@dataclass
class MetricSummary:
    mean: float
    std: float  # sample standard deviation (n-1); 0 for a single report
    n: int

    @property
    def single_run(self) -> bool:
        return self.n == 1


def _flatten_metrics(report: EvalReport) -> dict[str, float]:
    out = {"overall_accuracy": report.overall_accuracy}
    if report.zero_shot_accuracy is not None:
        out["zero_shot_accuracy"] = report.zero_shot_accuracy
    for name, value in report.per_action_accuracy.items():
        out[f"action/{name}"] = value
    for name, value in report.per_attribute_accuracy.items():
        out[f"attribute/{name}"] = value
    return out


def aggregate_runs(reports: Sequence[EvalReport]) -> dict[str, MetricSummary]:
    """Per-metric mean and n-1 standard deviation across seeds."""
    if not reports:
        raise ValueError("need at least one report to aggregate")
    flat = [_flatten_metrics(r) for r in reports]
    keys = set(flat[0])
    for f in flat[1:]:
        if set(f) != keys:
            raise ValueError("reports carry inconsistent metric keys")
    out = {}
    for key in sorted(keys):
        values = np.array([f[key] for f in flat], dtype=np.float64)
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        out[key] = MetricSummary(mean=float(values.mean()), std=std, n=len(values))
    return out


def aggregate_table(
    aggregates: Mapping[str, Mapping[str, MetricSummary]],
    metrics: Sequence[str] = ("overall_accuracy", "zero_shot_accuracy"),
) -> str:
    """Aligned text table: one row per setup, mean +/- sigma per metric."""
    headers = ["setup"] + list(metrics)
    rows = []
    for setup, summary in aggregates.items():
        row = [setup]
        for metric in metrics:
            if metric in summary:
                m = summary[metric]
                row.append(f"{m.mean:.2f} +/- {m.std:.2f}")
            else:
                row.append("-")
        rows.append(row)
    widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def write_aggregate_csv(
    path: str | Path, aggregates: Mapping[str, Mapping[str, MetricSummary]]
) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setup", "metric", "mean", "std", "n"])
        for setup, summary in aggregates.items():
            for metric, m in summary.items():
                writer.writerow([setup, metric, f"{m.mean:.6f}", f"{m.std:.6f}", m.n])


# ---------------------------------------------------------------------------
# Attention maps
# ---------------------------------------------------------------------------

def render_attention_panel(
    image: np.ndarray,
    boxes: np.ndarray,
    alpha: np.ndarray,
    label: str = "",
) -> np.ndarray:
    """Overlay each bounding box on the image, shaded by its attention weight."""
    total = float(alpha.sum())
    if not math.isclose(total, 1.0, abs_tol=1e-4):
        raise ValueError(f"attention weights must sum to 1, got {total}")
    panel = image.astype(np.float32).copy()
    peak = float(alpha.max())
    for (x0, y0, x1, y1), a in zip(boxes, alpha):
        strength = float(a) / peak if peak > 0 else 0.0
        region = panel[y0 : y1 + 1, x0 : x1 + 1]
        highlight = np.array([255.0, 40.0, 40.0])
        panel[y0 : y1 + 1, x0 : x1 + 1] = (
            region * (1 - 0.6 * strength) + highlight * (0.6 * strength)
        )
        # box outline at full attention color
        panel[y0, x0 : x1 + 1] = highlight * strength + panel[y0, x0 : x1 + 1] * (1 - strength)
        panel[y1, x0 : x1 + 1] = highlight * strength + panel[y1, x0 : x1 + 1] * (1 - strength)
        panel[y0 : y1 + 1, x0] = highlight * strength + panel[y0 : y1 + 1, x0] * (1 - strength)
        panel[y0 : y1 + 1, x1] = highlight * strength + panel[y0 : y1 + 1, x1] * (1 - strength)
    return np.clip(panel, 0, 255).astype(np.uint8)


def export_attention_maps(
    model: PhysicalDynamicsModel,
    record: TrajectoryRecord,
    tensors: Mapping[str, torch.Tensor],
    images: Mapping[str, np.ndarray],
    box_geometry: Mapping[str, np.ndarray],
    out_dir: str | Path,
) -> list[Path]:
    """Write one raster per (pre/post image x object slot) plus a 2x2 grid.

    Rows of the grid are the before/after images, columns the two objects,
    each overlaying every box shaded by its attention weight.
    """
    from PIL import Image

    if not model.config.use_images:
        raise ValueError("attention maps require a model with the vision branch active")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.eval()
    with torch.no_grad():
        output = model(tensors, compute_pre=False)
    panels = {}
    paths = []
    for phase, ref, alphas in [
        ("pre", record.image_pre_ref, output.alpha_pre),
        ("post", record.image_post_ref, output.alpha_post),
    ]:
        image = images[ref]
        boxes = np.asarray(box_geometry[ref])
        for k in range(2):
            alpha = alphas[0, k].numpy()
            panel = render_attention_panel(image, boxes, alpha)
            panels[(phase, k)] = panel
            path = out / f"{record.id}-{phase}-object{k}.png"
            Image.fromarray(panel).save(path)
            paths.append(path)
    top = np.concatenate([panels[("pre", 0)], panels[("pre", 1)]], axis=1)
    bottom = np.concatenate([panels[("post", 0)], panels[("post", 1)]], axis=1)
    grid = np.concatenate([top, bottom], axis=0)
    grid_path = out / f"{record.id}-grid.png"
    Image.fromarray(grid).save(grid_path)
    paths.append(grid_path)
    return paths
