"""Image-pair pixel statistics and the viewpoint/salience filters.

A pair is dropped when too much changed (camera or lighting moved, so the
difference no longer isolates the action) or when too little changed (the
action left no visible trace). Both statistics are computed per channel on
8-bit values with exact comparisons.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .schema import ImagePair, TrajectoryRecord

REASON_VIEWPOINT = "viewpoint change"
REASON_NO_CHANGE = "no salient change"
REASON_MISSING = "asset missing"


@dataclass(frozen=True)
class FilterThresholds:
    """Keep a pair iff changed-pixel count <= max_changed_pixels and
    max change > min_max_change (both boundaries exact)."""

    max_changed_pixels: int = 400_000
    min_max_change: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.min_max_change <= 1.0:
            raise ValueError("min_max_change must lie in [0, 1]")
        if self.max_changed_pixels < 0:
            raise ValueError("max_changed_pixels must be nonnegative")


def count_changed_pixels(pair: ImagePair) -> int:
    """Number of (x, y, channel) positions whose 8-bit values differ.

    The maximum is W*H*3 since channels are compared independently.
    """
    return int(np.count_nonzero(pair.pre != pair.post))


def max_pixel_change(pair: ImagePair) -> float:
    """Largest per-position change magnitude, normalized by 255 into [0, 1]."""
    diff = np.abs(pair.pre.astype(np.int16) - pair.post.astype(np.int16))
    return float(diff.max()) / 255.0


@dataclass
class FilterReport:
    """Per-reason rejection counts plus the raw change distributions.

    ``changed_pixel_counts`` and ``max_changes`` cover every pair that could
    be loaded (kept or rejected), so histograms of both statistics can be
    drawn from a single report.
    """

    n_input: int = 0
    kept_ids: list[str] = field(default_factory=list)
    rejections: list[tuple[str, str]] = field(default_factory=list)
    changed_pixel_counts: list[int] = field(default_factory=list)
    max_changes: list[float] = field(default_factory=list)

    @property
    def reason_counts(self) -> dict[str, int]:
        return dict(Counter(reason for _, reason in self.rejections))

    def to_json(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_kept": len(self.kept_ids),
            "kept_ids": self.kept_ids,
            "rejections": [{"id": rid, "reason": reason} for rid, reason in self.rejections],
            "reason_counts": self.reason_counts,
            "changed_pixel_counts": self.changed_pixel_counts,
            "max_changes": self.max_changes,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))


def apply_visual_filters(
    records: Sequence[TrajectoryRecord],
    assets: Mapping[str, np.ndarray],
    thresholds: FilterThresholds = FilterThresholds(),
) -> tuple[list[TrajectoryRecord], FilterReport]:
    """Split records into kept and rejected by the two pixel statistics.

    A missing image is a per-record rejection (reason "asset missing"), not a
    hard failure. When a pair trips both predicates, the viewpoint reason
    wins, matching the order the statistics are screened in.
    """
    report = FilterReport(n_input=len(records))
    kept = []
    for record in records:
        pre = assets.get(record.image_pre_ref)
        post = assets.get(record.image_post_ref)
        if pre is None or post is None:
            report.rejections.append((record.id, REASON_MISSING))
            continue
        pair = ImagePair(pre, post)
        n_changed = count_changed_pixels(pair)
        max_change = max_pixel_change(pair)
        report.changed_pixel_counts.append(n_changed)
        report.max_changes.append(max_change)
        if n_changed > thresholds.max_changed_pixels:
            report.rejections.append((record.id, REASON_VIEWPOINT))
        elif max_change <= thresholds.min_max_change:
            report.rejections.append((record.id, REASON_NO_CHANGE))
        else:
            kept.append(record)
            report.kept_ids.append(record.id)
    return kept, report
