"""Zero-shot split construction and split audits.

Records that mention an excluded object or an excluded (action, object) pair
are routed to the test set and tagged zero-shot *before* the train/val/test
shuffle, so exclusions can never leak into training or validation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .schema import ACTION_NAMES, AttributeSchema, SchemaError, TrajectoryRecord


@dataclass(frozen=True)
class SplitManifest:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    excluded_objects: tuple[str, ...] = ()
    excluded_pairs: tuple[tuple[str, str], ...] = ()
    zero_shot_test_ids: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "train_ids": list(self.train_ids),
            "val_ids": list(self.val_ids),
            "test_ids": list(self.test_ids),
            "excluded_objects": list(self.excluded_objects),
            "excluded_pairs": [list(p) for p in self.excluded_pairs],
            "zero_shot_test_ids": list(self.zero_shot_test_ids),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SplitManifest":
        return cls(
            train_ids=tuple(doc["train_ids"]),
            val_ids=tuple(doc["val_ids"]),
            test_ids=tuple(doc["test_ids"]),
            excluded_objects=tuple(doc["excluded_objects"]),
            excluded_pairs=tuple((a, o) for a, o in doc["excluded_pairs"]),
            zero_shot_test_ids=tuple(doc["zero_shot_test_ids"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        return cls.from_json(json.loads(Path(path).read_text()))


def mentioned_object_names(record: TrajectoryRecord, schema: AttributeSchema) -> set[str]:
    """Object names a record touches: both object slots plus the action's
    object and receptacle references."""
    names = set()
    for state in record.objects_pre:
        if not state.is_none:
            names.add(state.value(schema, "ObjectName"))
    names.add(schema.object_names[record.action.object_name])
    names.add(schema.object_names[record.action.receptacle_name])
    return names


def record_mentions_exclusion(
    record: TrajectoryRecord,
    schema: AttributeSchema,
    excluded_objects: Iterable[str],
    excluded_pairs: Iterable[tuple[str, str]],
) -> bool:
    excluded_objects = set(excluded_objects)
    if excluded_objects & mentioned_object_names(record, schema):
        return True
    pair = (record.action.name, schema.object_names[record.action.object_name])
    return pair in set(excluded_pairs)


def _check_exclusion_names(
    schema: AttributeSchema,
    excluded_objects: Sequence[str],
    excluded_pairs: Sequence[tuple[str, str]],
) -> None:
    known = set(schema.object_names)
    for name in excluded_objects:
        if name not in known:
            raise SchemaError(f"excluded object {name!r} not in the schema")
    for action, name in excluded_pairs:
        if action not in ACTION_NAMES:
            raise SchemaError(f"excluded pair action {action!r} unknown")
        if name not in known:
            raise SchemaError(f"excluded pair object {name!r} not in the schema")


def build_zero_shot_split(
    records: Sequence[TrajectoryRecord],
    schema: AttributeSchema,
    excluded_objects: Sequence[str],
    excluded_pairs: Sequence[tuple[str, str]],
    sizes: tuple[int, int, int | None],
    seed: int,
) -> SplitManifest:
    """Build a manifest with zero-shot routing and a seeded shuffle.

    ``sizes`` gives (n_train, n_val, n_test) for the records that mention no
    exclusion; n_test may be None to take the remainder. Zero-shot records are
    added to the test set on top of n_test.
    """
    _check_exclusion_names(schema, excluded_objects, excluded_pairs)
    zero_shot_ids = []
    remaining = []
    for record in records:
        if record_mentions_exclusion(record, schema, excluded_objects, excluded_pairs):
            zero_shot_ids.append(record.id)
        else:
            remaining.append(record.id)

    n_train, n_val, n_test = sizes
    if n_test is None:
        n_test = len(remaining) - n_train - n_val
    if n_train < 0 or n_val < 0 or n_test < 0:
        raise ValueError("split sizes must be nonnegative")
    if n_train + n_val + n_test > len(remaining):
        raise ValueError(
            f"requested sizes {n_train}+{n_val}+{n_test} exceed the "
            f"{len(remaining)} records available after zero-shot routing"
        )

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(remaining))
    shuffled = [remaining[i] for i in order]
    train_ids = shuffled[:n_train]
    val_ids = shuffled[n_train : n_train + n_val]
    test_ids = shuffled[n_train + n_val : n_train + n_val + n_test]

    return SplitManifest(
        train_ids=tuple(train_ids),
        val_ids=tuple(val_ids),
        test_ids=tuple(test_ids) + tuple(zero_shot_ids),
        excluded_objects=tuple(excluded_objects),
        excluded_pairs=tuple(excluded_pairs),
        zero_shot_test_ids=tuple(zero_shot_ids),
    )


def audit_split(
    manifest: SplitManifest,
    records: Sequence[TrajectoryRecord],
    schema: AttributeSchema,
) -> list[str]:
    """Exhaustively scan a manifest against its records.

    Returns violations as strings; an empty list means every invariant holds:
    pairwise-disjoint id sets, exclusion-free train/val, zero-shot ids inside
    test, and at least one exclusion mention in every zero-shot record.
    """
    violations = []
    train, val, test = set(manifest.train_ids), set(manifest.val_ids), set(manifest.test_ids)
    zero_shot = set(manifest.zero_shot_test_ids)
    for a, b, label in [(train, val, "train/val"), (train, test, "train/test"), (val, test, "val/test")]:
        overlap = a & b
        if overlap:
            violations.append(f"{label} overlap: {sorted(overlap)[:5]}")
    if not zero_shot <= test:
        violations.append("zero-shot ids not a subset of test ids")

    by_id = {r.id: r for r in records}
    for split_name, ids in [("train", train), ("val", val)]:
        for rid in ids:
            record = by_id.get(rid)
            if record is None:
                violations.append(f"{split_name} id {rid} has no record")
                continue
            if record_mentions_exclusion(
                record, schema, manifest.excluded_objects, manifest.excluded_pairs
            ):
                violations.append(f"{split_name} record {rid} mentions an exclusion")
    for rid in zero_shot:
        record = by_id.get(rid)
        if record is None:
            violations.append(f"zero-shot id {rid} has no record")
            continue
        if not record_mentions_exclusion(
            record, schema, manifest.excluded_objects, manifest.excluded_pairs
        ):
            violations.append(f"zero-shot record {rid} mentions no exclusion")
    return violations


def parse_object_list(path: str | Path) -> list[str]:
    """Newline-delimited object names; blank lines and # comments ignored."""
    names = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.append(line)
    return names


def parse_pair_list(path: str | Path) -> list[tuple[str, str]]:
    """Newline-delimited (action, object) pairs, with or without parentheses."""
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip().strip("(),")
        if not line or line.startswith("#"):
            continue
        action, _, name = line.partition(",")
        if not name:
            raise ValueError(f"malformed pair line: {line!r}")
        pairs.append((action.strip(), name.strip()))
    return pairs
