"""Attribute schema, trajectory records, and validation rules.

Every object is described by a fixed, ordered list of 38 symbolic attributes,
each with its own small value vocabulary. Attribute value indices are local to
their attribute; a global index space (the concatenation of all vocabularies)
is used by the embedding table in the model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

SCHEMA_VERSION = 1

# Canonical attribute order. Position 0 (ObjectName) doubles as the object
# summary slot, so this order is load-bearing and never reordered.
ATTRIBUTE_NAMES = (
    "ObjectName",
    "parentReceptacles",
    "receptacleObjectIds",
    "distance",
    "mass",
    "size",
    "ObjectTemperature",
    "breakable",
    "cookable",
    "dirtyable",
    "isBroken",
    "isCooked",
    "isDirty",
    "isFilledWithLiquid",
    "isOpen",
    "isPickedUp",
    "isSliced",
    "isToggled",
    "moveable",
    "openable",
    "pickupable",
    "receptacle",
    "salientMaterials_Ceramic",
    "salientMaterials_Fabric",
    "salientMaterials_Food",
    "salientMaterials_Glass",
    "salientMaterials_Leather",
    "salientMaterials_Metal",
    "salientMaterials_Paper",
    "salientMaterials_Plastic",
    "salientMaterials_Rubber",
    "salientMaterials_Soap",
    "salientMaterials_Sponge",
    "salientMaterials_Stone",
    "salientMaterials_Wax",
    "salientMaterials_Wood",
    "sliceable",
    "toggleable",
)

N_ATTRIBUTES = len(ATTRIBUTE_NAMES)

ACTION_NAMES = (
    "Close",
    "Dirty",
    "EmptyLiquid",
    "HeatUpPan",
    "Open",
    "Pickup",
    "Put",
    "Slice",
    "ToggleOff",
    "ToggleOn",
)

N_ACTIONS = len(ACTION_NAMES)


class SchemaError(ValueError):
    """Raised when a schema document or its vocabularies are malformed."""


@dataclass(frozen=True)
class Attribute:
    """One attribute slot: its name, value vocabulary, and global offset."""

    name: str
    values: tuple[str, ...]
    offset: int

    @property
    def size(self) -> int:
        return len(self.values)


class AttributeSchema:
    """Ordered 38-attribute schema with a contiguous global value index space.

    Vocabularies are data: they are supplied per attribute (either by the
    synthetic-world builder or loaded from a schema JSON document) rather than
    hard-coded, so the same machinery serves both the full-scale schema
    (329 global values) and small synthetic vocabularies.
    """

    def __init__(self, vocabularies: Sequence[Sequence[str]], version: int = SCHEMA_VERSION):
        if len(vocabularies) != N_ATTRIBUTES:
            raise SchemaError(
                f"schema must define {N_ATTRIBUTES} attributes, got {len(vocabularies)}"
            )
        attributes = []
        offset = 0
        for name, values in zip(ATTRIBUTE_NAMES, vocabularies):
            values = tuple(values)
            if not values:
                raise SchemaError(f"attribute {name!r} has an empty vocabulary")
            if len(set(values)) != len(values):
                raise SchemaError(f"attribute {name!r} has duplicate values")
            attributes.append(Attribute(name, values, offset))
            offset += len(values)
        self.attributes: tuple[Attribute, ...] = tuple(attributes)
        self.n_values = offset
        self.version = version
        self._slot_by_name = {a.name: i for i, a in enumerate(self.attributes)}
        # Reverse map: global index -> (slot, local index).
        self._slot_of_global = np.repeat(
            np.arange(N_ATTRIBUTES), [a.size for a in self.attributes]
        )
        self._offsets = np.array([a.offset for a in self.attributes], dtype=np.int64)

    # -- index bookkeeping ------------------------------------------------

    def slot(self, attribute_name: str) -> int:
        return self._slot_by_name[attribute_name]

    def attribute(self, attribute_name: str) -> Attribute:
        return self.attributes[self.slot(attribute_name)]

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.attributes)

    def global_index(self, slot: int, local_value: int) -> int:
        attr = self.attributes[slot]
        if not 0 <= local_value < attr.size:
            raise IndexError(f"value {local_value} out of range for {attr.name}")
        return attr.offset + local_value

    def unravel(self, global_index: int) -> tuple[int, int]:
        """Map a global value index back to its unique (slot, local) pair."""
        if not 0 <= global_index < self.n_values:
            raise IndexError(f"global index {global_index} out of range")
        slot = int(self._slot_of_global[global_index])
        return slot, global_index - self.attributes[slot].offset

    def value_name(self, slot: int, local_value: int) -> str:
        return self.attributes[slot].values[local_value]

    # Object names live in slot 0 and are shared with action object/receptacle
    # references, so they get dedicated helpers.

    @property
    def object_names(self) -> tuple[str, ...]:
        return self.attributes[0].values

    def name_index(self, object_name: str) -> int:
        try:
            return self.object_names.index(object_name)
        except ValueError:
            raise SchemaError(f"unknown object name {object_name!r}") from None

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "schema_version": self.version,
            "attributes": [
                {"name": a.name, "values": list(a.values)} for a in self.attributes
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AttributeSchema":
        if "schema_version" not in doc:
            raise SchemaError("schema document missing schema_version")
        names = [a["name"] for a in doc["attributes"]]
        if tuple(names) != ATTRIBUTE_NAMES:
            raise SchemaError("schema attributes must match the canonical 38-name order")
        return cls(
            [a["values"] for a in doc["attributes"]],
            version=int(doc["schema_version"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "AttributeSchema":
        return cls.from_json(json.loads(Path(path).read_text()))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AttributeSchema) and self.to_json() == other.to_json()


@dataclass(frozen=True)
class ObjectState:
    """Per-attribute local value indices for one object.

    ``is_none`` marks the absent-object placeholder; such states are carried
    through the pipeline but excluded from every loss and metric.
    """

    values: tuple[int, ...]
    is_none: bool = False

    def value(self, schema: AttributeSchema, attribute_name: str) -> str:
        slot = schema.slot(attribute_name)
        return schema.value_name(slot, self.values[slot])

    def replace_value(self, schema: AttributeSchema, attribute_name: str, value: str) -> "ObjectState":
        slot = schema.slot(attribute_name)
        local = schema.attributes[slot].values.index(value)
        values = list(self.values)
        values[slot] = local
        return replace(self, values=tuple(values))

    def to_json(self) -> dict:
        return {"values": list(self.values), "is_none": self.is_none}

    @classmethod
    def from_json(cls, doc: dict) -> "ObjectState":
        return cls(values=tuple(doc["values"]), is_none=bool(doc["is_none"]))


@dataclass(frozen=True)
class ActionRecord:
    """Symbolic action triple, plus the optional annotated sentence."""

    action_id: int
    object_name: int  # local index into the ObjectName vocabulary
    receptacle_name: int
    text: str | None = None

    @property
    def name(self) -> str:
        return ACTION_NAMES[self.action_id]

    def to_json(self) -> dict:
        doc = {
            "id": self.action_id,
            "object": self.object_name,
            "receptacle": self.receptacle_name,
        }
        if self.text is not None:
            doc["text"] = self.text
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ActionRecord":
        return cls(
            action_id=int(doc["id"]),
            object_name=int(doc["object"]),
            receptacle_name=int(doc["receptacle"]),
            text=doc.get("text"),
        )


@dataclass(frozen=True)
class TrajectoryRecord:
    """One (pre state, action, post state) example over exactly two objects."""

    id: str
    objects_pre: tuple[ObjectState, ObjectState]
    objects_post: tuple[ObjectState, ObjectState]
    action: ActionRecord
    image_pre_ref: str
    image_post_ref: str
    split_tags: frozenset[str] = field(default_factory=frozenset)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "objects_pre": [o.to_json() for o in self.objects_pre],
            "objects_post": [o.to_json() for o in self.objects_post],
            "action": self.action.to_json(),
            "image_pre": self.image_pre_ref,
            "image_post": self.image_post_ref,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrajectoryRecord":
        return cls(
            id=doc["id"],
            objects_pre=tuple(ObjectState.from_json(o) for o in doc["objects_pre"]),
            objects_post=tuple(ObjectState.from_json(o) for o in doc["objects_post"]),
            action=ActionRecord.from_json(doc["action"]),
            image_pre_ref=doc["image_pre"],
            image_post_ref=doc["image_post"],
        )


@dataclass(frozen=True)
class ImagePair:
    """Pre/post RGB rasters with identical dimensions (H x W x 3, uint8)."""

    pre: np.ndarray
    post: np.ndarray

    def __post_init__(self):
        if self.pre.shape != self.post.shape:
            raise ValueError(
                f"image pair dimensions differ: {self.pre.shape} vs {self.post.shape}"
            )
        if self.pre.ndim != 3 or self.pre.shape[2] != 3:
            raise ValueError(f"expected HxWx3 rasters, got {self.pre.shape}")


def _validate_state(state: ObjectState, schema: AttributeSchema, label: str) -> list[str]:
    violations = []
    if len(state.values) != N_ATTRIBUTES:
        violations.append(
            f"{label}: attribute count != {N_ATTRIBUTES} (got {len(state.values)})"
        )
        return violations
    for slot, value in enumerate(state.values):
        size = schema.attributes[slot].size
        if not 0 <= value < size:
            violations.append(
                f"{label}: value index {value} out of range for "
                f"{schema.attributes[slot].name} (vocabulary size {size})"
            )
    return violations


def validate_trajectory(record: TrajectoryRecord, schema: AttributeSchema) -> list[str]:
    """Check one record against the schema.

    Violations are returned as data (a list of human-readable strings); an
    empty list means the record passes.
    """
    violations = []
    if len(record.objects_pre) != 2 or len(record.objects_post) != 2:
        violations.append("record must have exactly two object slots")
    for k, state in enumerate(record.objects_pre):
        violations.extend(_validate_state(state, schema, f"objects_pre[{k}]"))
    for k, state in enumerate(record.objects_post):
        violations.extend(_validate_state(state, schema, f"objects_post[{k}]"))
    action = record.action
    if not 0 <= action.action_id < N_ACTIONS:
        violations.append(f"unknown action id {action.action_id} (only {N_ACTIONS} actions)")
    n_names = len(schema.object_names)
    if not 0 <= action.object_name < n_names:
        violations.append(f"action object name index {action.object_name} out of range")
    if not 0 <= action.receptacle_name < n_names:
        violations.append(f"action receptacle name index {action.receptacle_name} out of range")
    return violations


def write_records(path: str | Path, records: Iterable[TrajectoryRecord]) -> None:
    """Write records as line-delimited JSON."""
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), sort_keys=True))
            fh.write("\n")


def read_records(path: str | Path) -> list[TrajectoryRecord]:
    with open(path) as fh:
        return [TrajectoryRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def iter_records(path: str | Path) -> Iterator[TrajectoryRecord]:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                yield TrajectoryRecord.from_json(json.loads(line))
