"""Desk-scale synthetic world with deterministic action semantics.

Trajectories are produced by a rule table over the 10 actions; the same rule
table is the brute-force oracle used to verify generated data and model
predictions. Scenes are rendered as colored rectangles whose fill, position,
and size encode a visible subset of attributes. Temperature is deliberately
not rendered: some attributes are simply not observable from pixels, and the
synthetic world keeps that property.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .schema import (
    ACTION_NAMES,
    ATTRIBUTE_NAMES,
    AttributeSchema,
    ActionRecord,
    ObjectState,
    TrajectoryRecord,
    write_records,
)

# Attributes whose value is reflected in the rendered scene. Everything else
# (temperature, mass, most capability flags) must be inferred from the object
# name or cannot be inferred at all.
VISIBLE_ATTRIBUTES = (
    "ObjectName",
    "parentReceptacles",
    "distance",
    "size",
    "isBroken",
    "isDirty",
    "isFilledWithLiquid",
    "isOpen",
    "isPickedUp",
    "isSliced",
    "isToggled",
)

YES_NO = ("No", "Yes")
DISTANCE_BINS = ("0-1ft", "1-2ft", "2-3ft", "3-4ft")
MASS_BINS = ("Massless", "Light", "Medium", "Heavy")
SIZE_BINS = ("Tiny", "Small", "Medium", "Large")
TEMPERATURES = ("Cold", "RoomTemp", "Hot")
RECEPTACLE_NAMES = ("Nothing", "Counter")
CONTAINMENT = ("Nothing", "Something")

MATERIAL_ATTRIBUTES = (
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
)


@dataclass(frozen=True)
class ObjectType:
    """Static profile of one object type: capabilities, materials, defaults."""

    name: str
    weight: float  # sampling weight; rare types feed the zero-shot split
    color: tuple[int, int, int]
    materials: tuple[str, ...]
    base_size: int  # index into SIZE_BINS
    mass: int  # index into MASS_BINS
    pickupable: bool = False
    sliceable: bool = False
    openable: bool = False
    toggleable: bool = False
    dirtyable: bool = False
    fillable: bool = False  # can hold liquid
    heatable: bool = False  # HeatUpPan target
    breakable: bool = False
    can_hold: bool = False  # receptacle flag
    cookable: bool = False
    moveable: bool = False
    targetable: bool = True  # static surfaces are distractors only


TYPE_CATALOG = (
    ObjectType("Apple", 40, (200, 40, 40), ("Food",), 1, 1,
               pickupable=True, sliceable=True, moveable=True, cookable=True),
    ObjectType("Cup", 40, (230, 230, 240), ("Ceramic",), 1, 1,
               pickupable=True, moveable=True, dirtyable=True, fillable=True,
               breakable=True, can_hold=True),
    ObjectType("Pan", 40, (70, 70, 80), ("Metal",), 2, 2,
               pickupable=True, moveable=True, dirtyable=True, heatable=True,
               can_hold=True),
    ObjectType("Lamp", 40, (240, 210, 80), ("Glass", "Metal"), 2, 2,
               toggleable=True, breakable=True),
    ObjectType("Fridge", 40, (180, 190, 200), ("Metal",), 3, 3,
               openable=True, can_hold=True),
    ObjectType("Laptop", 40, (60, 60, 60), ("Plastic", "Metal"), 2, 1,
               pickupable=True, moveable=True, openable=True, toggleable=True,
               breakable=True),
    ObjectType("Bottle", 40, (90, 170, 90), ("Glass",), 1, 1,
               pickupable=True, moveable=True, fillable=True, breakable=True),
    ObjectType("Counter", 40, (160, 120, 70), ("Wood",), 3, 3,
               can_hold=True, targetable=False),
    ObjectType("Bread", 4, (210, 170, 110), ("Food",), 1, 1,
               pickupable=True, sliceable=True, moveable=True, cookable=True),
    ObjectType("Pot", 4, (120, 120, 130), ("Metal",), 2, 2,
               pickupable=True, moveable=True, dirtyable=True, fillable=True,
               heatable=True, can_hold=True),
    ObjectType("Statue", 2, (150, 140, 150), ("Stone",), 2, 3,
               pickupable=True, moveable=True, breakable=True),
    ObjectType("Towel", 2, (110, 150, 210), ("Fabric",), 1, 0,
               pickupable=True, moveable=True, dirtyable=True),
)

# Rare/medium types reserved for zero-shot exclusion experiments.
DEFAULT_EXCLUDED_OBJECTS = ("Statue", "Towel")
DEFAULT_EXCLUDED_PAIRS = (("Dirty", "Pot"), ("EmptyLiquid", "Pot"), ("Pickup", "Pot"))


@dataclass(frozen=True)
class WorldConfig:
    n_objects: int = 64  # instance pool size
    n_object_types: int = 12
    n_trajectories: int = 1000
    image_size: int = 64
    none_distractor_rate: float = 0.12
    render: bool = True

    def __post_init__(self):
        if min(self.n_objects, self.n_object_types, self.n_trajectories, self.image_size) <= 0:
            raise ValueError("world config sizes must be positive")
        if self.n_object_types > len(TYPE_CATALOG):
            raise ValueError(f"at most {len(TYPE_CATALOG)} object types available")
        if self.n_objects < self.n_object_types:
            raise ValueError("instance pool must cover every active type")


def build_synthetic_schema(n_object_types: int = 12) -> AttributeSchema:
    """Full 38-attribute layout with small vocabularies.

    Slot 0 holds "None" plus the active type names so the absent-object
    placeholder and action receptacle references are representable.
    """
    types = TYPE_CATALOG[:n_object_types]
    names = ("None",) + tuple(t.name for t in types)
    vocab = {
        "ObjectName": names,
        "parentReceptacles": RECEPTACLE_NAMES,
        "receptacleObjectIds": CONTAINMENT,
        "distance": DISTANCE_BINS,
        "mass": MASS_BINS,
        "size": SIZE_BINS,
        "ObjectTemperature": TEMPERATURES,
    }
    vocabularies = []
    for attr_name in ATTRIBUTE_NAMES:
        vocabularies.append(vocab.get(attr_name, YES_NO))
    return AttributeSchema(vocabularies)


def _type_by_name(name: str) -> ObjectType:
    for t in TYPE_CATALOG:
        if t.name == name:
            return t
    raise KeyError(name)


# ---------------------------------------------------------------------------
# Rule table
# ---------------------------------------------------------------------------

def applicable_actions(schema: AttributeSchema, state: ObjectState) -> list[int]:
    """Action ids whose preconditions hold for this object state."""

    def has(attr, value):
        return state.value(schema, attr) == value

    out = []
    for action_id, name in enumerate(ACTION_NAMES):
        ok = {
            "Close": has("openable", "Yes") and has("isOpen", "Yes"),
            "Dirty": has("dirtyable", "Yes") and has("isDirty", "No"),
            "EmptyLiquid": has("isFilledWithLiquid", "Yes"),
            "HeatUpPan": _type_by_name(state.value(schema, "ObjectName")).heatable
            and not has("ObjectTemperature", "Hot"),
            "Open": has("openable", "Yes") and has("isOpen", "No"),
            "Pickup": has("pickupable", "Yes") and has("isPickedUp", "No"),
            "Put": has("pickupable", "Yes") and has("isPickedUp", "Yes"),
            "Slice": has("sliceable", "Yes") and has("isSliced", "No"),
            "ToggleOff": has("toggleable", "Yes") and has("isToggled", "Yes"),
            "ToggleOn": has("toggleable", "Yes") and has("isToggled", "No"),
        }[name]
        if ok:
            out.append(action_id)
    return out


def apply_action_effect(
    schema: AttributeSchema,
    state: ObjectState,
    action: ActionRecord,
    is_target: bool,
) -> ObjectState:
    """Deterministic post state for one object.

    Non-targeted objects (and the None placeholder) are returned unchanged.
    This function is the oracle for all model evaluations.
    """
    if not is_target or state.is_none:
        return state
    name = action.name
    if name == "Close":
        return state.replace_value(schema, "isOpen", "No")
    if name == "Dirty":
        return state.replace_value(schema, "isDirty", "Yes")
    if name == "EmptyLiquid":
        return state.replace_value(schema, "isFilledWithLiquid", "No")
    if name == "HeatUpPan":
        return state.replace_value(schema, "ObjectTemperature", "Hot")
    if name == "Open":
        return state.replace_value(schema, "isOpen", "Yes")
    if name == "Pickup":
        state = state.replace_value(schema, "isPickedUp", "Yes")
        state = state.replace_value(schema, "distance", DISTANCE_BINS[0])
        return state.replace_value(schema, "parentReceptacles", "Nothing")
    if name == "Put":
        state = state.replace_value(schema, "isPickedUp", "No")
        receptacle = schema.object_names[action.receptacle_name]
        if receptacle not in RECEPTACLE_NAMES:
            receptacle = "Counter"
        return state.replace_value(schema, "parentReceptacles", receptacle)
    if name == "Slice":
        return state.replace_value(schema, "isSliced", "Yes")
    if name == "ToggleOff":
        return state.replace_value(schema, "isToggled", "No")
    if name == "ToggleOn":
        return state.replace_value(schema, "isToggled", "Yes")
    raise ValueError(f"no rule for action {name!r}")


# ---------------------------------------------------------------------------
# Sentence templates (used as the text form of an action)
# ---------------------------------------------------------------------------

_SENTENCE_TEMPLATES = {
    "Close": "the robot closes the {o}",
    "Dirty": "the robot dirties the {o}",
    "EmptyLiquid": "the robot empties the {o}",
    "HeatUpPan": "the robot heats the {o}",
    "Open": "the robot opens the {o}",
    "Pickup": "the robot picks up the {o}",
    "Put": "the robot puts the {o} on the {r}",
    "Slice": "the robot slices the {o}",
    "ToggleOff": "the robot turns off the {o}",
    "ToggleOn": "the robot turns on the {o}",
}


def action_sentence(schema: AttributeSchema, action: ActionRecord) -> str:
    template = _SENTENCE_TEMPLATES[action.name]
    return template.format(
        o=schema.object_names[action.object_name].lower(),
        r=schema.object_names[action.receptacle_name].lower(),
    )


# ---------------------------------------------------------------------------
# Instance sampling
# ---------------------------------------------------------------------------

def _sample_instance(
    schema: AttributeSchema,
    otype: ObjectType,
    rng: np.random.Generator,
    fixed_size: str | None = None,
) -> ObjectState:
    """Sample a coherent state for one instance of a type.

    Size is the only per-instance static attribute; passing ``fixed_size``
    refreshes just the stateful attributes (an instance's state evolves
    between scenes, its identity does not).
    """

    def yn(flag):
        return "Yes" if flag else "No"

    values = {}
    values["ObjectName"] = otype.name
    values["mass"] = MASS_BINS[otype.mass]
    if fixed_size is None:
        size = int(np.clip(otype.base_size + rng.integers(-1, 2), 0, len(SIZE_BINS) - 1))
        values["size"] = SIZE_BINS[size]
    else:
        values["size"] = fixed_size
    values["distance"] = DISTANCE_BINS[rng.integers(0, len(DISTANCE_BINS))]
    # Temperature deviates from room temperature invisibly.
    if rng.random() < 0.2:
        values["ObjectTemperature"] = "Hot" if rng.random() < 0.5 else "Cold"
    else:
        values["ObjectTemperature"] = "RoomTemp"
    values["breakable"] = yn(otype.breakable)
    values["cookable"] = yn(otype.cookable)
    values["dirtyable"] = yn(otype.dirtyable)
    values["moveable"] = yn(otype.moveable)
    values["openable"] = yn(otype.openable)
    values["pickupable"] = yn(otype.pickupable)
    values["receptacle"] = yn(otype.can_hold)
    values["sliceable"] = yn(otype.sliceable)
    values["toggleable"] = yn(otype.toggleable)
    values["isBroken"] = yn(otype.breakable and rng.random() < 0.05)
    values["isCooked"] = "No"
    values["isDirty"] = yn(otype.dirtyable and rng.random() < 0.25)
    values["isFilledWithLiquid"] = yn(otype.fillable and rng.random() < 0.3)
    values["isOpen"] = yn(otype.openable and rng.random() < 0.3)
    values["isPickedUp"] = yn(otype.pickupable and rng.random() < 0.2)
    values["isSliced"] = yn(otype.sliceable and rng.random() < 0.1)
    values["isToggled"] = yn(otype.toggleable and rng.random() < 0.4)
    if values["isPickedUp"] == "No" and otype.pickupable and rng.random() < 0.3:
        values["parentReceptacles"] = "Counter"
    else:
        values["parentReceptacles"] = "Nothing"
    values["receptacleObjectIds"] = (
        "Something" if otype.can_hold and rng.random() < 0.4 else "Nothing"
    )
    for material in MATERIAL_ATTRIBUTES:
        values[material] = yn(material.split("_", 1)[1] in otype.materials)

    local = tuple(
        schema.attributes[slot].values.index(values[attr.name])
        for slot, attr in enumerate(schema.attributes)
    )
    return ObjectState(values=local)


def _none_state(schema: AttributeSchema) -> ObjectState:
    return ObjectState(values=tuple(0 for _ in schema.attributes), is_none=True)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneBox:
    """One drawn object: slot, rectangle (x0, y0, x1, y1), name, visible values."""

    slot: int
    rect: tuple[int, int, int, int]
    name: str
    visible: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"slot": self.slot, "rect": list(self.rect), "name": self.name,
                "visible": self.visible}

    @classmethod
    def from_json(cls, doc: dict) -> "SceneBox":
        return cls(slot=int(doc["slot"]), rect=tuple(doc["rect"]), name=doc["name"],
                   visible=dict(doc["visible"]))


def scene_layout(schema: AttributeSchema, states: Sequence[ObjectState], image_size: int) -> list[SceneBox]:
    """Compute each object's rectangle and visible attribute values."""
    s = image_size
    boxes = []
    for slot, state in enumerate(states):
        if state.is_none:
            continue
        half = round((6 + 3 * SIZE_BINS.index(state.value(schema, "size"))) * s / 64)
        cx = round(s * (0.25 if slot == 0 else 0.75))
        if state.value(schema, "isPickedUp") == "Yes":
            cy = round(s * 0.18)
        else:
            cy = round(s * (0.35 + 0.15 * DISTANCE_BINS.index(state.value(schema, "distance"))))
        x0, x1 = max(cx - half, 0), min(cx + half, s - 1)
        y0, y1 = max(cy - half, 0), min(cy + half, s - 1)
        visible = {a: state.value(schema, a) for a in VISIBLE_ATTRIBUTES}
        boxes.append(SceneBox(slot=slot, rect=(x0, y0, x1, y1),
                              name=state.value(schema, "ObjectName"), visible=visible))
    return boxes


def render_scene(schema: AttributeSchema, states: Sequence[ObjectState], image_size: int) -> np.ndarray:
    """Draw the scene as flat colored rectangles (H x W x 3 uint8)."""
    s = image_size
    img = np.full((s, s, 3), 205, dtype=np.uint8)
    for box in scene_layout(schema, states, image_size):
        x0, y0, x1, y1 = box.rect
        color = np.array(_type_by_name(box.name).color, dtype=np.uint8)
        if box.visible["isOpen"] == "Yes":
            img[y0:y1 + 1, x0:x1 + 1] = color
            inner = max(2, (x1 - x0) // 5)
            img[y0 + inner:y1 - inner + 1, x0 + inner:x1 - inner + 1] = 205
        else:
            img[y0:y1 + 1, x0:x1 + 1] = color
        if box.visible["isSliced"] == "Yes":
            mid = (x0 + x1) // 2
            img[y0:y1 + 1, max(mid - 1, 0):mid + 1] = 205
        if box.visible["isFilledWithLiquid"] == "Yes":
            band = y1 - max(1, (y1 - y0) // 3)
            img[band:y1 + 1, x0:x1 + 1] = (60, 110, 220)
        if box.visible["isDirty"] == "Yes":
            img[y0:y0 + 2, x0:x1 + 1] = (80, 60, 30)
        if box.visible["isToggled"] == "Yes":
            img[y0:y1 + 1, x0] = (255, 255, 160)
            img[y0:y1 + 1, x1] = (255, 255, 160)
            img[y0, x0:x1 + 1] = (255, 255, 160)
            img[y1, x0:x1 + 1] = (255, 255, 160)
        if box.visible["isBroken"] == "Yes":
            n = min(x1 - x0, y1 - y0) + 1
            for d in range(n):
                img[y0 + d, x0 + d] = (10, 10, 10)
        if box.visible["parentReceptacles"] == "Counter":
            y = min(y1 + 2, s - 1)
            img[y:y + 2, x0:x1 + 1] = (120, 90, 50)
    return img


# ---------------------------------------------------------------------------
# World generation
# ---------------------------------------------------------------------------

@dataclass
class SyntheticWorld:
    schema: AttributeSchema
    config: WorldConfig
    records: list[TrajectoryRecord]
    images: dict[str, np.ndarray]  # empty when config.render is False
    scenes: dict[str, list[SceneBox]]  # image ref -> drawn boxes


def generate_synthetic_world(config: WorldConfig, seed: int) -> SyntheticWorld:
    """Emit trajectories that obey the rule table, plus rendered image pairs.

    Identical (config, seed) pairs produce byte-identical datasets. Every
    stored post state equals apply_action_effect(pre, action) for the target
    slot and the unchanged pre state for the distractor.
    """
    schema = build_synthetic_schema(config.n_object_types)
    types = TYPE_CATALOG[: config.n_object_types]
    rng = np.random.default_rng(seed)

    # Instance pool: persistent identities (type + size). Every type gets at
    # least one instance so rare types exist; the rest are weight-sampled.
    weights = np.array([t.weight for t in types], dtype=np.float64)
    weights /= weights.sum()
    pool_types = list(range(len(types)))
    pool_types += [
        int(i)
        for i in rng.choice(len(types), size=config.n_objects - len(types), p=weights)
    ]
    pool_sizes = []
    for i in pool_types:
        size = int(np.clip(types[i].base_size + rng.integers(-1, 2), 0, len(SIZE_BINS) - 1))
        pool_sizes.append(SIZE_BINS[size])

    # Instance pick probabilities proportional to the type weight, divided
    # evenly across that type's instances, so type frequencies follow the
    # catalog regardless of pool composition.
    type_counts = np.bincount(pool_types, minlength=len(types))
    inst_weight = np.array(
        [types[i].weight / type_counts[i] for i in pool_types], dtype=np.float64
    )
    target_weight = np.array(
        [w if types[i].targetable else 0.0 for w, i in zip(inst_weight, pool_types)]
    )
    if target_weight.sum() == 0:
        raise ValueError("instance pool contains no targetable object")
    target_weight /= target_weight.sum()
    inst_weight /= inst_weight.sum()

    counter_index = None
    if "Counter" in schema.object_names:
        counter_index = schema.name_index("Counter")

    records = []
    images: dict[str, np.ndarray] = {}
    scenes: dict[str, list[SceneBox]] = {}
    made = 0
    while made < config.n_trajectories:
        target_idx = int(rng.choice(len(pool_types), p=target_weight))
        target_type = types[pool_types[target_idx]]
        target = _sample_instance(schema, target_type, rng, fixed_size=pool_sizes[target_idx])
        actions = applicable_actions(schema, target)
        if not actions:
            continue
        action_id = int(actions[rng.integers(0, len(actions))])

        if rng.random() < config.none_distractor_rate:
            distractor = _none_state(schema)
        else:
            while True:
                d_idx = int(rng.choice(len(pool_types), p=inst_weight))
                dtype = types[pool_types[d_idx]]
                if dtype.name != target_type.name:
                    break
            distractor = _sample_instance(schema, dtype, rng, fixed_size=pool_sizes[d_idx])

        target_slot = int(rng.integers(0, 2))
        pre = [distractor, distractor]
        pre[target_slot] = target
        if ACTION_NAMES[action_id] == "Put" and counter_index is not None:
            receptacle_name = counter_index
        else:
            receptacle_name = schema.name_index("None")
        action = ActionRecord(
            action_id=action_id,
            object_name=schema.name_index(target_type.name),
            receptacle_name=receptacle_name,
        )
        post = [
            apply_action_effect(schema, state, action, is_target=(slot == target_slot))
            for slot, state in enumerate(pre)
        ]
        record_id = f"t{made:06d}"
        pre_ref, post_ref = f"{record_id}-pre", f"{record_id}-post"
        action = ActionRecord(
            action_id=action.action_id,
            object_name=action.object_name,
            receptacle_name=action.receptacle_name,
            text=action_sentence(schema, action),
        )
        records.append(
            TrajectoryRecord(
                id=record_id,
                objects_pre=tuple(pre),
                objects_post=tuple(post),
                action=action,
                image_pre_ref=pre_ref,
                image_post_ref=post_ref,
            )
        )
        scenes[pre_ref] = scene_layout(schema, pre, config.image_size)
        scenes[post_ref] = scene_layout(schema, post, config.image_size)
        if config.render:
            images[pre_ref] = render_scene(schema, pre, config.image_size)
            images[post_ref] = render_scene(schema, post, config.image_size)
        made += 1

    return SyntheticWorld(schema=schema, config=config, records=records,
                          images=images, scenes=scenes)


# ---------------------------------------------------------------------------
# On-disk layout
# ---------------------------------------------------------------------------

def save_world(world: SyntheticWorld, out_dir: str | Path) -> None:
    """Write schema.json, records.jsonl, world_meta.json and images/*.png."""
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world.schema.save(out / "schema.json")
    write_records(out / "records.jsonl", world.records)
    meta = {ref: [b.to_json() for b in boxes] for ref, boxes in sorted(world.scenes.items())}
    (out / "world_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    if world.images:
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for ref in sorted(world.images):
            Image.fromarray(world.images[ref]).save(img_dir / f"{ref}.png")


def load_scene_meta(path: str | Path) -> dict[str, list[SceneBox]]:
    doc = json.loads(Path(path).read_text())
    return {ref: [SceneBox.from_json(b) for b in boxes] for ref, boxes in doc.items()}


def load_images(dataset_dir: str | Path) -> dict[str, np.ndarray]:
    from PIL import Image

    img_dir = Path(dataset_dir) / "images"
    images = {}
    for path in sorted(img_dir.glob("*.png")):
        images[path.stem] = np.asarray(Image.open(path).convert("RGB"))
    return images
