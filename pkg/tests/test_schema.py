import json

import pytest

from physdyn.schema import (
    ACTION_NAMES,
    ATTRIBUTE_NAMES,
    AttributeSchema,
    ActionRecord,
    ObjectState,
    SchemaError,
    TrajectoryRecord,
    read_records,
    validate_trajectory,
    write_records,
)
from physdyn.synthetic import build_synthetic_schema


def make_record(schema, record_id="r0", action_id=4):
    state = ObjectState(values=tuple(0 for _ in schema.attributes))
    return TrajectoryRecord(
        id=record_id,
        objects_pre=(state, state),
        objects_post=(state, state),
        action=ActionRecord(action_id=action_id, object_name=1, receptacle_name=0),
        image_pre_ref=f"{record_id}-pre",
        image_post_ref=f"{record_id}-post",
    )


def test_schema_has_38_attributes(schema):
    assert len(schema.attributes) == 38
    assert schema.attributes[0].name == "ObjectName"
    assert [a.name for a in schema.attributes] == list(ATTRIBUTE_NAMES)


def test_ten_actions():
    assert len(ACTION_NAMES) == 10
    assert ACTION_NAMES == (
        "Close", "Dirty", "EmptyLiquid", "HeatUpPan", "Open",
        "Pickup", "Put", "Slice", "ToggleOff", "ToggleOn",
    )


def test_wrong_attribute_count_rejected():
    with pytest.raises(SchemaError, match="38"):
        AttributeSchema([["a", "b"]] * 37)


def test_global_index_bijection(schema):
    seen = set()
    for slot, attr in enumerate(schema.attributes):
        for local in range(attr.size):
            g = schema.global_index(slot, local)
            assert g not in seen
            seen.add(g)
            assert schema.unravel(g) == (slot, local)
    assert seen == set(range(schema.n_values))


def test_offsets_are_disjoint_and_cover(schema):
    assert schema.n_values == sum(a.size for a in schema.attributes)
    ends = [a.offset + a.size for a in schema.attributes]
    starts = [a.offset for a in schema.attributes]
    assert starts[0] == 0
    assert starts[1:] == ends[:-1]


def test_valid_record_passes(schema):
    assert validate_trajectory(make_record(schema), schema) == []


def test_short_attribute_vector_flagged(schema):
    state37 = ObjectState(values=tuple(0 for _ in range(37)))
    record = make_record(schema)
    record = TrajectoryRecord(
        id=record.id,
        objects_pre=(state37, record.objects_pre[1]),
        objects_post=record.objects_post,
        action=record.action,
        image_pre_ref=record.image_pre_ref,
        image_post_ref=record.image_post_ref,
    )
    violations = validate_trajectory(record, schema)
    assert any("attribute count != 38" in v for v in violations)


def test_unknown_action_flagged(schema):
    record = make_record(schema, action_id=12)
    violations = validate_trajectory(record, schema)
    assert any("unknown action" in v for v in violations)


def test_out_of_range_value_flagged(schema):
    values = list(make_record(schema).objects_pre[0].values)
    values[3] = 99
    record = make_record(schema)
    bad = ObjectState(values=tuple(values))
    record = TrajectoryRecord(
        id=record.id,
        objects_pre=(bad, record.objects_pre[1]),
        objects_post=record.objects_post,
        action=record.action,
        image_pre_ref=record.image_pre_ref,
        image_post_ref=record.image_post_ref,
    )
    violations = validate_trajectory(record, schema)
    assert any("out of range" in v for v in violations)


def test_jsonl_round_trip(small_world, tmp_path):
    path = tmp_path / "records.jsonl"
    write_records(path, small_world.records)
    loaded = read_records(path)
    assert loaded == small_world.records


def test_schema_json_round_trip(schema, tmp_path):
    path = tmp_path / "schema.json"
    schema.save(path)
    assert AttributeSchema.load(path) == schema


def test_schema_rejects_wrong_order(schema):
    doc = schema.to_json()
    doc["attributes"][0], doc["attributes"][1] = doc["attributes"][1], doc["attributes"][0]
    with pytest.raises(SchemaError, match="canonical"):
        AttributeSchema.from_json(doc)


def test_schema_vocabularies_are_data():
    small = build_synthetic_schema(4)
    big = build_synthetic_schema(12)
    assert small.n_values < big.n_values
    assert small.attribute("ObjectTemperature").values == ("Cold", "RoomTemp", "Hot")


def test_none_placeholder_representable(schema):
    state = ObjectState(values=tuple(0 for _ in schema.attributes), is_none=True)
    assert state.is_none
    doc = state.to_json()
    assert ObjectState.from_json(doc) == state
