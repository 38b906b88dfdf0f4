import pytest

from physdyn.schema import SchemaError
from physdyn.splits import (
    SplitManifest,
    audit_split,
    build_zero_shot_split,
    parse_object_list,
    parse_pair_list,
    record_mentions_exclusion,
)
from physdyn.synthetic import DEFAULT_EXCLUDED_OBJECTS, DEFAULT_EXCLUDED_PAIRS


def build_default(world, sizes=(400, 60, None), seed=3):
    return build_zero_shot_split(
        world.records, world.schema,
        DEFAULT_EXCLUDED_OBJECTS, DEFAULT_EXCLUDED_PAIRS,
        sizes=sizes, seed=seed,
    )


def test_empty_exclusions_plain_partition(small_world):
    manifest = build_zero_shot_split(
        small_world.records, small_world.schema, [], [], sizes=(400, 100, None), seed=1
    )
    assert manifest.zero_shot_test_ids == ()
    assert len(manifest.train_ids) == 400
    assert len(manifest.val_ids) == 100
    total = len(manifest.train_ids) + len(manifest.val_ids) + len(manifest.test_ids)
    assert total == len(small_world.records)
    assert audit_split(manifest, small_world.records, small_world.schema) == []


def test_exclusions_route_to_zero_shot(small_world):
    manifest = build_default(small_world)
    assert len(manifest.zero_shot_test_ids) > 0
    assert set(manifest.zero_shot_test_ids) <= set(manifest.test_ids)
    assert audit_split(manifest, small_world.records, small_world.schema) == []


def test_audit_catches_leak(small_world):
    manifest = build_default(small_world)
    leaked = SplitManifest(
        train_ids=manifest.train_ids + manifest.zero_shot_test_ids[:1],
        val_ids=manifest.val_ids,
        test_ids=manifest.test_ids,
        excluded_objects=manifest.excluded_objects,
        excluded_pairs=manifest.excluded_pairs,
        zero_shot_test_ids=manifest.zero_shot_test_ids,
    )
    violations = audit_split(leaked, small_world.records, small_world.schema)
    assert any("mentions an exclusion" in v for v in violations)
    assert any("overlap" in v for v in violations)


def test_no_train_val_record_mentions_exclusion(small_world):
    manifest = build_default(small_world)
    by_id = {r.id: r for r in small_world.records}
    for rid in list(manifest.train_ids) + list(manifest.val_ids):
        assert not record_mentions_exclusion(
            by_id[rid], small_world.schema,
            manifest.excluded_objects, manifest.excluded_pairs,
        )
    for rid in manifest.zero_shot_test_ids:
        assert record_mentions_exclusion(
            by_id[rid], small_world.schema,
            manifest.excluded_objects, manifest.excluded_pairs,
        )


def test_oversized_request_errors(small_world):
    with pytest.raises(ValueError, match="exceed"):
        build_default(small_world, sizes=(10_000, 100, 100))


def test_unknown_exclusion_name_errors(small_world):
    with pytest.raises(SchemaError, match="not in the schema"):
        build_zero_shot_split(
            small_world.records, small_world.schema, ["Spaceship"], [],
            sizes=(10, 10, None), seed=0,
        )
    with pytest.raises(SchemaError, match="unknown"):
        build_zero_shot_split(
            small_world.records, small_world.schema, [], [("Teleport", "Cup")],
            sizes=(10, 10, None), seed=0,
        )


def test_seeded_shuffle_deterministic(small_world):
    a = build_default(small_world, seed=5)
    b = build_default(small_world, seed=5)
    c = build_default(small_world, seed=6)
    assert a == b
    assert a.train_ids != c.train_ids
    assert set(a.train_ids) | set(a.val_ids) | set(a.test_ids) == \
        set(c.train_ids) | set(c.val_ids) | set(c.test_ids)


def test_manifest_round_trip(small_world, tmp_path):
    manifest = build_default(small_world)
    path = tmp_path / "manifest.json"
    manifest.save(path)
    assert SplitManifest.load(path) == manifest


def test_parse_exclusion_files(tmp_path):
    objects = tmp_path / "objects.txt"
    objects.write_text("HandTowel\n\n# comment\nTowel\n")
    assert parse_object_list(objects) == ["HandTowel", "Towel"]
    pairs = tmp_path / "pairs.txt"
    pairs.write_text("(CloseObject,Toilet)\nSlice, Bread\n")
    assert parse_pair_list(pairs) == [("CloseObject", "Toilet"), ("Slice", "Bread")]
