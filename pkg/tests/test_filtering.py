import numpy as np
import pytest

from physdyn.filtering import (
    REASON_MISSING,
    REASON_NO_CHANGE,
    REASON_VIEWPOINT,
    FilterThresholds,
    apply_visual_filters,
    count_changed_pixels,
    max_pixel_change,
)
from physdyn.schema import ImagePair

from test_schema import make_record


def pair_with(base, changed_positions=0, delta=100, shape=(385, 640, 3)):
    pre = np.full(shape, base, dtype=np.uint8)
    post = pre.copy()
    flat = post.reshape(-1)
    changed = (flat[:changed_positions].astype(np.int32) + delta) % 256
    flat[:changed_positions] = changed.astype(np.uint8)
    return ImagePair(pre, post)


def test_identical_images_zero():
    pair = pair_with(100)
    assert count_changed_pixels(pair) == 0
    assert max_pixel_change(pair) == 0.0


def test_full_difference_is_739200():
    pre = np.zeros((385, 640, 3), dtype=np.uint8)
    post = np.ones((385, 640, 3), dtype=np.uint8)
    assert count_changed_pixels(ImagePair(pre, post)) == 739_200


def test_single_channel_single_pixel():
    pre = np.zeros((385, 640, 3), dtype=np.uint8)
    post = pre.copy()
    post[10, 20, 1] = 5
    assert count_changed_pixels(ImagePair(pre, post)) == 1


def test_max_change_extremes():
    pre = np.zeros((4, 4, 3), dtype=np.uint8)
    post = pre.copy()
    post[0, 0, 0] = 255
    assert max_pixel_change(ImagePair(pre, post)) == 1.0


def test_max_change_exactly_on_threshold():
    # 100 -> 151 is a change of 51/255, which is exactly 0.2
    pre = np.full((4, 4, 3), 100, dtype=np.uint8)
    post = pre.copy()
    post[0, 0, 0] = 151
    assert max_pixel_change(ImagePair(pre, post)) == 51 / 255
    assert max_pixel_change(ImagePair(pre, post)) == 0.2


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError, match="differ"):
        ImagePair(np.zeros((4, 4, 3), np.uint8), np.zeros((4, 5, 3), np.uint8))


def _run_filter(schema, pairs, thresholds=FilterThresholds()):
    records, assets = [], {}
    for i, pair in enumerate(pairs):
        record = make_record(schema, record_id=f"r{i}")
        records.append(record)
        if pair is not None:
            assets[record.image_pre_ref] = pair.pre
            assets[record.image_post_ref] = pair.post
    return records, apply_visual_filters(records, assets, thresholds)


def test_viewpoint_change_rejected(schema):
    pre = np.zeros((385, 640, 3), dtype=np.uint8)
    post = np.full((385, 640, 3), 200, dtype=np.uint8)
    _, (kept, report) = _run_filter(schema, [ImagePair(pre, post)])
    assert kept == []
    assert report.rejections == [("r0", REASON_VIEWPOINT)]
    assert report.changed_pixel_counts == [739_200]


def test_no_salient_change_rejected(schema):
    _, (kept, report) = _run_filter(schema, [pair_with(100)])
    assert kept == []
    assert report.rejections == [("r0", REASON_NO_CHANGE)]


def test_good_pair_kept(schema):
    # 10,000 changed positions at magnitude 0.5 passes both predicates
    pair = pair_with(100, changed_positions=10_000, delta=128)
    assert count_changed_pixels(pair) == 10_000
    assert max_pixel_change(pair) > 0.2
    _, (kept, report) = _run_filter(schema, [pair])
    assert [r.id for r in kept] == ["r0"]


def test_boundary_count_exactly_400000_kept(schema):
    pair = pair_with(100, changed_positions=400_000, delta=128)
    _, (kept, _) = _run_filter(schema, [pair])
    assert len(kept) == 1
    pair = pair_with(100, changed_positions=400_001, delta=128)
    _, (kept, report) = _run_filter(schema, [pair])
    assert kept == []
    assert report.rejections[0][1] == REASON_VIEWPOINT


def test_boundary_max_change_exactly_threshold_rejected(schema):
    # max change exactly 0.2 fails the strictly-greater keep predicate
    pair = pair_with(100, changed_positions=5000, delta=51)
    assert max_pixel_change(pair) == 0.2
    _, (kept, report) = _run_filter(schema, [pair])
    assert kept == []
    assert report.rejections[0][1] == REASON_NO_CHANGE
    # one step above the threshold is kept
    pair = pair_with(100, changed_positions=5000, delta=52)
    _, (kept, _) = _run_filter(schema, [pair])
    assert len(kept) == 1


def test_missing_asset_is_per_record(schema):
    good = pair_with(100, changed_positions=5000, delta=128)
    _, (kept, report) = _run_filter(schema, [None, good])
    assert [r.id for r in kept] == ["r1"]
    assert ("r0", REASON_MISSING) in report.rejections


def test_filter_monotonicity(schema, rng):
    """Loosening either threshold never shrinks the kept set."""
    pairs = []
    for _ in range(40):
        shape = (16, 16, 3)
        pre = rng.integers(0, 256, size=shape, dtype=np.uint8)
        post = pre.copy()
        n = int(rng.integers(0, pre.size))
        idx = rng.choice(pre.size, size=n, replace=False)
        post.reshape(-1)[idx] = rng.integers(0, 256, size=n, dtype=np.uint8)
        pairs.append(ImagePair(pre, post))

    grid_counts = [0, 100, 400, 16 * 16 * 3]
    grid_changes = [0.0, 0.1, 0.5, 1.0]
    kept_sets = {}
    for mc in grid_counts:
        for mm in grid_changes:
            _, (kept, _) = _run_filter(
                schema, pairs, FilterThresholds(max_changed_pixels=mc, min_max_change=mm)
            )
            kept_sets[(mc, mm)] = {r.id for r in kept}
    for mc1 in grid_counts:
        for mc2 in grid_counts:
            for mm1 in grid_changes:
                for mm2 in grid_changes:
                    if mc1 <= mc2 and mm1 >= mm2:
                        assert kept_sets[(mc1, mm1)] <= kept_sets[(mc2, mm2)]


def test_thresholds_validated():
    with pytest.raises(ValueError):
        FilterThresholds(min_max_change=1.5)
    with pytest.raises(ValueError):
        FilterThresholds(max_changed_pixels=-1)


def test_report_serializes(schema, tmp_path):
    pair = pair_with(100, changed_positions=5000, delta=128)
    _, (kept, report) = _run_filter(schema, [pair, pair_with(100)])
    path = tmp_path / "report.json"
    report.save(path)
    import json

    doc = json.loads(path.read_text())
    assert doc["n_input"] == 2
    assert doc["n_kept"] == 1
    assert doc["reason_counts"] == {REASON_NO_CHANGE: 1}
    assert len(doc["changed_pixel_counts"]) == 2
