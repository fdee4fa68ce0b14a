import math

import numpy as np
import pytest

import shapely

from textspotter.geometry import GeometryError, Rect, rect_iou
from textspotter.targets import (
    IGNORE,
    NEGATIVE,
    AnchorConfig,
    BoxDelta,
    CharBox,
    GtInstance,
    anchor_shape,
    anchors_inside,
    build_mask_targets,
    decode_box_delta,
    denormalize_from_roi,
    encode_box_delta,
    generate_anchors,
    match_anchors,
    normalize_to_roi,
    rasterize_char_target,
    rasterize_global_target,
    shrink_char_box,
)

PROPOSAL = Rect(100, 50, 200, 100)


def random_rect(rng, hi=100.0):
    x, y = rng.uniform(0, hi, 2)
    w, h = rng.uniform(5, 40, 2)
    return Rect(x, y, x + w, y + h)


# anchors


def test_square_anchor_at_first_cell():
    a = generate_anchors(AnchorConfig(), 64, 64, stage=1)
    # first cell center is (2, 2); ratio 1 is the middle of the three
    assert np.allclose(a[1], [2 - 16, 2 - 16, 2 + 16, 2 + 16])


def test_anchor_shape_closed_form():
    w, h = anchor_shape(1024, 2)
    assert w == pytest.approx(math.sqrt(512), abs=1e-3)
    assert h == pytest.approx(2 * math.sqrt(512), abs=1e-3)
    assert (w, h) == pytest.approx((22.627, 45.255), abs=1e-3)


def test_anchor_count_and_centers():
    a = generate_anchors(AnchorConfig(), 64, 64, stage=1)
    assert a.shape == (768, 4)
    centers = np.stack([(a[:, 0] + a[:, 2]) / 2, (a[:, 1] + a[:, 3]) / 2], axis=1)
    assert np.allclose(np.unique(centers[:, 0].round(9)), 4 * np.arange(16) + 2.0)
    areas = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    assert np.allclose(areas, 1024)


def test_anchor_grid_uses_ceil():
    assert len(generate_anchors(AnchorConfig(), 65, 63, stage=1)) == 17 * 16 * 3


def test_anchor_stage_out_of_range():
    with pytest.raises(ValueError):
        generate_anchors(AnchorConfig(), 64, 64, stage=6)
    with pytest.raises(ValueError):
        generate_anchors(AnchorConfig(), 64, 64, stage=0)


def test_border_anchors_are_kept_and_flagged():
    a = generate_anchors(AnchorConfig(), 64, 64, stage=1)
    inside = anchors_inside(a, 64, 64)
    assert not inside[0] and inside.any()


def reference_match(anchors, gts, pos, neg):
    labels = []
    best_for_gt = [max(rect_iou(a, g) for a in anchors) for g in gts]
    for a in anchors:
        ious = [rect_iou(a, g) for g in gts]
        m = max(ious)
        best = ious.index(m)
        forced = any(ious[j] == best_for_gt[j] and best_for_gt[j] > 0 for j in range(len(gts)))
        if m >= pos or forced:
            labels.append(best)
        elif m < neg:
            labels.append(NEGATIVE)
        else:
            labels.append(IGNORE)
    return labels


def test_match_anchors_trivial():
    g = Rect(0, 0, 10, 10)
    labels = match_anchors([g, Rect(50, 50, 60, 60)], [g])
    assert list(labels) == [0, NEGATIVE]
    assert list(match_anchors([g], [])) == [NEGATIVE]


def test_match_anchors_against_iou_matrix_oracle():
    rng = np.random.default_rng(21)
    for _ in range(20):
        anchors = [random_rect(rng) for _ in range(50)]
        gts = [random_rect(rng) for _ in range(5)]
        got = match_anchors(anchors, gts)
        assert list(got) == reference_match(anchors, gts, 0.7, 0.3)
        # each gt's best anchor is positive, though it may carry another gt
        for g in gts:
            ious = [rect_iou(a, g) for a in anchors]
            if max(ious) > 0:
                assert got[int(np.argmax(ious))] >= 0


def test_match_anchors_threshold_validation():
    with pytest.raises(ValueError):
        match_anchors([Rect(0, 0, 1, 1)], [Rect(0, 0, 1, 1)], pos_iou=0.3, neg_iou=0.7)


# box deltas


def test_box_delta_examples():
    a = Rect(0, 0, 10, 10)
    assert encode_box_delta(a, a) == BoxDelta(0, 0, 0, 0)
    d = encode_box_delta(a, Rect(5, 5, 15, 15))
    assert (d.tx, d.ty, d.tw, d.th) == (0.5, 0.5, 0.0, 0.0)


def test_box_delta_roundtrip():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        a, g = random_rect(rng), random_rect(rng)
        back = decode_box_delta(a, encode_box_delta(a, g))
        worst = max(worst, max(abs(p - q) / max(abs(q), 1.0) for p, q in zip(back, g)))
    assert worst < 1e-6


# roi normalization


@pytest.mark.parametrize(
    "pt, expected",
    [((100, 50), (0, 0)), ((200, 100), (128, 32)), ((150, 75), (64, 16))],
)
def test_normalize_examples(pt, expected):
    assert np.allclose(normalize_to_roi([pt], PROPOSAL), [expected])


def test_denormalize_examples():
    assert np.allclose(denormalize_from_roi([(0, 0)], PROPOSAL), [(100, 50)])
    assert np.allclose(denormalize_from_roi([(64, 16)], PROPOSAL), [(150, 75)])


def test_points_outside_proposal_are_not_clamped():
    assert np.allclose(normalize_to_roi([(250, 25)], PROPOSAL), [(192, -16)])


def test_normalize_roundtrip():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-500, 500, (100, 2))
    back = denormalize_from_roi(normalize_to_roi(pts, PROPOSAL), PROPOSAL)
    assert np.allclose(back, pts, rtol=1e-6, atol=1e-9)


def test_zero_extent_proposal():
    with pytest.raises(GeometryError):
        normalize_to_roi([(0, 0)], (10, 10, 10, 20))
    with pytest.raises(GeometryError):
        denormalize_from_roi([(0, 0)], (10, 10, 20, 10))


# global target


def test_global_target_full_and_empty():
    full = rasterize_global_target([(-5, -5), (200, -5), (200, 50), (-5, 50)])
    assert full.shape == (32, 128) and np.all(full == 1)
    outside = rasterize_global_target([(300, 0), (400, 0), (400, 10), (300, 10)])
    assert np.all(outside == 0)


def test_global_target_left_half():
    poly = [(0, 0), (64, 0), (64, 32), (0, 32)]
    got = rasterize_global_target(poly)
    ys, xs = np.mgrid[0:32, 0:128] + 0.5
    oracle = np.array(
        [[float(0 <= x < 64 and 0 <= y < 32) for x in xs[0]] for y in ys[:, 0]]
    )
    assert np.array_equal(got, oracle)
    assert np.all(got[:, :64] == 1) and np.all(got[:, 64:] == 0)


def test_global_target_area_fraction():
    rng = np.random.default_rng(9)
    for _ in range(20):
        cx, cy = rng.uniform(20, 108), rng.uniform(6, 26)
        r = rng.uniform(5, 15)
        ang = np.sort(rng.uniform(0, 2 * np.pi, 6))
        poly = np.stack([cx + 2 * r * np.cos(ang), cy + r * np.sin(ang)], axis=1)
        m = rasterize_global_target(poly)
        assert set(np.unique(m)) <= {0.0, 1.0}
        # the polygon here lies inside the map, so no clipping is needed
        x, y = poly[:, 0], poly[:, 1]
        area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        assert abs(m.mean() - area / m.size) <= 2 / math.sqrt(m.size)


def test_global_target_degenerate():
    with pytest.raises(GeometryError):
        rasterize_global_target([(0, 0), (10, 0), (20, 0)])


# character targets


def test_shrink_examples():
    s = shrink_char_box(Rect(6, 8, 14, 12))
    assert s.center == (10, 10) and (s.width, s.height) == (2, 1)
    assert shrink_char_box(Rect(0, 0, 1, 1)).width == 0.25
    b = Rect(3, 7, 35, 19)
    twice = shrink_char_box(shrink_char_box(b))
    assert twice.center == b.center
    assert twice.width == pytest.approx(b.width / 16)
    assert twice.area == pytest.approx(b.area / 256)
    assert shrink_char_box(b).area == pytest.approx(b.area / 16)


def test_char_target_absent():
    labels = rasterize_char_target(None)
    assert labels.shape == (32, 128) and np.all(labels == -1)


def test_char_target_single_box():
    labels = rasterize_char_target([CharBox(Rect(10, 4, 20, 12), "a")])
    assert np.all(labels[4:12, 10:20] == 11)
    assert np.count_nonzero(labels) == 80
    assert labels.min() == 0


def test_char_target_two_boxes_oracle():
    boxes = [CharBox(Rect(2.3, 3.1, 9.6, 20.2), "1"), CharBox(Rect(40.5, 0.4, 51, 31.7), "B")]
    labels = rasterize_char_target(boxes)
    oracle = np.zeros((32, 128), dtype=int)
    for y in range(32):
        for x in range(128):
            for cb in boxes:
                b = cb.box
                if b.xmin <= x + 0.5 < b.xmax and b.ymin <= y + 0.5 < b.ymax:
                    oracle[y, x] = cb.index + 1
    assert np.array_equal(labels, oracle)
    assert set(np.unique(labels)) == {0, 2, 12}


def test_char_target_later_box_wins():
    labels = rasterize_char_target([CharBox(Rect(0, 0, 10, 10), "a"), CharBox(Rect(5, 5, 15, 15), "b")])
    assert labels[7, 7] == 12 and labels[2, 2] == 11


def test_char_box_label_validation():
    assert CharBox(Rect(0, 0, 1, 1), "Q").label == "q"
    with pytest.raises(KeyError):
        CharBox(Rect(0, 0, 1, 1), "#")
    with pytest.raises(ValueError):
        CharBox(Rect(0, 0, 1, 1), "ab")


def test_gt_instance_rejects_far_char_box():
    poly = [(0, 0), (100, 0), (100, 20), (0, 20)]
    GtInstance(poly, "a", (CharBox(Rect(-9, -1, 5, 21), "a"),))
    with pytest.raises(GeometryError):
        GtInstance(poly, "a", (CharBox(Rect(95, 0, 115, 20), "a"),))


# composed targets


def test_build_targets_polygon_equals_proposal():
    inst = GtInstance(PROPOSAL.corners())
    t = build_mask_targets(inst, PROPOSAL)
    assert np.all(t.global_map == 1)
    assert np.all(t.char_labels == -1)


def test_build_targets_word_inside_proposal():
    # a two-letter word occupying the middle of a padded proposal
    poly = [(120, 60), (180, 60), (180, 90), (120, 90)]
    boxes = (CharBox(Rect(120, 60, 150, 90), "o"), CharBox(Rect(150, 60, 180, 90), "k"))
    t = build_mask_targets(GtInstance(poly, "ok", boxes), PROPOSAL)
    ys, xs = np.nonzero(t.global_map)
    assert (xs.min(), xs.max(), ys.min(), ys.max()) == (26, 101, 6, 25)
    o_cells = np.argwhere(t.char_labels == 1 + 24)
    k_cells = np.argwhere(t.char_labels == 1 + 20)
    assert len(o_cells) and len(k_cells)
    assert o_cells[:, 1].max() < k_cells[:, 1].min()
    # shrunk boxes sit strictly inside the global region
    assert np.all(t.global_map[t.char_labels > 0] == 1)


def test_build_targets_componentwise_oracle():
    rng = np.random.default_rng(17)
    for _ in range(20):
        prop = random_rect(rng, hi=200)
        r = Rect(
            prop.xmin + 0.1 * prop.width,
            prop.ymin + 0.1 * prop.height,
            prop.xmax - 0.1 * prop.width,
            prop.ymax - 0.1 * prop.height,
        )
        n = int(rng.integers(1, 5))
        edges = np.linspace(r.xmin, r.xmax, n + 1)
        letters = rng.choice(list("abcxyz019"), n)
        boxes = tuple(CharBox(Rect(edges[i], r.ymin, edges[i + 1], r.ymax), letters[i]) for i in range(n))
        inst = GtInstance(r.corners(), "".join(letters), boxes)
        t = build_mask_targets(inst, prop)

        ys, xs = np.mgrid[0:32, 0:128] + 0.5
        poly_n = shapely.Polygon(normalize_to_roi(r.corners(), prop))
        expect_global = shapely.contains_xy(poly_n, xs, ys)
        assert np.array_equal(t.global_map.astype(bool), expect_global)

        shrunk = []
        for cb in boxes:
            s = shrink_char_box(cb.box)
            lo, hi = normalize_to_roi([(s.xmin, s.ymin), (s.xmax, s.ymax)], prop)
            shrunk.append(CharBox(Rect(*lo, *hi), cb.label))
        assert np.array_equal(t.char_labels, rasterize_char_target(shrunk))
        assert set(np.unique(t.char_labels)) <= set(range(37))
