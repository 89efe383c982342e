import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aviary.config import AppConfig
from aviary.gating import (
    AUTO_LOG,
    REVIEW,
    BBox,
    Detection,
    ProbVector,
    classify_gate,
    filter_detections,
    iou,
    softmax,
    suppress,
    tta_average,
)


# --- independent oracles ---


def oracle_iou_pixels(a: BBox, b: BBox) -> float:
    """Count integer grid cells covered by each box (boxes must have integer
    coordinates); IoU = |A∩B| / |A∪B|."""
    cells_a = {(x, y) for x in range(int(a.x1), int(a.x2))
               for y in range(int(a.y1), int(a.y2))}
    cells_b = {(x, y) for x in range(int(b.x1), int(b.x2))
               for y in range(int(b.y1), int(b.y2))}
    return len(cells_a & cells_b) / len(cells_a | cells_b)


def oracle_greedy_nms(dets, thr):
    """Second, independent greedy implementation over index lists."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    keep = []
    for i in order:
        ok = True
        for j in keep:
            a, b = dets[i].bbox, dets[j].bbox
            ix = min(a.x2, b.x2) - max(a.x1, b.x1)
            iy = min(a.y2, b.y2) - max(a.y1, b.y1)
            inter = max(0.0, ix) * max(0.0, iy)
            union = a.area() + b.area() - inter
            if inter / union > thr:
                ok = False
                break
        if ok:
            keep.append(i)
    return [dets[i] for i in keep]


def random_int_box(rng, span=40):
    x1 = rng.randint(0, span)
    y1 = rng.randint(0, span)
    return BBox(x1, y1, x1 + rng.randint(1, 20), y1 + rng.randint(1, 20))


# --- BBox ---


def test_bbox_normalized_reorders():
    b = BBox.normalized(10, 12, 2, 3)
    assert (b.x1, b.y1, b.x2, b.y2) == (2, 3, 10, 12)


def test_bbox_zero_extent_rejected():
    with pytest.raises(ValueError):
        BBox(5, 5, 5, 10)
    with pytest.raises(ValueError):
        BBox.normalized(5, 2, 5, 10)


def test_bbox_area():
    assert BBox(0, 0, 10, 5).area() == 50.0


# --- IoU ---


def test_iou_identity():
    b = BBox(3, 4, 10, 12)
    assert iou(b, b) == 1.0


def test_iou_disjoint_is_zero():
    assert iou(BBox(0, 0, 5, 5), BBox(10, 10, 20, 20)) == 0.0


def test_iou_quarter_overlap():
    # (0,0,10,10) vs (5,5,15,15): intersection 25, union 175.
    assert iou(BBox(0, 0, 10, 10), BBox(5, 5, 15, 15)) == pytest.approx(25 / 175)


def test_iou_matches_pixel_counting_oracle():
    rng = np.random.RandomState(42)
    for _ in range(200):
        a, b = random_int_box(rng), random_int_box(rng)
        assert iou(a, b) == pytest.approx(oracle_iou_pixels(a, b), abs=1e-6)


@given(
    x1=st.integers(0, 30), y1=st.integers(0, 30),
    w=st.integers(1, 20), h=st.integers(1, 20),
    x2=st.integers(0, 30), y2=st.integers(0, 30),
    w2=st.integers(1, 20), h2=st.integers(1, 20),
)
@settings(max_examples=200, deadline=None)
def test_iou_symmetric_and_bounded(x1, y1, w, h, x2, y2, w2, h2):
    a = BBox(x1, y1, x1 + w, y1 + h)
    b = BBox(x2, y2, x2 + w2, y2 + h2)
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


# --- suppression ---


def det(x1, y1, x2, y2, score, class_id=14):
    return Detection(bbox=BBox(x1, y1, x2, y2), score=score, class_id=class_id)


def test_suppress_identical_boxes_keeps_top_score():
    out = suppress([det(0, 0, 10, 10, 0.8), det(0, 0, 10, 10, 0.9)], 0.5)
    assert [d.score for d in out] == [0.9]


def test_suppress_disjoint_keeps_both():
    out = suppress([det(0, 0, 10, 10, 0.8), det(50, 50, 60, 60, 0.9)], 0.5)
    assert len(out) == 2
    assert [d.score for d in out] == [0.9, 0.8]  # sorted desc


def test_suppress_chain_keeps_ends():
    # A~B and B~C overlap 0.6 > thr; A~C disjoint. Greedy keeps A then C.
    a = det(0, 0, 10, 10, 0.9)
    b = det(0, 2.5, 10, 12.5, 0.8)   # IoU(a,b) = 75/125 = 0.6
    c = det(0, 5, 10, 15, 0.7)       # IoU(b,c) = 0.6, IoU(a,c) = 50/150 = 1/3
    assert iou(a.bbox, b.bbox) == pytest.approx(0.6)
    assert iou(b.bbox, c.bbox) == pytest.approx(0.6)
    out = suppress([a, b, c], 0.5)
    assert out == [a, c]


def test_suppress_empty_input():
    assert suppress([], 0.5) == []


def test_suppress_matches_oracle_on_random_sets():
    rng = np.random.RandomState(9)
    for _ in range(100):
        dets = [
            Detection(bbox=random_int_box(rng), score=round(rng.rand(), 3), class_id=14)
            for _ in range(rng.randint(0, 9))
        ]
        got = suppress(dets, 0.5)
        assert got == oracle_greedy_nms(dets, 0.5)
        # output pairwise IoU <= threshold
        for i in range(len(got)):
            for j in range(i + 1, len(got)):
                assert iou(got[i].bbox, got[j].bbox) <= 0.5
        assert all(d in dets for d in got)


# --- filter_detections ---


@pytest.fixture
def cfg():
    return AppConfig()


def test_area_gate_on_paper_frame_dims(cfg):
    # 2% of 2560x1920 = 98304 px^2
    big = det(0, 0, 600, 400, 0.95)      # 240000 > 98304
    small = det(0, 0, 200, 200, 0.95)    # 40000 < 98304
    assert filter_detections([big], 2560, 1920, cfg) == [big]
    assert filter_detections([small], 2560, 1920, cfg) == []


def test_non_bird_class_dropped(cfg):
    d = det(0, 0, 600, 400, 0.99, class_id=15)
    assert filter_detections([d], 2560, 1920, cfg) == []


def test_score_gate_is_strict(cfg):
    at = det(0, 0, 600, 400, 0.70)
    above = det(0, 0, 600, 400, 0.7000001)
    assert filter_detections([at], 2560, 1920, cfg) == []
    assert filter_detections([above], 2560, 1920, cfg) == [above]


def test_filter_runs_nms(cfg):
    a = det(0, 0, 600, 400, 0.95)
    b = det(0, 0, 600, 400, 0.90)   # duplicate of a
    c = det(1000, 1000, 1600, 1400, 0.85)
    out = filter_detections([b, a, c], 2560, 1920, cfg)
    assert out == [a, c]


def test_filter_survivors_satisfy_all_predicates(cfg):
    rng = np.random.RandomState(17)
    w, h = 320, 240
    for _ in range(100):
        dets = []
        for _ in range(rng.randint(0, 8)):
            x1, y1 = rng.randint(0, 200), rng.randint(0, 150)
            dets.append(Detection(
                bbox=BBox(x1, y1, x1 + rng.randint(5, 120), y1 + rng.randint(5, 90)),
                score=round(rng.rand(), 3),
                class_id=int(rng.choice([14, 14, 0, 15]))))
        out = filter_detections(dets, w, h, cfg)
        min_area = cfg.area_fraction_threshold * w * h
        for d in out:
            assert d.class_id == cfg.bird_class_id
            assert d.score > cfg.det_score_threshold
            assert d.bbox.area() > min_area
        # no excluded detection passes all gates AND survives NMS vs kept set
        for d in dets:
            if d in out:
                continue
            passes = (d.class_id == cfg.bird_class_id
                      and d.score > cfg.det_score_threshold
                      and d.bbox.area() > min_area)
            if passes:
                assert any(iou(d.bbox, k.bbox) > cfg.iou_threshold
                           for k in out if k.score >= d.score)


# --- softmax ---


def test_softmax_uniform_for_equal_logits():
    v = softmax([2.5] * 8)
    assert all(p == pytest.approx(1 / 8) for p in v.probs)


def test_softmax_ln3_identity():
    v = softmax([0.0, float(np.log(3.0))])
    assert v.probs[0] == pytest.approx(0.25)
    assert v.probs[1] == pytest.approx(0.75)


def test_softmax_rejects_nan():
    with pytest.raises(ValueError):
        softmax([0.0, float("nan")])
    with pytest.raises(ValueError):
        softmax([float("inf"), 0.0])
    with pytest.raises(ValueError):
        softmax([])


def test_softmax_sums_to_one_and_preserves_argmax():
    rng = np.random.RandomState(23)
    for _ in range(50):
        logits = list(rng.randn(40) * 10)
        v = softmax(logits)
        assert sum(v.probs) == pytest.approx(1.0, abs=1e-9)
        assert int(np.argmax(v.probs)) == int(np.argmax(logits))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40))
@settings(max_examples=200, deadline=None)
def test_softmax_is_a_distribution(logits):
    v = softmax(logits)
    assert sum(v.probs) == pytest.approx(1.0, abs=1e-6)
    assert all(0.0 <= p <= 1.0 for p in v.probs)


# --- TTA averaging ---


def test_tta_single_run_is_identity():
    v = ProbVector((0.2, 0.3, 0.5))
    out = tta_average([v])
    assert out.probs == pytest.approx(v.probs)


def test_tta_two_one_hots():
    a = ProbVector((1.0, 0.0, 0.0))
    b = ProbVector((0.0, 1.0, 0.0))
    out = tta_average([a, b])
    assert out.probs == pytest.approx((0.5, 0.5, 0.0))


def test_tta_matches_brute_force_mean():
    rng = np.random.RandomState(5)
    runs = []
    for _ in range(3):
        x = rng.rand(40)
        runs.append(ProbVector(tuple(x / x.sum())))
    out = tta_average(runs)
    expect = np.mean([r.probs for r in runs], axis=0)
    expect = expect / expect.sum()
    assert np.max(np.abs(np.array(out.probs) - expect)) < 1e-12


def test_tta_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        tta_average([ProbVector((1.0,)), ProbVector((0.5, 0.5))])


# --- classify gate ---


def uniformish(n, idx, conf):
    rest = (1.0 - conf) / (n - 1)
    return ProbVector(tuple(conf if i == idx else rest for i in range(n)))


def test_gate_above_threshold_auto_logs(cfg):
    d = classify_gate(uniformish(40, 7, 0.71), cfg)
    assert d.kind == AUTO_LOG
    assert d.species_index == 7
    assert d.confidence == pytest.approx(0.71)


def test_gate_exactly_at_threshold_reviews(cfg):
    d = classify_gate(uniformish(40, 7, 0.70), cfg)
    assert d.kind == REVIEW


def test_gate_uniform_ties_to_lowest_index(cfg):
    d = classify_gate(ProbVector(tuple([1 / 40] * 40)), cfg)
    assert d.kind == REVIEW
    assert d.species_index == 0
    assert d.topk == ((0, 1 / 40), (1, 1 / 40), (2, 1 / 40))


def test_gate_topk_sorted_desc_ties_by_index(cfg):
    probs = [0.0] * 40
    probs[3] = 0.25
    probs[11] = 0.25
    probs[5] = 0.5
    d = classify_gate(ProbVector(tuple(probs)), cfg, k=3)
    assert [i for i, _ in d.topk] == [5, 3, 11]


def test_gate_k_bounds(cfg):
    with pytest.raises(ValueError):
        classify_gate(uniformish(40, 0, 0.9), cfg, k=0)
    with pytest.raises(ValueError):
        classify_gate(uniformish(40, 0, 0.9), cfg, k=41)


def test_gate_is_step_function_of_threshold():
    from dataclasses import replace
    base = AppConfig()
    probs = uniformish(40, 4, 0.6)
    kinds = []
    for thr in (0.0, 0.3, 0.59999, 0.6, 0.60001, 0.9):
        cfg = replace(base, cls_confidence_threshold=thr)
        kinds.append(classify_gate(probs, cfg).kind)
    assert kinds == [AUTO_LOG, AUTO_LOG, AUTO_LOG, REVIEW, REVIEW, REVIEW]
