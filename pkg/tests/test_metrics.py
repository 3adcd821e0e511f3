import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shrinkbox.dataset_io import Frame, Prediction, parse_label_line
from shrinkbox.distance_model import InverseHeightModel
from shrinkbox.errors import UndefinedMetricError, ValidationError
from shrinkbox.geometry import BBox, iou, shrink_about_center
from shrinkbox.metrics import (MatchTriple, asr_at, asr_curve, average_precision,
                               greedy_match, interpolated_ap, match_predictions,
                               prediction_order, success)
from shrinkbox.poison import EligibilityFilter, PoisonParams, poison_dataset

from oracles import all_lexicographic_optima, brute_force_ap


def triple(hp, hs, hc):
    return MatchTriple("000000", 0, BBox(0, 0, 10, hp), BBox(0, 0, 10, hs),
                       BBox(0, 0, 10, hc), 1.0, 1.0)


def test_success_examples():
    assert success(85, 80, 100, 0.5) is True
    assert (85 - 80 < 100 - 85) is True  # relaxed form agrees
    assert success(85, 80, 100, 0.8) is False
    for X in (0.0, 0.5, 0.95, 0.999):
        assert success(80, 80, 100, X)
    for X in (0.0, 0.5, 1.0):
        assert not success(100, 80, 100, X)
    assert not success(80, 80, 100, 1.0)  # strict inequality at X = 1


@given(st.floats(1, 500), st.floats(0.05, 0.99), st.floats(0.1, 2.0), st.floats(0, 1),
       st.floats(0.01, 100))
def test_success_scale_invariant(hc, s, r, X, f):
    hs = hc * s
    hp = hs + (hc - hs) * r
    a = success(hp, hs, hc, X)
    bound = (hs + (hc - hs) * (1 - X))
    if abs(hp - bound) > 1e-9 * hc:  # away from the boundary, rounding cannot flip it
        assert success(hp * f, hs * f, hc * f, X) == a


def test_relaxed_condition_equivalence():
    rnd = random.Random(0)
    for _ in range(1000):
        hc = rnd.uniform(10, 200)
        hs = hc * rnd.uniform(0.5, 0.95)
        hp = rnd.uniform(0.3 * hc, 1.3 * hc)
        if abs((hp - hs) - (hc - hp)) > 1e-9:
            assert success(hp, hs, hc, 0.5) == (hp - hs < hc - hp)


def test_asr_at():
    P = [triple(80, 80, 100), triple(85, 80, 100), triple(100, 80, 100)]
    assert asr_at(P, 0.5) == pytest.approx(2 / 3)
    with pytest.raises(UndefinedMetricError):
        asr_at([], 0.5)


def test_asr_endpoints():
    pois = [triple(80, 80, 100), triple(40, 40, 45)]
    clean = [triple(100, 80, 100), triple(45, 40, 45)]
    c1, c0 = asr_curve(pois), asr_curve(clean)
    assert [p[1] for p in c1.points] == [1.0] * 10
    assert [p[1] for p in c0.points] == [0.0] * 10
    assert [p[0] for p in c1.points] == [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]


@given(st.lists(st.tuples(st.floats(10, 200), st.floats(0.5, 0.95), st.floats(0.2, 1.5)),
                min_size=1, max_size=30))
def test_asr_curve_non_increasing(rows):
    P = [triple(hc * s * r if hc * s * r > 0 else 1, hc * s, hc) for hc, s, r in rows]
    c = asr_curve(P)
    vals = [p[1] for p in c.points]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(0 <= v <= 1 for v in vals)
    assert all(p[3] == len(P) and p[2] <= len(P) for p in c.points)


# -- matching ---------------------------------------------------------------

def _manifest_for(boxes_clean, model=InverseHeightModel(1000.0, 0.0)):
    lines = []
    for b in boxes_clean:
        d = model.estimate(b.height)
        lines.append(parse_label_line(
            f"Car 0.00 0 0.00 {b.left} {b.top} {b.right} {b.bottom} 1.5 1.6 3.9 0.0 0.0 {d} 0.0"))
    frames = [Frame("000000", tuple(lines))]
    _, _, man = poison_dataset(frames, None, model, EligibilityFilter(distance_range=(1, 500)),
                               PoisonParams(ratio=1.0))
    return man


def test_match_identical_predictions():
    man = _manifest_for([BBox(100, 100, 150, 140), BBox(300, 100, 400, 180)])
    preds = {"000000": [Prediction("Car", 0.9, r.pois_bbox) for r in man.records]}
    res = match_predictions(preds, man)
    assert len(res.triples) == 2 and all(t.iou == 1.0 for t in res.triples)
    assert res.unmatched_records == []


def test_match_one_to_one_prefers_confidence():
    man = _manifest_for([BBox(100, 100, 150, 140)])
    pb = man.records[0].pois_bbox
    preds = {"000000": [Prediction("Car", 0.6, pb),
                        Prediction("Car", 0.9, BBox(pb.left + 1, pb.top, pb.right + 1, pb.bottom))]}
    res = match_predictions(preds, man)
    assert len(res.triples) == 1
    assert res.triples[0].confidence == 0.9
    assert res.unmatched_predictions == 1


def test_match_ignores_other_classes_and_low_iou():
    man = _manifest_for([BBox(100, 100, 150, 140)])
    pb = man.records[0].pois_bbox
    preds = {"000000": [Prediction("Van", 0.9, pb),
                        Prediction("Car", 0.8, BBox(pb.left + 15, pb.top, pb.right + 15, pb.bottom))]}
    res = match_predictions(preds, man)
    assert res.triples == [] and len(res.unmatched_records) == 1


def test_match_rejects_unknown_image():
    man = _manifest_for([BBox(100, 100, 150, 140)])
    with pytest.raises(ValidationError):
        match_predictions({"999999": []}, man)


def test_match_order_invariant():
    man = _manifest_for([BBox(100, 100, 150, 140), BBox(120, 105, 172, 146)])
    ps = [Prediction("Car", 0.7, r.pois_bbox) for r in man.records]
    ps.append(Prediction("Car", 0.7, man.records[0].clean_bbox))
    a = match_predictions({"000000": ps}, man)
    b = match_predictions({"000000": ps[::-1]}, man)
    assert a.triples == b.triples


def test_tie_goes_to_lower_index():
    t = BBox(0, 0, 10, 10)
    assert greedy_match([t], [t, t], 0.5) == [(0, 0, 1.0)]
    assert greedy_match([t], [t, t], 0.5, target_rank=[5, 2]) == [(0, 1, 1.0)]


def random_scene(rnd, integer):
    n_rec = rnd.randint(1, 8)
    n_pred = rnd.randint(1, 8)
    recs = []
    for _ in range(n_rec):
        if integer:
            x, y = rnd.randint(0, 6) * 4, rnd.randint(0, 6) * 4
            recs.append(BBox(x, y, x + rnd.choice((8, 12)), y + rnd.choice((8, 12))))
        else:
            x, y = rnd.uniform(0, 60), rnd.uniform(0, 60)
            recs.append(BBox(x, y, x + rnd.uniform(8, 20), y + rnd.uniform(8, 20)))
    preds = []
    for _ in range(n_pred):
        base = rnd.choice(recs)
        if integer:
            dx, dy = rnd.choice((-2, 0, 2)), rnd.choice((-2, 0, 2))
            preds.append((round(rnd.random(), 1),
                          BBox(base.left + dx, base.top + dy, base.right + dx, base.bottom + dy)))
        else:
            j = lambda: rnd.gauss(0, 1.5)
            preds.append((rnd.random(), BBox(base.left + j(), base.top + j(),
                                             base.right + j() + 3, base.bottom + j() + 3)))
    return recs, preds


def has_iou_tie(pboxes, recs, thr):
    for p in pboxes:
        vals = [iou(p, r) for r in recs]
        vals = [v for v in vals if v >= thr]
        if len(vals) != len(set(vals)):
            return True
    return False


@pytest.mark.parametrize("integer", [False, True])
def test_greedy_agrees_with_brute_force(integer):
    rnd = random.Random(2024 + integer)
    agree = disagree = 0
    for _ in range(1000):
        recs, preds = random_scene(rnd, integer)
        preds.sort(key=lambda p: (-p[0], p[1].as_tuple()))
        pboxes = [b for _, b in preds]
        assign = [None] * len(pboxes)
        for pi, ti, _ in greedy_match(pboxes, recs, 0.6):
            assign[pi] = ti
        assign = tuple(assign)
        optima = all_lexicographic_optima(pboxes, recs, 0.6, iou)
        if len(optima) == 1 and assign == optima[0]:
            agree += 1
        else:
            disagree += 1
            assert has_iou_tie(pboxes, recs, 0.6)
        # with the lower-index rule folded into the objective the optimum is the greedy result
        assert all_lexicographic_optima(pboxes, recs, 0.6, iou, rank_tiebreak=True) == [assign]
    assert agree > 500
    if not integer:
        assert disagree == 0


# -- AP ---------------------------------------------------------------------

def frame_of(boxes, cls="Car", image_id="000000"):
    return Frame(image_id, tuple(parse_label_line(
        f"{cls} 0.00 0 0.00 {b.left} {b.top} {b.right} {b.bottom} 1.5 1.6 3.9 0 0 20 0")
        for b in boxes))


def test_ap_perfect_predictions():
    boxes = [BBox(10, 10, 50, 40), BBox(100, 10, 160, 70)]
    gt = [frame_of(boxes), frame_of([BBox(5, 5, 25, 45)], "Pedestrian", "000001")]
    preds = {"000000": [Prediction("Car", 1.0, b) for b in boxes],
             "000001": [Prediction("Pedestrian", 1.0, BBox(5, 5, 25, 45))]}
    res = average_precision(preds, gt)
    assert res.map == 1.0
    assert all(v == 1.0 for c in res.per_class.values() for v in c.ap.values())


def test_ap_no_predictions():
    res = average_precision({}, [frame_of([BBox(10, 10, 50, 40)])])
    assert res.map == 0.0


def test_ap_false_positive_after_full_recall():
    gt = [frame_of([BBox(10, 10, 50, 40)])]
    preds = {"000000": [Prediction("Car", 0.9, BBox(10, 10, 50, 40)),
                        Prediction("Car", 0.8, BBox(200, 200, 240, 230))]}
    assert average_precision(preds, gt).per_class["Car"].ap[0.5] == 1.0


def test_ap_false_positive_first():
    gt = [frame_of([BBox(10, 10, 50, 40)])]
    preds = {"000000": [Prediction("Car", 0.8, BBox(10, 10, 50, 40)),
                        Prediction("Car", 0.9, BBox(200, 200, 240, 230))]}
    # PR points: (0, 0), (1, 0.5) -> precision 0.5 at every recall level
    assert average_precision(preds, gt).per_class["Car"].ap[0.5] == pytest.approx(0.5)


@settings(max_examples=200)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=40), st.integers(1, 40))
def test_interpolated_ap_matches_definition(flags, extra):
    n_gt = max(sum(flags), 1) + extra % 5
    ap, _, _ = interpolated_ap(np.array(flags), n_gt)
    assert ap == pytest.approx(brute_force_ap(flags, n_gt), abs=1e-12)


def test_ap_self_consistency_random():
    rnd = random.Random(5)
    frames, preds = [], {}
    for i in range(20):
        boxes = []
        for s in range(rnd.randint(0, 5)):
            x = s * 120 + rnd.uniform(0, 20)
            boxes.append(BBox(x, 50, x + rnd.uniform(20, 90), 50 + rnd.uniform(20, 90)))
        iid = f"{i:06d}"
        frames.append(frame_of(boxes, image_id=iid))
        preds[iid] = [Prediction("Car", rnd.uniform(0.1, 1), b) for b in boxes]
    assert average_precision(preds, frames).map == 1.0


def test_ap_shrunk_predictions_vs_clean_labels():
    clean = [BBox(10 + 150 * i, 20, 90 + 150 * i, 80) for i in range(5)]
    pois = [shrink_about_center(b, 0.8) for b in clean]
    preds = {"000000": [Prediction("Car", 1.0, b) for b in pois]}
    res = average_precision(preds, [frame_of(clean)])
    car = res.per_class["Car"]
    assert car.ap[0.5] == 1.0 and car.ap[0.6] == 1.0
    assert car.ap[0.65] == 0.0 and car.ap[0.75] == 0.0
    assert res.map == pytest.approx(0.3)
    assert average_precision(preds, [frame_of(pois)]).map == 1.0


def test_prediction_order_key():
    a = Prediction("Car", 0.9, BBox(5, 0, 10, 10))
    b = Prediction("Car", 0.9, BBox(1, 0, 10, 10))
    c = Prediction("Car", 0.95, BBox(9, 0, 10, 10))
    assert sorted([a, b, c], key=prediction_order) == [c, b, a]
