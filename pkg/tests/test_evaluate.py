from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinelab.core.types import AnnotatedVertebra, AnnotationSet, Quadrilateral, VertebraVolume
from spinelab.evaluate import (
    evaluate,
    format_report,
    identification_rate,
    level_distance,
    localisation_error,
    match_detections,
    per_level_breakdown,
    per_level_table,
    precision_recall,
)
from spinelab.label import LEVELS, TOKENS, LabelSequence


def _quad(cx, cy, w=20.0, h=12.0):
    return np.array([[cx - w / 2, cy - h / 2], [cx + w / 2, cy - h / 2], [cx + w / 2, cy + h / 2], [cx - w / 2, cy + h / 2]])


def _scene(levels, pitch=20.0, spacing=(0.5, 0.5)):
    verts = [AnnotatedVertebra(lv, {0: _quad(50, 20 + i * pitch)}, 0) for i, lv in enumerate(levels)]
    return AnnotationSet(verts, spacing)


def _dets_from(gt: AnnotationSet, shift=(0.0, 0.0)):
    return [
        VertebraVolume(i, {0: Quadrilateral(v.quads[0] + np.asarray(shift), 0)}) for i, v in enumerate(gt.vertebrae)
    ]


LUMBAR = ["L1", "L2", "L3", "L4", "L5", "S1"]


def test_perfect_detection():
    gt = _scene(LUMBAR)
    m = match_detections(gt, _dets_from(gt))
    assert (m.tp, m.fp, m.fn) == (6, 0, 0)
    assert precision_recall(m) == (1.0, 1.0)
    assert localisation_error(gt, _dets_from(gt)) == (0.0, 0.0)


def test_no_detections():
    gt = _scene(LUMBAR)
    m = match_detections(gt, [])
    assert precision_recall(m) == (1.0, 0.0)
    assert m.fp == 0
    with pytest.raises(ValueError):
        localisation_error(gt, [])
    assert np.isnan(evaluate(gt, []).le_mean_mm)


def test_centroid_in_two_detections_is_missed():
    gt = _scene(["L1"])
    dets = [VertebraVolume(0, {0: Quadrilateral(_quad(50, 20), 0)}), VertebraVolume(1, {0: Quadrilateral(_quad(52, 22), 0)})]
    m = match_detections(gt, dets)
    assert (m.tp, m.fn, m.fp) == (0, 1, 2)


def test_one_detection_covering_two_centroids():
    gt = _scene(["L1", "L2"], pitch=8.0)
    big = VertebraVolume(0, {0: Quadrilateral(_quad(50, 22, 30, 30), 0)})
    m = match_detections(gt, [big])
    assert m.tp == 1 and m.fn == 1 and m.fp == 0
    assert m.pairs == {0: 0}  # gt 0 at y=20 is nearer the box centre y=22


def test_le_shift_in_mm():
    gt = _scene(LUMBAR)
    mean, std = localisation_error(gt, _dets_from(gt, (2.0, 0.0)))
    assert mean == pytest.approx(1.0)
    assert std == pytest.approx(0.0, abs=1e-12)


def test_perfect_labels():
    gt = _scene(LUMBAR)
    dets = _dets_from(gt)
    labels = LabelSequence(list(range(6)), list(LUMBAR), 0.0)
    assert identification_rate(match_detections(gt, dets), labels, gt.levels) == (1.0, 1.0)


def test_shift_by_one():
    gt = _scene(LUMBAR)
    dets = _dets_from(gt)
    shifted = {i: TOKENS[TOKENS.index(lv) - 1] for i, lv in enumerate(LUMBAR)}
    shifted[5] = "L5"  # S1 read as L5
    idr, idr1 = identification_rate(match_detections(gt, dets), shifted, gt.levels)
    assert idr == 0.0 and idr1 == 1.0


def test_level_distance():
    assert level_distance("L5", "S1") == 1
    assert level_distance("L5", "S1", extended=True) == 2
    assert level_distance("L6", "S1") == 1 and level_distance("L6", "L5") == 1
    assert level_distance("C2", "C2") == 0


def test_per_level_breakdown():
    gt = _scene(LUMBAR)
    dets = _dets_from(gt)[:-1]
    labels = {0: "L1", 1: "L2", 2: "L4", 3: "L4", 4: "L5"}
    rec, idr = per_level_breakdown(match_detections(gt, dets), labels, gt.levels)
    assert rec[LEVELS.index("S1")] == 0.0 and rec[LEVELS.index("L1")] == 1.0
    assert idr[LEVELS.index("L3")] == 0.0
    assert np.isnan(rec[LEVELS.index("C2")])
    table = per_level_table(rec, idr)
    assert table.splitlines()[0] == "level,recall,idr"
    assert "C2,," in table and "L1,1.000000,1.000000" in table


def test_report_fields():
    gt = _scene(LUMBAR)
    dets = _dets_from(gt)
    rep = evaluate(gt, dets, {i: lv for i, lv in enumerate(LUMBAR)})
    assert rep.precision == rep.recall == rep.idr == 1.0
    assert len(rep.per_level_recall) == 24
    assert "IDR 1.0000" in format_report(rep)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fuzzed_rate_ordering(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 25))
    start = int(rng.integers(0, 24 - n + 1))
    gt = _scene(list(LEVELS[start : start + n]))
    dets = []
    for i, v in enumerate(gt.vertebrae):
        if rng.random() < 0.8:
            dets.append(VertebraVolume(len(dets), {0: Quadrilateral(v.quads[0] + rng.normal(0, 3, 2), 0)}))
    for _ in range(int(rng.integers(0, 3))):
        dets.append(VertebraVolume(len(dets), {0: Quadrilateral(_quad(*rng.uniform(0, 500, 2)), 0)}))
    labels = {d.id: TOKENS[int(rng.integers(0, len(TOKENS)))] for d in dets}
    rep = evaluate(gt, dets, labels)
    assert rep.idr <= rep.idr_pm1 <= rep.recall
    assert rep.tp + rep.fn == n and rep.tp + rep.fp == len(dets)


@settings(max_examples=50, deadline=None)
@given(st.randoms(use_true_random=False), st.integers(0, 2**32 - 1))
def test_invariant_to_ids_and_order(rnd, seed):
    rng = np.random.default_rng(seed)
    gt = _scene(LUMBAR)
    dets = [VertebraVolume(i, {0: Quadrilateral(v.quads[0] + rng.normal(0, 2, 2), 0)}) for i, v in enumerate(gt.vertebrae)]
    labels = {d.id: LUMBAR[int(rng.integers(0, 6))] for d in dets}
    base = evaluate(gt, dets, labels)
    new_ids = rnd.sample(range(100, 200), len(dets))
    moved = [VertebraVolume(new_ids[d.id], d.quads) for d in dets]
    rnd.shuffle(moved)
    relabelled = {new_ids[i]: lv for i, lv in labels.items()}
    other = evaluate(gt, moved, relabelled)
    assert (other.precision, other.recall, other.idr, other.idr_pm1) == (base.precision, base.recall, base.idr, base.idr_pm1)
    assert other.le_mean_mm == pytest.approx(base.le_mean_mm)
