from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mann_whitney_auc
from spinelab.core.types import Quadrilateral, VertebraVolume
from spinelab.detect import detect_scan
from spinelab.phantom import PhantomSpec, generate
from spinelab.scoliosis import (
    ScoliosisFeatures,
    classify,
    coronal_points,
    roc_auc,
    sagittal_points,
    scoliosis_features,
)


def _phantom_volumes(amplitude, seed=0):
    spec = PhantomSpec(seed=seed, lateral_amplitude=amplitude)
    truth = generate(spec)
    return detect_scan(truth.heatmaps, truth.fields), spec


def _column(lateral, dy=0.0):
    """Synthetic volumes: one per entry, single slice at the given index."""
    vols = []
    for i, s in enumerate(lateral):
        y = 30.0 + 20 * i + dy
        q = np.array([[40, y], [60, y], [60, y + 12], [40, y + 12]], dtype=float)
        vols.append(VertebraVolume(i, {int(s): Quadrilateral(q, int(s))}))
    return vols


def test_straight_spine():
    vols, spec = _phantom_volumes(0.0)
    f = scoliosis_features(vols, spec.slice_spacing_px)
    assert f.max_curvature <= 1e-4
    assert f.max_deviation <= 1.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sinusoid_amplitude_recovered(seed):
    vols, spec = _phantom_volumes(10.0, seed)
    f = scoliosis_features(vols, spec.slice_spacing_px)
    assert 8.0 <= f.max_deviation <= 12.0
    assert f.max_curvature > 1e-4


def test_translation_and_reflection_invariance():
    lateral = [3, 4, 5, 6, 6, 5, 4, 3, 3, 4]
    base = scoliosis_features(_column(lateral))
    moved = scoliosis_features(_column(lateral, dy=57.0))
    mirrored = scoliosis_features(_column([10 - s for s in lateral]))
    for other in (moved, mirrored):
        assert other.max_deviation == pytest.approx(base.max_deviation, abs=1e-9)
        assert other.max_curvature == pytest.approx(base.max_curvature, rel=1e-6)


def test_too_few_vertebrae():
    vols = _column([1, 2, 3, 2])
    with pytest.raises(ValueError):
        scoliosis_features(vols)
    f = scoliosis_features(vols, allow_lower_degree=True)
    assert f.fit_residual == pytest.approx(0.0, abs=1e-9)


def test_points_ordered_top_down():
    vols = _column([1, 2, 3, 4, 5, 6])[::-1]
    assert np.all(np.diff(coronal_points(vols)[:, 0]) > 0)
    assert np.all(np.diff(sagittal_points(vols)[:, 0]) > 0)


def test_classify_thresholds():
    f = ScoliosisFeatures(0.002, 3.5, 0.1)
    assert classify(f, np.inf) == (False, 3.5)
    assert classify(f, 0.0) == (True, 3.5)
    assert classify(f, 0.0, "max_curvature") == (True, 0.002)
    with pytest.raises(ValueError):
        classify(f, 1.0, "fit_residual")


def test_roc_examples():
    points, auc = roc_auc([0.1, 0.2, 0.8, 0.9], [False, False, True, True])
    assert auc == 1.0
    assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [True, True])


def test_roc_chance_level():
    rng = np.random.default_rng(4)
    scores = rng.normal(size=4000)
    labels = rng.random(4000) < 0.5
    assert roc_auc(scores, labels)[1] == pytest.approx(0.5, abs=0.03)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.booleans())
def test_auc_matches_mann_whitney(seed, n, discrete):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 5, n).astype(float) if discrete else rng.normal(size=n)
    labels = rng.random(n) < 0.5
    labels[0], labels[1] = True, False
    assert roc_auc(scores, labels)[1] == pytest.approx(mann_whitney_auc(scores, labels), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_monotone_transform_invariant(seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=40)
    labels = rng.random(40) < 0.5
    labels[:2] = [True, False]
    a = roc_auc(scores, labels)[1]
    assert roc_auc(np.exp(scores), labels)[1] == pytest.approx(a, abs=1e-12)
    assert roc_auc(3 * scores + 7, labels)[1] == pytest.approx(a, abs=1e-12)
