from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinelab.core.types import CORNER_KINDS, LandmarkKind, quad_index
from spinelab.targets import (
    TargetMaps,
    detect_loss,
    detect_weights,
    group_loss,
    landmark_sigma,
    render_targets,
)

QUAD = np.array([[20.0, 30.0], [44.0, 30.0], [44.0, 46.0], [20.0, 46.0]])


def test_peak_at_landmark_pixels():
    t = render_targets([QUAD], (80, 70))
    for kind in CORNER_KINDS:
        x, y = QUAD[quad_index(kind)].astype(int)
        assert t.detection[kind, y, x] == 1.0
        assert t.detection[kind].max() == 1.0
    cx, cy = QUAD.mean(axis=0).astype(int)
    assert t.detection[LandmarkKind.CENTROID, cy, cx] == 1.0


def test_sigma_from_area():
    # area 24 x 16 = 384, sigma^2 = sqrt(384)
    assert landmark_sigma(QUAD) ** 2 == pytest.approx(np.sqrt(384.0))
    assert landmark_sigma(QUAD, c_var=2.0) ** 2 == pytest.approx(2 * np.sqrt(384.0))


def test_grouping_value_at_corner():
    t = render_targets([QUAD], (80, 70))
    centroid = QUAD.mean(axis=0)
    for kind in CORNER_KINDS:
        x, y = QUAD[quad_index(kind)].astype(int)
        assert t.mask[kind, y, x]
        np.testing.assert_allclose(t.grouping[kind, :, y, x], QUAD[quad_index(kind)] - centroid)


def test_grouping_only_inside_neighbourhood():
    t = render_targets([QUAD], (80, 70), nbhd_radius_factor=2.0)
    rho = 2.0 * landmark_sigma(QUAD)
    yy, xx = np.mgrid[0:80, 0:70]
    for kind in CORNER_KINDS:
        x, y = QUAD[quad_index(kind)]
        np.testing.assert_array_equal(t.mask[kind], np.hypot(xx - x, yy - y) <= rho)
        assert np.all(t.grouping[kind][:, ~t.mask[kind]] == 0)


def test_overlap_nearest_corner_wins():
    below = QUAD + [0, 10]
    t = render_targets([QUAD, below], (100, 70))
    kind = LandmarkKind.TOP_LEFT
    yy, xx = np.mgrid[0:100, 0:70]
    d_a = np.hypot(xx - QUAD[0, 0], yy - QUAD[0, 1])
    d_b = np.hypot(xx - below[0, 0], yy - below[0, 1])
    both = t.mask[kind] & (d_a <= 2 * landmark_sigma(QUAD)) & (d_b <= 2 * landmark_sigma(QUAD))
    assert both.any()
    owner_a = both & (d_a < d_b)
    owner_b = both & (d_b < d_a)
    np.testing.assert_allclose(t.grouping[kind, 1][owner_a], (yy - QUAD.mean(axis=0)[1])[owner_a])
    np.testing.assert_allclose(t.grouping[kind, 1][owner_b], (yy - below.mean(axis=0)[1])[owner_b])


@settings(max_examples=30, deadline=None)
@given(st.integers(-10, 10), st.integers(-10, 10))
def test_translation_equivariance(dx, dy):
    shape = (120, 110)
    a = render_targets([QUAD + [30, 30]], shape)
    b = render_targets([QUAD + [30 + dx, 30 + dy]], shape)
    # compare in an interior window untouched by the border
    win = (slice(20, 100), slice(20, 90))
    shifted = (slice(20 + dy, 100 + dy), slice(20 + dx, 90 + dx))
    np.testing.assert_allclose(b.detection[(slice(None),) + shifted], a.detection[(slice(None),) + win], atol=1e-12)
    np.testing.assert_array_equal(b.mask[(slice(None),) + shifted], a.mask[(slice(None),) + win])
    np.testing.assert_allclose(
        b.grouping[(slice(None), slice(None)) + shifted], a.grouping[(slice(None), slice(None)) + win], atol=1e-9
    )


# --- losses -----------------------------------------------------------------


def test_detect_loss_zero_at_target():
    t = render_targets([QUAD], (80, 70))
    assert detect_loss(t.detection, t.detection) == 0.0


def test_detect_loss_weight_example():
    target = np.array([[[1.0, 0.0], [0.0, 0.0]]])
    w = detect_weights(target)
    np.testing.assert_allclose(w[0], [[0.75, 0.25], [0.25, 0.25]])
    response = target.copy()
    response[0, 0, 0] = 0.0
    assert detect_loss(response, target) == pytest.approx(0.75)


def test_detect_loss_shape_mismatch():
    with pytest.raises(ValueError):
        detect_loss(np.zeros((5, 4, 4)), np.zeros((5, 4, 5)))


def test_detect_weight_fallback_uniform():
    target = np.zeros((1, 3, 3))
    np.testing.assert_allclose(detect_weights(target), 1 / 9)
    np.testing.assert_allclose(detect_weights(target + 1), 1 / 9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_alpha_mass_balance(seed):
    rng = np.random.default_rng(seed)
    target = np.where(rng.random((5, 12, 9)) < rng.uniform(0.05, 0.95), rng.random((5, 12, 9)), 0.0)
    w = detect_weights(target)
    for k in range(5):
        pos = target[k] >= 0.01
        p, n = pos.sum(), (~pos).sum()
        if p and n:
            assert w[k][pos].sum() == pytest.approx(w[k][~pos].sum(), abs=1e-9)
            assert w[k][pos].sum() == pytest.approx(p * n / (p + n), abs=1e-9)


def _group_target():
    return render_targets([QUAD], (80, 70))


def test_group_loss_examples():
    t = _group_target()
    assert group_loss(t.grouping, t) == 0.0
    v = t.grouping.copy()
    kind = LandmarkKind.BOTTOM_RIGHT
    y, x = np.argwhere(t.mask[kind])[0]
    v[kind, 0, y, x] += 1.0
    assert group_loss(v, t) == pytest.approx(1.0)


def test_group_loss_ignores_unmasked():
    t = _group_target()
    v = t.grouping.copy()
    rng = np.random.default_rng(0)
    noise = rng.normal(0, 5, v.shape)
    v += np.where(t.mask[:, None], 0.0, noise)
    assert group_loss(v, t) == 0.0
    with pytest.raises(ValueError):
        group_loss(v[:, :, :-1], t)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_losses_positive_off_target(seed):
    rng = np.random.default_rng(seed)
    t = _group_target()
    assert detect_loss(t.detection + rng.uniform(0.01, 1) * rng.random(t.detection.shape), t.detection) > 0
    assert group_loss(t.grouping + rng.normal(0, 1, t.grouping.shape), TargetMaps(t.detection, t.grouping, t.mask)) > 0
