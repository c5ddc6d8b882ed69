from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import lstsq_residual, random_convex_quad
from spinelab.geometry import (
    NonConvexPolygonError,
    curvature,
    fit_polynomial,
    fit_residual,
    intersection_area,
    is_convex,
    max_abs_curvature,
    max_centreline_deviation,
    point_in_polygon,
    polygon_area,
    polygon_iou,
)

UNIT = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)


def test_area_examples():
    assert polygon_area(UNIT) == pytest.approx(1.0)
    assert polygon_area([[0, 0], [1, 1], [2, 2]]) == 0.0
    assert polygon_area([[0, 0], [2, 0], [2, 1], [0, 1]]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        polygon_area([[0, 0], [1, 1]])


def test_point_in_polygon_examples():
    assert point_in_polygon((0.5, 0.5), UNIT)
    assert not point_in_polygon((3.0, 0.5), UNIT)
    assert point_in_polygon((1.0, 0.3), UNIT)
    assert point_in_polygon((0.0, 0.0), UNIT)


def test_iou_examples():
    assert polygon_iou(UNIT, UNIT) == pytest.approx(1.0)
    assert polygon_iou(UNIT, UNIT + 5) == 0.0
    assert polygon_iou(UNIT, UNIT + [0.5, 0]) == pytest.approx(1 / 3)


def test_nonconvex_rejected():
    dart = np.array([[0, 0], [2, 1], [0, 2], [1, 1]], dtype=float)
    assert not is_convex(dart)
    with pytest.raises(NonConvexPolygonError):
        intersection_area(dart, UNIT)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_iou_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = random_convex_quad(rng), random_convex_quad(rng)
    iou = polygon_iou(a, b)
    assert 0.0 <= iou <= 1.0
    assert iou == pytest.approx(polygon_iou(b, a), abs=1e-12)
    assert polygon_iou(a, a) == pytest.approx(1.0)
    # orientation of the vertex list does not matter
    assert polygon_iou(a[::-1], b) == pytest.approx(iou, abs=1e-12)


def test_iou_matches_monte_carlo_sample():
    from oracles import monte_carlo_iou

    rng = np.random.default_rng(7)
    for _ in range(5):
        a, b = random_convex_quad(rng, 1.0), random_convex_quad(rng, 1.0)
        assert polygon_iou(a, b) == pytest.approx(monte_carlo_iou(a, b, 200_000, rng), abs=6e-3)


# --- polynomial fitting -----------------------------------------------------


def test_quintic_interpolation():
    coef = np.array([1.0, -2.0, 0.5, 0.1, -0.03, 0.002])
    y = np.linspace(-3, 3, 6)
    x = np.polynomial.polynomial.polyval(y, coef)
    poly = fit_polynomial(np.c_[y, x], 5)
    assert fit_residual(poly, np.c_[y, x]) <= 1e-6
    np.testing.assert_allclose(poly.raw_coefficients(), coef, atol=1e-8)


def test_vertical_line_has_no_higher_terms():
    y = np.linspace(0, 400, 20)
    poly = fit_polynomial(np.c_[y, np.full_like(y, 37.0)], 5)
    assert np.all(np.abs(poly.coefficients[1:]) <= 1e-9)
    assert max_abs_curvature(poly, (0, 400)) == pytest.approx(0.0, abs=1e-12)


def test_higher_degree_fits_no_worse():
    rng = np.random.default_rng(3)
    y = np.linspace(0, 500, 24)
    pts = np.c_[y, 10 * np.sin(y / 80) + rng.normal(0, 0.5, y.size)]
    assert fit_residual(fit_polynomial(pts, 5), pts) <= fit_residual(fit_polynomial(pts, 1), pts)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_fit_matches_lstsq(seed, degree):
    rng = np.random.default_rng(seed)
    y = np.sort(rng.uniform(0, 500, 24))
    pts = np.c_[y, rng.normal(0, 10, 24)]
    assert fit_residual(fit_polynomial(pts, degree), pts) == pytest.approx(lstsq_residual(pts, degree), abs=1e-6)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_polynomial([[0, 0], [1, 1]], 5)
    with pytest.raises(np.linalg.LinAlgError):
        fit_polynomial([[1, 0], [1, 1], [1, 2]], 2)


def test_parabola_curvature_at_vertex():
    radius = 150.0
    y = np.linspace(-40, 40, 41)
    poly = fit_polynomial(np.c_[y, y**2 / (2 * radius)], 2)
    assert float(curvature(poly, 0.0)) == pytest.approx(1 / radius, rel=1e-6)
    assert max_abs_curvature(poly, (-40, 40)) == pytest.approx(1 / radius, rel=0.01)


def test_curvature_grows_with_amplitude():
    y = np.linspace(0, 500, 24)
    small = fit_polynomial(np.c_[y, 2 * np.sin(y / 80)], 5)
    large = fit_polynomial(np.c_[y, 10 * np.sin(y / 80)], 5)
    assert max_abs_curvature(large, (0, 500)) > max_abs_curvature(small, (0, 500))


def test_empty_range_rejected():
    poly = fit_polynomial(np.c_[[0.0, 1.0], [0.0, 1.0]], 1)
    with pytest.raises(ValueError):
        max_abs_curvature(poly, (5, 1))


def test_deviation_examples():
    y = np.arange(10.0)
    assert max_centreline_deviation(np.c_[y, np.full(10, 3.0)]) == 0.0
    assert max_centreline_deviation(np.c_[y, np.tile([-2.5, 2.5], 5)]) == pytest.approx(2.5)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.floats(-50, 50))
def test_deviation_translation_invariant(xs, shift):
    pts = np.c_[np.arange(len(xs)), xs]
    moved = pts + [0, shift]
    assert max_centreline_deviation(moved) == pytest.approx(max_centreline_deviation(pts), abs=1e-9)
