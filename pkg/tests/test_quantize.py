from math import comb, isclose, sqrt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pomdp_approx.model import DomainBox
from pomdp_approx.quantize import (nearest_simplex_point, quantize, simplex_grid, simplex_grid_size,
                                   uniform_quantizer)

unit = DomainBox([0.0], [1.0])


def test_single_bin():
    q = uniform_quantizer(unit, 1)
    assert q.n_bins == 1
    assert q.representatives[:, 0].tolist() == [0.5]
    assert q.L == 1.0


def test_four_bins():
    q = uniform_quantizer(unit, 4)
    assert q.representatives[:, 0].tolist() == [0.125, 0.375, 0.625, 0.875]
    assert q.L == 0.25


def test_square_diagonal():
    q = uniform_quantizer(DomainBox([0, 0], [1, 1]), [2, 2])
    assert isclose(q.L, sqrt(0.5), rel_tol=1e-15)


def test_zero_volume_box():
    with pytest.raises(ValueError):
        DomainBox([0.0], [0.0])
    with pytest.raises(ValueError):
        uniform_quantizer(unit, 0)


def test_quantize_examples():
    q = uniform_quantizer(unit, 4)
    assert quantize(q, [0.3]) == 1
    assert quantize(q, [0.25]) == 0
    assert quantize(q, [1.7]) == 3
    assert quantize(q, [-2.0]) == 0
    with pytest.raises(ValueError):
        quantize(q, [float("nan")])


def test_partition_and_diameter():
    box = DomainBox([-1.0, 0.0], [1.0, 3.0])
    q = uniform_quantizer(box, [5, 3])
    rng = np.random.default_rng(0)
    pts = box.uniform(rng.random((100_000, 2)))
    idx = quantize(q, pts)
    for i in range(q.n_bins):
        lo, hi = q.cell_bounds(i)
        inside = pts[idx == i]
        assert np.all((inside >= lo) & (inside <= hi))
        assert np.all((q.representatives[i] >= lo) & (q.representatives[i] <= hi))
    # every point lies in exactly one half-open cell: count cells containing each point
    lows = np.array([q.cell_bounds(i)[0] for i in range(q.n_bins)])
    highs = np.array([q.cell_bounds(i)[1] for i in range(q.n_bins)])
    sample = pts[:2000]
    hits = ((sample[:, None, :] > lows[None]) | (lows[None] == box.lower)) & (sample[:, None, :] <= highs[None])
    assert np.all(hits.all(axis=-1).sum(axis=1) == 1)
    # same-cell pairs are within the diameter
    order = np.argsort(idx, kind="stable")
    a, b = order[:-1], order[1:]
    same = idx[a] == idx[b]
    assert np.all(np.linalg.norm(pts[a][same] - pts[b][same], axis=1) <= q.L)


@given(st.integers(1, 64), st.floats(0.1, 10.0))
def test_refinement_halves_L(n, width):
    box = DomainBox([0.0], [width])
    assert uniform_quantizer(box, 2 * n).L == uniform_quantizer(box, n).L / 2


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=50), st.integers(1, 20))
def test_quantize_in_range_and_monotone(xs, n):
    q = uniform_quantizer(unit, n)
    idx = quantize(q, np.array(xs)[:, None])
    assert np.all((idx >= 0) & (idx < n))
    order = np.argsort(xs, kind="stable")
    assert np.all(np.diff(idx[order]) >= 0)


def test_simplex_examples():
    g = simplex_grid(2, 2)
    assert g.points.tolist() == [[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]]
    assert g.points[nearest_simplex_point(g, [0.6, 0.4])].tolist() == [0.5, 0.5]
    assert g.points[nearest_simplex_point(g, [0.75, 0.25])].tolist() == [0.5, 0.5]
    for i in range(g.size):
        assert nearest_simplex_point(g, g.points[i]) == i
    with pytest.raises(ValueError):
        nearest_simplex_point(g, [1.2, -0.2])


@given(st.integers(1, 5), st.integers(1, 12))
def test_simplex_grid_size_and_points(n, m):
    g = simplex_grid(n, m)
    assert g.size == simplex_grid_size(n, m) == comb(m + n - 1, n - 1)
    assert np.all(g.points >= 0)
    assert np.allclose(g.points.sum(axis=1), 1.0)
    assert len({tuple(r) for r in g.counts}) == g.size
    # ascending lexicographic order
    assert all(tuple(a) < tuple(b) for a, b in zip(g.counts[:-1], g.counts[1:]))


def _brute_nearest(g, b):
    d = np.abs(g.points - b).sum(axis=1)
    best = np.flatnonzero(np.isclose(d, d.min(), rtol=0, atol=1e-12))
    return int(best[0])  # points are sorted lexicographically


@given(st.integers(2, 4), st.integers(1, 8), st.data())
def test_nearest_matches_brute_force(n, m, data):
    g = simplex_grid(n, m)
    raw = data.draw(st.lists(st.integers(0, 4 * m), min_size=n, max_size=n).filter(lambda v: sum(v) > 0))
    # beliefs with denominator 4m produce many exact ties
    b = np.array(raw, dtype=float) / sum(raw)
    assert nearest_simplex_point(g, b) == _brute_nearest(g, b)


@given(st.integers(2, 4), st.integers(1, 10), st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
def test_nearest_minimizes_l1(n, m, w):
    g = simplex_grid(n, m)
    b = np.array(w[:n]) / sum(w[:n])
    i = nearest_simplex_point(g, b)
    assert np.abs(g.points[i] - b).sum() <= np.abs(g.points - b).sum(axis=1).min() + 1e-12
