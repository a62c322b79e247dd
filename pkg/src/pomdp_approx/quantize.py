"""Uniform box quantizers and the m-resolution lattice on the probability simplex."""

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .model import DomainBox


@dataclass(frozen=True, eq=False)
class Quantizer:
    """Axis-aligned partition of a box into cells, flattened in C order.

    ``edges[d]`` holds the n_d + 1 cell boundaries along dimension d; a
    point on an interior boundary belongs to the lower cell.
    """

    box: DomainBox
    bins: tuple
    edges: tuple
    representatives: np.ndarray
    diameter: float

    @property
    def n_bins(self):
        return int(np.prod(self.bins))

    @property
    def L(self):
        return self.diameter

    def cell_bounds(self, index):
        idx = np.unravel_index(int(index), self.bins)
        lo = np.array([self.edges[d][i] for d, i in enumerate(idx)])
        hi = np.array([self.edges[d][i + 1] for d, i in enumerate(idx)])
        return lo, hi

    def __call__(self, points):
        return quantize(self, points)


def uniform_quantizer(box: DomainBox, bins_per_dim) -> Quantizer:
    bins = tuple(int(b) for b in np.broadcast_to(np.atleast_1d(bins_per_dim), (box.dim,)))
    if any(b < 1 for b in bins):
        raise ValueError(f"bins per dimension must be >= 1, got {bins}")
    edges = tuple(np.linspace(box.lower[d], box.upper[d], bins[d] + 1) for d in range(box.dim))
    centers = [0.5 * (e[:-1] + e[1:]) for e in edges]
    grid = np.meshgrid(*centers, indexing="ij")
    reps = np.stack([g.ravel() for g in grid], axis=1)
    width = (box.upper - box.lower) / np.array(bins)
    return Quantizer(box, bins, edges, reps, float(np.sqrt((width**2).sum())))


def quantize(q: Quantizer, points) -> np.ndarray:
    """Cell index of each point; points outside the box are clamped first.

    Accepts a single point of shape (dim,) (returns an int) or a batch of
    shape (P, dim).
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != q.box.dim:
        pts = pts.reshape(-1, q.box.dim)
    if np.isnan(pts).any():
        raise ValueError("cannot quantize NaN coordinates")
    pts = np.clip(pts, q.box.lower, q.box.upper)
    idx = np.zeros(pts.shape[0], dtype=np.int64)
    for d in range(q.box.dim):
        # side='left' counts interior edges strictly below x: boundary -> lower cell
        k = np.searchsorted(q.edges[d][1:-1], pts[:, d], side="left")
        idx = idx * q.bins[d] + k
    return int(idx[0]) if single else idx


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """All probability vectors with coordinates k/m, in ascending lexicographic order."""

    n: int
    m: int
    points: np.ndarray
    counts: np.ndarray
    keys: np.ndarray

    @property
    def size(self):
        return self.points.shape[0]

    def __len__(self):
        return self.size


def simplex_grid_size(n, m):
    return comb(m + n - 1, n - 1)


def simplex_grid(n: int, m: int, max_points: int = 2_000_000) -> SimplexGrid:
    if n < 1 or m < 1:
        raise ValueError("simplex grid needs n >= 1 and m >= 1")
    size = simplex_grid_size(n, m)
    if size > max_points:
        raise ValueError(f"simplex grid with n={n}, m={m} has {size} points (limit {max_points})")
    # stars and bars: bar positions among m + n - 1 slots
    rows = []
    for bars in combinations(range(m + n - 1), n - 1):
        prev, k = -1, []
        for b in bars:
            k.append(b - prev - 1)
            prev = b
        k.append(m + n - 2 - prev)
        rows.append(k)
    counts = np.array(rows, dtype=np.int64).reshape(size, n)
    keys = _lattice_keys(counts, m)
    order = np.argsort(keys, kind="stable") if keys is not None else np.lexsort(counts.T[::-1])
    counts = counts[order]
    keys = keys[order] if keys is not None else None
    return SimplexGrid(n, m, counts / m, counts, keys)


def _lattice_keys(counts, m):
    n = counts.shape[-1]
    if (m + 1) ** n >= 2**62:
        return None
    weights = (m + 1) ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return counts @ weights


def nearest_lattice_counts(m, beliefs):
    """L1-nearest lattice counts k (sum m) with lexicographically smallest tie-break.

    Minimizing sum |m b_i - k_i| over integer k with sum m is solved by
    flooring and handing the remaining units to the largest fractional
    parts; among equal fractional parts the later coordinates receive the
    units, which gives the lexicographically smallest optimum.
    """
    b = np.atleast_2d(np.asarray(beliefs, dtype=float))
    b = b / b.sum(axis=1, keepdims=True)
    a = m * b
    fl = np.floor(a)
    frac = np.round(a - fl, 9)
    r = np.clip(m - fl.sum(axis=1), 0, b.shape[1]).astype(np.int64)
    col = np.broadcast_to(np.arange(b.shape[1]), b.shape)
    order = np.lexsort((-col, -frac), axis=-1)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(b.shape[1])[None, :].repeat(b.shape[0], 0), axis=1)
    return (fl + (rank < r[:, None])).astype(np.int64)


def nearest_simplex_point(grid: SimplexGrid, belief, tol: float = 1e-9):
    """Index of the grid point closest in L1 to ``belief`` (or to each row)."""
    b = np.asarray(belief, dtype=float)
    single = b.ndim == 1
    b = np.atleast_2d(b)
    if b.shape[1] != grid.n:
        raise ValueError(f"belief has dimension {b.shape[1]}, grid expects {grid.n}")
    if np.any(b < -tol):
        raise ValueError("belief has negative coordinates")
    if np.any(np.abs(b.sum(axis=1) - 1.0) > tol):
        raise ValueError("belief does not sum to 1")
    counts = nearest_lattice_counts(grid.m, np.clip(b, 0.0, None))
    if grid.keys is not None:
        idx = np.searchsorted(grid.keys, _lattice_keys(counts, grid.m))
    else:
        lookup = {tuple(row): i for i, row in enumerate(grid.counts)}
        idx = np.array([lookup[tuple(row)] for row in counts])
    return int(idx[0]) if single else idx
