"""Finite surrogate models built by quantizing the hidden state and the observations.

The surrogate averages the continuous kernels over each hidden-state cell
with a weighting measure (uniform on the cell by default), and aggregates
the observation channel over the observation cells. The discrete Bayes
filter on the surrogate lives here too.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .markov import ROW_TOL, check_stochastic
from .model import DomainBox, ModelInconsistencyError, Pomdp
from .quantize import Quantizer, quantize, uniform_quantizer
from .seeding import stream

LIKELIHOOD_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class FiniteHmm:
    """Controlled hidden Markov model on finite alphabets.

    ``transition[x, u, x']``, ``channel[x, y]``, ``cost[x, u]``, ``prior[x]``.
    """

    transition: np.ndarray
    channel: np.ndarray
    cost: np.ndarray
    prior: np.ndarray
    discount: float
    quantizer_x: Optional[Quantizer] = None
    quantizer_y: Optional[Quantizer] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        check_stochastic(self.transition, "transition")
        check_stochastic(self.channel, "channel")
        check_stochastic(self.prior[None, :], "prior")
        n_x, n_u, n_x2 = self.transition.shape
        if n_x != n_x2 or self.channel.shape[0] != n_x or self.cost.shape != (n_x, n_u):
            raise ValueError("inconsistent table shapes")

    @property
    def n_x(self):
        return self.transition.shape[0]

    @property
    def n_u(self):
        return self.transition.shape[1]

    @property
    def n_y(self):
        return self.channel.shape[1]

    def observe_index(self, y):
        """Map raw observations to channel indices with ``quantizer_y``."""
        if self.quantizer_y is None:
            return np.asarray(y, dtype=np.int64).reshape(-1)
        return quantize(self.quantizer_y, np.atleast_2d(y))


def _cell_uniform(qx: Quantizer, index, xi):
    lo, hi = qx.cell_bounds(index)
    return lo + xi * (hi - lo)


def build_hidden_model(pomdp: Pomdp, qx: Quantizer, qy: Optional[Quantizer], n_samples: int,
                       seed: int, exact: Optional[bool] = None, weighting=None,
                       workers: int = 1) -> FiniteHmm:
    """Average the model's kernels over the cells of ``qx`` and ``qy``.

    Parameters
    ----------
    exact : bool, optional
        Use the enumeration path when the model carries finite tables
        (default: whenever it does). The weighting measure is then uniform
        over the support points of each cell.
    weighting : callable, optional
        ``weighting(lo, hi, xi) -> points`` draws from the weighting measure
        restricted to the cell [lo, hi]; uniform when omitted.
    workers : int
        Threads used over cells. Each cell has its own derived stream, and
        transition/observation noise is shared across cells, so the result
        does not depend on this value.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if exact is None:
        exact = pomdp.finite is not None
    if exact:
        if pomdp.finite is None:
            raise ValueError(f"model {pomdp.name!r} has no finite tables for the exact path")
        return _build_exact(pomdp, qx, qy)
    return _build_sampled(pomdp, qx, qy, n_samples, seed, weighting, workers)


def _build_exact(pomdp, qx, qy):
    ft = pomdp.finite
    cell_x = quantize(qx, ft.state_points)
    n_x = qx.n_bins
    members = [np.flatnonzero(cell_x == i) for i in range(n_x)]
    for i, mem in enumerate(members):
        if mem.size == 0:
            raise ValueError(f"hidden cell {i} contains no support point of {pomdp.name!r}")
    agg_x = np.zeros((ft.state_points.shape[0], n_x))
    agg_x[np.arange(cell_x.size), cell_x] = 1.0
    if qy is None:
        agg_y = np.eye(ft.obs_points.shape[0])
        # keep a raw-observation map when the support sits on uniform cell centers
        candidate = uniform_quantizer(pomdp.obs_box, ft.obs_points.shape[0]) if pomdp.obs_box.dim == 1 else None
        if candidate is not None and np.array_equal(quantize(candidate, ft.obs_points), np.arange(agg_y.shape[0])):
            qy = candidate
    else:
        cell_y = quantize(qy, ft.obs_points)
        agg_y = np.zeros((ft.obs_points.shape[0], qy.n_bins))
        agg_y[np.arange(cell_y.size), cell_y] = 1.0

    def reduce(rows, mem):
        return rows[mem].mean(axis=0)

    # products with 0/1 aggregation matrices are exact, so identity cells copy bit-exactly
    T = np.stack([reduce(ft.transition @ agg_x, mem) for mem in members])
    O = np.stack([reduce(ft.channel @ agg_y, mem) for mem in members])
    c = np.stack([reduce(ft.cost, mem) for mem in members])
    prior = ft.prior @ agg_x
    meta = dict(path="exact", model=pomdp.name, params=pomdp.params)
    return FiniteHmm(T, O, c, prior, pomdp.discount, qx, qy, meta)


def _build_sampled(pomdp, qx, qy, n_samples, seed, weighting, workers):
    if qy is None:
        raise ValueError("an observation quantizer is required for a continuous channel")
    n_x, n_u, n_y = qx.n_bins, pomdp.n_actions, qy.n_bins
    kT = pomdp.transition.noise_dim
    kO = pomdp.channel.noise_dim
    # common noise across cells: identical channels yield identical rows
    xi_T = [stream(seed, "transition", u).random((n_samples, kT)) for u in range(n_u)]
    xi_O = stream(seed, "channel").random((n_samples, kO))
    u_idx = [np.full(n_samples, u, dtype=np.int64) for u in range(n_u)]

    def one_cell(i):
        xi = stream(seed, "cell", i).random((n_samples, qx.box.dim))
        if weighting is None:
            z = _cell_uniform(qx, i, xi)
        else:
            lo, hi = qx.cell_bounds(i)
            z = np.atleast_2d(weighting(lo, hi, xi))
        T_row = np.empty((n_u, n_x))
        c_row = np.empty(n_u)
        for u in range(n_u):
            xn = pomdp.transition.step(z, u_idx[u], xi_T[u])
            if not np.all(pomdp.state_box.contains(xn)):
                raise ModelInconsistencyError(f"transition samples from hidden cell {i} left the state box")
            T_row[u] = np.bincount(quantize(qx, xn), minlength=n_x) / n_samples
            c_row[u] = pomdp.cost(z, u_idx[u]).mean()
        y = pomdp.channel.sample_fn(z, xi_O)
        if not np.all(pomdp.obs_box.contains(y)):
            raise ModelInconsistencyError(f"observation samples from hidden cell {i} left the observation box")
        O_row = np.bincount(quantize(qy, y), minlength=n_y) / n_samples
        return T_row, O_row, c_row

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one_cell, range(n_x)))
    else:
        rows = [one_cell(i) for i in range(n_x)]
    T = np.stack([r[0] for r in rows])
    O = np.stack([r[1] for r in rows])
    c = np.stack([r[2] for r in rows])
    n_prior = max(n_samples, 1000) * n_x
    x0 = pomdp.prior.sample(n_prior, stream(seed, "prior"))
    prior = np.bincount(quantize(qx, x0), minlength=n_x) / n_prior
    meta = dict(path="sampled", model=pomdp.name, params=pomdp.params, n_samples=n_samples,
                seed=int(seed))
    return FiniteHmm(T, O, c, prior, pomdp.discount, qx, qy, meta)


def degraded_channel(pomdp: Pomdp, qy: Quantizer, x_points, n_samples: int, seed: int) -> np.ndarray:
    """Monte Carlo estimate of O(B_j | x) for each row of ``x_points``."""
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    xi = stream(seed, "degraded").random((n_samples, pomdp.channel.noise_dim))
    out = np.empty((x_points.shape[0], qy.n_bins))
    for i, x in enumerate(x_points):
        y = pomdp.channel.sample_fn(np.repeat(x[None, :], n_samples, axis=0), xi)
        out[i] = np.bincount(quantize(qy, y), minlength=qy.n_bins) / n_samples
    return out


# --------------------------------------------------------------------------
# Discrete filter


def predictor_update(hmm: FiniteHmm, belief, u):
    """Push a belief (or a batch of beliefs) through T(.|., u)."""
    b = np.asarray(belief, dtype=float)
    u = np.asarray(u)
    if b.ndim == 1:
        return b @ hmm.transition[:, int(u), :]
    return np.einsum("px,pxy->py", b, hmm.transition[:, u, :].transpose(1, 0, 2))


def correct(hmm: FiniteHmm, belief, y):
    """Bayes correction by observation index ``y``; returns (posterior, likelihood).

    Where the likelihood is below ``LIKELIHOOD_FLOOR`` the input belief is
    returned unchanged with likelihood 0.
    """
    b = np.asarray(belief, dtype=float)
    single = b.ndim == 1
    b = np.atleast_2d(b)
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), b.shape[:1])
    joint = b * hmm.channel[:, y].T
    lik = joint.sum(axis=1)
    ok = lik >= LIKELIHOOD_FLOOR
    post = np.where(ok[:, None], joint / np.where(ok, lik, 1.0)[:, None], b)
    lik = np.where(ok, lik, 0.0)
    if single:
        return post[0], float(lik[0])
    return post, lik


def filter_update(hmm: FiniteHmm, belief, u, y):
    """One predict-correct step of the discrete filter.

    Returns the posterior and the one-step observation likelihood. A
    likelihood below ``LIKELIHOOD_FLOOR`` returns the prediction with
    likelihood 0.
    """
    b = np.asarray(belief, dtype=float)
    if b.ndim == 2:
        u = np.broadcast_to(np.asarray(u), b.shape[:1])
    return correct(hmm, predictor_update(hmm, b, u), y)


# --------------------------------------------------------------------------
# Flat CSV dump


def _quantizer_spec(q):
    if q is None:
        return None
    return dict(lower=q.box.lower.tolist(), upper=q.box.upper.tolist(), bins=list(q.bins))


def _quantizer_from(spec):
    if spec is None:
        return None
    return uniform_quantizer(DomainBox(spec["lower"], spec["upper"]), spec["bins"])


def dump_hmm(hmm: FiniteHmm) -> str:
    """Serialize to CSV text.

    Header lines start with ``#``: the first carries a JSON object with the
    sizes, discount, quantizer boxes/bins and build metadata. The body has
    columns ``table,i,j,k,value`` with tables ``T`` (x, u, x'), ``O`` (x, y),
    ``c`` (x, u) and ``prior`` (x), rows in C order. Values use 17
    significant digits so a load round-trips exactly.
    """
    out = io.StringIO()
    header = dict(n_x=hmm.n_x, n_y=hmm.n_y, n_u=hmm.n_u, discount=hmm.discount,
                  quantizer_x=_quantizer_spec(hmm.quantizer_x),
                  quantizer_y=_quantizer_spec(hmm.quantizer_y), meta=hmm.meta)
    out.write("# " + json.dumps(header, sort_keys=True, default=str) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["table", "i", "j", "k", "value"])
    for (i, j, k), v in np.ndenumerate(hmm.transition):
        w.writerow(["T", i, j, k, f"{v:.17g}"])
    for (i, j), v in np.ndenumerate(hmm.channel):
        w.writerow(["O", i, j, "", f"{v:.17g}"])
    for (i, j), v in np.ndenumerate(hmm.cost):
        w.writerow(["c", i, j, "", f"{v:.17g}"])
    for i, v in enumerate(hmm.prior):
        w.writerow(["prior", i, "", "", f"{v:.17g}"])
    return out.getvalue()


def save_hmm(hmm: FiniteHmm, path):
    with open(path, "w", newline="") as fh:
        fh.write(dump_hmm(hmm))


def load_hmm(path) -> FiniteHmm:
    with open(path) as fh:
        text = fh.read()
    first, body = text.split("\n", 1)
    header = json.loads(first[2:])
    n_x, n_y, n_u = header["n_x"], header["n_y"], header["n_u"]
    T = np.zeros((n_x, n_u, n_x))
    O = np.zeros((n_x, n_y))
    c = np.zeros((n_x, n_u))
    prior = np.zeros(n_x)
    for row in csv.DictReader(io.StringIO(body)):
        t, v = row["table"], float(row["value"])
        i = int(row["i"])
        if t == "T":
            T[i, int(row["j"]), int(row["k"])] = v
        elif t == "O":
            O[i, int(row["j"])] = v
        elif t == "c":
            c[i, int(row["j"])] = v
        elif t == "prior":
            prior[i] = v
    return FiniteHmm(T, O, c, prior, header["discount"], _quantizer_from(header["quantizer_x"]),
                     _quantizer_from(header["quantizer_y"]), header["meta"])


__all__ = ["FiniteHmm", "build_hidden_model", "degraded_channel", "predictor_update", "correct",
           "filter_update", "dump_hmm", "save_hmm", "load_hmm", "LIKELIHOOD_FLOOR", "ROW_TOL"]
