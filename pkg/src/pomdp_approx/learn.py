"""Tabular Q-learning over quantized observation windows and over the belief lattice.

Exploration is open loop (actions i.i.d. from ``sigma``), so each run first
simulates its whole path and then applies the sequential Q recursion.
Several seeds can be run side by side; every learner keeps its own
streams, and the recursion is vectorized across learners only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .discretize import FiniteHmm, correct, filter_update
from .model import ModelInconsistencyError, Pomdp
from .quantize import Quantizer, SimplexGrid, nearest_simplex_point, quantize
from .seeding import stream
from .window import encode, window_size


@dataclass
class QTable:
    values: np.ndarray
    visits: np.ndarray
    coder: str
    discount: float
    meta: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)

    @property
    def visited(self):
        return self.visits > 0

    @property
    def unvisited(self):
        return ~self.visited

    def visit_histogram(self):
        """Counts of (state, action) entries per visit count."""
        return np.bincount(self.visits.ravel())

    def to_csv(self, path):
        write_q_csv(path, self.values, self.visits)


def write_q_csv(path, values, visits):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "action", "Q", "visits"])
        for (s, u), q in np.ndenumerate(values):
            w.writerow([s, u, f"{q:.17g}", int(visits[s, u])])


@dataclass(frozen=True)
class LearningConfig:
    sigma: Sequence[float]
    steps: int
    N: int = 0
    seed: int = 0
    checkpoints: Sequence[int] = ()
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim != 1 or np.any(s <= 0) or abs(s.sum() - 1.0) > 1e-9:
            raise ValueError("exploration probabilities must be positive and sum to 1")
        if self.steps < 1 or self.N < 0:
            raise ValueError("steps must be >= 1 and N >= 0")


# --------------------------------------------------------------------------
# Core recursion


def q_updates(n_states: int, n_actions: int, discount: float, s, u, c, s_next, checkpoints=(),
              check_bounds: Optional[float] = None):
    """Run Q_{k+1}(s,u) = (1 - 1/n) Q_k(s,u) + (1/n)(c + beta min_v Q_k(s', v)).

    ``s, u, c, s_next`` have shape (P, K) for P independent learners; n is
    the visit count of (s, u) including the current visit. Returns
    (Q, visits, snapshots) with snapshots taken after the listed update
    counts. ``check_bounds`` asserts 0 <= Q <= value after every update.
    """
    s, u, s_next = (np.atleast_2d(np.asarray(a, dtype=np.int64)) for a in (s, u, s_next))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    P, K = s.shape
    Q = np.zeros((P, n_states, n_actions))
    visits = np.zeros((P, n_states, n_actions), dtype=np.int64)
    rows = np.arange(P)
    marks = set(int(k) for k in checkpoints)
    snaps = {}
    for k in range(K):
        sk, uk = s[:, k], u[:, k]
        target = c[:, k] + discount * Q[rows, s_next[:, k]].min(axis=1)
        n = visits[rows, sk, uk] + 1
        visits[rows, sk, uk] = n
        alpha = 1.0 / n
        Q[rows, sk, uk] = (1.0 - alpha) * Q[rows, sk, uk] + alpha * target
        if check_bounds is not None and (Q[rows, sk, uk].min() < 0 or Q[rows, sk, uk].max() > check_bounds):
            raise AssertionError(f"Q left [0, {check_bounds}] at update {k}")
        if k + 1 in marks:
            snaps[k + 1] = (Q.copy(), visits.copy())
    return Q, visits, snaps


# --------------------------------------------------------------------------
# Open-loop environments


def _simulate_pomdp(pomdp: Pomdp, qy: Quantizer, sigma, steps, seeds):
    """Observation indices (P, steps+1), actions (P, steps), realized costs (P, steps).

    Each seed draws its noise from its own streams; the transition is
    stepped for all seeds at once.
    """
    n_u = pomdp.n_actions
    kT, kO = pomdp.transition.noise_dim, pomdp.channel.noise_dim
    actions = np.stack([stream(sd, "learn", "policy").choice(n_u, size=steps, p=sigma) for sd in seeds])
    x = np.concatenate([pomdp.prior.sample(1, stream(sd, "learn", "prior")) for sd in seeds])
    xi_T = np.stack([stream(sd, "learn", "transition").random((steps, kT)) for sd in seeds], axis=1)
    xi_O = np.stack([stream(sd, "learn", "channel").random((steps + 1, kO)) for sd in seeds])
    P = len(seeds)
    xs = np.empty((P, steps + 1, x.shape[1]))
    xs[:, 0] = x
    step = pomdp.transition.step
    for t in range(steps):
        x = step(x, actions[:, t], xi_T[t])
        xs[:, t + 1] = x
    flat = xs.reshape(-1, x.shape[1])
    if not np.all(pomdp.state_box.contains(flat)):
        raise ModelInconsistencyError(f"{pomdp.transition.name} left the state box during learning")
    ys = pomdp.channel.sample_fn(flat, xi_O.reshape(-1, kO))
    costs = pomdp.cost(xs[:, :-1].reshape(-1, x.shape[1]), actions.ravel())
    return (quantize(qy, ys).reshape(P, steps + 1), actions,
            np.asarray(costs, dtype=float).reshape(P, steps))


def _simulate_hmm(hmm: FiniteHmm, sigma, steps, seeds):
    """Same outputs as :func:`_simulate_pomdp` with the hmm as environment."""
    actions = np.stack([stream(sd, "learn", "policy").choice(hmm.n_u, size=steps, p=sigma) for sd in seeds])
    rngs = [stream(sd, "learn", "hmm") for sd in seeds]
    cum_prior = np.cumsum(hmm.prior)
    x0 = [min(int((r.random() > cum_prior).sum()), hmm.n_x - 1) for r in rngs]
    xi = np.stack([r.random(steps) for r in rngs])
    xi_y = np.stack([r.random(steps + 1) for r in rngs])
    cum_T = np.cumsum(hmm.transition, axis=-1)
    x = np.empty((len(seeds), steps + 1), dtype=np.int64)
    x[:, 0] = x0
    for t in range(steps):
        x[:, t + 1] = (xi[:, t, None] > cum_T[x[:, t], actions[:, t]]).sum(axis=1)
    np.minimum(x, hmm.n_x - 1, out=x)
    cum_O = np.cumsum(hmm.channel, axis=-1)
    ys = np.minimum((xi_y[..., None] > cum_O[x]).sum(axis=-1), hmm.n_y - 1)
    return ys, actions, hmm.cost[x[:, :-1], actions]


def _paths(env, qy, sigma, steps, seeds):
    if isinstance(env, FiniteHmm):
        return _simulate_hmm(env, sigma, steps, seeds)
    return _simulate_pomdp(env, qy, sigma, steps, seeds)


def _tables(Q, visits, snaps, coder, discount, meta, seeds, config, n_states):
    tables = []
    for p, sd in enumerate(seeds):
        cps = {k: (q[p], v[p]) for k, (q, v) in snaps.items()}
        table = QTable(Q[p], visits[p], coder, discount, dict(meta, seed=int(sd)), cps)
        if config.checkpoint_dir is not None:
            d = Path(config.checkpoint_dir)
            d.mkdir(parents=True, exist_ok=True)
            for k, (q, v) in cps.items():
                write_q_csv(d / f"q_{coder}_seed{sd}_step{k}.csv", q, v)
        tables.append(table)
    return tables


# --------------------------------------------------------------------------
# Public entry points


def q_learn_finite_memory(env, qy: Optional[Quantizer], config: LearningConfig, seeds=None,
                          discount: Optional[float] = None, check_bounds: bool = False):
    """Q-learning on window codes of the last N+1 quantized observations and N actions.

    ``env`` is the continuous model (observations quantized with ``qy``) or
    a :class:`FiniteHmm` acting as its own environment. Updates start once
    the window is full. Pass ``seeds`` to run several learners; a list of
    tables is then returned, otherwise a single table for ``config.seed``.
    """
    single = seeds is None
    seeds = [config.seed] if single else list(seeds)
    sigma = np.asarray(config.sigma, dtype=float)
    if isinstance(env, FiniteHmm):
        n_y, n_u, beta, c_sup = env.n_y, env.n_u, env.discount, float(np.abs(env.cost).max())
    else:
        if qy is None:
            raise ValueError("an observation quantizer is required")
        n_y, n_u, beta, c_sup = qy.n_bins, env.n_actions, env.discount, env.cost.sup_norm
    beta = beta if discount is None else discount
    if sigma.size != n_u:
        raise ValueError(f"sigma has {sigma.size} entries for {n_u} actions")
    N, steps = config.N, config.steps
    if steps <= N:
        raise ValueError("steps must exceed the window length")
    ys, us, cs = _paths(env, qy, sigma, steps, seeds)
    # window j ends at time t = j + N, for t = N..steps
    n_win = steps - N + 1
    lag_y = np.stack([ys[:, k:k + n_win] for k in range(N + 1)], axis=-1)
    lag_u = np.stack([us[:, k:k + n_win] for k in range(N)], axis=-1) if N else \
        np.zeros(lag_y.shape[:2] + (0,), dtype=np.int64)
    codes = encode(lag_y, lag_u, n_y, n_u)
    S = window_size(n_y, n_u, N)
    s, s_next = codes[:, :-1], codes[:, 1:]
    act, cost = us[:, N:], cs[:, N:]
    Q, visits, snaps = q_updates(S, n_u, beta, s, act, cost, s_next, config.checkpoints,
                                 c_sup / (1 - beta) + 1e-12 if check_bounds else None)
    meta = dict(kind="window", N=N, steps=steps, n_y=n_y, n_u=n_u)
    tables = _tables(Q, visits, snaps, "window", beta, meta, seeds, config, S)
    return tables[0] if single else tables


def q_learn_belief(hmm: FiniteHmm, grid: SimplexGrid, config: LearningConfig, env=None, seeds=None,
                   check_bounds: bool = False):
    """Q-learning on the nearest lattice point of the running discrete filter.

    The filter runs on ``hmm`` alongside the environment: ``env`` (the
    continuous model, observations quantized with ``hmm.quantizer_y``) or,
    by default, the hmm itself.
    """
    single = seeds is None
    seeds = [config.seed] if single else list(seeds)
    sigma = np.asarray(config.sigma, dtype=float)
    if grid.n != hmm.n_x:
        raise ValueError("grid dimension does not match the hmm")
    steps = config.steps
    if env is None:
        env = hmm
    elif hmm.quantizer_y is None:
        raise ValueError("hmm has no observation quantizer for the continuous environment")
    ys, us, cs = _paths(env, hmm.quantizer_y, sigma, steps, seeds)
    P = len(seeds)
    states = np.empty((P, steps + 1), dtype=np.int64)
    b, _ = correct(hmm, np.repeat(hmm.prior[None, :], P, 0), ys[:, 0])
    states[:, 0] = nearest_simplex_point(grid, b / b.sum(1, keepdims=True))
    for t in range(steps):
        b, _ = filter_update(hmm, b, us[:, t], ys[:, t + 1])
        b = b / b.sum(1, keepdims=True)
        states[:, t + 1] = nearest_simplex_point(grid, b)
    c_sup = float(np.abs(hmm.cost).max()) if isinstance(env, FiniteHmm) else env.cost.sup_norm
    Q, visits, snaps = q_updates(grid.size, hmm.n_u, hmm.discount, states[:, :-1], us, cs, states[:, 1:],
                                 config.checkpoints, c_sup / (1 - hmm.discount) + 1e-12 if check_bounds else None)
    meta = dict(kind="belief", m=grid.m, steps=steps)
    tables = _tables(Q, visits, snaps, "belief", hmm.discount, meta, seeds, config, grid.size)
    return tables[0] if single else tables


def greedy_policy(q: QTable, warmup: int = 0):
    """Argmin over visited actions (ties to the smallest index).

    States with no visited action get ``warmup``; returns (policy, flags)
    where ``flags`` marks those states.
    """
    masked = np.where(q.visited, q.values, np.inf)
    policy = masked.argmin(axis=1)
    none = ~q.visited.any(axis=1)
    policy[none] = warmup
    return policy, none


def sup_norm_diff(q: QTable, reference) -> tuple:
    """(max |Q - ref| over visited entries, max over all entries)."""
    reference = np.asarray(reference, dtype=float)
    if reference.shape != q.values.shape:
        raise ValueError(f"shape mismatch: {q.values.shape} vs {reference.shape}")
    d = np.abs(q.values - reference)
    vis = float(d[q.visited].max()) if q.visited.any() else 0.0
    return vis, float(d.max())
