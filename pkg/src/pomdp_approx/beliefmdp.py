"""Belief MDP on a simplex lattice, value iteration, and the belief-tracking controller."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .discretize import FiniteHmm, correct, filter_update
from .quantize import SimplexGrid, nearest_simplex_point


@dataclass(frozen=True, eq=False)
class BeliefMdp:
    """Finite MDP whose states are lattice beliefs.

    ``succ[z, u, y]`` is the grid index reached after observing ``y`` and
    ``prob[z, u, y]`` its probability; zero-probability branches point at the
    projected prediction.
    """

    hmm: FiniteHmm
    grid: SimplexGrid
    cost: np.ndarray
    succ: np.ndarray
    prob: np.ndarray

    @property
    def transitions(self):
        return self.succ, self.prob

    def transition_row(self, z, u):
        """Aggregated successor distribution of (z, u) as {grid index: mass}."""
        row = {}
        for s, p in zip(self.succ[z, u], self.prob[z, u]):
            if p > 0:
                row[int(s)] = row.get(int(s), 0.0) + float(p)
        return row


def build_belief_mdp(hmm: FiniteHmm, grid: SimplexGrid) -> BeliefMdp:
    if grid.n != hmm.n_x:
        raise ValueError(f"grid dimension {grid.n} does not match {hmm.n_x} hidden states")
    Z = grid.points
    G = Z.shape[0]
    succ = np.empty((G, hmm.n_u, hmm.n_y), dtype=np.int64)
    prob = np.empty((G, hmm.n_u, hmm.n_y))
    for u in range(hmm.n_u):
        pred = Z @ hmm.transition[:, u, :]
        for y in range(hmm.n_y):
            post, lik = correct(hmm, pred, np.full(G, y))
            succ[:, u, y] = nearest_simplex_point(grid, _renormalized(post))
            prob[:, u, y] = lik
    prob /= prob.sum(axis=2, keepdims=True)
    return BeliefMdp(hmm, grid, Z @ hmm.cost, succ, prob)


def _renormalized(b):
    return b / b.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ValueSolution:
    V: np.ndarray
    Q: np.ndarray
    policy: np.ndarray
    iterations: int
    residual: float
    error_bound: float
    converged: bool
    discount: float

    def to_csv(self, path, extra=None):
        """Columns: state, V, action, then any ``extra`` columns (name -> array)."""
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state", "V", "action", *extra])
            for s in range(self.V.size):
                w.writerow([s, f"{self.V[s]:.17g}", int(self.policy[s]), *(v[s] for v in extra.values())])


def _expected_next(transitions, V):
    if isinstance(transitions, tuple):
        succ, prob = transitions
        return (prob * V[succ]).sum(axis=-1)
    return transitions @ V


def bellman(costs, transitions, discount, V, workers=1):
    """One application of the Bellman operator; returns (TV, Q)."""
    if workers > 1 and costs.shape[0] > 1:
        chunks = np.array_split(np.arange(costs.shape[0]), workers)

        def part(idx):
            if isinstance(transitions, tuple):
                sub = (transitions[0][idx], transitions[1][idx])
            else:
                sub = transitions[idx]
            return costs[idx] + discount * _expected_next(sub, V)

        with ThreadPoolExecutor(workers) as pool:
            Q = np.concatenate(list(pool.map(part, chunks)))
    else:
        Q = costs + discount * _expected_next(transitions, V)
    return Q.min(axis=1), Q


def value_iteration(costs, transitions, discount: float, tol: float = 1e-8, max_iter: int = 100_000,
                    workers: int = 1) -> ValueSolution:
    """Value iteration from V = 0.

    ``transitions`` is either a dense (S, U, S) array or a sparse pair
    ``(succ, prob)`` of shape (S, U, K). Stops once the sweep difference is
    at most tol (1 - beta) / (2 beta), which guarantees ||V - V*|| <= tol.
    """
    if not 0.0 < discount < 1.0:
        raise ValueError("discount must lie in (0, 1)")
    costs = np.asarray(costs, dtype=float)
    V = np.zeros(costs.shape[0])
    threshold = tol * (1.0 - discount) / (2.0 * discount)
    diff = np.inf
    Q = costs.copy()
    it = 0
    while it < max_iter:
        V_new, Q = bellman(costs, transitions, discount, V, workers)
        it += 1
        diff = float(np.abs(V_new - V).max()) if V.size else 0.0
        V = V_new
        if diff <= threshold:
            break
    bound = 2.0 * discount * diff / (1.0 - discount)
    return ValueSolution(V, Q, Q.argmin(axis=1), it, diff, bound, diff <= threshold, discount)


def solve_belief_mdp(bmdp: BeliefMdp, tol: float = 1e-8, max_iter: int = 100_000, workers: int = 1):
    return value_iteration(bmdp.cost, bmdp.transitions, bmdp.hmm.discount, tol, max_iter, workers)


def initial_value(bmdp: BeliefMdp, solution: ValueSolution, prior=None) -> float:
    """Optimal value from a prior: average over the first observation of V at the projected posterior."""
    hmm = bmdp.hmm
    prior = hmm.prior if prior is None else np.asarray(prior, dtype=float)
    post, lik = correct(hmm, np.repeat(prior[None, :], hmm.n_y, 0), np.arange(hmm.n_y))
    idx = nearest_simplex_point(bmdp.grid, _renormalized(post))
    return float((lik * solution.V[idx]).sum() / lik.sum())


class BeliefController:
    """Tracks the discrete filter from the quantized prior and plays policy(nearest grid point)."""

    def __init__(self, hmm: FiniteHmm, solution: ValueSolution, grid: SimplexGrid):
        if solution.V.size != grid.size:
            raise ValueError("solution does not match the grid")
        self.hmm = hmm
        self.policy = solution.policy
        self.grid = grid
        self.belief = None
        self.last_u = None

    def reset(self, n_paths, rng=None):
        self.belief = np.repeat(self.hmm.prior[None, :], n_paths, axis=0)
        self.last_u = None

    def act(self, y):
        yi = self.hmm.observe_index(y)
        if self.last_u is None:
            self.belief, _ = correct(self.hmm, self.belief, yi)
        else:
            self.belief, _ = filter_update(self.hmm, self.belief, self.last_u, yi)
        self.belief = _renormalized(self.belief)
        u = self.policy[nearest_simplex_point(self.grid, self.belief)]
        self.last_u = u
        return u

    def played(self, u):
        self.last_u = np.asarray(u)


def belief_controller(hmm: FiniteHmm, solution: ValueSolution, grid: SimplexGrid) -> BeliefController:
    return BeliefController(hmm, solution, grid)
