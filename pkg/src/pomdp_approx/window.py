"""Finite-window approximate MDP.

A window state holds the last N+1 observation indices and the N actions
between them. Codes are the mixed-radix rank of the chronological sequence
``y[t-N], u[t-N], y[t-N+1], ..., u[t-1], y[t]`` so the newest observation
varies fastest. Conditional beliefs start from a fixed prior ``pi_star``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .beliefmdp import ValueSolution, value_iteration
from .discretize import FiniteHmm, correct, filter_update
from .markov import stationary_distribution
from .quantize import quantize

DEFAULT_BUDGET = 1_000_000


class WindowBudgetError(ValueError):
    pass


def window_size(n_y: int, n_u: int, N: int) -> int:
    return n_y ** (N + 1) * n_u**N



def encode(ys, us, n_y: int, n_u: int) -> np.ndarray:
    """Codes of windows given ``ys`` (..., N+1) and ``us`` (..., N)."""
    ys = np.asarray(ys, dtype=np.int64)
    us = np.asarray(us, dtype=np.int64)
    N = ys.shape[-1] - 1
    code = ys[..., 0]
    for k in range(N):
        code = (code * n_u + us[..., k]) * n_y + ys[..., k + 1]
    return code


def decode(codes, N: int, n_y: int, n_u: int):
    """Inverse of :func:`encode`; returns (ys, us)."""
    codes = np.asarray(codes, dtype=np.int64)
    ys = np.empty(codes.shape + (N + 1,), dtype=np.int64)
    us = np.empty(codes.shape + (N,), dtype=np.int64)
    rest = codes.copy()
    for k in range(N, 0, -1):
        ys[..., k] = rest % n_y
        rest //= n_y
        us[..., k - 1] = rest % n_u
        rest //= n_u
    ys[..., 0] = rest
    return ys, us


def shift(codes, u, y, N: int, n_y: int, n_u: int):
    """Drop the oldest (y, u) pair and append action ``u`` and observation ``y``."""
    if N == 0:
        return np.broadcast_to(np.asarray(y, dtype=np.int64), np.shape(codes)).copy()
    keep = window_size(n_y, n_u, N) // (n_y * n_u)
    return (np.asarray(codes) % keep) * (n_u * n_y) + np.asarray(u) * n_y + np.asarray(y)


def conditional_belief(hmm: FiniteHmm, pi_star, ys, us):
    """Filter from ``pi_star`` over a window (or batch of windows).

    Returns the beliefs and a reachability flag that is false when some step
    had zero likelihood (the filter fallback was used).
    """
    ys = np.asarray(ys, dtype=np.int64)
    us = np.asarray(us, dtype=np.int64)
    single = ys.ndim == 1
    ys = np.atleast_2d(ys)
    us = us.reshape(ys.shape[0], -1)
    pi_star = np.asarray(pi_star, dtype=float)
    b, lik = correct(hmm, np.repeat(pi_star[None, :], ys.shape[0], 0), ys[:, 0])
    reachable = lik > 0
    for k in range(1, ys.shape[1]):
        b, lik = filter_update(hmm, b, us[:, k - 1], ys[:, k])
        reachable &= lik > 0
    if single:
        return b[0], bool(reachable[0])
    return b, reachable


@dataclass(frozen=True, eq=False)
class WindowMdp:
    hmm: FiniteHmm
    N: int
    pi_star: np.ndarray
    beliefs: np.ndarray
    cost: np.ndarray
    succ: np.ndarray
    prob: np.ndarray
    reachable: np.ndarray

    @property
    def n_states(self):
        return self.cost.shape[0]

    @property
    def transitions(self):
        return self.succ, self.prob

    def dense_transitions(self):
        S, U, _ = self.succ.shape
        P = np.zeros((S, U, S))
        for y in range(self.succ.shape[2]):
            np.add.at(P, (np.arange(S)[:, None], np.arange(U)[None, :], self.succ[:, :, y]), self.prob[:, :, y])
        return P

    def legend(self):
        return decode(np.arange(self.n_states), self.N, self.hmm.n_y, self.hmm.n_u)

    def to_csv(self, path, solution: ValueSolution = None):
        """One row per window code with its decoded observations/actions."""
        ys, us = self.legend()
        lag = [f"t-{self.N - k}" if k < self.N else "t" for k in range(self.N + 1)]
        head = ["code"] + [f"y_{s}" for s in lag] + [f"u_{s}" for s in lag[:-1]] + ["reachable"]
        if solution is not None:
            head += ["V", "action"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(head)
            for s in range(self.n_states):
                row = [s, *ys[s], *us[s], int(self.reachable[s])]
                if solution is not None:
                    row += [f"{solution.V[s]:.17g}", int(solution.policy[s])]
                w.writerow(row)


def exploration_stationary(hmm: FiniteHmm, sigma) -> np.ndarray:
    """Stationary law of the hidden chain when actions are drawn i.i.d. from ``sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    return stationary_distribution(np.einsum("u,xuy->xy", sigma, hmm.transition))


def build_window_mdp(hmm: FiniteHmm, pi_star=None, N: int = 0, budget: int = DEFAULT_BUDGET) -> WindowMdp:
    """Tables of the window MDP; ``pi_star`` defaults to the quantized prior."""
    if N < 0:
        raise ValueError("window length must be >= 0")
    S = window_size(hmm.n_y, hmm.n_u, N)
    if S > budget:
        raise WindowBudgetError(f"window MDP needs {S} states, budget allows {budget}")
    pi_star = hmm.prior if pi_star is None else np.asarray(pi_star, dtype=float)
    codes = np.arange(S)
    ys, us = decode(codes, N, hmm.n_y, hmm.n_u)
    b, reachable = conditional_belief(hmm, pi_star, ys, us)
    cost = b @ hmm.cost
    succ = np.empty((S, hmm.n_u, hmm.n_y), dtype=np.int64)
    prob = np.empty((S, hmm.n_u, hmm.n_y))
    for u in range(hmm.n_u):
        pred = b @ hmm.transition[:, u, :]
        prob[:, u, :] = pred @ hmm.channel
        for y in range(hmm.n_y):
            succ[:, u, y] = shift(codes, u, y, N, hmm.n_y, hmm.n_u)
    return WindowMdp(hmm, N, pi_star, b, cost, succ, prob, reachable)


def solve_window(mdp: WindowMdp, tol: float = 1e-8, max_iter: int = 100_000, workers: int = 1) -> ValueSolution:
    return value_iteration(mdp.cost, mdp.transitions, mdp.hmm.discount, tol, max_iter, workers)


class WindowController:
    """Plays ``warmup`` until N+1 observations are buffered, then the window policy."""

    def __init__(self, policy, N, n_y, n_u, quantizer_y=None, warmup=0):
        self.policy = np.asarray(policy)
        self.N, self.n_y, self.n_u = N, n_y, n_u
        self.quantizer_y = quantizer_y
        self.warmup = int(warmup)
        self.t = 0

    def reset(self, n_paths, rng=None):
        self.ys = np.zeros((n_paths, self.N + 1), dtype=np.int64)
        self.us = np.zeros((n_paths, self.N), dtype=np.int64)
        self.t = 0

    def _index(self, y):
        if self.quantizer_y is None:
            return np.asarray(y, dtype=np.int64).reshape(-1)
        return quantize(self.quantizer_y, np.atleast_2d(y))

    def act(self, y):
        self.ys = np.roll(self.ys, -1, axis=1)
        self.ys[:, -1] = self._index(y)
        if self.t < self.N:
            u = np.full(self.ys.shape[0], self.warmup, dtype=np.int64)
        else:
            u = self.policy[encode(self.ys, self.us, self.n_y, self.n_u)]
        if self.N:
            self.us = np.roll(self.us, -1, axis=1)
            self.us[:, -1] = u
        self.t += 1
        return u

    def played(self, u):
        """Record the action actually applied when it differs from the one returned."""
        if self.N:
            self.us[:, -1] = u


def window_controller(mdp: WindowMdp, solution: ValueSolution, warmup: int = 0) -> WindowController:
    return WindowController(solution.policy, mdp.N, mdp.hmm.n_y, mdp.hmm.n_u, mdp.hmm.quantizer_y, warmup)
