"""Filter-stability diagnostics and closed-form error bounds.

Total variation is the L1 norm throughout (values in [0, 2]).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .discretize import FiniteHmm, correct, degraded_channel, filter_update, predictor_update
from .markov import (dobrushin_finite, hilbert_metric, hilbert_metric_rows, mixing_constant,
                     tv_distance)
from .seeding import stream

HILBERT_TV = 2.0 / np.log(3.0)


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo quantity with its standard error, sample count and a provenance label."""

    value: float
    stderr: float
    n: int
    label: str = ""


# --------------------------------------------------------------------------
# Coefficients


def hilbert_rate(eps_u, eps) -> float:
    """(1 - e_u^2 e)/(1 + e_u^2 e); for a vector of per-action constants the max is returned."""
    eps_u = np.atleast_1d(np.asarray(eps_u, dtype=float))
    if np.any((eps_u < 0) | (eps_u > 1)) or not 0.0 <= eps <= 1.0:
        raise ValueError("mixing constants must lie in [0, 1]")
    k = eps_u**2 * eps
    return float(((1.0 - k) / (1.0 + k)).max())


def channel_lower_bound(hmm: FiniteHmm) -> float:
    """Largest e with g >= e, g being the channel density w.r.t. the uniform law on symbols."""
    return float(hmm.n_y * hmm.channel.min())


def action_mixing(hmm: FiniteHmm) -> np.ndarray:
    return np.array([mixing_constant(hmm.transition[:, u, :]) for u in range(hmm.n_u)])


def min_action_dobrushin(hmm: FiniteHmm) -> float:
    return min(dobrushin_finite(hmm.transition[:, u, :]) for u in range(hmm.n_u))


def dobrushin_alpha(hmm: FiniteHmm) -> float:
    """(1 - min_u delta(T_u)) (2 - delta(O))."""
    return (1.0 - min_action_dobrushin(hmm)) * (2.0 - dobrushin_finite(hmm.channel))


def dobrushin_grid_estimate(pomdp, qy, x_points, n_samples: int, seed: int) -> Estimate:
    """Coefficient of the quantized channel restricted to ``x_points``.

    Coarsening the output and restricting the inputs can only raise the
    coefficient, so this over-estimates the continuous channel's value.
    """
    O = degraded_channel(pomdp, qy, x_points, n_samples, seed)
    return Estimate(dobrushin_finite(O), float("nan"), n_samples, "grid upper estimate")


def hilbert_constant(hmm: FiniteHmm, pi_star) -> float:
    """Certified constant K = (2/ln 3) sup h(first predicted beliefs).

    The supremum runs over all priors, actions and first observations of
    h(T_u^T z, T_u^T correct(pi_star, y0)); Hilbert balls are convex so
    it is attained at the simplex vertices.
    """
    pi_star = np.asarray(pi_star, dtype=float)
    post, lik = correct(hmm, np.repeat(pi_star[None, :], hmm.n_y, 0), np.arange(hmm.n_y))
    worst = 0.0
    for u in range(hmm.n_u):
        T = hmm.transition[:, u, :]
        ref = post[lik > 0] @ T
        for row in T:
            worst = max(worst, float(hilbert_metric_rows(np.broadcast_to(row, ref.shape), ref).max()))
    return HILBERT_TV * worst


# --------------------------------------------------------------------------
# Monte Carlo estimates


def _draw_actions(rng, sigma, shape):
    return rng.choice(len(sigma), size=shape, p=sigma)


def _draw_from(rng, probs):
    """One categorical draw per row of ``probs``."""
    cum = np.cumsum(probs, axis=1)
    xi = rng.random(probs.shape[0])
    return np.minimum((xi[:, None] > cum).sum(axis=1), probs.shape[1] - 1)


def estimate_Lt(hmm: FiniteHmm, pi_star, explore, N: int, t: int, n_paths: int, seed: int,
                block: int = 1000) -> Estimate:
    """Mean L1 distance between time-(t+N) posteriors started at the true predictor and at pi_star.

    Actions are drawn i.i.d. from the probability vector ``explore``; the
    value is an estimate under that policy, not a supremum over policies.
    Paths are simulated in blocks with their own derived streams.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    sigma = np.asarray(explore, dtype=float)
    pi_star = np.asarray(pi_star, dtype=float)
    out = []
    for b, start in enumerate(range(0, n_paths, block)):
        P = min(block, n_paths - start)
        rng = stream(seed, "Lt", b)
        x = _draw_from(rng, np.repeat(hmm.prior[None, :], P, 0))
        pred = np.repeat(hmm.prior[None, :], P, 0)
        for _ in range(t):
            y = _draw_from(rng, hmm.channel[x])
            post, _ = correct(hmm, pred, y)
            u = _draw_actions(rng, sigma, P)
            pred = predictor_update(hmm, post, u)
            x = _draw_from(rng, hmm.transition[x, u])
        y = _draw_from(rng, hmm.channel[x])
        a, _ = correct(hmm, pred, y)
        s, _ = correct(hmm, np.repeat(pi_star[None, :], P, 0), y)
        for _ in range(N):
            u = _draw_actions(rng, sigma, P)
            x = _draw_from(rng, hmm.transition[x, u])
            y = _draw_from(rng, hmm.channel[x])
            a, _ = filter_update(hmm, a, u, y)
            s, _ = filter_update(hmm, s, u, y)
        out.append(tv_distance(a, s))
    d = np.concatenate(out)
    return Estimate(float(d.mean()), float(d.std(ddof=1) / np.sqrt(d.size)), int(d.size),
                    "estimate under exploration policy")


def estimate_uniform_LTV(hmm: FiniteHmm, pi_star, N: int, budget: int, seed: int) -> Estimate:
    """Largest paired-filter distance found over random priors and sequences.

    Draw i uses its own derived stream, so the result is a running maximum
    that is nondecreasing in ``budget``. Every draw's sequence is also run
    from all simplex vertices. Pairs where either filter meets a zero
    likelihood are skipped. The result is a lower estimate of the supremum.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    pi_star = np.asarray(pi_star, dtype=float)
    n_x = hmm.n_x
    best = 0.0
    for i in range(budget):
        rng = stream(seed, "uniform-ltv", i)
        z = rng.dirichlet(np.ones(n_x))
        ys = rng.integers(hmm.n_y, size=N + 1)
        us = rng.integers(hmm.n_u, size=N)
        starts = np.vstack([z[None, :], np.eye(n_x), pi_star[None, :]])
        b, lik = correct(hmm, starts, np.full(len(starts), ys[0]))
        ok = lik > 0
        for k in range(N):
            b, lik = filter_update(hmm, b, np.full(len(starts), us[k]), np.full(len(starts), ys[k + 1]))
            ok &= lik > 0
        if not ok[-1]:
            continue
        d = tv_distance(b[:-1], b[-1][None, :])[ok[:-1]]
        if d.size:
            best = max(best, float(d.max()))
    return Estimate(best, float("nan"), budget, "lower estimate of the supremum")


# --------------------------------------------------------------------------
# Closed-form bounds


def bound_hidden_disc(K_O: float, K_c: float, K_T: float, discount: float, L_X: float) -> float:
    b = discount
    if b * K_T >= 1.0:
        raise PreconditionError(f"hidden-state bound needs beta*K_T < 1, got {b * K_T:g}")
    return 2 * K_O * L_X / ((1 - b) ** 2 * (1 - b * K_T)) + 2 * K_c * L_X / ((1 - b) * (1 - b * K_T))


def bound_obs_disc(c_sup: float, discount: float, alpha_Y: float, L_Y: float) -> float:
    if min(c_sup, alpha_Y, L_Y) < 0 or not 0 < discount < 1:
        raise ValueError("arguments must be nonnegative and the discount in (0, 1)")
    return discount * c_sup * alpha_Y * L_Y / (1 - discount) ** 2


@dataclass(frozen=True)
class MainBound:
    value: float
    observation_term: float
    filter_term: float
    remainder: float
    truncation: int


def bound_main(c_sup: float, discount: float, alpha_Y: float, L_Y: float, L_t, T_trunc: Optional[int] = None,
               tail: float = 2.0) -> MainBound:
    """Observation term plus (2 c_sup/(1 - beta)) sum_t beta^t L_t.

    Terms with t >= ``T_trunc`` (default: len(L_t)) use ``tail`` in place of
    L_t; their contribution is reported as ``remainder`` and included in
    ``value``.
    """
    L_t = np.asarray(L_t, dtype=float)
    T = L_t.size if T_trunc is None else int(T_trunc)
    if T > L_t.size:
        raise ValueError("T_trunc exceeds the number of L_t values")
    if np.any((L_t < 0) | (L_t > 2)) or not 0 <= tail <= 2:
        raise ValueError("L_t values must lie in [0, 2]")
    b = discount
    obs = bound_obs_disc(c_sup, b, alpha_Y, L_Y)
    scale = 2 * c_sup / (1 - b)
    head = float((b ** np.arange(T) * L_t[:T]).sum())
    rem = scale * tail * b**T / (1 - b)
    filt = scale * head + rem
    return MainBound(obs + filt, obs, filt, rem, T)


def bound_dobrushin(c_sup: float, discount: float, alpha_Y: float, L_Y: float, alpha: float, N: int) -> float:
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    b = discount
    return c_sup / (1 - b) ** 2 * (b * alpha_Y * L_Y + 4 * alpha**N)


def bound_hilbert(c_sup: float, discount: float, r: float, K: float, N: int) -> float:
    if not 0 <= r < 1:
        raise PreconditionError(f"Hilbert bound needs 0 <= r < 1, got {r:g}")
    if N < 1:
        raise ValueError("Hilbert bound needs N >= 1")
    return 2 * c_sup * r ** (N - 1) * K / (1 - discount) ** 2


# --------------------------------------------------------------------------
# Report


@dataclass
class StabilityReport:
    delta_O: float
    delta_T: float
    alpha: float
    eps: float
    eps_u: np.ndarray
    r: float
    K: float
    L_t: list
    L_unif: Optional[Estimate]
    bounds: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def rows(self):
        yield ("delta_O", self.delta_O, "", "", "exact on surrogate channel")
        yield ("delta_T", self.delta_T, "", "", "exact, min over actions")
        yield ("alpha", self.alpha, "", "", "exact")
        yield ("eps", self.eps, "", "", "exact")
        for u, e in enumerate(self.eps_u):
            yield (f"eps_u[{u}]", e, "", "", "exact")
        yield ("r", self.r, "", "", "exact")
        yield ("K", self.K, "", "", "certified")
        for t, est in enumerate(self.L_t):
            yield (f"L_t[{t}]", est.value, est.stderr, est.n, est.label)
        if self.L_unif is not None:
            yield ("L_unif", self.L_unif.value, "", self.L_unif.n, self.L_unif.label)
        for name, (value, label) in self.bounds.items():
            yield (f"bound_{name}", value, "", "", label)

    def to_csv(self, path=None):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["quantity", "value", "stderr", "n", "label"])
        for row in self.rows():
            w.writerow([row[0], _fmt(row[1]), _fmt(row[2]), row[3], row[4]])
        text = out.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_text(self):
        lines = []
        for name, value, err, n, label in self.rows():
            extra = f" +- {_fmt(err)} (n={n})" if err != "" and not np.isnan(err) else ""
            lines.append(f"{name:>14s} = {_fmt(value)}{extra}  [{label}]")
        for k, v in self.meta.items():
            lines.append(f"# {k}: {v}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, str):
        return v
    return f"{float(v):.10g}"


def stability_report(hmm: FiniteHmm, pi_star, N: int, explore, n_paths: int, seed: int, *,
                     c_sup: float, alpha_Y: float, L_Y: float, t_max: int = 20,
                     uniform_budget: int = 0, hidden: Optional[dict] = None) -> StabilityReport:
    """Coefficients, L_t estimates for t < ``t_max`` and every applicable bound.

    ``hidden`` optionally carries K_O, K_c, K_T and L_X for the
    hidden-state bound.
    """
    pi_star = np.asarray(pi_star, dtype=float)
    dO = dobrushin_finite(hmm.channel)
    dT = min_action_dobrushin(hmm)
    alpha = (1 - dT) * (2 - dO)
    eps = channel_lower_bound(hmm)
    eps_u = action_mixing(hmm)
    r = hilbert_rate(eps_u, min(eps, 1.0))
    K = hilbert_constant(hmm, pi_star)
    b = hmm.discount
    L_t = [estimate_Lt(hmm, pi_star, explore, N, t, n_paths, seed) for t in range(t_max)]
    L_unif = estimate_uniform_LTV(hmm, pi_star, N, uniform_budget, seed) if uniform_budget else None
    bounds = {}
    main = bound_main(c_sup, b, alpha_Y, L_Y, np.clip([e.value for e in L_t], 0, 2), t_max)
    bounds["obs"] = (bound_obs_disc(c_sup, b, alpha_Y, L_Y), "closed form")
    bounds["main"] = (main.value, f"L_t estimated under exploration; tail remainder {main.remainder:.3g}")
    bounds["dobrushin"] = (bound_dobrushin(c_sup, b, alpha_Y, L_Y, alpha, N), "closed form")
    if r < 1 and N >= 1 and np.isfinite(K):
        bounds["hilbert"] = (bound_hilbert(c_sup, b, r, K, N), "closed form, certified K")
    if hidden is not None:
        try:
            bounds["hidden"] = (bound_hidden_disc(hidden["K_O"], hidden["K_c"], hidden["K_T"], b,
                                                  hidden["L_X"]), "closed form")
        except PreconditionError as exc:
            bounds["hidden"] = (float("nan"), str(exc))
    meta = dict(N=N, n_paths=n_paths, seed=seed, explore=[float(v) for v in np.asarray(explore, dtype=float)],
                caveat="L_t uses the exploration policy in place of the supremum over policies")
    return StabilityReport(dO, dT, alpha, eps, eps_u, r, K, L_t, L_unif, bounds, meta)


__all__ = ["dobrushin_finite", "mixing_constant", "hilbert_metric", "tv_distance", "hilbert_rate",
           "channel_lower_bound", "action_mixing", "min_action_dobrushin", "dobrushin_alpha",
           "dobrushin_grid_estimate", "hilbert_constant", "estimate_Lt", "estimate_uniform_LTV",
           "bound_hidden_disc", "bound_obs_disc", "bound_main", "bound_dobrushin", "bound_hilbert",
           "MainBound", "Estimate", "StabilityReport", "stability_report", "PreconditionError"]
