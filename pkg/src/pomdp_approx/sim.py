"""Monte Carlo evaluation of controllers on the true model.

Paths are simulated in fixed-size blocks; block b uses the streams derived
from (seed, "block", b), so results do not depend on how many workers run
the blocks, and two controllers evaluated with the same seed face the same
exogenous noise (common random numbers).
"""

from __future__ import annotations

import copy
import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import Pomdp, Rollout

BLOCK = 500


@dataclass(frozen=True, eq=False)
class EvalReport:
    controller_id: str
    returns: np.ndarray
    horizon: int
    truncation_bound: float
    seed: int

    @property
    def n_paths(self):
        return self.returns.size

    @property
    def mean(self):
        return float(self.returns.mean())

    @property
    def stderr(self):
        if self.returns.size < 2:
            return float("nan")
        return float(self.returns.std(ddof=1) / np.sqrt(self.returns.size))


def horizon_for(discount: float, c_sup: float, tol: float) -> int:
    """Smallest H with beta^H c_sup / (1 - beta) <= tol."""
    if c_sup == 0:
        return 1
    return max(1, int(np.ceil(np.log(tol * (1 - discount) / c_sup) / np.log(discount))))


def _run_block(pomdp, controller, horizon, size, seed, b, burn_in=0, burn_in_action=0):
    roll = Rollout(pomdp, size, seed, key=("block", b))
    controller.reset(size, roll.policy_rng)
    x, y = roll.initial()
    total = np.zeros(size)
    forced = np.full(size, burn_in_action, dtype=np.int64)
    for _ in range(burn_in):
        controller.act(y)
        if hasattr(controller, "played"):
            controller.played(forced)
        x = roll.advance(x, forced)
        y = roll.observe(x)
    w = 1.0
    for t in range(horizon):
        u = np.asarray(controller.act(y), dtype=np.int64)
        total += w * pomdp.cost(x, u)
        w *= pomdp.discount
        if t + 1 < horizon:
            x = roll.advance(x, u)
            y = roll.observe(x)
    return total


def evaluate_policy(pomdp: Pomdp, controller, horizon: int, n_paths: int, seed: int,
                    workers: int = 1, controller_id: str = "controller", block: int = BLOCK,
                    burn_in: int = 0, burn_in_action: int = 0) -> EvalReport:
    """Average of sum_{t<H} beta^t c(x_{B+t}, u_{B+t}) over ``n_paths`` rollouts.

    During the first B = ``burn_in`` steps the controller sees every
    observation but ``burn_in_action`` is played (and reported back through
    ``controller.played`` when the controller has it); costs are counted
    from time B. Each block gets a deep copy of ``controller`` so
    controllers may keep per-path state.
    """
    if horizon < 1 or n_paths < 1:
        raise ValueError("horizon and n_paths must be >= 1")
    sizes = [min(block, n_paths - s) for s in range(0, n_paths, block)]

    def job(b):
        return _run_block(pomdp, copy.deepcopy(controller), horizon, sizes[b], seed, b, burn_in, burn_in_action)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    trunc = pomdp.discount**horizon * pomdp.cost.sup_norm / (1 - pomdp.discount)
    return EvalReport(controller_id, np.concatenate(parts), horizon, float(trunc), int(seed))


@dataclass(frozen=True)
class Gap:
    name: str
    reference: str
    mean: float
    stderr: float

    @property
    def interval(self):
        return self.mean - 3 * self.stderr, self.mean + 3 * self.stderr


@dataclass(eq=False)
class ComparisonReport:
    reports: dict
    gaps: list
    stability: Optional[object] = None
    bounds: dict = field(default_factory=dict)

    def paths_csv(self):
        """One row per (controller, path): controller, path, return."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["controller", "path", "return"])
        for name, rep in self.reports.items():
            for i, r in enumerate(rep.returns):
                w.writerow([name, i, f"{r:.17g}"])
        return out.getvalue()

    def summary_csv(self):
        """One row per controller: mean, stderr, paths, horizon, truncation bound, gap to the reference."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["controller", "mean", "stderr", "n_paths", "horizon", "truncation",
                    "reference", "gap", "gap_stderr", "gap_lo3", "gap_hi3"])
        gaps = {g.name: g for g in self.gaps}
        for name, rep in self.reports.items():
            g = gaps.get(name)
            tail = [g.reference, _f(g.mean), _f(g.stderr), _f(g.interval[0]), _f(g.interval[1])] if g else [""] * 5
            w.writerow([name, _f(rep.mean), _f(rep.stderr), rep.n_paths, rep.horizon, _f(rep.truncation_bound),
                        *tail])
        return out.getvalue()


def _f(v):
    return f"{v:.12g}"


def paired_gap(a: EvalReport, b: EvalReport) -> Gap:
    d = a.returns - b.returns
    se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else float("nan")
    return Gap(a.controller_id, b.controller_id, float(d.mean()), se)


def compare(pomdp: Pomdp, controllers, stability=None, horizon: int = 100, n_paths: int = 1000, seed: int = 0,
            reference: Optional[str] = None, bounds: Optional[dict] = None, workers: int = 1,
            burn_in: int = 0, burn_in_action: int = 0) -> ComparisonReport:
    """Evaluate named controllers under common random numbers.

    ``controllers`` is a dict name -> controller (or a list, named by
    position). Gaps are taken against ``reference`` or, by default, the
    controller with the lowest mean.
    """
    if isinstance(controllers, dict):
        items = list(controllers.items())
    else:
        items = [(f"c{i}", c) for i, c in enumerate(controllers)]
    if not items:
        raise ValueError("need at least one controller")
    reports = {name: evaluate_policy(pomdp, c, horizon, n_paths, seed, workers, name, BLOCK, burn_in, burn_in_action)
               for name, c in items}
    ref = reference or min(reports, key=lambda k: reports[k].mean)
    gaps = [paired_gap(rep, reports[ref]) for name, rep in reports.items()]
    return ComparisonReport(reports, gaps, stability, dict(bounds or {}))
