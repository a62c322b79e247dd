"""Experiment configuration and the pipelines behind the command-line subcommands.

Each pipeline writes its artifacts into the output directory and returns a
dict of artifact name -> path. All randomness flows from the master seed via
:func:`component_seed`, one stage name per pipeline step.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import __version__
from .beliefmdp import belief_controller, build_belief_mdp, initial_value, solve_belief_mdp
from .discretize import FiniteHmm, build_hidden_model, save_hmm
from .learn import (LearningConfig, greedy_policy, q_learn_belief, q_learn_finite_memory, sup_norm_diff,
                    write_q_csv)
from .model import BUILTIN_MODELS, Pomdp, builtin_model
from .quantize import simplex_grid, uniform_quantizer
from .seeding import component_seed
from .sim import compare, evaluate_policy, horizon_for
from .stability import estimate_Lt, bound_main, stability_report
from .window import build_window_mdp, exploration_stationary, solve_window, window_controller, window_size


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Strict):
    name: str
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def known(cls, v):
        if v not in BUILTIN_MODELS:
            raise ValueError(f"unknown model {v!r}; available: {', '.join(sorted(BUILTIN_MODELS))}")
        return v


class QuantizerSpec(_Strict):
    state_bins: int = Field(8, ge=1)
    obs_bins: int = Field(4, ge=1)
    simplex_m: int = Field(20, ge=1)
    n_samples: int = Field(20000, ge=1)
    exact: Optional[bool] = None


class WindowSpec(_Strict):
    N: int = Field(1, ge=0)
    pi_star: Union[str, List[float]] = "prior"
    budget: int = Field(1_000_000, ge=1)
    warmup: int = Field(0, ge=0)

    @field_validator("pi_star")
    @classmethod
    def choice(cls, v):
        if isinstance(v, str) and v not in ("prior", "stationary"):
            raise ValueError("pi_star must be 'prior', 'stationary' or a probability vector")
        return v


class SolverSpec(_Strict):
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(100_000, ge=1)


class LearningSpec(_Strict):
    steps: int = Field(100_000, ge=1)
    sigma: Optional[List[float]] = None
    checkpoints: List[int] = Field(default_factory=list)


class EvaluationSpec(_Strict):
    horizon: Optional[int] = Field(None, ge=1)
    truncation_tol: float = Field(1e-3, gt=0)
    n_paths: int = Field(2000, ge=2)
    burn_in: Optional[int] = Field(None, ge=0)
    burn_in_action: int = Field(0, ge=0)


class StabilitySpec(_Strict):
    n_paths: int = Field(2000, ge=2)
    t_max: int = Field(20, ge=1)
    uniform_budget: int = Field(200, ge=0)


class OracleSpec(_Strict):
    state_bins: int = Field(6, ge=1)
    obs_bins: int = Field(16, ge=1)
    simplex_m: int = Field(30, ge=1)


class SweepSpec(_Strict):
    M: List[int] = Field(default_factory=lambda: [2, 4])
    N: List[int] = Field(default_factory=lambda: [0, 1])
    m: List[int] = Field(default_factory=list)


class ExperimentConfig(_Strict):
    model: ModelSpec
    seed: int
    out: str = "runs/default"
    quantizer: QuantizerSpec = Field(default_factory=QuantizerSpec)
    window: WindowSpec = Field(default_factory=WindowSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    learning: LearningSpec = Field(default_factory=LearningSpec)
    evaluation: EvaluationSpec = Field(default_factory=EvaluationSpec)
    stability: StabilitySpec = Field(default_factory=StabilitySpec)
    oracle: OracleSpec = Field(default_factory=OracleSpec)
    sweep: SweepSpec = Field(default_factory=SweepSpec)

    @model_validator(mode="after")
    def seed_nonnegative(self):
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        return self


# --------------------------------------------------------------------------
# Config handling


def set_path(tree: dict, dotted: str, value):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValueError(f"override {dotted!r} descends into a non-mapping")
    node[keys[-1]] = value


def load_config(path, overrides=(), seed=None, out=None) -> ExperimentConfig:
    with open(path) as fh:
        tree = yaml.safe_load(fh) or {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        set_path(tree, key.strip(), yaml.safe_load(raw))
    if seed is not None:
        tree["seed"] = seed
    if out is not None:
        tree["out"] = out
    return ExperimentConfig.model_validate(tree)


def config_dict(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode="json")


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(cfg: ExperimentConfig, subcommand: str, artifacts: dict) -> Path:
    out = Path(cfg.out)
    digests = {}
    for name, p in sorted(artifacts.items()):
        digests[name] = dict(file=Path(p).name, sha256=hashlib.sha256(Path(p).read_bytes()).hexdigest())
    manifest = dict(subcommand=subcommand, version=__version__, seed=cfg.seed, config_sha256=config_hash(cfg),
                    config=config_dict(cfg), artifacts=digests)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


# --------------------------------------------------------------------------
# Shared construction


def make_model(cfg: ExperimentConfig) -> Pomdp:
    return builtin_model(cfg.model.name, cfg.model.params)


def make_hmm(cfg: ExperimentConfig, pomdp: Pomdp, state_bins=None, obs_bins=None, workers=1) -> FiniteHmm:
    q = cfg.quantizer
    qx = uniform_quantizer(pomdp.state_box, state_bins or q.state_bins)
    qy = uniform_quantizer(pomdp.obs_box, obs_bins or q.obs_bins)
    return build_hidden_model(pomdp, qx, qy, q.n_samples, component_seed(cfg.seed, "discretize"),
                              exact=q.exact, workers=workers)


def exploration(cfg: ExperimentConfig, n_u: int) -> np.ndarray:
    s = cfg.learning.sigma
    sigma = np.full(n_u, 1.0 / n_u) if s is None else np.asarray(s, dtype=float)
    if sigma.size != n_u:
        raise ValueError(f"learning.sigma has {sigma.size} entries for {n_u} actions")
    return sigma


def choose_pi_star(cfg: ExperimentConfig, hmm: FiniteHmm) -> np.ndarray:
    p = cfg.window.pi_star
    if p == "prior":
        return hmm.prior
    if p == "stationary":
        return exploration_stationary(hmm, exploration(cfg, hmm.n_u))
    v = np.asarray(p, dtype=float)
    if v.size != hmm.n_x or np.any(v < 0) or abs(v.sum() - 1) > 1e-9:
        raise ValueError("window.pi_star vector does not match the hidden discretization")
    return v


def horizon(cfg: ExperimentConfig, pomdp: Pomdp) -> int:
    e = cfg.evaluation
    return e.horizon or horizon_for(pomdp.discount, pomdp.cost.sup_norm, e.truncation_tol)


def burn_in(cfg: ExperimentConfig, windows) -> int:
    """Common burn-in: configured, or the longest window length compared."""
    b = cfg.evaluation.burn_in
    return max(windows) if b is None else b


def build_oracle(cfg: ExperimentConfig, pomdp: Pomdp, workers=1):
    """Belief-grid controller on a separate (usually finer-channel) discretization."""
    o = cfg.oracle
    hmm = make_hmm(cfg, pomdp, o.state_bins, o.obs_bins, workers)
    grid = simplex_grid(hmm.n_x, o.simplex_m)
    bmdp = build_belief_mdp(hmm, grid)
    sol = solve_belief_mdp(bmdp, cfg.solver.tol, cfg.solver.max_iter, workers)
    return belief_controller(hmm, sol, grid), initial_value(bmdp, sol)


# --------------------------------------------------------------------------
# Pipelines


def _fmt(v):
    return f"{float(v):.12g}"


def run_discretize(cfg, workers=1):
    pomdp = make_model(cfg)
    hmm = make_hmm(cfg, pomdp, workers=workers)
    path = Path(cfg.out) / "hmm.csv"
    save_hmm(hmm, path)
    return {"hmm": path}


def run_solve_belief(cfg, workers=1):
    pomdp = make_model(cfg)
    hmm = make_hmm(cfg, pomdp, workers=workers)
    grid = simplex_grid(hmm.n_x, cfg.quantizer.simplex_m)
    bmdp = build_belief_mdp(hmm, grid)
    sol = solve_belief_mdp(bmdp, cfg.solver.tol, cfg.solver.max_iter, workers)
    out = Path(cfg.out)
    extra = {f"z{i}": [_fmt(v) for v in grid.points[:, i]] for i in range(grid.n)}
    sol.to_csv(out / "belief_values.csv", extra)
    (out / "belief_summary.csv").write_text(
        "quantity,value\n"
        f"value_at_prior,{_fmt(initial_value(bmdp, sol))}\n"
        f"iterations,{sol.iterations}\n"
        f"error_bound,{_fmt(sol.error_bound)}\n"
        f"converged,{int(sol.converged)}\n")
    return {"belief_values": out / "belief_values.csv", "belief_summary": out / "belief_summary.csv"}


def _window(cfg, pomdp, workers=1, obs_bins=None, N=None):
    hmm = make_hmm(cfg, pomdp, obs_bins=obs_bins, workers=workers)
    N = cfg.window.N if N is None else N
    mdp = build_window_mdp(hmm, choose_pi_star(cfg, hmm), N, cfg.window.budget)
    sol = solve_window(mdp, cfg.solver.tol, cfg.solver.max_iter, workers)
    return hmm, mdp, sol


def run_solve_window(cfg, workers=1):
    pomdp = make_model(cfg)
    hmm, mdp, sol = _window(cfg, pomdp, workers)
    path = Path(cfg.out) / "window_policy.csv"
    mdp.to_csv(path, sol)
    return {"window_policy": path}


def _q_summary(path, rows):
    with open(path, "w") as fh:
        fh.write("quantity,value\n")
        for k, v in rows:
            fh.write(f"{k},{v}\n")


def run_learn_window(cfg, workers=1):
    pomdp = make_model(cfg)
    hmm, mdp, sol = _window(cfg, pomdp, workers)
    lc = LearningConfig(exploration(cfg, pomdp.n_actions), cfg.learning.steps, cfg.window.N,
                        component_seed(cfg.seed, "learn"), cfg.learning.checkpoints)
    q = q_learn_finite_memory(pomdp, hmm.quantizer_y, lc)
    out = Path(cfg.out)
    q.to_csv(out / "q_window.csv")
    arts = {"q_window": out / "q_window.csv"}
    for k, (qv, vis) in sorted(q.checkpoints.items()):
        p = out / f"q_window_step{k}.csv"
        write_q_csv(p, qv, vis)
        arts[f"q_window_step{k}"] = p
    vis_diff, all_diff = sup_norm_diff(q, sol.Q)
    policy, unvisited = greedy_policy(q, cfg.window.warmup)
    _q_summary(out / "learn_summary.csv", [
        ("sup_diff_visited_vs_window_solution", _fmt(vis_diff)), ("sup_diff_all", _fmt(all_diff)),
        ("unvisited_entries", int(q.unvisited.sum())), ("unvisited_states", int(unvisited.sum())),
        ("policy_agreement_visited", _fmt((policy == sol.policy)[~unvisited].mean() if (~unvisited).any() else 1.0))])
    arts["learn_summary"] = out / "learn_summary.csv"
    return arts


def run_learn_belief(cfg, workers=1):
    pomdp = make_model(cfg)
    hmm = make_hmm(cfg, pomdp, workers=workers)
    grid = simplex_grid(hmm.n_x, cfg.quantizer.simplex_m)
    lc = LearningConfig(exploration(cfg, pomdp.n_actions), cfg.learning.steps, 0,
                        component_seed(cfg.seed, "learn"), cfg.learning.checkpoints)
    q = q_learn_belief(hmm, grid, lc, env=pomdp)
    sol = solve_belief_mdp(build_belief_mdp(hmm, grid), cfg.solver.tol, cfg.solver.max_iter, workers)
    out = Path(cfg.out)
    q.to_csv(out / "q_belief.csv")
    vis_diff, all_diff = sup_norm_diff(q, sol.Q)
    _q_summary(out / "learn_summary.csv", [
        ("sup_diff_visited_vs_belief_solution", _fmt(vis_diff)), ("sup_diff_all", _fmt(all_diff)),
        ("unvisited_entries", int(q.unvisited.sum()))])
    return {"q_belief": out / "q_belief.csv", "learn_summary": out / "learn_summary.csv"}


def _hidden_constants(pomdp, hmm):
    if hmm.quantizer_x is None:
        return None
    return dict(K_O=pomdp.channel.lipschitz_x, K_c=pomdp.cost.lipschitz, K_T=pomdp.transition.lipschitz,
                L_X=hmm.quantizer_x.L)


def run_bounds(cfg, workers=1):
    pomdp = make_model(cfg)
    hmm = make_hmm(cfg, pomdp, workers=workers)
    s = cfg.stability
    rep = stability_report(hmm, choose_pi_star(cfg, hmm), cfg.window.N, exploration(cfg, hmm.n_u), s.n_paths,
                           component_seed(cfg.seed, "stability"), c_sup=pomdp.cost.sup_norm,
                           alpha_Y=pomdp.channel.lipschitz_y, L_Y=hmm.quantizer_y.L, t_max=s.t_max,
                           uniform_budget=s.uniform_budget, hidden=_hidden_constants(pomdp, hmm))
    out = Path(cfg.out)
    rep.to_csv(out / "stability.csv")
    (out / "stability.txt").write_text(rep.to_text())
    return {"stability": out / "stability.csv", "stability_text": out / "stability.txt"}


def run_evaluate(cfg, workers=1):
    pomdp = make_model(cfg)
    hmm, mdp, sol = _window(cfg, pomdp, workers)
    oracle, _ = build_oracle(cfg, pomdp, workers)
    ctrls = {f"window_N{mdp.N}": window_controller(mdp, sol, cfg.window.warmup), "oracle_belief": oracle}
    e = cfg.evaluation
    rep = compare(pomdp, ctrls, None, horizon(cfg, pomdp), e.n_paths, component_seed(cfg.seed, "evaluate"),
                  reference="oracle_belief", workers=workers, burn_in=burn_in(cfg, [mdp.N]),
                  burn_in_action=e.burn_in_action)
    out = Path(cfg.out)
    (out / "eval_paths.csv").write_text(rep.paths_csv())
    (out / "eval_summary.csv").write_text(rep.summary_csv())
    return {"eval_paths": out / "eval_paths.csv", "eval_summary": out / "eval_summary.csv"}


SWEEP_HEADER = ["M", "N", "m", "bound", "realized", "realized_stderr", "gap", "gap_stderr",
                "oracle_value", "state_space"]


def sweep_rows(cfg, workers=1):
    """Rows of the (M, N) trade-off table; ``m`` sets the oracle lattice when listed."""
    pomdp = make_model(cfg)
    sigma = exploration(cfg, pomdp.n_actions)
    e, s = cfg.evaluation, cfg.stability
    H = horizon(cfg, pomdp)
    ev_seed = component_seed(cfg.seed, "evaluate")
    B = burn_in(cfg, cfg.sweep.N)
    ms = cfg.sweep.m or [cfg.oracle.simplex_m]
    rows = []
    for m in ms:
        ocfg = cfg.model_copy(update={"oracle": cfg.oracle.model_copy(update={"simplex_m": m})})
        oracle, _ = build_oracle(ocfg, pomdp, workers)
        ref = evaluate_policy(pomdp, oracle, H, e.n_paths, ev_seed, workers, "oracle", burn_in=B,
                              burn_in_action=e.burn_in_action)
        for M in cfg.sweep.M:
            for N in cfg.sweep.N:
                hmm, mdp, sol = _window(cfg, pomdp, workers, obs_bins=M, N=N)
                ctl = window_controller(mdp, sol, cfg.window.warmup)
                rep = evaluate_policy(pomdp, ctl, H, e.n_paths, ev_seed, workers, f"M{M}_N{N}", burn_in=B,
                                      burn_in_action=e.burn_in_action)
                d = rep.returns - ref.returns
                pi_star = choose_pi_star(cfg, hmm)
                L_t = [estimate_Lt(hmm, pi_star, sigma, N, t, s.n_paths,
                                   component_seed(cfg.seed, f"stability/{M}/{N}")).value for t in range(s.t_max)]
                b = bound_main(pomdp.cost.sup_norm, pomdp.discount, pomdp.channel.lipschitz_y, hmm.quantizer_y.L,
                               np.clip(L_t, 0, 2), s.t_max)
                rows.append(dict(M=M, N=N, m=m, bound=b.value, realized=rep.mean, realized_stderr=rep.stderr,
                                 gap=float(d.mean()), gap_stderr=float(d.std(ddof=1) / np.sqrt(d.size)),
                                 oracle_value=ref.mean, state_space=window_size(M, pomdp.n_actions, N)))
    return rows


def run_sweep(cfg, workers=1):
    rows = sweep_rows(cfg, workers)
    path = Path(cfg.out) / "sweep.csv"
    with open(path, "w") as fh:
        fh.write(",".join(SWEEP_HEADER) + "\n")
        for r in rows:
            fh.write(",".join(str(r[k]) if isinstance(r[k], int) else _fmt(r[k]) for k in SWEEP_HEADER) + "\n")
    return {"sweep": path}


PIPELINES = {
    "discretize": run_discretize,
    "solve-belief": run_solve_belief,
    "solve-window": run_solve_window,
    "learn-window": run_learn_window,
    "learn-belief": run_learn_belief,
    "bounds": run_bounds,
    "evaluate": run_evaluate,
    "sweep": run_sweep,
}


def run(subcommand: str, cfg: ExperimentConfig, workers: int = 1) -> dict:
    if subcommand not in PIPELINES:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    arts = PIPELINES[subcommand](cfg, workers)
    arts["manifest"] = write_manifest(cfg, subcommand, arts)
    return arts
