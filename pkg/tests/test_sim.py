import numpy as np
import pytest

from pomdp_approx.beliefmdp import belief_controller, build_belief_mdp, initial_value, solve_belief_mdp
from pomdp_approx.controllers import ConstantController, RandomController
from pomdp_approx.discretize import build_hidden_model
from pomdp_approx.model import CostFunction, Pomdp, builtin_model
from pomdp_approx.quantize import simplex_grid, uniform_quantizer
from pomdp_approx.seeding import component_seed
from pomdp_approx.sim import compare, evaluate_policy, horizon_for
from pomdp_approx.window import build_window_mdp, solve_window, window_controller


def with_cost(p, value):
    return Pomdp(p.state_box, p.obs_box, p.actions, p.transition, p.channel,
                 CostFunction(lambda x, u: np.full(len(x), value), abs(value), 0.0), p.discount, p.prior)


def toy():
    p = builtin_model("finite-toy")
    return p, build_hidden_model(p, uniform_quantizer(p.state_box, 2), uniform_quantizer(p.obs_box, 2), 1, 0)


def test_zero_and_constant_cost():
    p = builtin_model("linear-gaussian-1d")
    rep = evaluate_policy(with_cost(p, 0.0), RandomController([1 / 3] * 3), 25, 300, 1)
    assert np.all(rep.returns == 0)
    rep = evaluate_policy(with_cost(p, 0.7), RandomController([1 / 3] * 3), 25, 300, 1)
    assert np.all(rep.returns == rep.returns[0])
    assert rep.returns[0] == pytest.approx((1 - 0.5**25) * 0.7 / 0.5, abs=1e-14)
    assert rep.truncation_bound == pytest.approx(0.5**25 * 0.7 / 0.5)


def test_horizon_for():
    H = horizon_for(0.9, 1.0, 1e-3)
    assert 0.9**H / 0.1 <= 1e-3 < 0.9 ** (H - 1) / 0.1


def test_optimal_controller_matches_belief_value():
    p, hmm = toy()
    g = simplex_grid(2, 80)
    bm = build_belief_mdp(hmm, g)
    sol = solve_belief_mdp(bm, tol=1e-12)
    rep = evaluate_policy(p, belief_controller(hmm, sol, g), 200, 4000, 21)
    assert abs(rep.mean - initial_value(bm, sol)) <= rep.truncation_bound + 3 * rep.stderr


def test_crn_same_controller_zero_gap():
    p = builtin_model("linear-gaussian-1d")
    rep = compare(p, [RandomController([0.2, 0.3, 0.5])] * 2, horizon=20, n_paths=700, seed=4)
    assert np.array_equal(rep.reports["c0"].returns, rep.reports["c1"].returns)
    assert all(g.mean == 0 for g in rep.gaps)


def test_workers_do_not_change_results():
    p = builtin_model("linear-gaussian-1d")
    a = evaluate_policy(p, RandomController([1 / 3] * 3), 20, 1300, 7, workers=1)
    b = evaluate_policy(p, RandomController([1 / 3] * 3), 20, 1300, 7, workers=4)
    assert np.array_equal(a.returns, b.returns)


def test_memory_gap_ordering():
    p, hmm = toy()
    g = simplex_grid(2, 80)
    oracle = belief_controller(hmm, solve_belief_mdp(build_belief_mdp(hmm, g)), g)
    ctls = {"oracle": oracle}
    for N in (0, 1):
        mdp = build_window_mdp(hmm, None, N)
        ctls[N] = window_controller(mdp, solve_window(mdp))
    rep = compare(p, ctls, horizon=60, n_paths=2000, seed=5, reference="oracle", burn_in=1)
    d = rep.reports[1].returns - rep.reports[0].returns
    gaps = {g.name: g for g in rep.gaps}
    assert gaps[1].mean <= gaps[0].mean + 3 * d.std(ddof=1) / np.sqrt(d.size)
    lo, hi = gaps[0].interval
    assert hi - lo == pytest.approx(6 * gaps[0].stderr)


def test_stderr_scaling():
    p = builtin_model("linear-gaussian-1d")
    ratios = []
    for r in range(20):
        a = evaluate_policy(p, RandomController([1 / 3] * 3), 15, 400, component_seed(r, "a"))
        b = evaluate_policy(p, RandomController([1 / 3] * 3), 15, 800, component_seed(r, "b"))
        ratios.append(a.stderr / b.stderr)
    assert abs(np.mean(ratios) / np.sqrt(2) - 1) <= 0.15


def test_envelope_and_csv():
    p = builtin_model("linear-gaussian-1d")
    rep = compare(p, {"u0": ConstantController(0), "rand": RandomController([1 / 3] * 3)}, horizon=30,
                  n_paths=600, seed=2)
    bound = p.cost.sup_norm / (1 - p.discount)
    for r in rep.reports.values():
        assert np.all(np.abs(r.returns) <= bound) and abs(r.mean) <= bound + r.truncation_bound
    lines = rep.paths_csv().splitlines()
    assert lines[0] == "controller,path,return" and len(lines) == 1 + 2 * 600
    summary = rep.summary_csv().splitlines()
    assert summary[0].startswith("controller,mean,stderr,n_paths,horizon,truncation,reference,gap")
    assert len(summary) == 3


def test_burn_in_counts_from_burn_in():
    p = with_cost(builtin_model("finite-toy"), 1.0)
    rep = evaluate_policy(p, ConstantController(1), 10, 50, 3, burn_in=4)
    assert rep.returns[0] == pytest.approx((1 - 0.5**10) / 0.5)
