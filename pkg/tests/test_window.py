import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_hmm, random_stochastic
from pomdp_approx.beliefmdp import value_iteration
from pomdp_approx.discretize import build_hidden_model
from pomdp_approx.model import builtin_model
from pomdp_approx.quantize import uniform_quantizer
from pomdp_approx.seeding import stream
from pomdp_approx.sim import compare
from pomdp_approx.window import (WindowBudgetError, build_window_mdp, conditional_belief, decode, encode, shift,
                                 solve_window, window_controller, window_size)


def toy(**params):
    p = builtin_model("finite-toy", params)
    qx = uniform_quantizer(p.state_box, p.finite.state_points.shape[0])
    qy = uniform_quantizer(p.obs_box, p.finite.obs_points.shape[0])
    return p, build_hidden_model(p, qx, qy, 1, 0)


@pytest.mark.parametrize("n_y,n_u,N", [(2, 2, 0), (2, 2, 3), (3, 2, 3), (2, 3, 4), (4, 1, 2)])
def test_encode_decode_bijective(n_y, n_u, N):
    S = window_size(n_y, n_u, N)
    ys, us = decode(np.arange(S), N, n_y, n_u)
    assert np.array_equal(encode(ys, us, n_y, n_u), np.arange(S))
    assert len({(tuple(a), tuple(b)) for a, b in zip(ys, us)}) == S
    assert ys.max() < n_y and (N == 0 or us.max() < n_u)


def test_newest_observation_fastest():
    ys, _ = decode(np.arange(4), 1, 2, 2)
    assert ys[:, -1].tolist() == [0, 1, 0, 1]


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 3), st.data())
def test_shift_drops_oldest(n_y, n_u, N, data):
    S = window_size(n_y, n_u, N)
    code = data.draw(st.integers(0, S - 1))
    u, y = data.draw(st.integers(0, n_u - 1)), data.draw(st.integers(0, n_y - 1))
    ys, us = decode(code, N, n_y, n_u)
    ys2, us2 = decode(shift(code, u, y, N, n_y, n_u), N, n_y, n_u)
    assert ys2.tolist() == ys.tolist()[1:] + [y]
    assert us2.tolist() == (us.tolist() + [u])[1:]


def test_conditional_belief_examples(bayes_hmm):
    flat = make_hmm([[0.6, 0.4], [0.1, 0.9]], [[0.3, 0.7], [0.3, 0.7]])
    pi = np.array([0.25, 0.75])
    for y in (0, 1):
        b, ok = conditional_belief(flat, pi, [y], [])
        assert np.allclose(b, pi) and ok
    b, _ = conditional_belief(bayes_hmm, [0.5, 0.5], [0], [])
    assert np.allclose(b, [9 / 11, 2 / 11])
    for y0, y1 in itertools.product((0, 1), repeat=2):
        b, _ = conditional_belief(bayes_hmm, [0.5, 0.5], [y0, y1], [0])
        ref, _ = conditional_belief(bayes_hmm, [0.5, 0.5], [y1], [])
        assert np.allclose(b, ref)


def test_unreachable_flagged():
    hmm = make_hmm(np.eye(2), np.eye(2), prior=[1.0, 0.0])
    mdp = build_window_mdp(hmm, [1.0, 0.0], 1)
    ys, _ = mdp.legend()
    assert not mdp.reachable[ys[:, 0] == 1].any()
    assert not mdp.reachable[(ys[:, 0] == 0) & (ys[:, 1] == 1)].any()
    assert mdp.reachable[(ys[:, 0] == 0) & (ys[:, 1] == 0)].all()


def test_n0_transitions():
    _, hmm = toy(states=3, obs=3, actions=2, flip=0.3)
    pi = np.array([0.2, 0.3, 0.5])
    mdp = build_window_mdp(hmm, pi, 0)
    P = mdp.dense_transitions()
    for y in range(3):
        b, _ = conditional_belief(hmm, pi, [y], [])
        for u in range(2):
            assert np.allclose(P[y, u], (b @ hmm.transition[:, u, :]) @ hmm.channel, atol=1e-15)


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3), st.integers(0, 3))
def test_rows_support_and_stochastic(seed, n_y, n_u, N):
    rng = np.random.default_rng(seed)
    hmm = make_hmm(random_stochastic(rng, (3, n_u, 3)), random_stochastic(rng, (3, n_y), 0.05),
                   rng.random((3, n_u)))
    mdp = build_window_mdp(hmm, random_stochastic(rng, 3), N)
    P = mdp.dense_transitions()
    assert np.allclose(P.sum(-1), 1, atol=1e-9)
    codes = np.arange(mdp.n_states)
    for u in range(n_u):
        expect = np.stack([shift(codes, u, y, N, n_y, n_u) for y in range(n_y)], axis=1)
        support = [set(np.flatnonzero(P[s, u] > 0)) for s in codes]
        assert all(sup <= set(e) for sup, e in zip(support, expect))
        assert all(len(set(e)) == n_y for e in expect)
    assert np.abs(mdp.cost).max() <= np.abs(hmm.cost).max() + 1e-12


def test_zero_cost_zero_value():
    hmm = make_hmm(np.full((2, 2, 2), 0.5), [[0.9, 0.1], [0.2, 0.8]])
    sol = solve_window(build_window_mdp(hmm, None, 2))
    assert np.all(sol.V == 0)


def test_solve_window_inherits_vi_examples():
    # identity transitions and channel make window costs equal the state costs
    hmm = make_hmm(np.stack([np.eye(2), np.eye(2)], axis=1), np.eye(2), [[0.0, 1.0], [1.0, 0.0]])
    sol = solve_window(build_window_mdp(hmm, None, 0))
    assert np.array_equal(sol.V, [0.0, 0.0]) and sol.policy.tolist() == [0, 1]
    hmm = make_hmm(np.stack([np.eye(2), np.eye(2)], axis=1), np.eye(2), np.full((2, 2), 0.3))
    assert np.allclose(solve_window(build_window_mdp(hmm, None, 1), tol=1e-10).V, 0.6, atol=1e-10)


def test_budget():
    _, hmm = toy()
    with pytest.raises(WindowBudgetError, match="32 states"):
        build_window_mdp(hmm, None, 2, budget=31)


def test_transition_rows_vs_simulation():
    """Every row of the N=1 window chain against 10^7 simulated steps started from pi*."""
    _, hmm = toy()
    pi = np.array([0.3, 0.7])
    mdp = build_window_mdp(hmm, pi, 1)
    P = mdp.dense_transitions()
    rng = stream(99, "window-oracle")
    n = 10_000_000

    def draw(probs):
        return (rng.random(probs.shape[0])[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)

    x0 = draw(np.broadcast_to(pi, (n, 2)))
    y0 = draw(hmm.channel[x0])
    u0 = rng.integers(2, size=n)
    x1 = draw(hmm.transition[x0, u0])
    y1 = draw(hmm.channel[x1])
    u1 = rng.integers(2, size=n)
    x2 = draw(hmm.transition[x1, u1])
    y2 = draw(hmm.channel[x2])
    code = encode(np.stack([y0, y1], 1), u0[:, None], 2, 2)
    nxt = encode(np.stack([y1, y2], 1), u1[:, None], 2, 2)
    for s in range(mdp.n_states):
        for u in range(2):
            sel = (code == s) & (u1 == u)
            k = sel.sum()
            freq = np.bincount(nxt[sel], minlength=mdp.n_states) / k
            se = np.sqrt(P[s, u] * (1 - P[s, u]) / k)
            assert np.all(np.abs(freq - P[s, u]) <= 3 * se + 1e-12)


def test_controller_warmup_and_determinism():
    _, hmm = toy()
    mdp = build_window_mdp(hmm, None, 2)
    sol = solve_window(mdp)
    ctl = window_controller(mdp, sol, warmup=1)
    ctl.reset(3)
    obs = [np.array([0, 1, 1]), np.array([1, 1, 0]), np.array([0, 0, 1]), np.array([1, 0, 0])]
    acts = [ctl.act(o) for o in obs]
    assert np.all(acts[0] == 1) and np.all(acts[1] == 1)
    ys = np.stack(obs[:3], 1)
    assert np.array_equal(acts[2], sol.policy[encode(ys, np.ones((3, 2), int), 2, 2)])
    ys = np.stack(obs[1:], 1)
    us = np.stack([np.ones(3, int), acts[2]], 1)
    assert np.array_equal(acts[3], sol.policy[encode(ys, us, 2, 2)])

    m0 = build_window_mdp(hmm, None, 0)
    c0 = window_controller(m0, solve_window(m0))
    c0.reset(2)
    assert np.array_equal(c0.act(np.array([0, 1])), solve_window(m0).policy[[0, 1]])


def test_identical_controllers_identical_rollouts():
    p, hmm = toy()
    mdp = build_window_mdp(hmm, None, 1)
    sol = solve_window(mdp)
    rep = compare(p, {"a": window_controller(mdp, sol), "b": window_controller(mdp, sol)}, horizon=30,
                  n_paths=400, seed=3)
    assert np.array_equal(rep.reports["a"].returns, rep.reports["b"].returns)


def _window_values(p, hmm, Ns, burn_in, H=200, n_paths=2000, seed=17):
    ctls = {}
    for N in Ns:
        mdp = build_window_mdp(hmm, None, N)
        ctls[N] = window_controller(mdp, solve_window(mdp))
    return compare(p, ctls, horizon=H, n_paths=n_paths, seed=seed, burn_in=burn_in)


def test_longer_memory_cannot_hurt():
    """N=2 vs N=0 on finite-toy once both controllers act with a full window."""
    p, hmm = toy()
    rep = _window_values(p, hmm, [0, 2], burn_in=2)
    d = rep.reports[2].returns - rep.reports[0].returns
    assert d.mean() <= 3 * d.std(ddof=1) / np.sqrt(d.size)


def test_n_growth():
    p, hmm = toy()
    rep = _window_values(p, hmm, [0, 1, 2, 3], burn_in=3)
    for N in (0, 1, 2):
        d = rep.reports[N + 1].returns - rep.reports[N].returns
        assert d.mean() <= 3 * d.std(ddof=1) / np.sqrt(d.size)


def test_window_csv(tmp_path):
    _, hmm = toy()
    mdp = build_window_mdp(hmm, None, 1)
    mdp.to_csv(tmp_path / "w.csv", solve_window(mdp))
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "code,y_t-1,y_t,u_t-1,reachable,V,action"
    assert len(lines) == 9


def test_value_iteration_dense_equals_window_sparse():
    _, hmm = toy(states=3, obs=2, actions=2)
    mdp = build_window_mdp(hmm, None, 2)
    a = solve_window(mdp, tol=1e-12)
    b = value_iteration(mdp.cost, mdp.dense_transitions(), hmm.discount, tol=1e-12)
    assert np.allclose(a.V, b.V, atol=1e-12)
