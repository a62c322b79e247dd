import numpy as np
import pytest

from pomdp_approx.controllers import ConstantController, RandomController
from pomdp_approx.model import (ActionSet, CostFunction, DomainBox, ModelInconsistencyError, ModelValidationError,
                                ObservationChannel, Pomdp, Prior, TransitionKernel, builtin_model,
                                sample_trajectory, validate_model)

box = DomainBox([0.0], [1.0])


def _model(step=None, cost=0.0, discount=0.9):
    step = step or (lambda x, u, xi: x)
    return Pomdp(box, box, ActionSet([0.0, 1.0]), TransitionKernel(step, 1, 1.0),
                 ObservationChannel(lambda x, xi: xi, lambda x, y: np.ones(len(x)), 1, 0.0, 0.0),
                 CostFunction(lambda x, u: np.full(len(x), cost), abs(cost), 0.0), discount,
                 Prior(box.uniform, 1))


def test_identity_dynamics():
    tr = sample_trajectory(_model(), ConstantController(1), 3, seed=5)
    assert tr.horizon == 3 and tr.states.shape == (4, 1) and tr.observations.shape == (4, 1)
    assert np.all(tr.states == tr.states[0])


def test_zero_cost():
    tr = sample_trajectory(_model(), RandomController([0.5, 0.5]), 20, seed=1)
    assert np.all(tr.costs == 0)


def test_linear_model_deterministic():
    p = builtin_model("linear-gaussian-1d", {"a": 0.5, "sigma": 0.1})
    a = sample_trajectory(p, RandomController([1 / 3] * 3), 50, seed=3)
    b = sample_trajectory(p, RandomController([1 / 3] * 3), 50, seed=3)
    for f in ("states", "observations", "actions", "costs"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = sample_trajectory(p, RandomController([1 / 3] * 3), 50, seed=4)
    assert not np.array_equal(a.states, c.states)


def test_escaping_sampler_named():
    p = _model(step=lambda x, u, xi: x + 2.0)
    with pytest.raises(ModelInconsistencyError, match="transition"):
        sample_trajectory(p, ConstantController(0), 2, seed=0)


def test_bad_components():
    with pytest.raises(ValueError):
        ActionSet([])
    with pytest.raises(ValueError):
        ActionSet([1.0, 1.0])
    with pytest.raises(ValueError):
        _model(discount=1.0)


def test_unknown_model_lists_names():
    with pytest.raises(KeyError, match="finite-toy"):
        builtin_model("nope")


def test_noninformative_channel():
    p = builtin_model("noninformative-channel")
    assert p.channel.lipschitz_y == 0.0
    x = np.linspace(-1, 1, 7)[:, None]
    y = np.full_like(x, 0.3)
    assert np.all(p.channel.density(x, y) == p.channel.density(x[:1], y[:1]))


def test_finite_toy_point_masses():
    p = builtin_model("finite-toy", {"states": 2, "obs": 2, "actions": 2})
    ft = p.finite
    assert ft.state_points[:, 0].tolist() == [0.25, 0.75]
    rng = np.random.default_rng(0)
    x = p.prior.sample(1000, rng)
    assert set(np.unique(x)) <= {0.25, 0.75}
    xn = p.transition.sample(x, 1, rng)
    assert set(np.unique(xn)) <= {0.25, 0.75}
    assert set(np.unique(p.channel.sample(x, rng))) <= {0.25, 0.75}


@pytest.mark.parametrize("name", ["linear-gaussian-1d", "near-informative-channel", "noninformative-channel",
                                  "finite-toy"])
def test_builtin_models_validate(name):
    validate_model(builtin_model(name), n_points=100, n_mc=2000, n_pairs=10_000, seed=0)


def test_linear_channel_normalization_large_sample():
    p = builtin_model("linear-gaussian-1d", {"a": 0.5, "sigma": 0.1, "box": [-1, 1]})
    rng = np.random.default_rng(2)
    n = 100_000
    for x0 in (-1.0, -0.3, 0.0, 0.8):
        y = p.reference_sample(rng.random((n, 1)))
        g = p.channel.density(np.full((n, 1), x0), y)
        assert abs(g.mean() - 1.0) <= 1e-3 + 3 * g.std() / np.sqrt(n)


def test_validator_rejects_false_lipschitz():
    good = builtin_model("linear-gaussian-1d")
    ch = good.channel
    fake = ObservationChannel(ch.sample_fn, ch.density, 1, ch.lipschitz_y / 100, ch.lipschitz_x)
    bad = Pomdp(good.state_box, good.obs_box, good.actions, good.transition, fake, good.cost, good.discount,
                good.prior)
    with pytest.raises(ModelValidationError, match="Lipschitz"):
        validate_model(bad, n_points=5, n_mc=200)
