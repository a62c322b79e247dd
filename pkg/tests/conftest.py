import sys

import numpy as np
import pytest
from hypothesis import settings

from pomdp_approx.discretize import FiniteHmm

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_hmm(T, O, c=None, prior=None, discount=0.5):
    """FiniteHmm from small literal tables; T may be (n_x, n_x) for a single action."""
    T = np.asarray(T, dtype=float)
    if T.ndim == 2:
        T = T[:, None, :]
    O = np.asarray(O, dtype=float)
    n_x, n_u, _ = T.shape
    c = np.zeros((n_x, n_u)) if c is None else np.asarray(c, dtype=float)
    prior = np.full(n_x, 1.0 / n_x) if prior is None else np.asarray(prior, dtype=float)
    return FiniteHmm(T, O, c, prior, discount)


def random_stochastic(rng, shape, floor=0.0):
    a = rng.random(shape) + floor
    return a / a.sum(axis=-1, keepdims=True)


@pytest.fixture
def bayes_hmm():
    """Two states, uniform transitions, channel rows (0.9, 0.1) and (0.2, 0.8)."""
    return make_hmm([[0.5, 0.5], [0.5, 0.5]], [[0.9, 0.1], [0.2, 0.8]])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
