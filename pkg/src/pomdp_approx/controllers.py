"""Controller protocol and the trivial controllers.

A controller acts on a batch of P paths at once: ``reset(n_paths, rng)``
starts fresh paths, ``act(y)`` receives the raw observations of shape
(P, obs_dim) and returns P action indices. Randomized controllers draw only
from the ``rng`` handed to ``reset``. Controllers that track their own
past actions may also define ``played(u)``, called when an externally
fixed action replaced the returned one.
"""

from typing import Protocol

import numpy as np


class Controller(Protocol):
    def reset(self, n_paths: int, rng: np.random.Generator) -> None: ...

    def act(self, y: np.ndarray) -> np.ndarray: ...


class ConstantController:
    def __init__(self, action: int = 0):
        self.action = int(action)
        self.n_paths = 0

    def reset(self, n_paths, rng=None):
        self.n_paths = n_paths

    def act(self, y):
        return np.full(np.atleast_2d(y).shape[0], self.action, dtype=int)


class RandomController:
    """Plays action i with probability ``sigma[i]``, independently of everything."""

    def __init__(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0) or abs(sigma.sum() - 1.0) > 1e-9:
            raise ValueError("exploration probabilities must be positive and sum to 1")
        self.sigma = sigma
        self.rng = None

    def reset(self, n_paths, rng):
        self.rng = rng

    def act(self, y):
        n = np.atleast_2d(y).shape[0]
        return self.rng.choice(self.sigma.size, size=n, p=self.sigma)
