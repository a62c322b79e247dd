"""Approximation toolkit for partially observed MDPs with continuous state and observation spaces.

Hidden-state discretization, observation quantization, finite-window MDPs,
finite-memory and belief-lattice Q-learning, and computable error bounds.
"""

__version__ = "0.1.0"

from .model import Pomdp, builtin_model, sample_trajectory  # noqa: E402
from .quantize import uniform_quantizer, quantize, simplex_grid, nearest_simplex_point  # noqa: E402
from .discretize import FiniteHmm, build_hidden_model, filter_update, predictor_update  # noqa: E402
from .beliefmdp import build_belief_mdp, value_iteration, belief_controller  # noqa: E402
from .window import build_window_mdp, solve_window, window_controller, conditional_belief  # noqa: E402
from .learn import LearningConfig, q_learn_finite_memory, q_learn_belief, greedy_policy  # noqa: E402
from .sim import evaluate_policy, compare  # noqa: E402
