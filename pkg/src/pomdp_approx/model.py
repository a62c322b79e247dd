"""Continuous-space POMDP description, rollouts and built-in benchmark models.

Every random component is driven by explicit uniform noise: a sampler takes
the current points together with an array of U(0, 1) draws and returns the
next points. Callers own the random streams, which keeps rollouts
reproducible and lets several controllers share the same noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .markov import check_stochastic, mixing_constant, wasserstein1_1d
from .seeding import stream


class ModelInconsistencyError(RuntimeError):
    """A sampler produced a point outside its declared box."""


class ModelValidationError(ValueError):
    """A declared model constant failed a spot check."""


@dataclass(frozen=True, eq=False)
class DomainBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError(f"degenerate box: lower={lo} upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    @property
    def volume(self):
        return float(np.prod(self.upper - self.lower))

    def contains(self, points, atol=1e-12):
        points = np.asarray(points, dtype=float)
        return np.all((points >= self.lower - atol) & (points <= self.upper + atol), axis=-1)

    def uniform(self, xi):
        """Map U(0,1) draws of shape (P, dim) to uniform points in the box."""
        return self.lower + np.asarray(xi) * (self.upper - self.lower)


@dataclass(frozen=True, eq=False)
class ActionSet:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] == 0:
            raise ValueError("action set is empty")
        if len({tuple(p) for p in pts}) != pts.shape[0]:
            raise ValueError("action set has duplicate entries")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """x' = step(x, u, xi) with x of shape (P, m), u action indices, xi U(0,1)."""

    step: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    noise_dim: int
    lipschitz: float
    density: Optional[Callable] = None
    mixing: Optional[tuple] = None
    name: str = "transition"

    def sample(self, x, u, rng):
        x = np.atleast_2d(x)
        return self.step(x, np.broadcast_to(u, x.shape[:1]), rng.random((x.shape[0], self.noise_dim)))


@dataclass(frozen=True, eq=False)
class ObservationChannel:
    """O(dy|x) = g(x, y) lam(dy); ``sample(x, xi)`` draws y."""

    sample_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    density: Callable[[np.ndarray, np.ndarray], np.ndarray]
    noise_dim: int
    lipschitz_y: float
    lipschitz_x: float
    lower_bound: Optional[float] = None
    reference_sampler: Optional[Callable[[np.ndarray], np.ndarray]] = None
    reference_noise_dim: int = 0
    name: str = "channel"

    def sample(self, x, rng):
        x = np.atleast_2d(x)
        return self.sample_fn(x, rng.random((x.shape[0], self.noise_dim)))


@dataclass(frozen=True, eq=False)
class CostFunction:
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sup_norm: float
    lipschitz: float

    def __call__(self, x, u):
        x = np.atleast_2d(x)
        return self.evaluate(x, np.broadcast_to(u, x.shape[:1]))


@dataclass(frozen=True, eq=False)
class Prior:
    sample_fn: Callable[[np.ndarray], np.ndarray]
    noise_dim: int
    density: Optional[Callable] = None

    def sample(self, n, rng):
        return self.sample_fn(rng.random((n, self.noise_dim)))


@dataclass(frozen=True, eq=False)
class FiniteTables:
    """Exact tables of a model whose kernels live on finitely many points."""

    state_points: np.ndarray  # (n_x, m)
    obs_points: np.ndarray  # (n_obs, n)
    transition: np.ndarray  # (n_x, n_u, n_x)
    channel: np.ndarray  # (n_x, n_obs)
    cost: np.ndarray  # (n_x, n_u)
    prior: np.ndarray  # (n_x,)


@dataclass(frozen=True, eq=False)
class Pomdp:
    state_box: DomainBox
    obs_box: DomainBox
    actions: ActionSet
    transition: TransitionKernel
    channel: ObservationChannel
    cost: CostFunction
    discount: float
    prior: Prior
    name: str = "custom"
    params: dict = field(default_factory=dict)
    finite: Optional[FiniteTables] = None

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")

    @property
    def n_actions(self):
        return len(self.actions)

    def reference_sample(self, xi):
        """Draw from the channel's reference measure (default: uniform on the obs box)."""
        if self.channel.reference_sampler is not None:
            return self.channel.reference_sampler(xi)
        return self.obs_box.uniform(xi)

    @property
    def reference_noise_dim(self):
        if self.channel.reference_sampler is not None:
            return self.channel.reference_noise_dim
        return self.obs_box.dim


@dataclass
class Trajectory:
    states: np.ndarray  # (H+1, m)
    observations: np.ndarray  # (H+1, n)
    actions: np.ndarray  # (H,)
    costs: np.ndarray  # (H,)
    seed: int

    @property
    def horizon(self):
        return self.actions.shape[0]


def _checked(points, box, component):
    if not np.all(box.contains(points)):
        bad = points[~box.contains(points)][0]
        raise ModelInconsistencyError(f"{component} produced {bad} outside [{box.lower}, {box.upper}]")
    return points


class Rollout:
    """Vectorized simulation of P independent paths with separate noise streams.

    Prior, transition, channel and policy randomness come from four distinct
    child streams of ``seed``, so two controllers run from the same seed see
    identical exogenous noise (common random numbers).
    """

    def __init__(self, pomdp: Pomdp, n_paths: int, seed, key=()):
        self.pomdp = pomdp
        self.n_paths = n_paths
        self.prior_rng = stream(seed, *key, "prior")
        self.trans_rng = stream(seed, *key, "transition")
        self.obs_rng = stream(seed, *key, "channel")
        self.policy_rng = stream(seed, *key, "policy")

    def initial(self):
        p = self.pomdp
        x = _checked(p.prior.sample(self.n_paths, self.prior_rng), p.state_box, "prior")
        return x, self.observe(x)

    def observe(self, x):
        p = self.pomdp
        return _checked(p.channel.sample(x, self.obs_rng), p.obs_box, p.channel.name)

    def advance(self, x, u):
        p = self.pomdp
        return _checked(p.transition.sample(x, u, self.trans_rng), p.state_box, p.transition.name)


def sample_trajectory(pomdp: Pomdp, controller, horizon: int, seed: int) -> Trajectory:
    """Roll out one path of length ``horizon`` under ``controller``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    roll = Rollout(pomdp, 1, seed)
    controller.reset(1, roll.policy_rng)
    x, y = roll.initial()
    xs, ys, us, cs = [x[0]], [y[0]], [], []
    for _ in range(horizon):
        u = np.asarray(controller.act(y), dtype=int)
        cs.append(float(pomdp.cost(x, u)[0]))
        us.append(int(u[0]))
        x = roll.advance(x, u)
        y = roll.observe(x)
        xs.append(x[0])
        ys.append(y[0])
    return Trajectory(np.array(xs), np.array(ys), np.array(us, dtype=int), np.array(cs), seed)


# --------------------------------------------------------------------------
# Truncated Gaussian helpers


def truncnorm_ppf(q, mean, sigma, lo, hi):
    """Inverse CDF of N(mean, sigma^2) truncated to [lo, hi]."""
    a = (lo - mean) / sigma
    b = (hi - mean) / sigma
    # mirror intervals lying in the upper tail so ndtr keeps relative precision
    mirror = (a + b) > 0
    a2 = np.where(mirror, -b, a)
    b2 = np.where(mirror, -a, b)
    q2 = np.where(mirror, 1.0 - q, q)
    pa, pb = ndtr(a2), ndtr(b2)
    z = ndtri(pa + q2 * (pb - pa))
    z = np.where(mirror, -z, z)
    return np.clip(mean + sigma * z, lo, hi)


def truncnorm_mass(mean, sigma, lo, hi):
    return ndtr((hi - mean) / sigma) - ndtr((lo - mean) / sigma)


def truncnorm_pdf(x, mean, sigma, lo, hi):
    z = (x - mean) / sigma
    pdf = np.exp(-0.5 * z * z) / (sigma * np.sqrt(2 * np.pi))
    inside = (x >= lo) & (x <= hi)
    return np.where(inside, pdf / truncnorm_mass(mean, sigma, lo, hi), 0.0)


# --------------------------------------------------------------------------
# Built-in models


def _linear_model(name, params, informative=True):
    a = float(params.get("a", 0.5))
    sigma = float(params.get("sigma", 0.1))
    obs_sigma = float(params.get("obs_sigma", 0.2 if name == "linear-gaussian-1d" else 0.02))
    lo, hi = (float(v) for v in params.get("box", [-1.0, 1.0]))
    actions = ActionSet(np.asarray(params.get("actions", [-0.5, 0.0, 0.5]), dtype=float))
    discount = float(params.get("discount", 0.5))
    effort = float(params.get("effort", 0.2))
    box = DomainBox([lo], [hi])
    width = hi - lo
    radius = max(abs(lo), abs(hi))
    u_pts = actions.points[:, 0]
    u_scale = max(np.abs(u_pts).max(), 1e-12)

    def step(x, u, xi):
        mean = a * x[:, 0] + u_pts[u]
        return truncnorm_ppf(xi[:, 0], mean, sigma, lo, hi)[:, None]

    def t_density(x, u, xn):
        return truncnorm_pdf(xn[:, 0], a * x[:, 0] + u_pts[u], sigma, lo, hi)

    # W1 between truncated normals with a common window is at most the mean shift
    transition = TransitionKernel(step, 1, abs(a), density=t_density, name="transition")

    if informative:
        phi_max = np.exp(-0.5) / np.sqrt(2 * np.pi)
        z_min = float(truncnorm_mass(lo, obs_sigma, lo, hi))
        alpha_y = width * phi_max / (obs_sigma**2 * z_min)
        k_o = (np.sqrt(2 / np.pi) + 1 / np.sqrt(2 * np.pi)) / (obs_sigma * z_min)

        def obs_sample(x, xi):
            return truncnorm_ppf(xi[:, 0], x[:, 0], obs_sigma, lo, hi)[:, None]

        def g(x, y):
            # density w.r.t. normalized volume on the observation box
            return width * truncnorm_pdf(y[:, 0], x[:, 0], obs_sigma, lo, hi)

        channel = ObservationChannel(obs_sample, g, 1, alpha_y, k_o, name="channel")
    else:
        def obs_sample(x, xi):
            return box.uniform(xi)

        def g(x, y):
            return np.ones(np.atleast_2d(x).shape[0])

        channel = ObservationChannel(obs_sample, g, 1, 0.0, 0.0, lower_bound=1.0, name="channel")

    scale_x = 1.0 - effort

    def cost(x, u):
        return scale_x * (x[:, 0] / radius) ** 2 + effort * np.abs(u_pts[u]) / u_scale

    cost_fn = CostFunction(cost, 1.0, scale_x * 2.0 / radius)
    prior = Prior(box.uniform, 1, density=lambda x: np.full(np.atleast_2d(x).shape[0], 1.0 / width))
    merged = dict(a=a, sigma=sigma, obs_sigma=obs_sigma, box=[lo, hi], actions=u_pts.tolist(),
                  discount=discount, effort=effort)
    if not informative:
        merged.pop("obs_sigma")
    return Pomdp(box, box, actions, transition, channel, cost_fn, discount, prior, name, merged)


def finite_pomdp(state_points, obs_points, transition, channel, cost, prior, actions, discount,
                 name="finite", params=None, state_box=None, obs_box=None):
    """POMDP whose kernels are point-mass mixtures on finitely many points.

    ``transition`` has shape (n_x, n_u, n_x), ``channel`` (n_x, n_obs),
    ``cost`` (n_x, n_u). The reference measure is uniform on the observation
    support points, so g(x, y_j) = n_obs * channel[x, j].
    """
    sp = np.asarray(state_points, dtype=float).reshape(len(state_points), -1)
    op = np.asarray(obs_points, dtype=float).reshape(len(obs_points), -1)
    T = check_stochastic(np.asarray(transition, dtype=float), "transition")
    O = check_stochastic(np.asarray(channel, dtype=float), "channel")
    prior = check_stochastic(np.asarray(prior, dtype=float)[None, :], "prior")[0]
    c = np.asarray(cost, dtype=float)
    n_x, n_u, _ = T.shape
    n_obs = O.shape[1]
    actions = actions if isinstance(actions, ActionSet) else ActionSet(actions)
    if len(actions) != n_u or c.shape != (n_x, n_u):
        raise ValueError("table shapes disagree with the action set")
    state_box = state_box or DomainBox(sp.min(0) - 0.5, sp.max(0) + 0.5)
    obs_box = obs_box or DomainBox(op.min(0) - 0.5, op.max(0) + 0.5)
    cum_T = np.cumsum(T, axis=-1)
    cum_O = np.cumsum(O, axis=-1)
    cum_prior = np.cumsum(prior)

    def locate(points, support):
        d = ((points[:, None, :] - support[None, :, :]) ** 2).sum(-1)
        return d.argmin(axis=1)

    def draw(cum, xi):
        return np.minimum((xi > cum).sum(axis=-1), cum.shape[-1] - 1)

    def step(x, u, xi):
        return sp[draw(cum_T[locate(x, sp), u], xi[:, :1])]

    def obs_sample(x, xi):
        return op[draw(cum_O[locate(x, sp)], xi[:, :1])]

    def g(x, y):
        i, j = locate(x, sp), locate(y, op)
        hit = np.all(np.isclose(op[j], y), axis=-1)
        return np.where(hit, n_obs * O[i, j], 0.0)

    def ref_sample(xi):
        return op[np.minimum((xi[:, 0] * n_obs).astype(int), n_obs - 1)]

    def cost_fn(x, u):
        return c[locate(x, sp), u]

    def dist(a_pts):
        return np.sqrt(((a_pts[:, None, :] - a_pts[None, :, :]) ** 2).sum(-1))

    dx = dist(sp)
    off = ~np.eye(n_x, dtype=bool)
    if n_x > 1:
        k_o = float((np.abs(O[:, None, :] - O[None, :, :]).sum(-1)[off] / dx[off]).max())
        k_c = float(max((np.abs(c[:, None, u] - c[None, :, u])[off] / dx[off]).max() for u in range(n_u)))
        if sp.shape[1] == 1:
            k_t = float(max((wasserstein1_1d(sp[:, 0], T[:, None, u, :], T[None, :, u, :])[off]
                             / dx[off]).max() for u in range(n_u)))
        else:
            k_t = float("nan")
    else:
        k_o = k_c = k_t = 0.0
    dy = dist(op)
    offy = ~np.eye(n_obs, dtype=bool)
    if n_obs > 1:
        gy = n_obs * O
        alpha_y = float((np.abs(gy[:, :, None] - gy[:, None, :])[:, offy] / dy[offy]).max())
    else:
        alpha_y = 0.0
    mixing = tuple(mixing_constant(T[:, u, :]) for u in range(n_u))

    transition_k = TransitionKernel(step, 1, k_t, density=None, mixing=mixing, name="transition")
    channel_k = ObservationChannel(obs_sample, g, 1, alpha_y, k_o,
                                   lower_bound=float(n_obs * O.min()),
                                   reference_sampler=ref_sample, reference_noise_dim=1,
                                   name="channel")
    cost_k = CostFunction(cost_fn, float(np.abs(c).max()), k_c)
    prior_k = Prior(lambda xi: sp[draw(cum_prior, xi[:, :1])], 1)
    tables = FiniteTables(sp, op, T, O, c, prior)
    return Pomdp(state_box, obs_box, actions, transition_k, channel_k, cost_k, float(discount),
                 prior_k, name, dict(params or {}), tables)


def _finite_toy(params):
    n_x = int(params.get("states", 2))
    n_obs = int(params.get("obs", 2))
    n_u = int(params.get("actions", 2))
    flip = float(params.get("flip", 0.2))
    width = float(params.get("obs_width", 0.35))
    discount = float(params.get("discount", 0.5))
    if min(n_x, n_obs, n_u) < 1:
        raise ValueError("finite-toy sizes must be >= 1")
    xs = (np.arange(n_x) + 0.5) / n_x
    ys = (np.arange(n_obs) + 0.5) / n_obs
    # action u shifts the state cyclically by u, then a uniform reset with prob. flip
    T = np.empty((n_x, n_u, n_x))
    for u in range(n_u):
        shift = np.roll(np.eye(n_x), u % n_x, axis=1)
        T[:, u, :] = (1 - flip) * shift + flip / n_x
    O = np.exp(-np.abs(xs[:, None] - ys[None, :]) / width)
    O /= O.sum(axis=1, keepdims=True)
    # cost: being away from state 0 now, plus steering away from it
    idx = np.arange(n_x)
    c = np.empty((n_x, n_u))
    for u in range(n_u):
        c[:, u] = 0.5 * (idx != 0) + 0.5 * (((idx + u) % n_x) != 0)
    prior = np.full(n_x, 1.0 / n_x)
    merged = dict(states=n_x, obs=n_obs, actions=n_u, flip=flip, obs_width=width, discount=discount)
    return finite_pomdp(xs, ys, T, O, c, prior, np.arange(n_u, dtype=float), discount,
                        name="finite-toy", params=merged,
                        state_box=DomainBox([0.0], [1.0]), obs_box=DomainBox([0.0], [1.0]))


BUILTIN_MODELS = {
    "linear-gaussian-1d": lambda p: _linear_model("linear-gaussian-1d", p, informative=True),
    "near-informative-channel": lambda p: _linear_model("near-informative-channel", p, informative=True),
    "noninformative-channel": lambda p: _linear_model("noninformative-channel", p, informative=False),
    "finite-toy": _finite_toy,
}


def builtin_model(name: str, params: Optional[dict] = None) -> Pomdp:
    """Instantiate one of :data:`BUILTIN_MODELS` with parameter overrides."""
    if name not in BUILTIN_MODELS:
        raise KeyError(f"unknown model {name!r}; available: {', '.join(sorted(BUILTIN_MODELS))}")
    return BUILTIN_MODELS[name](dict(params or {}))


# --------------------------------------------------------------------------
# Spot checks of declared constants


@dataclass
class ValidationReport:
    normalization_means: np.ndarray
    normalization_stderr: np.ndarray
    max_lipschitz_ratio_y: float
    max_cost: float
    max_lipschitz_ratio_c: float


def validate_model(pomdp: Pomdp, n_points: int = 100, n_mc: int = 2000, n_pairs: int = 10_000,
                   seed: int = 0, raise_on_failure: bool = True) -> ValidationReport:
    """Spot-check channel normalization and the declared Lipschitz/sup constants."""
    rng = np.random.default_rng(seed)
    sb = pomdp.state_box
    xs = pomdp.prior.sample(n_points, rng)
    means = np.empty(n_points)
    errs = np.empty(n_points)
    k = pomdp.reference_noise_dim
    for i in range(n_points):
        ys = pomdp.reference_sample(rng.random((n_mc, k)))
        vals = pomdp.channel.density(np.repeat(xs[i:i + 1], n_mc, axis=0), ys)
        means[i] = vals.mean()
        errs[i] = vals.std(ddof=1) / np.sqrt(n_mc)
    norm_ok = np.all(np.abs(means - 1.0) <= 3 * errs + 1e-12)

    xp = sb.uniform(rng.random((n_pairs, sb.dim)))
    if pomdp.finite is not None:
        xp = pomdp.prior.sample(n_pairs, rng)
    y1 = pomdp.reference_sample(rng.random((n_pairs, k)))
    y2 = pomdp.reference_sample(rng.random((n_pairs, k)))
    dy = np.linalg.norm(y1 - y2, axis=1)
    gap = np.abs(pomdp.channel.density(xp, y1) - pomdp.channel.density(xp, y2))
    keep = dy > 0
    ratio_y = float((gap[keep] / dy[keep]).max()) if keep.any() else 0.0
    lip_ok = np.all(gap <= pomdp.channel.lipschitz_y * dy + 1e-9)

    u = rng.integers(0, pomdp.n_actions, n_pairs)
    x2 = pomdp.prior.sample(n_pairs, rng) if pomdp.finite is not None else sb.uniform(rng.random((n_pairs, sb.dim)))
    c1, c2 = pomdp.cost(xp, u), pomdp.cost(x2, u)
    max_cost = float(np.abs(np.concatenate([c1, c2])).max())
    dx = np.linalg.norm(xp - x2, axis=1)
    keepx = dx > 0
    ratio_c = float((np.abs(c1 - c2)[keepx] / dx[keepx]).max()) if keepx.any() else 0.0
    cost_ok = max_cost <= pomdp.cost.sup_norm + 1e-12
    costlip_ok = ratio_c <= pomdp.cost.lipschitz + 1e-9

    report = ValidationReport(means, errs, ratio_y, max_cost, ratio_c)
    if raise_on_failure:
        if not norm_ok:
            raise ModelValidationError("channel density does not integrate to 1 against the reference measure")
        if not lip_ok:
            raise ModelValidationError(f"channel Lipschitz constant {pomdp.channel.lipschitz_y} violated "
                                       f"(observed ratio {ratio_y})")
        if not cost_ok:
            raise ModelValidationError(f"cost exceeds declared sup norm {pomdp.cost.sup_norm}")
        if not costlip_ok:
            raise ModelValidationError(f"cost Lipschitz constant {pomdp.cost.lipschitz} violated")
    return report
