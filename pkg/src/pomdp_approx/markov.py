"""Primitives on finite stochastic kernels and probability vectors.

Total variation is measured as the L1 norm ``sum |p - q|`` throughout the
package, so distances between probability vectors lie in ``[0, 2]``.
"""

import numpy as np

ROW_TOL = 1e-9


def check_stochastic(kernel, name="kernel", tol=ROW_TOL):
    """Raise ``ValueError`` unless every row of ``kernel`` is a distribution."""
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim < 2:
        raise ValueError(f"{name} must be at least 2-d, got shape {kernel.shape}")
    if np.any(kernel < -tol):
        raise ValueError(f"{name} has negative entries")
    sums = kernel.sum(axis=-1)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        row = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{name} row {row} sums to {sums[row]!r}, not 1")
    return kernel


def tv_distance(p, q):
    """L1 distance between probability vectors (broadcasts over leading axes)."""
    return np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def dobrushin_finite(kernel):
    """Dobrushin coefficient of a finite stochastic matrix.

    Returns ``min over row pairs (x, x') of sum_z min(K(z|x), K(z|x'))``. For
    finite alphabets the infimum over partitions is attained by the finest
    partition, so this is exact.

    >>> dobrushin_finite([[0.8, 0.2], [0.3, 0.7]])
    0.5
    """
    kernel = check_stochastic(kernel, "kernel")
    if kernel.ndim != 2:
        raise ValueError("dobrushin_finite expects a 2-d matrix")
    n = kernel.shape[0]
    if n == 1:
        return 1.0
    overlap = np.minimum(kernel[:, None, :], kernel[None, :, :]).sum(axis=-1)
    iu = np.triu_indices(n, k=1)
    return float(overlap[iu].min())


def mixing_constant(kernel):
    """Largest eps in (0, 1] with eps <= K(z|x)/lam(z) <= 1/eps.

    The reference measure ``lam`` is the column average of the rows. Returns
    0.0 when some entry vanishes on the support of ``lam``.
    """
    kernel = check_stochastic(kernel, "kernel")
    lam = kernel.mean(axis=0)
    cols = lam > 0
    sub = kernel[:, cols]
    if np.any(sub <= 0):
        return 0.0
    ratio = sub / lam[cols]
    return float(min(1.0, ratio.min(), 1.0 / ratio.max()))


def hilbert_metric(mu, nu):
    """Hilbert projective distance between two nonnegative vectors.

    ``log(max_i mu_i/nu_i * max_j nu_j/mu_j)`` when the supports coincide,
    ``inf`` otherwise.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise ValueError(f"shape mismatch {mu.shape} vs {nu.shape}")
    smu, snu = mu > 0, nu > 0
    if not np.array_equal(smu, snu) or not smu.any():
        return float("inf")
    ratio = mu[smu] / nu[smu]
    return float(np.log(ratio.max() / ratio.min()))


def hilbert_metric_rows(mu, nu):
    """Row-wise :func:`hilbert_metric` for 2-d arrays."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    smu, snu = mu > 0, nu > 0
    comparable = np.all(smu == snu, axis=-1) & smu.any(axis=-1)
    both = smu & snu
    ratio = mu / np.where(snu, nu, 1.0)
    hi = np.where(both, ratio, -np.inf).max(axis=-1)
    lo = np.where(both, ratio, np.inf).min(axis=-1)
    out = np.full(comparable.shape, np.inf)
    out[comparable] = np.log(hi[comparable] / lo[comparable])
    return out


def stationary_distribution(kernel, tol=1e-13, max_iter=100_000):
    """Invariant distribution of a finite stochastic matrix by power iteration."""
    kernel = check_stochastic(kernel, "kernel")
    n = kernel.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ kernel
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = 0.5 * (pi + nxt)  # lazy step avoids oscillation on periodic chains
    return pi


def wasserstein1_1d(points, p, q):
    """W1 between two distributions on the same sorted 1-d support."""
    points = np.asarray(points, dtype=float)
    order = np.argsort(points)
    pts = points[order]
    cdf_gap = np.cumsum(np.asarray(p)[..., order] - np.asarray(q)[..., order], axis=-1)
    return (np.abs(cdf_gap[..., :-1]) * np.diff(pts)).sum(axis=-1)
