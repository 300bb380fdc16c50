"""Shared oracles and instance generators for the test suite.

The finite-difference oracle runs in high-precision arithmetic so that the
h^2 truncation error of the central stencils is the only error term; the
conditioning oracle builds the full dense joint normal and conditions by a
generic solve, independent of the production Cholesky path.
"""

import math

import mpmath as mp
import numpy as np
import pytest

from trendgp.kernels import KernelSpec, MeanSpec, kernel_gram, mean_eval
from trendgp.posterior import Dataset, Hyperparams

mp.mp.dps = 50


def kernel_mp(family, alpha, rho, nu, s, t):
    """Covariance evaluated in arbitrary precision."""
    alpha, rho, s, t = map(mp.mpf, (alpha, rho, s, t))
    d = s - t
    if family == "SE":
        return alpha**2 * mp.e ** (-(d**2) / (2 * rho**2))
    if family == "RQ":
        nu = mp.mpf(nu)
        return alpha**2 * (1 + d**2 / (2 * rho**2 * nu)) ** (-nu)
    if family == "M52":
        x = mp.sqrt(5) * abs(d) / rho
        return alpha**2 * (1 + x + x**2 / 3) * mp.e ** (-x)
    if family == "M32":
        x = mp.sqrt(3) * abs(d) / rho
        return alpha**2 * (1 + x) * mp.e ** (-x)
    if family == "OU":
        return alpha**2 * mp.e ** (-abs(d) / rho)
    raise ValueError(family)


def fd_partial(spec: KernelSpec, order_s: int, order_t: int, s: float, t: float, h: float) -> float:
    """Central finite differences of the covariance at step h, in mpmath.

    Second-order accurate in both arguments; with 50-digit arithmetic the
    roundoff term is negligible even for the (2,2) stencil.
    """
    nu = spec.nu

    def c(i: int, j: int):
        return kernel_mp(spec.family, spec.alpha, spec.rho, nu, s + i * h, t + j * h)

    hh = mp.mpf(h)
    stencils = {
        0: ((0, mp.mpf(1)),),
        1: ((-1, mp.mpf(-0.5) / hh), (1, mp.mpf(0.5) / hh)),
        2: ((-1, 1 / hh**2), (0, -2 / hh**2), (1, 1 / hh**2)),
    }
    total = mp.mpf(0)
    for i, wi in stencils[order_s]:
        for j, wj in stencils[order_t]:
            total += wi * wj * c(i, j)
    return float(total)


def fd_rel_err(
    spec: KernelSpec, order_s: int, order_t: int, s: float, t: float, h_factor: float = 1e-4
) -> float:
    """Relative gap between the analytic partial and the h = h_factor * rho stencil.

    Pointwise relative error is ill-defined near zeros of a partial (and the
    stencil's own h^2 truncation dominates there), so the denominator is
    floored at 5% of the partial's characteristic magnitude
    alpha^2 / rho^order.  A wrong derivative formula is off by O(1) on that
    scale, so the floor cannot mask real defects.
    """
    from trendgp.kernels import kernel_partial

    got = kernel_partial(spec, order_s, order_t, s, t)
    want = fd_partial(spec, order_s, order_t, s, t, h_factor * spec.rho)
    scale = spec.alpha**2 / spec.rho ** (order_s + order_t)
    return abs(got - want) / max(abs(want), 5e-2 * scale)


def schur_oracle(data: Dataset, theta: Hyperparams, grid, orders=(0, 1, 2)):
    """Dense conditioning oracle: full joint normal + generic linear solve."""
    grid = np.asarray(grid, dtype=float)
    p = grid.size
    ker, mean = theta.kernel, theta.mean
    prior_cov = np.block(
        [[kernel_gram(ker, grid, grid, a, b) for b in orders] for a in orders]
    )
    prior_mu = np.concatenate(
        [np.broadcast_to(np.asarray(mean_eval(mean, a, grid), dtype=float), (p,)) for a in orders]
    )
    if data.n == 0:
        return prior_mu, prior_cov
    cross = np.vstack([kernel_gram(ker, grid, data.ts, a, 0) for a in orders])
    obs_cov = kernel_gram(ker, data.ts, data.ts) + theta.sigma**2 * np.eye(data.n)
    resid = data.ys - mean_eval(mean, 0, data.ts)
    solve = np.linalg.solve
    mu = prior_mu + cross @ solve(obs_cov, resid)
    cov = prior_cov - cross @ solve(obs_cov, cross.T)
    return mu, cov


def random_kernel(rng, families=("SE", "RQ", "M52"), alpha_range=(0.3, 3.0), rho_range=(0.2, 2.0)):
    family = families[rng.integers(len(families))]
    alpha = float(rng.uniform(*alpha_range))
    rho = float(rng.uniform(*rho_range))
    nu = float(rng.uniform(0.3, 8.0)) if family == "RQ" else None
    return KernelSpec(family, alpha, rho, nu)


def random_instance(rng, n=None, families=("SE", "RQ", "M52"), sigma_range=(0.05, 0.5)):
    """A random dataset/hyper-parameter pair with a well-conditioned gram."""
    n = int(rng.integers(3, 9)) if n is None else n
    kernel = random_kernel(rng, families)
    degree = int(rng.integers(0, 3))
    betas = tuple(rng.normal(0, 1, degree + 1))
    sigma = float(rng.uniform(*sigma_range)) * kernel.alpha
    theta = Hyperparams(MeanSpec(betas), kernel, sigma)
    span = float(rng.uniform(1.0, 4.0))
    ts = np.sort(rng.uniform(0.0, span, n))
    while np.any(np.diff(ts) <= 1e-6):
        ts = np.sort(rng.uniform(0.0, span, n))
    f = mean_eval(theta.mean, 0, ts) + np.linalg.cholesky(
        kernel_gram(kernel, ts, ts) + 1e-10 * kernel.alpha**2 * np.eye(n)
    ) @ rng.standard_normal(n)
    ys = f + sigma * rng.standard_normal(n)
    return Dataset(ts, ys), theta


def count_sign_flips(paths: np.ndarray) -> np.ndarray:
    """Vectorized strict sign-change count per row (continuous draws: no ties)."""
    return np.sum(paths[:, 1:] * paths[:, :-1] < 0, axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
