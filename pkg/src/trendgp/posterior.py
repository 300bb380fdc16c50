"""Joint posterior of a latent Gaussian process and its first two derivatives.

Conditioning a GP prior on noisy observations keeps the joint law of
(f, df, d2f) Gaussian on any finite evaluation grid; the moments are the
usual kriging formulas with the covariance replaced by the appropriate
mixed partial.  All nine posterior blocks share a single lower-triangular
factorization of C(t, t) + sigma^2 I.

Times are internally mapped to [0, 1] before kernel evaluation (with the
length-scale shrunk by the window length) and the derivative blocks are
mapped back by the chain rule, so calendar-time inputs behave exactly like
unit-interval ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .kernels import (
    AssumptionError,
    KernelSpec,
    MeanSpec,
    kernel_gram,
    mean_eval,
    validate_assumptions,
)

BLOCK_ORDER = ("f", "df", "d2f")
_DERIV_ORDER = {"f": 0, "df": 1, "d2f": 2}

# Jitter ladder for factorizations, in units of alpha^2 (plus sigma^2 where
# it already sits on the diagonal).  The first rung is the documented
# 1e-10 * alpha^2 safeguard; later rungs only trigger for genuinely
# degenerate inputs.
_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


class FactorizationError(RuntimeError):
    """Covariance factorization failed even after jitter."""


@dataclass(frozen=True)
class Dataset:
    """Scalar time series: strictly increasing times and one outcome each.

    Missing observations are simply absent rows; irregular spacing is fine.
    """

    ts: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=float).ravel()
        ys = np.asarray(self.ys, dtype=float).ravel()
        if ts.shape != ys.shape:
            raise ValueError(f"ts and ys must have equal length, got {ts.size} and {ys.size}")
        if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(ys))):
            raise ValueError("ts and ys must be finite")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("ts must be strictly increasing (duplicate times are rejected)")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.ts.size

    @property
    def span(self) -> tuple[float, float]:
        return float(self.ts[0]), float(self.ts[-1])


@dataclass(frozen=True)
class Hyperparams:
    """Full model parameterization: mean coefficients, kernel, noise SD."""

    mean: MeanSpec
    kernel: KernelSpec
    sigma: float

    def __post_init__(self):
        if not (self.sigma >= 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be non-negative and finite, got {self.sigma}")


@dataclass(frozen=True)
class JointPosterior:
    """Gaussian law of the latent blocks on a grid.

    mu stacks the per-block means in the fixed order f, df, d2f (restricted
    to `blocks`); sigma_mat is the matching block covariance matrix.
    """

    grid: np.ndarray
    blocks: tuple[str, ...]
    mu: np.ndarray
    sigma_mat: np.ndarray

    @property
    def p(self) -> int:
        return self.grid.size

    def _index(self, block: str) -> int:
        try:
            return self.blocks.index(block)
        except ValueError:
            raise KeyError(f"block {block!r} not present; have {self.blocks}") from None

    def mean_block(self, block: str) -> np.ndarray:
        i = self._index(block)
        return self.mu[i * self.p : (i + 1) * self.p]

    def cov_block(self, row: str, col: str) -> np.ndarray:
        i, j = self._index(row), self._index(col)
        p = self.p
        return self.sigma_mat[i * p : (i + 1) * p, j * p : (j + 1) * p]


@dataclass(frozen=True)
class MarginalMoments:
    """Pointwise posterior moments needed by the trend indices."""

    grid: np.ndarray
    mu_f: np.ndarray
    var_f: np.ndarray
    mu_df: np.ndarray
    var_df: np.ndarray
    mu_d2f: np.ndarray | None = None
    var_d2f: np.ndarray | None = None
    cov_df_d2f: np.ndarray | None = None


def _reject_inadmissible(kernel: KernelSpec) -> None:
    violation = validate_assumptions(kernel, require_eti=False)
    if violation is not None:
        raise AssumptionError(str(violation))


def _auto_blocks(kernel: KernelSpec) -> tuple[str, ...]:
    return BLOCK_ORDER[: kernel.max_order() + 1]


def _resolve_blocks(kernel: KernelSpec, blocks) -> tuple[str, ...]:
    if blocks is None:
        return _auto_blocks(kernel)
    blocks = tuple(blocks)
    if not blocks or any(b not in BLOCK_ORDER for b in blocks):
        raise ValueError(f"blocks must be a non-empty subset of {BLOCK_ORDER}, got {blocks}")
    if list(blocks) != [b for b in BLOCK_ORDER if b in blocks]:
        raise ValueError(f"blocks must respect the order {BLOCK_ORDER}, got {blocks}")
    need = max(_DERIV_ORDER[b] for b in blocks)
    if need > kernel.max_order():
        raise AssumptionError(
            f"{kernel.family} does not admit the {blocks[-1]} block (assumption A3)"
        )
    return blocks


def _chol(mat: np.ndarray, scale: float) -> np.ndarray:
    if not np.all(np.isfinite(mat)):
        raise FactorizationError("covariance matrix contains non-finite entries")
    eye = np.eye(mat.shape[0])
    for jit in _JITTERS:
        try:
            return np.linalg.cholesky(mat + jit * scale * eye if jit else mat)
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"covariance factorization failed after jitter up to {_JITTERS[-1]:g} * scale"
    )


class _Conditioned:
    """Shared state for conditioning one dataset under one Hyperparams.

    Holds the time rescaling, the factorized observation covariance and the
    whitened residual so that repeated grid evaluations stay O(n^2 p).
    """

    def __init__(self, data: Dataset, theta: Hyperparams):
        _reject_inadmissible(theta.kernel)
        self.data = data
        self.theta = theta

    def _prepare(self, grid: np.ndarray) -> None:
        ts = self.data.ts
        pts = np.concatenate([ts, grid]) if ts.size else grid
        lo, hi = float(np.min(pts)), float(np.max(pts))
        self.t0 = lo
        self.L = hi - lo if hi > lo else 1.0
        self.kernel_s = self.theta.kernel.with_rho(self.theta.kernel.rho / self.L)
        self.ts_s = (ts - self.t0) / self.L
        if ts.size:
            sig2 = self.theta.sigma**2
            K = kernel_gram(self.kernel_s, self.ts_s, self.ts_s) + sig2 * np.eye(ts.size)
            self.chol = _chol(K, self.theta.kernel.alpha**2)
            resid = self.data.ys - mean_eval(self.theta.mean, 0, ts)
            self.white_resid = solve_triangular(self.chol, resid, lower=True)
        else:
            self.chol = None
            self.white_resid = None

    def _gram(self, grid_s: np.ndarray, order: int) -> np.ndarray:
        # Cross covariance between the order-th derivative block on the grid
        # and the observations, mapped back to original time units.
        g = kernel_gram(self.kernel_s, grid_s, self.ts_s, order, 0)
        return g / self.L**order

    def _pp(self, grid_s: np.ndarray, order_s: int, order_t: int) -> np.ndarray:
        g = kernel_gram(self.kernel_s, grid_s, grid_s, order_s, order_t)
        return g / self.L ** (order_s + order_t)

    def joint(self, grid, blocks=None) -> JointPosterior:
        grid = np.atleast_1d(np.asarray(grid, dtype=float))
        if grid.size == 0 or not np.all(np.isfinite(grid)):
            raise ValueError("grid must be a non-empty finite time vector")
        blocks = _resolve_blocks(self.theta.kernel, blocks)
        self._prepare(grid)
        grid_s = (grid - self.t0) / self.L
        p = grid.size
        nb = len(blocks)
        orders = [_DERIV_ORDER[b] for b in blocks]

        mu = np.empty(nb * p)
        cov = np.empty((nb * p, nb * p))
        if self.chol is not None:
            whitened = [
                solve_triangular(self.chol, self._gram(grid_s, o).T, lower=True) for o in orders
            ]
        else:
            whitened = [None] * nb
        for i, oi in enumerate(orders):
            m = mean_eval(self.theta.mean, oi, grid)
            m = np.broadcast_to(np.asarray(m, dtype=float), (p,)).copy()
            if whitened[i] is not None:
                m += whitened[i].T @ self.white_resid
            mu[i * p : (i + 1) * p] = m
            for j, oj in enumerate(orders[i:], start=i):
                blk = self._pp(grid_s, oi, oj)
                if whitened[i] is not None:
                    blk = blk - whitened[i].T @ whitened[j]
                if i == j:
                    blk = 0.5 * (blk + blk.T)
                cov[i * p : (i + 1) * p, j * p : (j + 1) * p] = blk
                if i != j:
                    cov[j * p : (j + 1) * p, i * p : (i + 1) * p] = blk.T
        return JointPosterior(grid=grid, blocks=blocks, mu=mu, sigma_mat=cov)

    def marginal(self, grid, need_d2f: bool = False) -> MarginalMoments:
        grid = np.atleast_1d(np.asarray(grid, dtype=float))
        if grid.size == 0 or not np.all(np.isfinite(grid)):
            raise ValueError("grid must be a non-empty finite time vector")
        kernel = self.theta.kernel
        max_needed = 2 if need_d2f else 1
        if kernel.max_order() < max_needed:
            raise AssumptionError(
                f"{kernel.family} does not admit derivative order {max_needed} (assumption A3)"
            )
        self._prepare(grid)
        grid_s = (grid - self.t0) / self.L
        p = grid.size

        def prior_diag(os: int, ot: int) -> np.ndarray:
            val = kernel_gram(self.kernel_s, np.zeros(1), np.zeros(1), os, ot)[0, 0]
            return np.full(p, val / self.L ** (os + ot))

        mus, variances = [], []
        orders = range(max_needed + 1)
        if self.chol is not None:
            whitened = [
                solve_triangular(self.chol, self._gram(grid_s, o).T, lower=True) for o in orders
            ]
        else:
            whitened = [None] * (max_needed + 1)
        for o in orders:
            m = mean_eval(self.theta.mean, o, grid)
            m = np.broadcast_to(np.asarray(m, dtype=float), (p,)).copy()
            v = prior_diag(o, o)
            if whitened[o] is not None:
                m += whitened[o].T @ self.white_resid
                v = v - np.sum(whitened[o] ** 2, axis=0)
            mus.append(m)
            variances.append(v)
        cov_12 = None
        if need_d2f:
            cov_12 = prior_diag(1, 2)
            if whitened[1] is not None:
                cov_12 = cov_12 - np.sum(whitened[1] * whitened[2], axis=0)
        return MarginalMoments(
            grid=grid,
            mu_f=mus[0],
            var_f=variances[0],
            mu_df=mus[1],
            var_df=variances[1],
            mu_d2f=mus[2] if need_d2f else None,
            var_d2f=variances[2] if need_d2f else None,
            cov_df_d2f=cov_12,
        )


def prior_joint(theta: Hyperparams, grid, blocks=None) -> JointPosterior:
    """Joint prior of the latent blocks on a grid (no conditioning)."""
    empty = Dataset(ts=np.empty(0), ys=np.empty(0))
    return _Conditioned(empty, theta).joint(grid, blocks)


def joint_posterior(data: Dataset, theta: Hyperparams, grid, blocks=None) -> JointPosterior:
    """Posterior of (f, df, d2f) given the data; prior when the data are empty."""
    return _Conditioned(data, theta).joint(grid, blocks)


def marginal_moments(data: Dataset, theta: Hyperparams, grid, need_d2f: bool = False) -> MarginalMoments:
    """Pointwise posterior means/variances of f, df (and optionally d2f).

    Computes only the diagonal of each covariance block, which is what the
    trend indices need, at O(n^2) per grid point.
    """
    return _Conditioned(data, theta).marginal(grid, need_d2f=need_d2f)


def predictive(data: Dataset, theta: Hyperparams, t_star: float) -> tuple[float, float]:
    """Mean and variance of a new observation at t_star."""
    mm = marginal_moments(data, theta, [float(t_star)])
    return float(mm.mu_f[0]), float(mm.var_f[0] + theta.sigma**2)


def _factor_cov(cov: np.ndarray) -> np.ndarray:
    """A factor F with F F^T = cov, tolerating PSD rank deficiency.

    Plain Cholesky when the matrix is strictly positive definite, otherwise
    an eigendecomposition with negative eigenvalues clipped at zero; the
    clipped route is exact for singular PSD matrices (point masses sample
    as point masses).
    """
    if not np.all(np.isfinite(cov)):
        raise FactorizationError("covariance matrix contains non-finite entries")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    sym = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def sample_paths(jp: JointPosterior, k: int, seed: int) -> np.ndarray:
    """Draw k independent joint paths from N(mu, sigma_mat); deterministic per seed."""
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    dim = jp.mu.size
    if k == 0:
        return np.empty((0, dim))
    factor = _factor_cov(jp.sigma_mat)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((k, dim))
    return jp.mu[None, :] + z @ factor.T
