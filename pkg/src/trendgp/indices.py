"""Trend direction and trend instability indices.

The Trend Direction Index (TDI) is the posterior probability that the
latent derivative exceeds a threshold (zero by default) at a point in
time.  The Expected Trend Instability (ETI) is the expected number of
sign changes of the derivative on an interval; its local intensity comes
from the level-crossing rate of the posterior (df, d2f) pair and is
integrated by composite Simpson quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .kernels import AssumptionError, require_assumptions
from .posterior import Dataset, Hyperparams, MarginalMoments, joint_posterior, marginal_moments, sample_paths

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class TdiCurve:
    """TDI along a grid, anchored at the conditioning time.

    The value at grid point u is TDI(anchor, u - anchor): the probability of
    a positive trend at u given the full sample, looking backwards for
    u < anchor and forecasting for u > anchor.
    """

    grid: np.ndarray
    values: np.ndarray
    anchor: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.shape != values.shape:
            raise ValueError("grid and values must have equal length")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("TDI values must lie in [0, 1]")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class LocalEtiTerms:
    """Ingredients of the local crossing intensity at one time point."""

    lam: float
    omega: float
    zeta: float


@dataclass(frozen=True)
class CrossingProcess:
    """Cumulative count of derivative sign changes along a grid."""

    grid: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts[-1]) if self.counts.size else 0


def _phi(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.asarray(x) ** 2)


def _gauss_upper(mean, var, threshold=0.0):
    """P(N(mean, var) > threshold), guarding the degenerate-variance case."""
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0.0):
        raise AssumptionError(
            "posterior variance of the trend is not positive (assumption A4 fails pointwise)"
        )
    z = (np.asarray(mean, dtype=float) - threshold) / np.sqrt(var)
    return 0.5 + 0.5 * erf(z / _SQRT2)


def tdi(data: Dataset, theta: Hyperparams, t: float, delta: float = 0.0, threshold: float = 0.0) -> float:
    """Probability that the latent trend at t + delta exceeds `threshold`."""
    require_assumptions(theta.kernel, require_eti=False)
    mm = marginal_moments(data, theta, [float(t) + float(delta)])
    return float(_gauss_upper(mm.mu_df, mm.var_df, threshold)[0])


def tdi_curve(
    data: Dataset,
    theta: Hyperparams,
    grid,
    anchor: float,
    threshold: float = 0.0,
) -> TdiCurve:
    """Elementwise TDI over a grid under the anchor reparameterization."""
    require_assumptions(theta.kernel, require_eti=False)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    mm = marginal_moments(data, theta, grid)
    values = _gauss_upper(mm.mu_df, mm.var_df, threshold)
    return TdiCurve(grid=grid, values=values, anchor=float(anchor))


def _local_eti_from_moments(mm: MarginalMoments):
    """Vectorized crossing intensity from pointwise (df, d2f) moments."""
    if np.any(mm.var_df <= 0):
        raise AssumptionError("Var[df] <= 0 at an evaluation point (assumption A4)")
    if np.any(mm.var_d2f <= 0):
        raise AssumptionError("Var[d2f] <= 0 at an evaluation point (assumption A4)")
    s1 = np.sqrt(mm.var_df)
    s2 = np.sqrt(mm.var_d2f)
    omega = mm.cov_df_d2f / (s1 * s2)
    if np.any(np.abs(omega) >= 1.0):
        raise AssumptionError("|Cor[df, d2f]| >= 1 at an evaluation point (assumption A4)")
    root = np.sqrt(1.0 - omega**2)
    lam = s2 / s1 * root
    zeta = (mm.mu_df * s2 * omega / s1 - mm.mu_d2f) / (s2 * root)
    rate = lam * _phi(mm.mu_df / s1) * (2.0 * _phi(zeta) + zeta * erf(zeta / _SQRT2))
    return np.maximum(rate, 0.0), lam, omega, zeta


def local_eti(data: Dataset, theta: Hyperparams, t: float) -> tuple[float, LocalEtiTerms]:
    """Local expected rate of trend sign changes at time t."""
    require_assumptions(theta.kernel, require_eti=True)
    mm = marginal_moments(data, theta, [float(t)], need_d2f=True)
    rate, lam, omega, zeta = _local_eti_from_moments(mm)
    return float(rate[0]), LocalEtiTerms(lam=float(lam[0]), omega=float(omega[0]), zeta=float(zeta[0]))


def local_eti_curve(data: Dataset, theta: Hyperparams, grid) -> tuple[np.ndarray, np.ndarray]:
    """Local ETI over a grid; returns (grid, rates)."""
    require_assumptions(theta.kernel, require_eti=True)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    mm = marginal_moments(data, theta, grid, need_d2f=True)
    rate, _, _, _ = _local_eti_from_moments(mm)
    return grid, rate


def eti(data: Dataset, theta: Hyperparams, interval, n_quad: int = 512) -> float:
    """Expected number of trend sign changes on [a, b] by Simpson quadrature."""
    a, b = float(interval[0]), float(interval[1])
    if not a < b:
        if a == b:
            return 0.0
        raise ValueError(f"interval must satisfy a <= b, got ({a}, {b})")
    if n_quad < 2:
        raise ValueError(f"n_quad must be >= 2, got {n_quad}")
    n_quad += n_quad % 2  # Simpson needs an even panel count
    require_assumptions(theta.kernel, require_eti=True)
    nodes = np.linspace(a, b, n_quad + 1)
    mm = marginal_moments(data, theta, nodes, need_d2f=True)
    rate, _, _, _ = _local_eti_from_moments(mm)
    h = (b - a) / n_quad
    weights = np.ones(n_quad + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return float(h / 3.0 * np.dot(weights, rate))


def count_crossings(df_path, grid=None) -> CrossingProcess:
    """Cumulative strict sign changes of consecutive values.

    An exact zero between opposite signs counts as a single crossing (and a
    run of zeros between opposite signs also counts once); a zero touch that
    returns to the same sign does not count.
    """
    values = np.asarray(df_path, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("a crossing count needs at least 2 grid points")
    if grid is None:
        grid = np.arange(values.size, dtype=float)
    else:
        grid = np.asarray(grid, dtype=float).ravel()
        if grid.shape != values.shape:
            raise ValueError("grid and df_path must have equal length")
    counts = np.zeros(values.size, dtype=int)
    last_sign = 0
    total = 0
    for i, v in enumerate(values):
        s = 0 if v == 0.0 else (1 if v > 0.0 else -1)
        if s != 0:
            if last_sign != 0 and s != last_sign:
                total += 1
            last_sign = s
        counts[i] = total
    return CrossingProcess(grid=grid, counts=counts)


def crossing_prob_mc(
    data: Dataset,
    theta: Hyperparams,
    interval,
    k: int,
    grid_density: int = 200,
    seed: int = 0,
) -> float:
    """Monte-Carlo estimate of P(at least one trend sign change on [a, b])."""
    a, b = float(interval[0]), float(interval[1])
    if not a <= b:
        raise ValueError(f"interval must satisfy a <= b, got ({a}, {b})")
    require_assumptions(theta.kernel, require_eti=True)
    if a == b or k == 0:
        return 0.0
    grid = np.linspace(a, b, max(int(grid_density), 2))
    jp = joint_posterior(data, theta, grid, blocks=("df",))
    paths = sample_paths(jp, k, seed)
    crossed = 0
    for row in paths:
        if count_crossings(row, grid).total > 0:
            crossed += 1
    return crossed / k


def crosspoint(curve: TdiCurve, window, threshold: float = 0.5):
    """Earliest time in the window where the TDI reaches the threshold.

    Linear interpolation refines the crossing between the bracketing grid
    points; returns None when the threshold is never reached.
    """
    a, b = float(window[0]), float(window[1])
    grid, values = curve.grid, curve.values
    if grid.size < 2 or not np.all(np.diff(grid) > 0):
        raise ValueError("crosspoint needs a strictly increasing grid of >= 2 points")
    if a < grid[0] - 1e-12 or b > grid[-1] + 1e-12 or a > b:
        raise ValueError("window must lie within the curve's grid span")
    v_a = float(np.interp(a, grid, values))
    if v_a >= threshold:
        return a
    prev_t, prev_v = a, v_a
    for t, v in zip(grid, values):
        if t <= a:
            continue
        if t > b:
            break
        if v >= threshold:
            if v == prev_v:
                return float(t)
            frac = (threshold - prev_v) / (v - prev_v)
            return float(prev_t + frac * (t - prev_t))
        prev_t, prev_v = float(t), float(v)
    v_b = float(np.interp(b, grid, values))
    if v_b >= threshold and b > prev_t:
        frac = (threshold - prev_v) / (v_b - prev_v)
        return float(prev_t + frac * (b - prev_t))
    return None
