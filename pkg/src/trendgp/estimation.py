"""Hyper-parameter estimation: marginal-likelihood ML and fully Bayesian MCMC.

The latent function is always marginalized analytically, so the marginal
likelihood of the observations is a plain multivariate normal density and
the remaining parameter space is at most six-dimensional.  ML maximizes it
by a multi-start simplex over the log-transformed kernel and noise
parameters with the mean coefficients profiled out by generalized least
squares.  The Bayesian path samples the same space (mean coefficients
included) with an adaptive random-walk Metropolis chain targeting
prior x marginal likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm as _norm, t as _t

from .kernels import AssumptionError, KernelSpec, MeanSpec, kernel_gram, mean_eval, require_assumptions
from .posterior import Dataset, FactorizationError, Hyperparams, _chol, marginal_moments
from .indices import _gauss_upper, _local_eti_from_moments

_LOG_2PI = math.log(2.0 * math.pi)

# An RQ shape parameter beyond this has numerically converged to the SE
# kernel; fits are then reported as an SE substitution.
NU_DIVERGENCE = 1e6


class FitError(RuntimeError):
    """Maximum-likelihood fitting failed on every restart."""


class McmcError(RuntimeError):
    """The sampler could not be initialized or diverged on every chain."""


# ---------------------------------------------------------------------------
# priors


def _t_lognorm(df: float, scale: float) -> float:
    return (
        math.lgamma(0.5 * (df + 1.0))
        - math.lgamma(0.5 * df)
        - 0.5 * math.log(df * math.pi)
        - math.log(scale)
    )


@dataclass(frozen=True)
class StudentTPrior:
    """Location-scale Student-T prior on the whole real line."""

    loc: float
    scale: float
    df: float

    def __post_init__(self):
        if not (self.scale > 0 and self.df > 0):
            raise ValueError("scale and df must be positive")
        object.__setattr__(self, "_lognorm", _t_lognorm(self.df, self.scale))

    def logpdf(self, x: float) -> float:
        z = (x - self.loc) / self.scale
        return self._lognorm - 0.5 * (self.df + 1.0) * math.log1p(z * z / self.df)

    def ppf(self, q: float) -> float:
        return float(_t.ppf(q, self.df, loc=self.loc, scale=self.scale))


@dataclass(frozen=True)
class HalfStudentTPrior:
    """Student-T truncated to [0, inf) and renormalized."""

    loc: float
    scale: float
    df: float

    def __post_init__(self):
        if not (self.scale > 0 and self.df > 0):
            raise ValueError("scale and df must be positive")
        f0 = float(_t.cdf(0.0, self.df, loc=self.loc, scale=self.scale))
        object.__setattr__(self, "_cdf0", f0)
        object.__setattr__(self, "_lognorm", _t_lognorm(self.df, self.scale) - math.log1p(-f0))

    def logpdf(self, x: float) -> float:
        if x < 0:
            return -math.inf
        z = (x - self.loc) / self.scale
        return self._lognorm - 0.5 * (self.df + 1.0) * math.log1p(z * z / self.df)

    def ppf(self, q: float) -> float:
        return float(_t.ppf(self._cdf0 + q * (1.0 - self._cdf0), self.df, loc=self.loc, scale=self.scale))


@dataclass(frozen=True)
class HalfNormalPrior:
    """Normal truncated to [0, inf) and renormalized."""

    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        f0 = float(_norm.cdf(0.0, loc=self.loc, scale=self.scale))
        object.__setattr__(self, "_cdf0", f0)
        object.__setattr__(
            self,
            "_lognorm",
            -0.5 * _LOG_2PI - math.log(self.scale) - math.log1p(-f0),
        )

    def logpdf(self, x: float) -> float:
        if x < 0:
            return -math.inf
        z = (x - self.loc) / self.scale
        return self._lognorm - 0.5 * z * z

    def ppf(self, q: float) -> float:
        return float(_norm.ppf(self._cdf0 + q * (1.0 - self._cdf0), loc=self.loc, scale=self.scale))


@dataclass(frozen=True)
class PriorSpec:
    """Independent one-dimensional priors keyed by hyper-parameter name."""

    priors: dict

    def for_param(self, name: str):
        try:
            return self.priors[name]
        except KeyError:
            raise ValueError(f"no prior given for parameter {name!r}") from None

    def names(self) -> tuple[str, ...]:
        return tuple(self.priors)


def default_priors(theta_ml: Hyperparams) -> PriorSpec:
    """Heavy-tailed priors centered at the ML estimates.

    T(b_hat, 3, 3) on each mean coefficient, Half-T(., 3, 3) on alpha, nu
    and sigma, Half-Normal(rho_hat, 1) on the length-scale.  The unit scale
    on rho is in the data's time units.
    """
    priors = {}
    for j, b in enumerate(theta_ml.mean.coefficients):
        priors[f"beta{j}"] = StudentTPrior(b, 3.0, 3.0)
    priors["alpha"] = HalfStudentTPrior(theta_ml.kernel.alpha, 3.0, 3.0)
    priors["rho"] = HalfNormalPrior(theta_ml.kernel.rho, 1.0)
    if theta_ml.kernel.family == "RQ":
        priors["nu"] = HalfStudentTPrior(theta_ml.kernel.nu, 3.0, 3.0)
    priors["sigma"] = HalfStudentTPrior(theta_ml.sigma, 3.0, 3.0)
    return PriorSpec(priors)


# ---------------------------------------------------------------------------
# model space


class _ModelSpace:
    """Parameter bookkeeping for one (mean degree, kernel family) candidate."""

    def __init__(self, degree: int, family: str):
        if degree not in (0, 1, 2):
            raise ValueError(f"mean degree must be 0, 1 or 2, got {degree}")
        self.degree = degree
        self.family = family
        self.beta_names = tuple(f"beta{j}" for j in range(degree + 1))
        kernel_names = ("alpha", "rho", "nu") if family == "RQ" else ("alpha", "rho")
        self.names = self.beta_names + kernel_names + ("sigma",)
        self.positive = frozenset(("alpha", "rho", "nu", "sigma"))

    def theta(self, values: dict) -> Hyperparams:
        betas = tuple(values[n] for n in self.beta_names)
        nu = values.get("nu")
        kernel = KernelSpec(self.family, values["alpha"], values["rho"], nu)
        return Hyperparams(MeanSpec(betas), kernel, values["sigma"])

    def values_of(self, theta: Hyperparams) -> dict:
        values = {n: c for n, c in zip(self.beta_names, theta.mean.coefficients)}
        values["alpha"] = theta.kernel.alpha
        values["rho"] = theta.kernel.rho
        if self.family == "RQ":
            values["nu"] = theta.kernel.nu
        values["sigma"] = theta.sigma
        return values


# ---------------------------------------------------------------------------
# marginal likelihood


def marginal_loglik(data: Dataset, theta: Hyperparams) -> float:
    """Log density of the observations with the latent GP integrated out.

    Includes the -(n/2) log 2 pi constant, so the value matches a direct
    multivariate-normal log density evaluation.
    """
    require_assumptions(theta.kernel, require_eti=False)
    n = data.n
    if n == 0:
        return 0.0
    K = kernel_gram(theta.kernel, data.ts, data.ts) + theta.sigma**2 * np.eye(n)
    L = _chol(K, theta.kernel.alpha**2)
    resid = data.ys - mean_eval(theta.mean, 0, data.ts)
    white = solve_triangular(L, resid, lower=True)
    return float(-0.5 * n * _LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * white @ white)


def _profile_mll(data: Dataset, space: _ModelSpace, kernel: KernelSpec, sigma: float):
    """Profile marginal log likelihood: mean coefficients replaced by GLS.

    Returns (loglik, betas); the GLS coefficients maximize the marginal
    likelihood exactly for fixed kernel and noise parameters.
    """
    n = data.n
    K = kernel_gram(kernel, data.ts, data.ts) + sigma**2 * np.eye(n)
    L = _chol(K, kernel.alpha**2)
    X = np.vander(data.ts, space.degree + 1, increasing=True)
    Xw = solve_triangular(L, X, lower=True)
    yw = solve_triangular(L, data.ys, lower=True)
    betas, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    white = yw - Xw @ betas
    ll = float(-0.5 * n * _LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * white @ white)
    return ll, tuple(betas)


# ---------------------------------------------------------------------------
# maximum likelihood


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 16
    seed: int = 0
    fatol: float = 1e-8
    xatol: float = 1e-6
    maxiter: int = 2000
    warm_theta: Hyperparams | None = None  # extra restart, e.g. full-data optimum


@dataclass(frozen=True)
class FitResult:
    theta: Hyperparams
    loglik: float
    converged: bool
    substituted_from: str | None
    start_logliks: tuple[float, ...]
    n_failed_restarts: int


def _start_points(data: Dataset, space: _ModelSpace, opts: FitOptions) -> list[dict]:
    span = data.ts[-1] - data.ts[0] if data.n > 1 else 1.0
    span = span if span > 0 else 1.0
    with np.errstate(all="ignore"):
        coefs = np.polyfit(data.ts, data.ys, space.degree)
        resid_sd = float(np.std(data.ys - np.polyval(coefs, data.ts)))
    if not np.isfinite(resid_sd):
        raise FitError("observations are too extreme for a finite residual scale")
    scale_y = max(resid_sd, 1e-8 * max(1.0, float(np.max(np.abs(data.ys)))), 1e-12)

    starts = [{"alpha": scale_y, "rho": span / 4.0, "nu": 1.0, "sigma": 0.5 * scale_y}]
    if opts.warm_theta is not None:
        w = opts.warm_theta
        starts.append(
            {"alpha": w.kernel.alpha, "rho": w.kernel.rho, "nu": w.kernel.nu or 1.0,
             "sigma": max(w.sigma, 1e-10 * scale_y)}
        )
    rng = np.random.default_rng(opts.seed)
    lo_rho, hi_rho = math.log(span / 50.0), math.log(2.0 * span)
    for _ in range(max(opts.restarts - len(starts), 0)):
        starts.append(
            {
                "alpha": scale_y * math.exp(rng.uniform(math.log(0.125), math.log(4.0))),
                "rho": math.exp(rng.uniform(lo_rho, hi_rho)),
                "nu": math.exp(rng.uniform(math.log(0.1), math.log(20.0))),
                "sigma": scale_y * math.exp(rng.uniform(math.log(0.02), math.log(2.0))),
            }
        )
    return starts


def fit_ml(data: Dataset, degree: int = 0, family: str = "SE", opts: FitOptions | None = None) -> FitResult:
    """Maximize the marginal likelihood over (beta, alpha, rho[, nu], sigma).

    Multi-start Nelder-Mead in log coordinates with the mean coefficients
    profiled out; the reported optimum is never below the objective at any
    start point.  An RQ fit whose nu diverges past NU_DIVERGENCE is refit
    under SE and flagged as a substitution.
    """
    if data.n < 3:
        raise ValueError(f"maximum-likelihood fitting needs n >= 3 observations, got {data.n}")
    opts = opts or FitOptions()
    space = _ModelSpace(degree, family)
    require_assumptions(KernelSpec(family, 1.0, 1.0, 1.0 if family == "RQ" else None))

    kernel_dims = ["alpha", "rho"] + (["nu"] if family == "RQ" else []) + ["sigma"]

    def objective(z: np.ndarray) -> float:
        values = {n: math.exp(v) for n, v in zip(kernel_dims, z)}
        if values["alpha"] > 1e8 or values["rho"] > 1e8 or values["sigma"] > 1e8:
            return math.inf
        try:
            kernel = KernelSpec(family, values["alpha"], values["rho"], values.get("nu"))
            ll, _ = _profile_mll(data, space, kernel, values["sigma"])
        except (FactorizationError, ValueError, OverflowError):
            return math.inf
        return -ll if np.isfinite(ll) else math.inf

    best = None
    start_lls: list[float] = []
    n_failed = 0
    for start in _start_points(data, space, opts):
        z0 = np.array([math.log(start[n]) for n in kernel_dims])
        f0 = objective(z0)
        if not np.isfinite(f0):
            n_failed += 1
            continue
        start_lls.append(-f0)
        res = minimize(
            objective,
            z0,
            method="Nelder-Mead",
            options={"fatol": opts.fatol, "xatol": opts.xatol, "maxiter": opts.maxiter,
                     "maxfev": opts.maxiter},
        )
        if not np.isfinite(res.fun):
            n_failed += 1
            continue
        if best is None or res.fun < best[0]:
            best = (res.fun, res.x, bool(res.success))
    if best is None:
        raise FitError("all optimization restarts failed to produce a finite marginal likelihood")

    _, z_best, converged = best
    values = {n: math.exp(v) for n, v in zip(kernel_dims, z_best)}
    kernel = KernelSpec(family, values["alpha"], values["rho"], values.get("nu"))
    ll, betas = _profile_mll(data, space, kernel, values["sigma"])
    theta = Hyperparams(MeanSpec(betas), kernel, values["sigma"])

    if family == "RQ" and values["nu"] > NU_DIVERGENCE:
        se_fit = fit_ml(data, degree, "SE", opts)
        return FitResult(
            theta=se_fit.theta,
            loglik=se_fit.loglik,
            converged=se_fit.converged,
            substituted_from="RQ",
            start_logliks=se_fit.start_logliks,
            n_failed_restarts=se_fit.n_failed_restarts,
        )
    return FitResult(
        theta=theta,
        loglik=ll,
        converged=converged,
        substituted_from=None,
        start_logliks=tuple(start_lls),
        n_failed_restarts=n_failed,
    )


# ---------------------------------------------------------------------------
# MCMC


@dataclass(frozen=True)
class McmcOptions:
    chains: int = 4
    iters: int = 25_000  # per chain, warmup included
    seed: int = 0
    target_accept: float = 0.3
    init_step: float = 0.1
    fixed: dict = field(default_factory=dict)


@dataclass(frozen=True)
class McmcSamples:
    """Post-warmup draws of the hyper-parameters, one slab per chain."""

    param_names: tuple[str, ...]
    draws: np.ndarray  # (chains, kept_iters, n_params), constrained scale
    warmup: int
    seed: int
    acceptance: np.ndarray  # per-chain post-warmup acceptance rate
    degree: int
    family: str
    fixed: dict

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_kept(self) -> int:
        return self.draws.shape[1]

    def flat(self, param: str) -> np.ndarray:
        j = self.param_names.index(param)
        return self.draws[:, :, j].reshape(-1)

    def theta_at(self, chain: int, i: int) -> Hyperparams:
        space = _ModelSpace(self.degree, self.family)
        values = dict(self.fixed)
        values.update({n: float(v) for n, v in zip(self.param_names, self.draws[chain, i])})
        return space.theta(values)

    def flat_thetas(self):
        """All kept draws as Hyperparams, chains concatenated."""
        for c in range(self.n_chains):
            for i in range(self.n_kept):
                yield self.theta_at(c, i)


def _log_posterior_fn(data: Dataset, space: _ModelSpace, priors: PriorSpec, fixed: dict, sampled: list):
    positive = space.positive

    def log_post(x: np.ndarray) -> float:
        values = dict(fixed)
        lp = 0.0
        for name, xi in zip(sampled, x):
            if name in positive:
                if xi > 700.0:  # exp overflow guard
                    return -math.inf
                v = math.exp(xi)
                lp += xi  # Jacobian of the log transform
            else:
                v = xi
            lp += priors.for_param(name).logpdf(v)
            values[name] = v
        if not np.isfinite(lp):
            return -math.inf
        try:
            theta = space.theta(values)
            ll = marginal_loglik(data, theta)
        except (FactorizationError, ValueError, OverflowError):
            return -math.inf
        return lp + ll if np.isfinite(ll) else -math.inf

    return log_post


def fit_bayes(
    data: Dataset,
    degree: int = 0,
    family: str = "SE",
    priors: PriorSpec | None = None,
    opts: McmcOptions | None = None,
) -> McmcSamples:
    """Sample the hyper-parameter posterior by adaptive random-walk Metropolis.

    The chain runs in unconstrained coordinates (log transforms on the
    positive parameters, with Jacobian corrections).  Proposal scale and
    covariance adapt during warmup toward a 0.25-0.40 acceptance rate and
    are frozen afterwards.  When no priors are given, an ML fit seeds the
    default heavy-tailed priors.
    """
    if data.n < 3:
        raise ValueError(f"Bayesian fitting needs n >= 3 observations, got {data.n}")
    opts = opts or McmcOptions()
    space = _ModelSpace(degree, family)
    require_assumptions(KernelSpec(family, 1.0, 1.0, 1.0 if family == "RQ" else None))
    if priors is None:
        ml = fit_ml(data, degree, family)
        priors = default_priors(ml.theta)
    sampled = [n for n in space.names if n not in opts.fixed]
    if not sampled:
        raise ValueError("at least one parameter must be sampled")
    for name in sampled:
        priors.for_param(name)  # raises when a prior is missing

    log_post = _log_posterior_fn(data, space, priors, dict(opts.fixed), sampled)
    d = len(sampled)
    warmup = opts.iters // 2
    kept = opts.iters - warmup
    if kept < 1:
        raise ValueError("iters must leave at least one post-warmup draw")

    # Median-of-prior initialization in unconstrained coordinates.
    x_center = np.empty(d)
    for j, name in enumerate(sampled):
        med = priors.for_param(name).ppf(0.5)
        x_center[j] = math.log(max(med, 1e-8)) if name in space.positive else med

    seed_seqs = np.random.SeedSequence(opts.seed).spawn(opts.chains)
    all_draws = np.empty((opts.chains, kept, d))
    acceptance = np.empty(opts.chains)

    for c in range(opts.chains):
        rng = np.random.default_rng(seed_seqs[c])
        x = None
        for _ in range(50):
            cand = x_center + opts.init_step * rng.standard_normal(d)
            if np.isfinite(log_post(cand)):
                x = cand
                break
        if x is None:
            raise McmcError("non-finite posterior density at initialization")
        lp = log_post(x)

        log_scale = math.log(2.38 / math.sqrt(d) * opts.init_step * 10.0)
        run_mean = x.copy()
        run_cov = np.eye(d) * opts.init_step**2
        prop_chol = np.linalg.cholesky(run_cov)
        accepted_post = 0

        for it in range(opts.iters):
            step = math.exp(log_scale) * (prop_chol @ rng.standard_normal(d))
            x_new = x + step
            lp_new = log_post(x_new)
            log_alpha = lp_new - lp
            # 1 - U lies in (0, 1], so the log never hits a zero argument
            accept = math.log(1.0 - rng.uniform()) < log_alpha
            if accept:
                x, lp = x_new, lp_new
            if it < warmup:
                # Robbins-Monro scale adaptation plus a running proposal
                # covariance (Haario-style); both freeze after warmup.
                gamma = (it + 1) ** -0.6
                acc_prob = min(1.0, math.exp(min(log_alpha, 0.0)))
                log_scale += gamma * (acc_prob - opts.target_accept)
                delta = x - run_mean
                run_mean += gamma * delta
                run_cov += gamma * (np.outer(delta, delta) - run_cov)
                if (it + 1) % 200 == 0 and it + 1 >= 10 * d:
                    try:
                        prop_chol = np.linalg.cholesky(run_cov + 1e-12 * np.eye(d))
                    except np.linalg.LinAlgError:
                        pass
            else:
                if accept:
                    accepted_post += 1
                all_draws[c, it - warmup] = x
        acceptance[c] = accepted_post / kept

    if np.all(acceptance < 0.01):
        raise McmcError(f"all chains diverged: acceptance rates {acceptance}")

    # Map back to the constrained scale.
    for j, name in enumerate(sampled):
        if name in space.positive:
            all_draws[:, :, j] = np.exp(all_draws[:, :, j])

    return McmcSamples(
        param_names=tuple(sampled),
        draws=all_draws,
        warmup=warmup,
        seed=opts.seed,
        acceptance=acceptance,
        degree=degree,
        family=family,
        fixed=dict(opts.fixed),
    )


def rhat(samples: McmcSamples, param: str) -> float:
    """Split potential scale reduction factor for one parameter."""
    if samples.n_chains < 2:
        raise ValueError("rhat needs at least 2 chains")
    if samples.n_kept < 100:
        raise ValueError("rhat needs at least 100 post-warmup draws per chain")
    j = samples.param_names.index(param)
    half = samples.n_kept // 2
    chains = []
    for c in range(samples.n_chains):
        chains.append(samples.draws[c, :half, j])
        chains.append(samples.draws[c, half : 2 * half, j])
    chains = np.asarray(chains)
    n = chains.shape[1]
    means = chains.mean(axis=1)
    within = chains.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within <= 0.0:
        return 1.0
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


# ---------------------------------------------------------------------------
# posterior trend indices


@dataclass(frozen=True)
class QuantileCurve:
    """Per-grid-point posterior quantiles at the requested tau levels."""

    grid: np.ndarray
    taus: tuple[float, ...]
    values: np.ndarray  # (len(taus), p)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.taus), np.asarray(self.grid).size):
            raise ValueError("values must have shape (len(taus), len(grid))")
        if np.any(np.diff(values, axis=0) < -1e-12):
            raise ValueError("quantiles must be non-decreasing in tau")
        object.__setattr__(self, "values", values)

    def at(self, tau: float) -> np.ndarray:
        return self.values[self.taus.index(tau)]


@dataclass(frozen=True)
class IndexPosterior:
    tdi: QuantileCurve
    local_eti: QuantileCurve | None
    eti_draws: dict
    skipped_fraction: float
    n_used: int

    def eti_quantiles(self, interval, taus=(0.025, 0.5, 0.975)) -> dict:
        draws = self.eti_draws[tuple(float(v) for v in interval)]
        return {tau: float(np.quantile(draws, tau)) for tau in taus}


def _simpson_weights(n_quad: int) -> np.ndarray:
    w = np.ones(n_quad + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def index_posterior(
    data: Dataset,
    samples: McmcSamples,
    grid,
    anchor: float,
    taus: tuple[float, ...] = (0.025, 0.5, 0.975),
    intervals: tuple = (),
    n_quad: int = 256,
    max_draws: int = 2000,
) -> IndexPosterior:
    """Push MCMC draws through the trend indices and summarize by quantiles.

    Draws where assumption A4 fails at some evaluation point are skipped and
    counted.  For families without a curvature process only the TDI is
    summarized.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    taus = tuple(sorted(taus))
    want_eti = KernelSpec(
        samples.family, 1.0, 1.0, 1.0 if samples.family == "RQ" else None
    ).max_order() >= 2

    n_quad += n_quad % 2
    intervals = [tuple(float(v) for v in iv) for iv in intervals]
    quad_nodes = [np.linspace(a, b, n_quad + 1) for a, b in intervals]
    all_points = np.concatenate([grid] + quad_nodes) if (want_eti and quad_nodes) else grid

    total = samples.n_chains * samples.n_kept
    stride = max(1, math.ceil(total / max_draws))
    picks = [(c, i) for c in range(samples.n_chains) for i in range(samples.n_kept)][::stride]

    tdi_rows, eti_rows, eti_int_rows = [], [], []
    skipped = 0
    for c, i in picks:
        theta = samples.theta_at(c, i)
        try:
            mm = marginal_moments(data, theta, all_points, need_d2f=want_eti)
            tdi_vals = _gauss_upper(mm.mu_df[: grid.size], mm.var_df[: grid.size])
            if want_eti:
                rate, _, _, _ = _local_eti_from_moments(mm)
        except (AssumptionError, FactorizationError):
            skipped += 1
            continue
        tdi_rows.append(tdi_vals)
        if want_eti:
            eti_rows.append(rate[: grid.size])
            if intervals:
                row = []
                offset = grid.size
                w = _simpson_weights(n_quad)
                for (a, b) in intervals:
                    h = (b - a) / n_quad if b > a else 0.0
                    seg = rate[offset : offset + n_quad + 1]
                    row.append(h * float(np.dot(w, seg)))
                    offset += n_quad + 1
                eti_int_rows.append(row)
    if not tdi_rows:
        raise McmcError("every MCMC draw failed the pointwise assumption checks")

    tdi_arr = np.asarray(tdi_rows)
    tdi_q = QuantileCurve(grid=grid, taus=taus, values=np.quantile(tdi_arr, list(taus), axis=0))
    local_q = None
    eti_draws: dict = {}
    if want_eti:
        eti_arr = np.asarray(eti_rows)
        local_q = QuantileCurve(grid=grid, taus=taus, values=np.quantile(eti_arr, list(taus), axis=0))
        if intervals:
            int_arr = np.asarray(eti_int_rows)
            eti_draws = {iv: int_arr[:, j] for j, iv in enumerate(intervals)}
    return IndexPosterior(
        tdi=tdi_q,
        local_eti=local_q,
        eti_draws=eti_draws,
        skipped_fraction=skipped / len(picks),
        n_used=len(tdi_rows),
    )
