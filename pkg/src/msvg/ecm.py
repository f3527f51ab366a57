"""ECM-type maximum likelihood estimation for the MSVG model.

Three fitting algorithms share one cycle structure:

* ``mcecm`` -- multicycle ECM: conditional-expectation steps for the mixing
  weights interleaved with closed-form conditional maximisations for the
  location/skew and scale blocks, and a safeguarded Newton-Raphson update of
  the shape parameter on the conditional gamma log-likelihood.
* ``ecme`` -- identical except the shape update maximises the actual
  marginal log-likelihood by bounded golden-section/parabolic search, which
  avoids the conditional expectation of log lam entirely.
* ``hecm`` -- runs MCECM to tolerance, then reverts to the iterate before
  the stopping test fired and finishes with ECME shape updates.

An extra expectation step is inserted between the location/skew update and
the scale update: without it a single observation sitting on top of the
location estimate sends E(1/lam) to infinity while the squared residual in
the scale update stays bounded away from zero, and the scale estimate
diverges.  Refreshing E(1/lam) at the new location keeps the product
bounded.

Data are pre-multiplied by a constant (default 100) before fitting and the
estimates mapped back afterwards; the family is closed under scaling, and
working on the scaled data improves the conditioning of the updates for
daily-return-sized inputs.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .distribution import (
    ArMsvgParams,
    CenterGuard,
    MixingExpectations,
    MsvgParams,
    location_tag,
    log_density,
    mahalanobis_delta,
    posterior_lambda_moments,
)
from .specfun import digamma, log_gamma, trigamma

ALGORITHMS = ("mcecm", "ecme", "hecm")


class DegenerateMixingError(RuntimeError):
    """Raised when the mixing weights carry no spread (the location/skew
    system of the conditional maximisation is 0/0)."""


def _osum(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Order-canonical reduction over observations.

    Summands are sorted before reduction, so the result is bit-identical
    under any permutation of the observation axis; every estimate the
    fitting loop reports is therefore independent of row order.
    """
    return np.sum(np.sort(a, axis=axis), axis=axis)


@dataclass
class SuffStats:
    """Sufficient statistics of the complete-data log-likelihood."""

    s_y: np.ndarray
    s_y_over_lambda: np.ndarray
    s_lambda: float
    s_inv_lambda: float
    s_log_lambda: float
    # AR(1) additions; None in the constant-mean model
    s_x: np.ndarray | None = None
    s_x_over_lambda: np.ndarray | None = None
    s_xx_over_lambda: np.ndarray | None = None
    s_xy_over_lambda: np.ndarray | None = None


@dataclass
class FitConfig:
    """Knobs of one fit."""

    algorithm: str = "hecm"
    tol: float = 1e-8
    max_iter: int = 5000
    delta_cap: float | None = None
    scale_c: float = 100.0
    nu_bounds: tuple[float, float] = (1e-4, 200.0)
    ar_order: int = 0
    init: MsvgParams | ArMsvgParams | None = None
    min_obs_per_dim: int = 10

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.scale_c > 0:
            raise ValueError("scale_c must be positive")
        lo, hi = self.nu_bounds
        if not (0 < lo < hi):
            raise ValueError("nu_bounds must satisfy 0 < lo < hi")
        if self.ar_order not in (0, 1):
            raise ValueError("ar_order must be 0 or 1")


@dataclass
class FitReport:
    """Converged estimates plus the diagnostics of the run."""

    params: MsvgParams | ArMsvgParams
    loglik_trace: np.ndarray
    final_loglik: float
    conv_iter: int
    switch_iter: int | None
    wall_time: float
    guarded_count_final: int
    converged: bool
    algorithm: str
    n_obs: int
    guarded_trace: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    nu_hit_bound: bool = False


def initial_params(data: np.ndarray, ar_order: int = 0):
    """Moment-based starting values: sample mean, sample covariance, zero
    skew, shape equal to the dimension (AR starts with a zero lag matrix)."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.ndim != 2:
        raise ValueError("data must be a matrix")
    n, d = data.shape
    if n <= d + 1:
        raise ValueError(f"need more than d + 1 = {d + 1} observations, got {n}")
    mean = _osum(data) / n
    centered = data - mean
    cov = _osum(centered[:, :, None] * centered[:, None, :]) / (n - 1)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError(
            "sample covariance is singular; jitter the data or drop "
            "redundant columns before fitting") from None
    zero = np.zeros(d)
    if ar_order == 1:
        return ArMsvgParams(beta0=mean, beta1=np.zeros((d, d)), sigma=cov,
                            gamma=zero, nu=float(d))
    return MsvgParams(mu=mean, sigma=cov, gamma=zero, nu=float(d))


def accumulate_suff_stats(data: np.ndarray, mix: MixingExpectations,
                          ar_order: int = 0, y_prev: np.ndarray | None = None) -> SuffStats:
    """Sums of the complete-data sufficient statistics, in fixed row order."""
    y = np.atleast_2d(np.asarray(data, dtype=float))
    w = mix.e_inv_lambda
    stats = SuffStats(
        s_y=_osum(y),
        s_y_over_lambda=_osum(w[:, None] * y),
        s_lambda=float(_osum(mix.e_lambda)),
        s_inv_lambda=float(_osum(w)),
        s_log_lambda=(float(_osum(mix.e_log_lambda))
                      if mix.e_log_lambda is not None else math.nan),
    )
    if ar_order == 1:
        if y_prev is None:
            raise ValueError("AR statistics need the lagged observations")
        x = np.atleast_2d(np.asarray(y_prev, dtype=float))
        if x.shape != y.shape:
            raise ValueError("lagged block must match the observation block")
        stats.s_x = _osum(x)
        stats.s_x_over_lambda = _osum(w[:, None] * x)
        stats.s_xx_over_lambda = _osum(w[:, None, None] * (x[:, :, None] * x[:, None, :]))
        stats.s_xy_over_lambda = _osum(w[:, None, None] * (x[:, :, None] * y[:, None, :]))
    return stats


def cm_step_location_skew(stats: SuffStats, n: int):
    """Closed-form joint update of location and skewness.

    Solves the weighted normal equations of the conditional normal
    log-likelihood; degenerates to 0/0 when all mixing weights coincide.
    """
    den = stats.s_inv_lambda * stats.s_lambda - float(n) ** 2
    if den <= 1e-12 * float(n) ** 2:
        raise DegenerateMixingError(
            f"mixing-weight spread too small (denominator {den:.3e})")
    mu = (stats.s_y_over_lambda * stats.s_lambda - n * stats.s_y) / den
    gamma = (stats.s_y - n * mu) / stats.s_lambda
    return mu, gamma


def cm_step_ar(stats: SuffStats, n: int):
    """Closed-form joint update of (beta0, beta1, gamma).

    One (d+2)-square weighted least-squares system with the lagged
    observation and the mixing weight as regressors.
    """
    if stats.s_x is None:
        raise ValueError("stats lack the AR blocks")
    d = stats.s_y.shape[0]
    m = np.zeros((d + 2, d + 2))
    m[0, 0] = stats.s_inv_lambda
    m[0, 1:d + 1] = stats.s_x_over_lambda
    m[0, d + 1] = n
    m[1:d + 1, 0] = stats.s_x_over_lambda
    m[1:d + 1, 1:d + 1] = stats.s_xx_over_lambda
    m[1:d + 1, d + 1] = stats.s_x
    m[d + 1, 0] = n
    m[d + 1, 1:d + 1] = stats.s_x
    m[d + 1, d + 1] = stats.s_lambda
    rhs = np.zeros((d + 2, d))
    rhs[0] = stats.s_y_over_lambda
    rhs[1:d + 1] = stats.s_xy_over_lambda
    rhs[d + 1] = stats.s_y
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(
            f"AR update system is numerically singular (condition number {cond:.3e})")
    sol = np.linalg.solve(m, rhs)
    beta0 = sol[0]
    beta1 = sol[1:d + 1].T
    gamma = sol[d + 1]
    return beta0, beta1, gamma


def cm_step_scale(data: np.ndarray, location, gamma: np.ndarray,
                  refreshed_mix: MixingExpectations, n: int,
                  y_prev: np.ndarray | None = None) -> np.ndarray:
    """Scale-matrix update from mixing expectations refreshed at the new
    location and skew (the extra E-step); staleness is rejected outright."""
    if refreshed_mix.location_tag != location_tag(location, gamma):
        raise ValueError("mixing expectations are stale: refresh them at the "
                         "updated location/skew before the scale step")
    y = np.atleast_2d(np.asarray(data, dtype=float))
    if isinstance(location, tuple):
        beta0, beta1 = location
        if y_prev is None:
            raise ValueError("AR scale step needs the lagged observations")
        resid = y - np.asarray(y_prev) @ np.asarray(beta1).T - np.asarray(beta0)
    else:
        resid = y - np.asarray(location)
    w = refreshed_mix.e_inv_lambda
    sigma = _osum(w[:, None, None] * (resid[:, :, None] * resid[:, None, :])) / n \
        - np.outer(gamma, gamma) * (float(_osum(refreshed_mix.e_lambda)) / n)
    if not np.all(np.isfinite(sigma)):
        raise ValueError("scale update produced non-finite entries")
    sigma = 0.5 * (sigma + sigma.T)
    # keep the estimate positive definite under round-off; the largest
    # eigenvalue backstops the floor when the trace itself is corrupt
    eigval, eigvec = np.linalg.eigh(sigma)
    floor = 1e-12 * max(np.trace(sigma) / sigma.shape[0], abs(eigval[-1]), 1e-290)
    if eigval[0] < floor:
        eigval = np.maximum(eigval, floor)
        sigma = (eigvec * eigval) @ eigvec.T
        sigma = 0.5 * (sigma + sigma.T)
    return sigma


def _gamma_loglik(nu: float, n: int, s_lambda: float, s_log_lambda: float) -> float:
    return (n * nu * math.log(nu) - n * float(log_gamma(nu))
            + (nu - 1.0) * s_log_lambda - nu * s_lambda)


def _gamma_score(nu: float, n: int, s_lambda: float, s_log_lambda: float) -> float:
    return (n * (1.0 + math.log(nu) - float(digamma(nu)))
            + s_log_lambda - s_lambda)


def cm_step_shape_mcecm(stats: SuffStats, n: int, nu_current: float,
                        bounds: tuple[float, float]):
    """Safeguarded Newton-Raphson update of the shape parameter.

    The score of the conditional gamma log-likelihood is strictly
    decreasing, so once a sign change brackets the root, Newton steps are
    accepted only when they stay inside the bracket and shrink the score;
    otherwise the bracket is bisected.  Without a sign change the boundary
    with the larger gamma log-likelihood is returned and flagged.

    Returns ``(nu, at_bound)``.
    """
    lo, hi = bounds
    args = (n, stats.s_lambda, stats.s_log_lambda)
    g_lo = _gamma_score(lo, *args)
    g_hi = _gamma_score(hi, *args)
    if g_lo <= 0.0 or g_hi >= 0.0:
        # score is one-signed on the interval: pick the better endpoint
        best = lo if _gamma_loglik(lo, *args) >= _gamma_loglik(hi, *args) else hi
        return best, True
    nu = min(max(nu_current, lo), hi)
    g = _gamma_score(nu, *args)
    tol = 1e-10 * n
    for _ in range(200):
        if abs(g) < tol:
            break
        if g > 0.0:
            lo = nu
        else:
            hi = nu
        slope = n * (1.0 / nu - float(trigamma(nu)))
        step_to = nu - g / slope if slope < 0.0 else math.nan
        if math.isfinite(step_to) and lo < step_to < hi:
            g_new = _gamma_score(step_to, *args)
            if abs(g_new) < abs(g):
                nu, g = step_to, g_new
                continue
        nu = 0.5 * (lo + hi)
        g = _gamma_score(nu, *args)
    return nu, False


def cm_step_shape_ecme(data: np.ndarray, params, bounds: tuple[float, float],
                       guard: CenterGuard, y_prev: np.ndarray | None = None) -> float:
    """Shape update maximising the actual (capped) log-likelihood by
    bounded golden-section / parabolic-interpolation search."""
    def negll(nu: float) -> float:
        trial = replace(params, nu=float(nu))
        return -float(_osum(log_density(trial, data, guard=guard, y_prev=y_prev)))

    res = optimize.minimize_scalar(negll, bounds=bounds, method="bounded",
                                   options={"xatol": 1e-6})
    return float(res.x)


def observed_loglik(data: np.ndarray, params, guard: CenterGuard | None = None,
                    y_prev: np.ndarray | None = None) -> float:
    """Sum of capped log densities.

    For AR parameters with no explicit lagged block, the first row of
    ``data`` is the conditioning state: it enters only as a regressor and
    is excluded from the sum.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if isinstance(params, ArMsvgParams) and y_prev is None:
        y, y_prev = data[1:], data[:-1]
    else:
        y = data
    return float(_osum(log_density(params, y, guard=guard, y_prev=y_prev)))


def _scale_params(params, c: float):
    if isinstance(params, ArMsvgParams):
        return ArMsvgParams(beta0=params.beta0 * c, beta1=params.beta1.copy(),
                            sigma=params.sigma * c * c, gamma=params.gamma * c,
                            nu=params.nu)
    return MsvgParams(mu=params.mu * c, sigma=params.sigma * c * c,
                      gamma=params.gamma * c, nu=params.nu)


def _maximize_mu_univariate(y: np.ndarray, params: MsvgParams,
                            guard: CenterGuard) -> float:
    # univariate line search of the actual log-likelihood over the location
    lo = float(y.min())
    hi = float(y.max())
    span = max(hi - lo, math.sqrt(params.sigma[0, 0]))
    lo, hi = lo - span, hi + span

    def negll(mu: float) -> float:
        trial = replace(params, mu=np.array([mu]))
        return -float(_osum(log_density(trial, y, guard=guard)))

    res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10 * max(1.0, hi - lo)})
    return float(res.x)


def _one_cycle(y, y_prev, params, guard, nu_step: str, config: FitConfig,
               line_search_mu: bool):
    """One full ECM cycle; returns (new params, guarded count, nu flag)."""
    n = y.shape[0]
    ar = isinstance(params, ArMsvgParams)

    if line_search_mu:
        mu_star = _maximize_mu_univariate(y, params, guard)
        params = replace(params, mu=np.array([mu_star]))

    # E-step 1 at the current iterate
    mix1 = posterior_lambda_moments(params, y, guard=guard, y_prev=y_prev,
                                    need_log=False)
    stats1 = accumulate_suff_stats(y, mix1, ar_order=1 if ar else 0, y_prev=y_prev)

    # CM-step 1: location and skew
    if ar:
        beta0, beta1, gamma = cm_step_ar(stats1, n)
        location = (beta0, beta1)
        trial = replace(params, beta0=beta0, beta1=beta1, gamma=gamma)
    else:
        if line_search_mu:
            mu = params.mu
            gamma = (stats1.s_y - n * mu) / stats1.s_lambda
        else:
            try:
                mu, gamma = cm_step_location_skew(stats1, n)
            except DegenerateMixingError:
                # equal weights: the system is 0/0 and its limit is the
                # weighted mean with no skew update
                mu = stats1.s_y_over_lambda / stats1.s_inv_lambda
                gamma = np.zeros_like(mu)
        location = mu
        trial = replace(params, mu=mu, gamma=gamma)

    # extra E-step at the new location/skew, then the scale update
    mix34 = posterior_lambda_moments(trial, y, guard=guard, y_prev=y_prev,
                                     need_log=False)
    sigma = cm_step_scale(y, location, trial.gamma, mix34, n, y_prev=y_prev)
    trial = replace(trial, sigma=sigma)

    nu_at_bound = False
    if nu_step == "mcecm":
        # E-step 2 at the updated location/scale/skew
        mix2 = posterior_lambda_moments(trial, y, guard=guard, y_prev=y_prev)
        stats2 = accumulate_suff_stats(y, mix2, ar_order=0)
        nu, nu_at_bound = cm_step_shape_mcecm(stats2, n, trial.nu, config.nu_bounds)
        guarded = int(mix2.guarded.sum())
    else:
        nu = cm_step_shape_ecme(y, trial, config.nu_bounds, guard, y_prev=y_prev)
        guarded = int(mix34.guarded.sum())
    trial = replace(trial, nu=float(nu))
    return trial, guarded, nu_at_bound


def fit(data: np.ndarray, config: FitConfig = FitConfig()) -> FitReport:
    """Fit the MSVG (or MSVG-AR) model by the configured algorithm.

    The input is pre-multiplied by ``config.scale_c``; estimates and the
    log-likelihood trace are reported back in the original data scale.  For
    ``ar_order=1`` the first row of ``data`` conditions the fit and the
    remaining rows are modelled.
    """
    t0 = time.perf_counter()
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2:
        raise ValueError("data must be a matrix of shape (n, d)")
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    n_total, d = data.shape
    ar = config.ar_order == 1
    n_eff = n_total - 1 if ar else n_total
    if n_eff <= config.min_obs_per_dim * d:
        raise ValueError(
            f"need more than {config.min_obs_per_dim} observations per "
            f"dimension ({config.min_obs_per_dim * d}), got {n_eff}")

    c = float(config.scale_c)
    x_scaled = data * c
    if ar:
        y, y_prev = x_scaled[1:], x_scaled[:-1]
    else:
        y, y_prev = x_scaled, None

    guard = (CenterGuard(config.delta_cap) if config.delta_cap is not None
             else CenterGuard.default_for_dim(d))
    params = (_scale_params(config.init, c) if config.init is not None
              else initial_params(x_scaled, ar_order=config.ar_order))
    if params.d != d:
        raise ValueError("initial parameters do not match the data dimension")

    offset = n_eff * d * math.log(c)  # maps the scaled loglik to data scale
    algorithm = config.algorithm
    line_search_mu = algorithm == "hecm" and d == 1 and not ar
    nu_step = "ecme" if algorithm == "ecme" else "mcecm"

    ll_prev = observed_loglik(y, params, guard=guard, y_prev=y_prev) + offset
    trace = [ll_prev]
    guarded_trace = []
    switch_iter = None
    converged = False
    nu_hit_bound = False
    conv_iter = 0

    for t in range(1, config.max_iter + 1):
        prev_params, prev_ll = params, ll_prev
        params, guarded, at_bound = _one_cycle(
            y, y_prev, params, guard, nu_step, config, line_search_mu)
        nu_hit_bound = nu_hit_bound or at_bound
        ll = observed_loglik(y, params, guard=guard, y_prev=y_prev) + offset
        trace.append(ll)
        guarded_trace.append(guarded)
        conv_iter = t
        if abs(ll - ll_prev) < config.tol * (abs(ll) + 1.0):
            if algorithm == "hecm" and nu_step == "mcecm":
                # revert one iterate and finish with ECME shape updates
                switch_iter = t
                nu_step = "ecme"
                params, ll_prev = prev_params, prev_ll
                continue
            converged = True
            break
        ll_prev = ll

    final_params = _scale_params(params, 1.0 / c)
    if isinstance(final_params, ArMsvgParams) and not final_params.stationary:
        warnings.warn(
            f"fitted AR matrix has spectral radius "
            f"{final_params.spectral_radius:.4f} >= 1 (non-stationary mean)",
            RuntimeWarning)

    # guarded count at the final iterate
    psi = math.sqrt(2.0 * params.nu
                    + float(params.gamma @ np.linalg.solve(params.sigma, params.gamma)))
    delta = mahalanobis_delta(params, y, y_prev=y_prev)
    guarded_final = int(np.sum(delta * psi < guard.delta_cap))

    return FitReport(
        params=final_params,
        loglik_trace=np.asarray(trace),
        final_loglik=trace[-1],
        conv_iter=conv_iter,
        switch_iter=switch_iter,
        wall_time=time.perf_counter() - t0,
        guarded_count_final=guarded_final,
        converged=converged,
        algorithm=algorithm,
        n_obs=n_eff,
        guarded_trace=np.asarray(guarded_trace, dtype=int),
        nu_hit_bound=nu_hit_bound,
    )
