"""
Scalar stochastic logistic equation dg = g(alpha - alpha g^2)dt + sigma g dW.

Closed-form solution along a Brownian path, the pull-back random equilibrium
u_g, its stationary density and time averages.

Path integrals of exp(2 a(s)), a(s) = (alpha - sigma^2/2)s + sigma W_s, are
evaluated in log-space cell by cell, treating a as linear inside each grid cell;
the cell integral is then dt * exp(2 max(a)) * exprel(-2|da|). The rule is exact
for sigma = 0 and agrees with the trapezoid to second order otherwise.
"""

import logging
import math
from typing import Iterable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import stats
from scipy.special import exprel, gammaln, logsumexp

from config import settings
from errors import CoverageError, DomainError
from model_core import ModelParams
from noise_path import BrownianPath, grid_steps, increment_matrix, sample_path, shift

logger = logging.getLogger(__name__)

_CHUNK = 256


class RandomEquilibriumScalar(BaseModel):
    """Pull-back random equilibrium u_g(omega) with its truncation data."""

    model_config = ConfigDict(frozen=True)

    value: float
    truncation_depth: float
    tail_bound: float


# ---------------------------------------------------------------------------
# log-space quadrature
# ---------------------------------------------------------------------------

def log_cell_integrals(a: np.ndarray, dt: float) -> np.ndarray:
    """log of the integral of exp(2a) over each grid cell, along the last axis."""
    left, right = a[..., :-1], a[..., 1:]
    delta = 2.0 * np.abs(right - left)
    return math.log(dt) + 2.0 * np.maximum(left, right) + np.log(exprel(-delta))


def exponent(params: ModelParams, times: np.ndarray, w: np.ndarray) -> np.ndarray:
    """a(t) = (alpha - sigma^2/2) t + sigma W_t."""
    return params.c * times + params.sigma * w


def _require_g0(g0: float) -> float:
    if not (np.isfinite(g0) and g0 >= 0):
        raise DomainError(f"initial value must be finite and nonnegative, got {g0}")
    return float(g0)


def _log_g(params: ModelParams, g0: float, a: np.ndarray, log_i: np.ndarray) -> np.ndarray:
    return math.log(g0) + a - 0.5 * np.logaddexp(0.0, math.log(2.0 * params.alpha * g0 * g0) + log_i)


def _log_integral_series(params: ModelParams, path: BrownianPath,
                         t_end: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if t_end < 0:
        raise DomainError(f"t must be nonnegative, got {t_end}")
    if not path.covers(0.0, t_end):
        raise CoverageError(f"path window [{path.t_min:g}, {path.t_max:g}] does not cover [0, {t_end:g}]")
    times, w = path.window(0.0, t_end)
    a = exponent(params, times, w)
    log_i = np.concatenate([[-np.inf], np.logaddexp.accumulate(log_cell_integrals(a, path.dt))])
    return times, a, log_i


def g_path(params: ModelParams, path: BrownianPath, g0: float, t_end: float) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form g(t, omega, g0) at every grid node of [0, t_end]."""
    g0 = _require_g0(g0)
    times, a, log_i = _log_integral_series(params, path, t_end)
    if g0 == 0.0:
        return times, np.zeros_like(times)
    return times, np.exp(_log_g(params, g0, a, log_i))


def g_with_internal_time(params: ModelParams, path: BrownianPath, g0: float,
                         t_end: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """g and tau(t) = integral of g^2 over [0, t] at every node of [0, t_end].

    Uses tau(t) = log(1 + 2 alpha g0^2 I(t)) / (2 alpha) with the same cell
    integrals I that define g, so tau is exactly monotone.
    """
    g0 = _require_g0(g0)
    times, a, log_i = _log_integral_series(params, path, t_end)
    if g0 == 0.0:
        return times, np.zeros_like(times), np.zeros_like(times)
    two_alpha = 2.0 * params.alpha
    log_growth = np.logaddexp(0.0, math.log(two_alpha * g0 * g0) + log_i)
    g = np.exp(math.log(g0) + a - 0.5 * log_growth)
    return times, g, log_growth / two_alpha


def g_explicit(params: ModelParams, path: BrownianPath, g0: float, t: float) -> float:
    """Closed-form solution g(t, omega, g0) at a grid time t >= 0."""
    _, values = g_path(params, path, g0, t)
    return float(values[-1])


class LogisticSolution:
    """Evaluation context for g(t, omega, g0) on a fixed path.

    Args:
        params: Model parameters (alpha, sigma used).
        path: Driving Brownian path.
        g0: Nonnegative initial value.
    """

    def __init__(self, params: ModelParams, path: BrownianPath, g0: float):
        self.params = params
        self.path = path
        self.g0 = _require_g0(g0)

    def at(self, t: float) -> float:
        return g_explicit(self.params, self.path, self.g0, t)

    def series(self, t_end: float) -> Tuple[np.ndarray, np.ndarray]:
        return g_path(self.params, self.path, self.g0, t_end)

    def internal_time(self, t_end: float) -> Tuple[np.ndarray, np.ndarray]:
        times, _, tau = g_with_internal_time(self.params, self.path, self.g0, t_end)
        return times, tau


# ---------------------------------------------------------------------------
# Random equilibrium
# ---------------------------------------------------------------------------

def _require_dissipative_noise(params: ModelParams) -> None:
    if params.sigma2 >= 2.0 * params.alpha:
        raise DomainError(
            f"no positive random equilibrium: sigma^2={params.sigma2:g} >= 2 alpha={2 * params.alpha:g}"
        )


def truncation_depth(params: ModelParams, tol: Optional[float] = None) -> float:
    """S = max(10, ln(1/tol) / (2 alpha - sigma^2))."""
    _require_dissipative_noise(params)
    if tol is None:
        tol = settings.ug_tol
    if not 0.0 < tol < 1.0:
        raise DomainError(f"truncation tolerance must lie in (0, 1), got {tol}")
    return max(10.0, math.log(1.0 / tol) / (2.0 * params.alpha - params.sigma2))


def log_psi(params: ModelParams, path: BrownianPath) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative log psi(t) = log of the integral of exp(2a) over (-inf, t] at every node.

    Returns (times, a, log_psi, tail_fraction) where tail_fraction is the share of
    psi(t) contributed by the envelope tail beyond the path window.
    """
    _require_dissipative_noise(params)
    times, w = path.times, path.values
    a = exponent(params, times, w)
    log_tail = 2.0 * a[0] - math.log(2.0 * params.c)
    log_cells = np.logaddexp.accumulate(log_cell_integrals(a, path.dt))
    log_body = np.concatenate([[-np.inf], log_cells])
    log_total = np.logaddexp(log_tail, log_body)
    return times, a, log_total, np.exp(log_tail - log_total)


def u_g(params: ModelParams, path: BrownianPath, tol: Optional[float] = None) -> RandomEquilibriumScalar:
    """u_g(omega) = (2 alpha * integral_{-inf}^0 exp(2a(s)) ds)^(-1/2)."""
    if tol is None:
        tol = settings.ug_tol
    depth = truncation_depth(params, tol)
    if path.t_min > -depth:
        raise CoverageError(f"u_g needs the path to reach back to -{depth:.6g}, window starts at {path.t_min:.6g}")
    times, w = path.window(path.t_min, 0.0)
    a = exponent(params, times, w)
    log_tail = 2.0 * a[0] - math.log(2.0 * params.c)
    log_body = logsumexp(log_cell_integrals(a, path.dt)) if times.size > 1 else -np.inf
    log_total = np.logaddexp(log_tail, log_body)
    tail_bound = float(np.exp(log_tail - log_total))
    if not tail_bound < tol:
        raise CoverageError(f"tail bound {tail_bound:.3e} not below {tol:.1e} on window [{path.t_min:g}, 0]")
    value = math.exp(-0.5 * (math.log(2.0 * params.alpha) + log_total))
    return RandomEquilibriumScalar(value=value, truncation_depth=float(-times[0]), tail_bound=tail_bound)


def ug_series(params: ModelParams, path: BrownianPath) -> Tuple[np.ndarray, np.ndarray]:
    """u_g(theta_t omega) at every node, via u_g(theta_t omega)^2 = exp(2a(t)) / (2 alpha psi(t)).

    Values within the truncation depth of the window start rely on the tail envelope.
    """
    times, a, lpsi, _ = log_psi(params, path)
    return times, np.exp(a - 0.5 * (math.log(2.0 * params.alpha) + lpsi))


def ug_path(params: ModelParams, seed: int, dt: Optional[float] = None, tol: Optional[float] = None,
            t_max: float = 0.0) -> Tuple[BrownianPath, RandomEquilibriumScalar]:
    """Sample a path whose backward window is long enough for u_g, doubling it as needed."""
    if dt is None:
        dt = settings.ensemble_dt
    if tol is None:
        tol = settings.ug_tol
    depth = 2.0 * truncation_depth(params, tol)
    for _ in range(8):
        path = sample_path(seed, -depth, t_max, dt)
        try:
            return path, u_g(params, path, tol)
        except CoverageError:
            depth *= 2.0
    raise CoverageError(f"tail bound below {tol:.1e} not reached for seed {seed} up to depth {depth:g}")


# ---------------------------------------------------------------------------
# Stationary density
# ---------------------------------------------------------------------------

def _density_exponent(params: ModelParams) -> float:
    _require_dissipative_noise(params)
    if params.sigma == 0.0:
        raise DomainError("sigma = 0: the stationary law is the point mass at 1, no density")
    return params.alpha / params.sigma2


def stationary_density(params: ModelParams, s):
    """p(s) = C s^(2b-2) exp(-b s^2), b = alpha/sigma^2, C = 2 b^(b-1/2) / Gamma(b-1/2)."""
    b = _density_exponent(params)
    s_arr = np.asarray(s, dtype=float)
    out = np.zeros_like(s_arr)
    pos = s_arr > 0
    sp = s_arr[pos]
    log_c = math.log(2.0) + (b - 0.5) * math.log(b) - gammaln(b - 0.5)
    out[pos] = np.exp(log_c + (2.0 * b - 2.0) * np.log(sp) - b * sp * sp)
    return float(out) if out.ndim == 0 else out


def stationary_cdf(params: ModelParams, s):
    """CDF of the stationary law: s^2 is Gamma(b - 1/2, scale 1/b)."""
    b = _density_exponent(params)
    s_arr = np.maximum(np.asarray(s, dtype=float), 0.0)
    out = stats.gamma.cdf(s_arr * s_arr, a=b - 0.5, scale=1.0 / b)
    return float(out) if np.ndim(out) == 0 else out


def density_mode(params: ModelParams) -> Optional[float]:
    """Interior mode sqrt(1 - sigma^2/alpha) when sigma^2 < alpha, None when monotone."""
    _require_dissipative_noise(params)
    if params.sigma2 < params.alpha:
        return math.sqrt(1.0 - params.sigma2 / params.alpha)
    return None


def density_shape(params: ModelParams) -> str:
    return "unimodal" if density_mode(params) is not None else "monotone-decreasing"


def density_table(params: ModelParams, s_max: float = 4.0, n: int = 401) -> Tuple[np.ndarray, np.ndarray]:
    """Density on a uniform grid of (0, s_max]."""
    s = np.linspace(0.0, s_max, n)[1:]
    return s, stationary_density(params, s)


# ---------------------------------------------------------------------------
# Time averages and pull-back
# ---------------------------------------------------------------------------

def time_average_g2(params: ModelParams, path: BrownianPath, g0: float, t: float) -> float:
    """(1/T) * integral of g^2 over [0, T], trapezoid on the path grid."""
    _require_dissipative_noise(params)
    if not t > 0:
        raise DomainError(f"T must be positive, got {t}")
    if not g0 > 0:
        raise DomainError(f"g0 must be positive, got {g0}")
    _, g = g_path(params, path, g0, t)
    g2 = g * g
    integral = path.dt * (np.sum(g2) - 0.5 * (g2[0] + g2[-1]))
    return float(integral / t)


def pullback_g(params: ModelParams, path: BrownianPath, g0: float, t: float) -> float:
    """g(t, theta_{-t} omega, g0)."""
    return g_explicit(params, shift(path, -t), g0, t)


def pullback_rate(params: ModelParams, path: BrownianPath, g0: float, t_grid: Iterable[float]) -> float:
    """Measured exponential rate of pull-back convergence.

    Fits log|g(t, theta_{-t} omega, g0) - u_g(omega)| (or log g when
    sigma^2 >= 2 alpha) against t and returns minus the slope.
    """
    t_grid = np.asarray(list(t_grid), dtype=float)
    if params.sigma2 < 2.0 * params.alpha:
        target = u_g(params, path).value
    else:
        target = 0.0
    gaps = np.array([abs(pullback_g(params, path, g0, t) - target) for t in t_grid])
    usable = gaps > 0
    if np.count_nonzero(usable) < 2:
        raise DomainError("pull-back gaps vanish at machine precision; no rate to fit")
    slope = np.polyfit(t_grid[usable], np.log(gaps[usable]), 1)[0]
    return float(-slope)


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

def ug_samples(params: ModelParams, seeds: Iterable[int], dt: Optional[float] = None,
               tol: Optional[float] = None) -> np.ndarray:
    """u_g(omega) for a batch of seeds; agrees with ug_path seed by seed."""
    seeds = [int(s) for s in seeds]
    if dt is None:
        dt = settings.ensemble_dt
    if tol is None:
        tol = settings.ug_tol
    depth = 2.0 * truncation_depth(params, tol)
    n_back = grid_steps(depth, dt)
    out = np.empty(len(seeds))
    retry = []
    for start in range(0, len(seeds), _CHUNK):
        chunk = seeds[start:start + _CHUNK]
        w = np.cumsum(increment_matrix(chunk, n_back, dt, backward=True), axis=1)
        times = -dt * np.arange(1, n_back + 1)
        # reversed so that time increases along the last axis
        a = exponent(params, times[::-1], w[:, ::-1])
        a = np.concatenate([a, np.zeros((len(chunk), 1))], axis=1)
        log_tail = 2.0 * a[:, 0] - math.log(2.0 * params.c)
        log_total = np.logaddexp(log_tail, logsumexp(log_cell_integrals(a, dt), axis=1))
        out[start:start + len(chunk)] = np.exp(-0.5 * (math.log(2.0 * params.alpha) + log_total))
        bad = np.nonzero(np.exp(log_tail - log_total) >= tol)[0]
        retry.extend(start + int(k) for k in bad)
    for k in retry:
        out[k] = ug_path(params, seeds[k], dt, tol)[1].value
    if retry:
        logger.info(f"{len(retry)} of {len(seeds)} u_g samples needed a longer backward window")
    return out


def g_terminal_samples(params: ModelParams, seeds: Iterable[int], g0: float, t: float,
                       dt: Optional[float] = None) -> np.ndarray:
    """g(T, omega, g0) for a batch of seeds, forward streams of sample_path."""
    g0 = _require_g0(g0)
    seeds = [int(s) for s in seeds]
    if dt is None:
        dt = settings.ensemble_dt
    n = grid_steps(t, dt)
    times = dt * np.arange(n + 1)
    out = np.empty(len(seeds))
    if g0 == 0.0:
        return np.zeros(len(seeds))
    for start in range(0, len(seeds), _CHUNK):
        chunk = seeds[start:start + _CHUNK]
        w = np.concatenate([np.zeros((len(chunk), 1)),
                            np.cumsum(increment_matrix(chunk, n, dt), axis=1)], axis=1)
        a = exponent(params, times, w)
        log_i = logsumexp(log_cell_integrals(a, dt), axis=1)
        out[start:start + len(chunk)] = np.exp(_log_g(params, g0, a[:, -1], log_i))
    return out
