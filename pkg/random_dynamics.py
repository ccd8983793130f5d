"""
Random dynamics of the stochastic Kolmogorov system.

Pull-back limits, random equilibria u_g(omega) Q, Lyapunov exponents in closed
form and by renormalized propagation of the linearized cocycle, Crauel random
periodic solutions on invariant cones, cone invariance under the stochastic
schemes, and the census of ergodic stationary measures.
"""

import logging
import math
from typing import Any, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import brentq
from scipy.spatial.distance import cdist

from config import settings
from deterministic_flow import (
    AXIS_LABELS,
    FlowEvaluator,
    OmegaLimitClass,
    PeriodicOrbit,
    StepControl,
    TrajectoryRecord,
    analytic_omega_limit,
    equilibria,
    first_integral_values,
    h_star,
    integrate_flow,
    periodic_orbit,
    require_case_one,
)
from ensemble import ensemble_seeds
from errors import CoverageError, DomainError
from logistic_scalar import g_with_internal_time, log_psi, u_g, ug_path, ug_series
from model_core import ModelParams, as_state, classify_regime, drift, sign_pattern, sphere_residual
from noise_path import BrownianPath, sample_path, shift
from sde_engine import SchemeSpec, integrate_sde, linearized_growth, march_batch

logger = logging.getLogger(__name__)

MEASURE_IDS = ("O",) + AXIS_LABELS


# ---------------------------------------------------------------------------
# Pull-back
# ---------------------------------------------------------------------------

class OmegaLimitSample(BaseModel):
    """Classified pull-back limit on one noise path.

    kind is origin, point or cycle. points holds the last pull-back evaluation
    (point cases) or samples of u_g(omega) Gamma(h) (cycle case).
    """

    kind: str
    points: List[Tuple[float, float, float]]
    converged: bool
    inconclusive: bool
    t_max: float
    residual: float
    u_g: Optional[float] = None
    h: Optional[float] = None
    analytic_point: Optional[Tuple[float, float, float]] = None
    deterministic_limit: Optional[OmegaLimitClass] = None
    hausdorff: Optional[float] = None


def _on_grid(path: BrownianPath, ts: Sequence[float]) -> np.ndarray:
    ts = np.unique(np.rint(np.asarray(ts, dtype=float) / path.dt)) * path.dt
    return ts[ts > 0]


def pullback_points(params: ModelParams, path: BrownianPath, x0: Any, ts: Sequence[float],
                    h: Optional[float] = None) -> np.ndarray:
    """Phi(t, theta_{-t} omega, x0) for several grid times t, sharing one Psi evaluator."""
    x0 = as_state(x0, nonnegative=True)
    ts = np.asarray(ts, dtype=float)
    g_end = np.empty(ts.size)
    tau_end = np.empty(ts.size)
    for k, t in enumerate(ts):
        if t == 0:
            g_end[k], tau_end[k] = 1.0, 0.0
            continue
        _, g, tau = g_with_internal_time(params, shift(path, -t), 1.0, t)
        g_end[k], tau_end[k] = g[-1], tau[-1]
    if not np.any(x0 > 0):
        return np.zeros((ts.size, 3))
    return g_end[:, None] * FlowEvaluator(params, x0, h).many(tau_end)


def pullback_point(params: ModelParams, path: BrownianPath, x0: Any, t: float) -> np.ndarray:
    """Phi(t, theta_{-t} omega, x0) by decomposition on the shifted path, g started at 1."""
    path.require(-t, 0.0)
    return pullback_points(params, path, x0, [t])[0]


def _hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    d = cdist(a, b)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def _try_u_g(params: ModelParams, path: BrownianPath) -> Optional[float]:
    if params.sigma == 0.0:
        return 1.0
    try:
        return u_g(params, path).value
    except CoverageError as e:
        logger.info(f"u_g not available on this path: {e}")
        return None


def pullback_limit(params: ModelParams, path: BrownianPath, x0: Any, t_max: float,
                   tol: Optional[float] = None, n_eval: int = 8, n_cycle: int = 64) -> OmegaLimitSample:
    """Classified pull-back limit of x0; inconclusive when not settled by t_max."""
    x0 = as_state(x0, nonnegative=True)
    if tol is None:
        tol = settings.omega_tol
    if not tol > 0.0:
        raise DomainError(f"tolerance must be positive, got {tol}")
    path.require(-t_max, 0.0)
    if params.sigma2 >= 2.0 * params.alpha or not np.any(x0 > 0):
        ts = _on_grid(path, t_max * np.arange(1, n_eval + 1) / n_eval)
        pts = pullback_points(params, path, x0, ts)
        residual = float(np.linalg.norm(pts[-1]))
        converged = residual < tol
        return OmegaLimitSample(kind="origin", points=[tuple(pts[-1])], converged=converged,
                                inconclusive=not converged, t_max=float(ts[-1]), residual=residual,
                                analytic_point=(0.0, 0.0, 0.0))

    limit = analytic_omega_limit(params, x0)
    u = _try_u_g(params, path)
    if limit.kind == "periodic_orbit":
        return _cycle_limit(params, path, x0, t_max, tol, n_cycle, limit, u)

    ts = _on_grid(path, t_max * np.arange(1, n_eval + 1) / n_eval)
    pts = pullback_points(params, path, x0, ts)
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    residual = float(steps[-1]) if steps.size else float("inf")
    converged = residual < tol
    analytic_point = None
    if u is not None and limit.point is not None:
        analytic_point = tuple(float(v) for v in u * np.asarray(limit.point))
    if not converged:
        logger.warning(f"Pull-back from {x0} not settled by t={ts[-1]:g}: last step {residual:.2e}")
    return OmegaLimitSample(kind="point", points=[tuple(float(v) for v in pts[-1])], converged=converged,
                            inconclusive=not converged, t_max=float(ts[-1]), residual=residual, u_g=u,
                            analytic_point=analytic_point, deterministic_limit=limit)


def _cycle_limit(params: ModelParams, path: BrownianPath, x0: np.ndarray, t_max: float, tol: float,
                 n_cycle: int, limit: OmegaLimitClass, u: Optional[float]) -> OmegaLimitSample:
    orbit = periodic_orbit(params, limit.h)
    window = 1.5 * orbit.period * params.alpha / params.c
    late = _on_grid(path, np.linspace(max(t_max - window, 0.0), t_max, n_cycle))
    early = _on_grid(path, np.linspace(max(t_max - 2 * window, 0.0), max(t_max - window, 0.0), n_cycle))
    pts = pullback_points(params, path, x0, np.concatenate([early, late]))
    early_pts, late_pts = pts[:early.size], pts[early.size:]
    hausdorff = _hausdorff(early_pts, late_pts) if early.size else None
    if u is None:
        residual = float("inf")
    else:
        residual = float(u * np.max(orbit.distance(late_pts / u)))
    converged = residual < tol
    if not converged:
        logger.warning(f"Pull-back cycle at h={limit.h:.6g} not settled by t={t_max:g}: residual {residual:.2e}")
    return OmegaLimitSample(kind="cycle", points=[tuple(float(v) for v in p) for p in late_pts],
                            converged=converged, inconclusive=not converged, t_max=float(late[-1]),
                            residual=residual, u_g=u, h=limit.h, deterministic_limit=limit,
                            hausdorff=hausdorff)


# ---------------------------------------------------------------------------
# Random equilibria
# ---------------------------------------------------------------------------

def _equilibrium_point(params: ModelParams, q: Any) -> np.ndarray:
    if isinstance(q, str):
        if q == "O":
            return np.zeros(3)
        if q in AXIS_LABELS:
            return np.eye(3)[AXIS_LABELS.index(q)]
        return np.asarray(equilibria(params).get(q).point)
    q = as_state(q, nonnegative=True)
    residual = float(np.linalg.norm(drift(params, q)))
    if residual > settings.equilibrium_tol:
        raise DomainError(f"{q} is not an equilibrium (drift residual {residual:.3e})")
    return q


def random_equilibrium(params: ModelParams, path: BrownianPath, q: Any, tol: Optional[float] = None) -> np.ndarray:
    """u_g(omega) Q."""
    if params.sigma2 >= 2.0 * params.alpha:
        raise DomainError(f"no random equilibrium off the origin for sigma^2={params.sigma2:g} >= 2 alpha")
    q = _equilibrium_point(params, q)
    if params.sigma == 0.0 or not np.any(q > 0):
        return q.copy()
    return u_g(params, path, tol).value * q


def random_equilibrium_trajectory(params: ModelParams, path: BrownianPath, q: Any, t_end: float) -> TrajectoryRecord:
    """The stationary solution u_g(theta_t omega) Q on the grid nodes of [0, t_end]."""
    q = _equilibrium_point(params, q)
    i0, i1 = path.index_of(0.0), path.index_of(t_end)
    times = path.times[i0:i1 + 1]
    w = path.values[i0:i1 + 1]
    if np.any(q > 0):
        _, _, _, tail = log_psi(params, path)
        if tail[i0] >= settings.ug_tol:
            raise CoverageError(f"backward window too short: tail share {tail[i0]:.2e} at t=0")
        _, series = ug_series(params, path)
        states = series[i0:i1 + 1, None] * q[None, :]
    else:
        states = np.zeros((times.size, 3))
    return TrajectoryRecord(times, states, first_integral_values(params, states), sphere_residual(states),
                            noise=w, info={"base": "random_equilibrium"})


# ---------------------------------------------------------------------------
# Lyapunov exponents
# ---------------------------------------------------------------------------

class LyapunovEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    horizon: float = Field(gt=0)
    renormalization_count: int
    standard_error: float = Field(ge=0)
    n_seeds: int = 1
    values: List[float] = []


def lyapunov_analytic(params: ModelParams, measure_id: str) -> np.ndarray:
    """Closed-form exponents of delta_O or of mu_{e_i}, in axis order."""
    c = params.c
    if measure_id == "O":
        return np.array([c, c, c])
    if measure_id not in AXIS_LABELS:
        raise DomainError(f"unknown measure id {measure_id!r}; expected one of {MEASURE_IDS}")
    if params.sigma2 >= 2.0 * params.alpha:
        raise DomainError(f"mu_{measure_id} exists only for sigma^2 < 2 alpha")
    m1, m2, m3 = params.m / params.alpha * c
    if measure_id == "e1":
        return np.array([-2 * c, m1, -m2])
    if measure_id == "e2":
        return np.array([-m1, -2 * c, m3])
    return np.array([m2, -m3, -2 * c])


BaseKind = Union[str, Sequence[float]]


def _direction(direction: Union[int, Sequence[float]]) -> np.ndarray:
    if isinstance(direction, (int, np.integer)):
        if not 0 <= direction < 3:
            raise DomainError(f"axis must be 0, 1 or 2, got {direction}")
        return np.eye(3)[int(direction)]
    return np.asarray(direction, dtype=float)


def _lyapunov_base(params: ModelParams, seed: int, base_kind: BaseKind, t_end: float,
                   dt: float) -> Tuple[BrownianPath, TrajectoryRecord]:
    if isinstance(base_kind, str):
        if base_kind == "O":
            path = sample_path(seed, 0.0, t_end, dt)
        elif base_kind in AXIS_LABELS:
            if params.sigma2 >= 2.0 * params.alpha:
                raise DomainError(f"no random equilibrium on the {base_kind} ray for sigma^2 >= 2 alpha")
            path, _ = ug_path(params, seed, dt, t_max=t_end)
        else:
            raise DomainError(f"unknown base kind {base_kind!r}")
        return path, random_equilibrium_trajectory(params, path, base_kind, t_end)
    path = sample_path(seed, 0.0, t_end, dt)
    return path, integrate_sde(params, path, base_kind, t_end, SchemeSpec(kind="milstein", dt=dt))


class _LyapunovTask:
    def __init__(self, params, base_kind, v0, t_end, renorm_step, dt):
        self.params = params
        self.base_kind = base_kind
        self.v0 = v0
        self.t_end = t_end
        self.renorm_step = renorm_step
        self.dt = dt

    def __call__(self, seed: int) -> Tuple[float, int]:
        path, base = _lyapunov_base(self.params, seed, self.base_kind, self.t_end, self.dt)
        growth = linearized_growth(self.params, path, base, self.v0, self.t_end, self.renorm_step)
        return (growth.log_norm - math.log(np.linalg.norm(self.v0))) / self.t_end, growth.renormalizations


def lyapunov_numeric(params: ModelParams, seed: int, base_kind: BaseKind, direction: Union[int, Sequence[float]],
                     t_end: float, renorm_step: float = 1.0, dt: Optional[float] = None, n_seeds: int = 1,
                     mapper: Callable = map) -> LyapunovEstimate:
    """Growth rate of the linearized cocycle along a stationary base.

    On O and on the e_i rays the linearization is diagonal, so an axis
    direction yields that axis' exponent; along a generic trajectory the
    estimate is the top exponent.
    """
    if dt is None:
        dt = settings.ensemble_dt
    seeds = [seed] if n_seeds <= 1 else ensemble_seeds(seed, n_seeds)
    if 1 < n_seeds < 20:
        logger.warning(f"Standard error from only {n_seeds} seeds")
    if not isinstance(base_kind, str):
        base_kind = tuple(float(v) for v in as_state(base_kind, nonnegative=True))
    task = _LyapunovTask(params, base_kind, _direction(direction), float(t_end), renorm_step, dt)
    results = list(mapper(task, seeds))
    values = np.array([r[0] for r in results])
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return LyapunovEstimate(value=float(np.mean(values)), horizon=float(t_end),
                            renormalization_count=int(sum(r[1] for r in results)),
                            standard_error=stderr, n_seeds=values.size, values=values.tolist())


# ---------------------------------------------------------------------------
# Crauel random periodic solutions
# ---------------------------------------------------------------------------

class CrpsSample:
    """Random periodic solution psi_h(t, omega) = u_g(omega) Psi(J(t), y0).

    J(t) is the integral of u_g(theta_s omega)^2 over [-t, 0], read off the
    cumulative log psi table of the path.

    Args:
        params: Case I parameters with sigma^2 < 2 alpha.
        path: Noise path whose backward window carries the construction.
        orbit: Closed orbit Gamma(h) with anchor y0 and period N(h).
        times: Path node times.
        a: Exponent a(t) at the nodes.
        lpsi: log psi(t) at the nodes.
        usable_from: Earliest node time at which log psi is accurate.
    """

    def __init__(self, params: ModelParams, path: BrownianPath, orbit: PeriodicOrbit, times: np.ndarray,
                 a: np.ndarray, lpsi: np.ndarray, usable_from: float):
        self.params = params
        self.path = path
        self.orbit = orbit
        self.h = orbit.h
        self.anchor = orbit.anchor
        self.period_N = orbit.period
        self._times = times
        self._a = a
        self._lpsi = lpsi
        self._usable_from = usable_from
        self._lpsi0 = float(np.interp(0.0, times, lpsi))
        self.u_g = math.exp(-0.5 * (math.log(2.0 * params.alpha) + self._lpsi0))
        self.check_times: np.ndarray = np.zeros(0)
        self.periods: np.ndarray = np.zeros(0)
        self.identity_residuals: np.ndarray = np.zeros(0)
        self.solution_residuals: np.ndarray = np.zeros(0)

    def _lpsi_at(self, s: Any) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any(s < self._usable_from - 1e-12) or np.any(s > self._times[-1] + 1e-12):
            raise CoverageError(f"times outside the usable window [{self._usable_from:g}, {self._times[-1]:g}]")
        return np.interp(s, self._times, self._lpsi)

    def internal_time(self, t: Any) -> np.ndarray:
        """J(t) = integral of u_g(theta_s omega)^2 over [-t, 0]."""
        return (self._lpsi0 - self._lpsi_at(-np.asarray(t, dtype=float))) / (2.0 * self.params.alpha)

    def psi_at(self, ts: Any) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return self.u_g * FlowEvaluator(self.params, self.anchor).many(self.internal_time(ts))

    def period_T(self, t: float, xtol: float = 1e-9) -> float:
        """T_h(theta_{-t} omega): J(t + T) - J(t) = N(h)."""
        target = self.period_N
        j_t = float(self.internal_time(t))
        reach = -self._usable_from - t

        def excess(span: float) -> float:
            return float(self.internal_time(t + span)) - j_t - target

        lo, hi = 0.0, min(target * self.params.alpha / self.params.c, reach)
        while excess(hi) <= 0:
            if hi >= reach:
                raise CoverageError(f"T_h root not bracketed within the path window (t={t:g}, reach {reach:g})")
            lo, hi = hi, min(2.0 * hi, reach)
        return float(brentq(excess, lo, hi, xtol=xtol))

    def u_shifted(self, t: Any) -> np.ndarray:
        """u_g(theta_t omega) from the table."""
        t = np.asarray(t, dtype=float)
        a = np.interp(t, self._times, self._a)
        return np.exp(a - 0.5 * (math.log(2.0 * self.params.alpha) + self._lpsi_at(t)))

    @property
    def max_residual(self) -> float:
        parts = [r for r in (self.identity_residuals, self.solution_residuals) if r.size]
        return float(max(np.max(r) for r in parts)) if parts else 0.0


def crps(params: ModelParams, path: BrownianPath, h: float, tol: float = 1e-3, n_check: int = 10,
         t_check_max: Optional[float] = None, n_solution: int = 3) -> CrpsSample:
    """Construct psi_h and T_h on one path and verify both defining identities."""
    require_case_one(params)
    if params.sigma2 >= 2.0 * params.alpha:
        raise DomainError("random periodic solutions need sigma^2 < 2 alpha")
    orbit = periodic_orbit(params, h)
    times, a, lpsi, tail = log_psi(params, path)
    usable = np.nonzero(tail < settings.ug_tol)[0]
    i0 = path.index_of(0.0)
    if usable.size == 0 or usable[0] > i0:
        raise CoverageError("backward window too short for u_g at t=0")
    sample = CrpsSample(params, path, orbit, times, a, lpsi, float(times[usable[0]]))

    reach = -sample._usable_from
    mean_period = orbit.period * params.alpha / params.c
    if t_check_max is None:
        t_check_max = min(5.0 * mean_period, 0.5 * reach)
    ts = np.linspace(0.0, t_check_max, n_check)
    periods = np.array([sample.period_T(t) for t in ts])
    taus = np.concatenate([sample.internal_time(ts), sample.internal_time(ts + periods)])
    psi = sample.u_g * FlowEvaluator(params, sample.anchor).many(taus)
    sample.check_times = ts
    sample.periods = periods
    sample.identity_residuals = np.linalg.norm(psi[n_check:] - psi[:n_check], axis=1)

    if path.t_max > 0 and n_solution > 0:
        sample.solution_residuals = _solution_identity(params, path, sample, ts, n_solution)

    worst = sample.max_residual
    if worst >= tol:
        logger.warning(f"CRPS identities at h={h:.6g}: max residual {worst:.2e} above {tol:.1e}")
    logger.info(f"CRPS h={h:.6g}: N(h)={orbit.period:.6g}, mean T_h={np.mean(periods):.6g}, residual {worst:.2e}")
    return sample


def _solution_identity(params: ModelParams, path: BrownianPath, sample: CrpsSample, ts: np.ndarray,
                       n_solution: int) -> np.ndarray:
    """|Phi(t, omega, psi(t0, omega)) - psi(t + t0, theta_t omega)| for sampled (t, t0)."""
    forward = np.rint(np.linspace(0.0, min(path.t_max, sample.period_N), n_solution + 1)[1:] / path.dt) * path.dt
    starts = ts[:: max(1, ts.size // n_solution)][:n_solution]
    psi0 = sample.psi_at(starts)
    out = []
    for t in forward:
        for t0, x0 in zip(starts, psi0):
            _, g, tau = g_with_internal_time(params, path, sample.u_g, t)
            direct = g[-1] * FlowEvaluator(params, x0 / sample.u_g)(float(tau[-1]))
            j = (float(sample._lpsi_at(t)) - float(sample._lpsi_at(-t0))) / (2.0 * params.alpha)
            target = float(sample.u_shifted(t)) * FlowEvaluator(params, sample.anchor)(j)
            out.append(float(np.linalg.norm(direct - target)))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Cone invariance
# ---------------------------------------------------------------------------

def cone_starts(orbit: PeriodicOrbit, scales: Sequence[float] = (0.5, 1.0, 2.0), n_phase: int = 4) -> np.ndarray:
    """Points lambda * y of Lambda(h) for y spread along Gamma(h)."""
    y = orbit.haar_samples(n_phase)
    return np.concatenate([s * y for s in scales], axis=0)


def cone_invariance_check(params: ModelParams, seed: int, h: float, t_end: float, dt: float,
                          scheme: str = "milstein") -> float:
    """max over time and starts in Lambda(h) of |H1(x(t)) - h|."""
    require_case_one(params)
    hs = h_star(params)
    if not h > hs:
        raise DomainError(f"cone level h={h} must exceed h*={hs}")
    starts = cone_starts(periodic_orbit(params, h))
    if scheme == "rk4":
        if params.sigma != 0.0:
            raise DomainError("rk4 applies to the deterministic system only (sigma = 0)")
        levels = [integrate_flow(params, x0, t_end, StepControl(h=dt, tol=None)).first_integral for x0 in starts]
        values = np.concatenate(levels)
    else:
        path = sample_path(seed, 0.0, t_end, dt)
        dw = np.broadcast_to(path.increments(0.0, path.t_max), (starts.shape[0], path.size - 1))
        _, states = march_batch(params, starts, dw, dt, scheme)
        values = first_integral_values(params, states).ravel()
    if np.any(np.isnan(values)):
        logger.warning(f"Cone check at dt={dt:g}: trajectories left the open octant")
        return float("inf")
    return float(np.max(np.abs(values - h)))


# ---------------------------------------------------------------------------
# Ergodic stationary measures
# ---------------------------------------------------------------------------

class ErgodicMeasure(BaseModel):
    name: str
    support: str
    point: Optional[Tuple[float, float, float]] = None
    h_range: Optional[Tuple[float, float]] = None
    exponents: Optional[Tuple[float, float, float]] = None
    top_lyapunov_sign: Optional[int] = None
    hyperbolic: bool


def _sign(v: float) -> int:
    return 0 if abs(v) <= settings.zero_tol else (1 if v > 0 else -1)


def ergodic_census(params: ModelParams) -> List[ErgodicMeasure]:
    """Ergodic stationary measures present for the parameters."""
    census = []
    ex_o = lyapunov_analytic(params, "O")
    census.append(ErgodicMeasure(name="delta_O", support="origin", point=(0.0, 0.0, 0.0),
                                 exponents=tuple(ex_o), top_lyapunov_sign=_sign(ex_o[0]),
                                 hyperbolic=_sign(ex_o[0]) != 0))
    if params.sigma2 >= 2.0 * params.alpha:
        return census

    eq = equilibria(params)
    for e in eq.isolated:
        if e.label == "O":
            continue
        if e.label in AXIS_LABELS:
            ex = lyapunov_analytic(params, e.label)
            census.append(ErgodicMeasure(name=f"mu_{e.label}", support="ray", point=e.point, exponents=tuple(ex),
                                         top_lyapunov_sign=_sign(float(np.max(ex))),
                                         hyperbolic=all(_sign(v) != 0 for v in ex)))
        else:
            census.append(ErgodicMeasure(name=f"mu_{e.label}", support="ray", point=e.point, hyperbolic=False))
    for curve in eq.curves:
        census.append(ErgodicMeasure(name=f"mu_Q, Q on {curve.name}", support="rays over a curve of equilibria",
                                     hyperbolic=False))
    if eq.sphere:
        census.append(ErgodicMeasure(name="mu_Q, Q on the sphere", support="rays over the sphere of equilibria",
                                     hyperbolic=False))
    if classify_regime(params).canonical_case == "I":
        census.append(ErgodicMeasure(name="nu_h", support="invariant cone Lambda(h)",
                                     h_range=(h_star(params), float("inf")), hyperbolic=False))
    logger.debug(f"Ergodic census for pattern {sign_pattern(params)}: {len(census)} families")
    return census
