"""
Deterministic flow of the cubic Kolmogorov system.

Fixed-step RK4 integration with drift-governed step halving, the equilibrium
census with eigenvalue data, first integrals and invariant cones, periodic
orbits on the invariant sphere, and omega-limit classification.
"""

import csv
import logging
import math
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import brentq
from scipy.spatial.distance import cdist

from config import settings
from errors import BlowUpError, ConvergenceError, DiagnosticMismatch, DomainError, StepUnderflowError
from model_core import (
    ModelParams,
    as_state,
    classify_regime,
    drift,
    is_case_one,
    jacobian,
    sign_pattern,
    sphere_residual,
)

logger = logging.getLogger(__name__)

AXIS_LABELS = ("e1", "e2", "e3")

# Curve name -> (index of m that vanishes, index of the vanishing coordinate, plane coordinates)
CURVES = {
    "G12": (0, 2, (0, 1)),
    "G13": (1, 1, (0, 2)),
    "G23": (2, 0, (1, 2)),
}


# ---------------------------------------------------------------------------
# Trajectory records
# ---------------------------------------------------------------------------

class StepControl(BaseModel):
    """Step settings for the RK4 integrator.

    Args:
        h: Initial step.
        tol: Drift budget; None disables step halving.
        max_halvings: Number of halvings allowed before giving up.
        record_every: Keep every n-th step in the record.
    """

    h: float = Field(default_factory=lambda: settings.flow_step, gt=0)
    tol: Optional[float] = Field(default_factory=lambda: settings.flow_drift_tol)
    max_halvings: int = Field(default_factory=lambda: settings.max_halvings, ge=0)
    record_every: int = Field(default=1, ge=1)


class TrajectoryRecord:
    """Time-stamped states with per-sample diagnostics.

    Args:
        times: Strictly increasing sample times.
        states: States, shape (n, 3).
        first_integral: H1 or H2 per sample (NaN where undefined).
        sphere_res: L(x) per sample.
        noise: Driving path value W(t) per sample, stochastic runs only.
        info: Free-form run metadata (step used, halvings, drift).
    """

    def __init__(self, times: np.ndarray, states: np.ndarray, first_integral: np.ndarray,
                 sphere_res: np.ndarray, noise: Optional[np.ndarray] = None,
                 info: Optional[Dict[str, Any]] = None):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        if self.times.ndim != 1 or self.states.shape != (self.times.size, 3):
            raise DomainError("times and states have inconsistent shapes")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise DomainError("trajectory times must be strictly increasing")
        self.first_integral = np.asarray(first_integral, dtype=float)
        self.sphere_res = np.asarray(sphere_res, dtype=float)
        self.noise = None if noise is None else np.asarray(noise, dtype=float)
        self.info = dict(info or {})
        positive = self.states > 0
        self.boundary_proximity = np.any(positive & (self.states < settings.boundary_eps), axis=1)
        self.negative = np.any(self.states < 0, axis=1)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1].copy()

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def integral_drift(self) -> float:
        """Largest relative deviation of the first integral from its initial value."""
        h = self.first_integral
        if h.size == 0 or not np.isfinite(h[0]) or h[0] == 0:
            return float("nan")
        return float(np.nanmax(np.abs(h - h[0])) / abs(h[0]))

    def sphere_drift(self) -> float:
        return float(np.max(np.abs(self.sphere_res)))

    def state_at(self, t: float) -> np.ndarray:
        """State at a recorded time."""
        k = int(np.searchsorted(self.times, t - 1e-9 * max(1.0, abs(t))))
        if k >= self.times.size or abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"time {t} is not a sample of this trajectory")
        return self.states[k].copy()

    def write_csv(self, path: str) -> None:
        """Write the record as CSV with header t,x1,x2,x3,H,L (plus W when present)."""
        header = ["t", "x1", "x2", "x3", "H", "L"]
        if self.noise is not None:
            header.append("W")
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for k in range(self.times.size):
                row = [self.times[k], *self.states[k], self.first_integral[k], self.sphere_res[k]]
                if self.noise is not None:
                    row.append(self.noise[k])
                writer.writerow([_fmt(v) for v in row])


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


# ---------------------------------------------------------------------------
# First integrals
# ---------------------------------------------------------------------------

def _integral_kind(params: ModelParams) -> Optional[str]:
    pattern = sign_pattern(params)
    if all(s == 0 for s in pattern):
        return None
    return "H1" if abs(params.m_sum) > settings.zero_tol else "H2"


def first_integral_values(params: ModelParams, states: np.ndarray) -> np.ndarray:
    """First integral at each state, NaN where undefined (boundary or no integral)."""
    states = np.asarray(states, dtype=float)
    out = np.full(states.shape[:-1], np.nan)
    kind = _integral_kind(params)
    if kind is None:
        return out
    interior = np.all(states > 0, axis=-1)
    if not np.any(interior):
        return out
    x = states[interior]
    m_rev = params.m[::-1]
    logs = np.log(x)
    if kind == "H1":
        expo = -2.0 * m_rev / params.m_sum
        out[interior] = np.exp(logs @ expo + np.log(np.sum(x * x, axis=-1)))
    else:
        out[interior] = np.exp(logs @ m_rev)
    return out


def first_integral(params: ModelParams, x: Any) -> float:
    """H1 (or H2 when m1+m2+m3 = 0) at an interior point."""
    x = as_state(x)
    if np.any(x <= 0):
        raise DomainError(f"first integral needs an interior point, got {x}")
    if _integral_kind(params) is None:
        raise DomainError("no first integral applicable: all m_i vanish")
    return float(first_integral_values(params, x[None, :])[0])


def q_star(params: ModelParams) -> np.ndarray:
    """Interior equilibrium Q*, case I only."""
    require_case_one(params)
    return np.sqrt(params.m[::-1] / params.m_sum)


def h_star(params: ModelParams) -> float:
    """Minimal cone level h* = H1(Q*), case I only."""
    require_case_one(params)
    w = params.m[::-1] / params.m_sum
    return float(np.exp(np.sum(-w * np.log(w))))


class ConeLevel(NamedTuple):
    h: float
    on_equilibrium_ray: bool


def cone_level(params: ModelParams, x: Any) -> ConeLevel:
    """Level h of the invariant cone through x; flags the ray of Q*."""
    require_case_one(params)
    h = first_integral(params, x)
    hs = h_star(params)
    if abs(h - hs) <= 1e-9 * hs:
        return ConeLevel(hs, True)
    return ConeLevel(h, False)


def require_case_one(params: ModelParams) -> None:
    if not is_case_one(params):
        case = classify_regime(params).canonical_case
        raise DomainError(f"operation needs canonical case I, parameters are in case {case}")


# ---------------------------------------------------------------------------
# RK4 integration
# ---------------------------------------------------------------------------

def rk4_step(params: ModelParams, x: np.ndarray, h: float) -> np.ndarray:
    k1 = drift(params, x)
    k2 = drift(params, x + 0.5 * h * k1)
    k3 = drift(params, x + 0.5 * h * k2)
    k4 = drift(params, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_march(params: ModelParams, x0: np.ndarray, h: float, n_steps: int,
               record_every: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """March n_steps of size h; x0 may be a batch of shape (..., 3)."""
    x = np.array(x0, dtype=float)
    times = [0.0]
    states = [x.copy()]
    for k in range(1, n_steps + 1):
        try:
            x = rk4_step(params, x, h)
        except DomainError:
            raise BlowUpError("flow left the finite range", k * h)
        if np.max(np.abs(x)) > settings.blowup_norm:
            raise BlowUpError("flow exceeded the blow-up norm", k * h)
        if k % record_every == 0 or k == n_steps:
            times.append(k * h)
            states.append(x.copy())
    return np.asarray(times), np.asarray(states)


def integrate_flow(params: ModelParams, x0: Any, t_end: float,
                   step: Optional[StepControl] = None) -> TrajectoryRecord:
    """Integrate the deterministic system from x0 over [0, t_end]."""
    if not t_end > 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    x0 = as_state(x0, nonnegative=True)
    step = step or StepControl()

    if np.all(x0 > 0) and _integral_kind(params) is not None:
        mode = "integral"
    elif abs(float(sphere_residual(x0))) <= 1e-12:
        mode = "sphere"
    else:
        mode = None

    h = step.h
    drift_value = float("nan")
    for halving in range(step.max_halvings + 1):
        n_steps = max(1, int(math.ceil(t_end / h - 1e-12)))
        h_eff = t_end / n_steps
        times, states = _rk4_march(params, x0, h_eff, n_steps, step.record_every)
        record = TrajectoryRecord(times, states, first_integral_values(params, states),
                                  sphere_residual(states))
        if mode == "integral":
            drift_value = record.integral_drift()
        elif mode == "sphere":
            drift_value = record.sphere_drift()
        if mode is None or step.tol is None or drift_value <= step.tol:
            record.info.update(step=h_eff, halvings=halving, drift=drift_value, drift_mode=mode)
            report_flags(record)
            return record
        logger.info(f"Drift {drift_value:.3e} above {step.tol:.1e} at h={h_eff:.3e}; halving step")
        h /= 2.0
    raise StepUnderflowError(f"step halving exhausted after {step.max_halvings} halvings", drift_value)


def report_flags(record: TrajectoryRecord) -> None:
    if np.any(record.negative):
        k = int(np.argmax(record.negative))
        logger.warning(f"Trajectory left the positive octant at t={record.times[k]:.6g}")
    elif np.any(record.boundary_proximity):
        k = int(np.argmax(record.boundary_proximity))
        logger.warning(f"Trajectory within {settings.boundary_eps:g} of a boundary plane at t={record.times[k]:.6g}")


class FlowEvaluator:
    """Re-entrant evaluator of Psi(tau, x0) for nondecreasing tau.

    Whole RK4 steps are committed to the cache; the remainder is a partial
    step that is not committed, so later calls resume from the cached state.
    """

    def __init__(self, params: ModelParams, x0: Any, h: Optional[float] = None):
        self.params = params
        self.x0 = as_state(x0)
        self.h = h or settings.flow_step
        self._tau = 0.0
        self._state = self.x0.copy()
        self._steps = 0

    def __call__(self, tau: float) -> np.ndarray:
        if tau < 0:
            raise DomainError(f"internal time must be nonnegative, got {tau}")
        if tau < self._tau:
            logger.debug(f"FlowEvaluator restarting: tau={tau} behind cache at {self._tau}")
            self._tau, self._state, self._steps = 0.0, self.x0.copy(), 0
        while self._tau + self.h <= tau:
            self._state = rk4_step(self.params, self._state, self.h)
            self._steps += 1
            self._tau = self._steps * self.h
            if not np.all(np.isfinite(self._state)) or np.max(np.abs(self._state)) > settings.blowup_norm:
                raise BlowUpError("deterministic flow blew up", self._tau)
        rest = tau - self._tau
        if rest <= 0:
            return self._state.copy()
        return rk4_step(self.params, self._state, rest)

    def many(self, taus: Sequence[float]) -> np.ndarray:
        taus = np.asarray(taus, dtype=float)
        order = np.argsort(taus, kind="stable")
        out = np.empty((taus.size, 3))
        for k in order:
            out[k] = self(float(taus[k]))
        return out


# ---------------------------------------------------------------------------
# Equilibria
# ---------------------------------------------------------------------------

class IsolatedEquilibrium(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    point: Tuple[float, float, float]
    eigen_real: Tuple[float, float, float]
    eigen_imag: Tuple[float, float, float]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.asarray(self.eigen_real) + 1j * np.asarray(self.eigen_imag)


class EquilibriumCurve(BaseModel):
    """Quarter circle of equilibria in a coordinate plane, parameterized by angle.

    The point at angle theta has cos(theta), sin(theta) in the two plane
    coordinates and zero in the third.
    """

    model_config = ConfigDict(frozen=True)

    name: str
    m_index: int
    zero_coordinate: int
    plane: Tuple[int, int]
    split_angle: Optional[float] = None
    stable_arcs: List[Tuple[float, float]] = []

    def point(self, theta: float) -> np.ndarray:
        x = np.zeros(3)
        x[self.plane[0]] = math.cos(theta)
        x[self.plane[1]] = math.sin(theta)
        return x


class EquilibriumSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    isolated: List[IsolatedEquilibrium]
    curves: List[EquilibriumCurve] = []
    sphere: bool = False

    @property
    def labels(self) -> List[str]:
        return [e.label for e in self.isolated]

    def get(self, label: str) -> IsolatedEquilibrium:
        for e in self.isolated:
            if e.label == label:
                return e
        raise DomainError(f"equilibrium {label!r} is not isolated for these parameters")

    def census(self) -> str:
        text = f"{len(self.isolated)} isolated"
        if self.curves:
            text += f" + {len(self.curves)} curve{'s' if len(self.curves) > 1 else ''}"
        if self.sphere:
            text += " + sphere"
        return text


def _transverse(params: ModelParams, name: str, x: np.ndarray) -> float:
    m1, m2, m3 = params.m
    if name == "G12":
        return float(m3 - (m2 + m3) * x[0] ** 2)
    if name == "G13":
        return float(-m3 + (m1 + m3) * x[0] ** 2)
    return float(m2 - (m1 + m2) * x[1] ** 2)


def curve_eigenvalues(params: ModelParams, curve: EquilibriumCurve, theta: float) -> np.ndarray:
    """(0, -2 alpha, transverse) at the curve point of angle theta."""
    x = curve.point(theta)
    return np.array([0.0, -2.0 * params.alpha, _transverse(params, curve.name, x)])


def _build_curve(params: ModelParams, name: str) -> EquilibriumCurve:
    m_index, zero_coordinate, plane = CURVES[name]
    # transverse eigenvalue is affine in cos^2(theta): a + b cos^2(theta)
    probe0 = _transverse(params, name, _plane_point(plane, 0.0))
    probe1 = _transverse(params, name, _plane_point(plane, math.pi / 2))
    split = None
    if probe0 * probe1 < 0:
        # solve a + b c2 = 0 with c2 = cos^2(theta)
        c2 = probe1 / (probe1 - probe0)
        split = math.acos(math.sqrt(c2))
    edges = [0.0] + ([split] if split is not None else []) + [math.pi / 2]
    stable = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        if _transverse(params, name, _plane_point(plane, mid)) < 0:
            stable.append((lo, hi))
    return EquilibriumCurve(name=name, m_index=m_index, zero_coordinate=zero_coordinate,
                            plane=plane, split_angle=split, stable_arcs=stable)


def _plane_point(plane: Tuple[int, int], theta: float) -> np.ndarray:
    x = np.zeros(3)
    x[plane[0]] = math.cos(theta)
    x[plane[1]] = math.sin(theta)
    return x


def eigenvalues_at(params: ModelParams, label: str) -> np.ndarray:
    """Closed-form eigenvalues at an isolated equilibrium."""
    eq = equilibria(params)
    if label not in eq.labels:
        raise DomainError(f"equilibrium {label!r} is not isolated in case {classify_regime(params).canonical_case}")
    return eq.get(label).eigenvalues


def _table_eigenvalues(params: ModelParams, label: str) -> np.ndarray:
    a = params.alpha
    m1, m2, m3 = params.m
    if label == "O":
        return np.array([a, a, a], dtype=complex)
    if label == "e1":
        return np.array([-2 * a, m1, -m2], dtype=complex)
    if label == "e2":
        return np.array([-m1, -2 * a, m3], dtype=complex)
    if label == "e3":
        return np.array([m2, -m3, -2 * a], dtype=complex)
    if label == "Qstar":
        lam = 2.0 * math.sqrt(m1 * m2 * m3 / params.m_sum)
        return np.array([1j * lam, -1j * lam, -2 * a], dtype=complex)
    raise DomainError(f"unknown equilibrium label {label!r}")


def _isolated(params: ModelParams, label: str, point: np.ndarray) -> IsolatedEquilibrium:
    ev = _table_eigenvalues(params, label)
    return IsolatedEquilibrium(label=label, point=tuple(float(v) for v in point),
                               eigen_real=tuple(float(v) for v in ev.real),
                               eigen_imag=tuple(float(v) for v in ev.imag))


def equilibria(params: ModelParams) -> EquilibriumSet:
    """Enumerate the equilibria of the applicable case with eigenvalue data."""
    pattern = sign_pattern(params)
    zero_m = [k for k, s in enumerate(pattern) if s == 0]
    axes = np.eye(3)
    isolated = [_isolated(params, "O", np.zeros(3))]

    if len(zero_m) == 3:
        return EquilibriumSet(isolated=isolated, sphere=True)

    curves = [_build_curve(params, name) for name, spec in CURVES.items() if spec[0] in zero_m]
    on_curves = set()
    for curve in curves:
        on_curves.update(curve.plane)
    for k in range(3):
        if k not in on_curves:
            isolated.append(_isolated(params, AXIS_LABELS[k], axes[k]))

    if not zero_m and (all(s > 0 for s in pattern) or all(s < 0 for s in pattern)):
        isolated.append(_isolated(params, "Qstar", q_star(params)))

    result = EquilibriumSet(isolated=isolated, curves=curves)
    for e in result.isolated:
        residual = float(np.linalg.norm(drift(params, np.asarray(e.point))))
        if residual > settings.equilibrium_tol:
            raise DiagnosticMismatch(f"equilibrium {e.label} has drift residual {residual:.3e}")
    logger.debug(f"Equilibria for m={params.m}: {result.census()}")
    return result


def numerical_eigenvalues(params: ModelParams, point: Any) -> np.ndarray:
    return np.linalg.eigvals(jacobian(params, as_state(point)))


# ---------------------------------------------------------------------------
# Periodic orbits on the sphere
# ---------------------------------------------------------------------------

def _reduced_rk4(m: Tuple[float, float, float], y1: float, y2: float, h: float) -> Tuple[float, float]:
    m1, m2, m3 = m

    def f(a: float, b: float) -> Tuple[float, float]:
        aa, bb = a * a, b * b
        return a * (m2 - m2 * aa - (m1 + m2) * bb), b * (-m3 + (m1 + m3) * aa + m3 * bb)

    k1 = f(y1, y2)
    k2 = f(y1 + 0.5 * h * k1[0], y2 + 0.5 * h * k1[1])
    k3 = f(y1 + 0.5 * h * k2[0], y2 + 0.5 * h * k2[1])
    k4 = f(y1 + h * k3[0], y2 + h * k3[1])
    return (y1 + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            y2 + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def _lift(y1: Any, y2: Any) -> np.ndarray:
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    y3 = np.sqrt(np.maximum(0.0, 1.0 - y1 * y1 - y2 * y2))
    return np.stack([y1, y2, y3], axis=-1)


class PeriodicOrbit:
    """Closed orbit Gamma(h) on the sphere, sampled densely in time.

    Args:
        params: Case I parameters.
        h: Cone level, above h*.
        period: Minimal period N(h).
        times: Sample times in [0, period].
        states: Samples of the orbit, shape (n, 3).
        step: Integration step of the samples.
    """

    def __init__(self, params: ModelParams, h: float, period: float, times: np.ndarray,
                 states: np.ndarray, step: float):
        self.params = params
        self.h = h
        self.period = period
        self.times = times
        self.states = states
        self.step = step
        self.anchor = states[0].copy()
        self._q = q_star(params)
        self._angle_table = self._build_angle_table()

    def point_at(self, tau: Any) -> np.ndarray:
        """Psi(tau, y0) for any real tau, using periodicity."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float)) % self.period
        k = np.minimum((tau // self.step).astype(int), self.times.size - 1)
        out = np.empty((tau.size, 3))
        m = tuple(float(v) for v in self.params.m)
        for i in range(tau.size):
            base = self.states[k[i]]
            rest = tau[i] - self.times[k[i]]
            y1, y2 = _reduced_rk4(m, base[0], base[1], rest) if rest > 0 else (base[0], base[1])
            out[i] = _lift(y1, y2)
        return out

    def haar_samples(self, n: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Samples of the normalized time parameterization of Gamma(h)."""
        if rng is None:
            taus = (np.arange(n) + 0.5) * self.period / n
        else:
            taus = rng.uniform(0.0, self.period, size=n)
        return self.point_at(taus)

    def _angles(self, states: np.ndarray) -> np.ndarray:
        return np.arctan2(states[..., 1] - self._q[1], states[..., 0] - self._q[0])

    def _build_angle_table(self) -> Tuple[np.ndarray, np.ndarray, float]:
        raw = np.unwrap(self._angles(self.states))
        direction = 1.0 if raw[-1] >= raw[0] else -1.0
        winding = direction * (raw - raw[0])
        if np.any(np.diff(winding) < 0):
            logger.warning(f"Orbit at h={self.h:.6g} is not star-shaped around Q*; phase lookup is approximate")
            winding = np.maximum.accumulate(winding)
        return np.append(winding, 2 * math.pi), np.append(self.times, self.period), direction

    def phase_of(self, y: Any) -> np.ndarray:
        """Phase in [0, N(h)) of points on (or radially projected onto) Gamma(h)."""
        y = np.asarray(y, dtype=float)
        winding, times, direction = self._angle_table
        theta0 = self._angles(self.anchor)
        rel = (direction * (self._angles(y) - theta0)) % (2 * math.pi)
        return np.interp(rel, winding, times) % self.period

    def distance(self, points: Any, chunk: int = 4096) -> np.ndarray:
        """Euclidean distance from each point to the orbit polyline."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        nodes = self.states
        stride = max(1, nodes.shape[0] // 4000)
        coarse = nodes[::stride]
        out = np.empty(points.shape[0])
        for start in range(0, points.shape[0], chunk):
            block = points[start:start + chunk]
            nearest = np.argmin(cdist(block, coarse), axis=1) * stride
            best = np.full(block.shape[0], np.inf)
            for offset in range(-stride, stride + 1):
                j = np.clip(nearest + offset, 0, nodes.shape[0] - 2)
                a, b = nodes[j], nodes[j + 1]
                seg = b - a
                length2 = np.maximum(np.sum(seg * seg, axis=1), 1e-300)
                s = np.clip(np.sum((block - a) * seg, axis=1) / length2, 0.0, 1.0)
                best = np.minimum(best, np.linalg.norm(block - (a + s[:, None] * seg), axis=1))
            out[start:start + chunk] = best
        return out


def section_point(params: ModelParams, h: float) -> np.ndarray:
    """Point of Gamma(h) on the half-plane x2 = q2*, x1 > q1* of the sphere."""
    hs = h_star(params)
    if not h > hs:
        raise DomainError(f"cone level h={h} must exceed h*={hs}")
    q = q_star(params)
    x1_max = math.sqrt(1.0 - q[1] ** 2)
    log_h = math.log(h)
    expo = -2.0 * params.m[::-1] / params.m_sum

    def level(x1: float) -> float:
        x = _lift(x1, q[1])
        return float(np.log(x) @ expo) - log_h

    hi = None
    for gap in (1e-2, 1e-4, 1e-6, 1e-9, 1e-12, 1e-15):
        candidate = x1_max - gap * (x1_max - q[0])
        if level(candidate) > 0:
            hi = candidate
            break
    if hi is None:
        raise ConvergenceError(f"level h={h} is too close to the boundary polycycle to locate")
    x1 = brentq(level, q[0], hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return _lift(x1, q[1])


def periodic_orbit(params: ModelParams, h: float, step: Optional[float] = None,
                   horizon: Optional[float] = None) -> PeriodicOrbit:
    """Locate Gamma(h) and its minimal period by first return to the section."""
    y0 = section_point(params, h)
    q = q_star(params)
    m = tuple(float(v) for v in params.m)
    step = step or 2e-3 / max(abs(v) for v in m)
    horizon = horizon or settings.period_horizon

    f2 = y0[1] * (-m[2] + (m[0] + m[2]) * y0[0] ** 2 + m[2] * y0[1] ** 2)
    orientation = 1.0 if f2 > 0 else -1.0

    y1, y2 = float(y0[0]), float(y0[1])
    ys1, ys2 = [y1], [y2]
    n_max = int(math.ceil(horizon / step))
    left_section = False
    for k in range(1, n_max + 1):
        p1, p2 = y1, y2
        y1, y2 = _reduced_rk4(m, p1, p2, step)
        g_prev = orientation * (p2 - q[1])
        g_now = orientation * (y2 - q[1])
        if g_now < 0:
            left_section = True
        if left_section and g_prev < 0 <= g_now and y1 > q[0]:
            def crossing(tau: float) -> float:
                return orientation * (_reduced_rk4(m, p1, p2, tau)[1] - q[1])

            tau = brentq(crossing, 0.0, step, xtol=settings.period_time_tol)
            period = (k - 1) * step + tau
            times = np.arange(k) * step
            states = _lift(np.asarray(ys1), np.asarray(ys2))
            logger.info(f"Gamma(h={h:.6g}): period N(h)={period:.9g} after {k} steps")
            return PeriodicOrbit(params, h, period, times, states, step)
        ys1.append(y1)
        ys2.append(y2)
    raise ConvergenceError(f"no return to the section within horizon {horizon:g} for h={h}")


def period_of_orbit(params: ModelParams, h: float) -> float:
    """Minimal period N(h) of the closed orbit Gamma(h)."""
    return periodic_orbit(params, h).period


# ---------------------------------------------------------------------------
# Omega-limit classification
# ---------------------------------------------------------------------------

class OmegaLimitClass(BaseModel):
    """Omega-limit of a deterministic trajectory.

    kind is one of origin, equilibrium, periodic_orbit. For curve attractors the
    analytic rule only names the curve; point then holds the observed limit.
    """

    kind: str
    label: Optional[str] = None
    point: Optional[Tuple[float, float, float]] = None
    h: Optional[float] = None
    basin_witness: str
    observed: Optional[Tuple[float, float, float]] = None
    consistent: bool = True
    detail: str = ""


def _stable_vertex(pattern: Tuple[int, int, int]) -> Optional[int]:
    s1, s2, s3 = pattern
    if s1 < 0 < s2:
        return 0
    if s3 < 0 < s1:
        return 1
    if s2 < 0 < s3:
        return 2
    return None


_PLANE_RULES = {
    # vanishing coordinate -> (m index, vertex if m < 0, vertex if m > 0)
    2: (0, 0, 1),
    1: (1, 2, 0),
    0: (2, 1, 2),
}


def analytic_omega_limit(params: ModelParams, x0: Any) -> OmegaLimitClass:
    """Omega-limit from the membership rules alone, without integration."""
    x0 = as_state(x0, nonnegative=True)
    if not np.any(x0 > 0):
        raise DomainError("omega-limit of the origin is the origin itself; x0 must be nonzero")
    pattern = sign_pattern(params)
    axes = np.eye(3)
    zeros = [k for k in range(3) if x0[k] == 0]
    radial = x0 / np.linalg.norm(x0)

    if len(zeros) == 2:
        k = next(i for i in range(3) if i not in zeros)
        return OmegaLimitClass(kind="equilibrium", label=AXIS_LABELS[k], point=tuple(axes[k]),
                               basin_witness="axis")
    if len(zeros) == 1:
        m_index, if_negative, if_positive = _PLANE_RULES[zeros[0]]
        s = pattern[m_index]
        witness = f"boundary plane x{zeros[0] + 1}=0"
        if s == 0:
            return OmegaLimitClass(kind="equilibrium", label="curve", point=tuple(radial),
                                   basin_witness=witness + " (curve of equilibria)")
        k = if_negative if s < 0 else if_positive
        return OmegaLimitClass(kind="equilibrium", label=AXIS_LABELS[k], point=tuple(axes[k]),
                               basin_witness=witness)

    if all(s == 0 for s in pattern):
        return OmegaLimitClass(kind="equilibrium", label="sphere", point=tuple(radial),
                               basin_witness="ray (sphere of equilibria)")
    if all(s > 0 for s in pattern) or all(s < 0 for s in pattern):
        level = cone_level(params, x0)
        if level.on_equilibrium_ray:
            return OmegaLimitClass(kind="equilibrium", label="Qstar", point=tuple(q_star(params)),
                                   h=level.h, basin_witness="ray of Q*")
        return OmegaLimitClass(kind="periodic_orbit", h=level.h, basin_witness="cone level h > h*")
    vertex = _stable_vertex(pattern)
    if vertex is not None:
        return OmegaLimitClass(kind="equilibrium", label=AXIS_LABELS[vertex], point=tuple(axes[vertex]),
                               basin_witness="interior, stable boundary vertex")
    return OmegaLimitClass(kind="equilibrium", label="curve", basin_witness="interior, curve attractor")


def _check_against(params: ModelParams, analytic: OmegaLimitClass, x0: np.ndarray,
                   final: np.ndarray, curves: List[EquilibriumCurve]) -> OmegaLimitClass:
    tol = settings.omega_tol
    result = analytic.model_copy(update={"observed": tuple(float(v) for v in final)})
    if analytic.kind == "periodic_orbit":
        h_end = float(first_integral_values(params, final[None, :])[0])
        speed = float(np.linalg.norm(drift(params, final)))
        ok = (abs(h_end - analytic.h) <= 1e-6 * analytic.h and abs(float(sphere_residual(final))) <= tol
              and speed > tol)
        detail = f"H drift {abs(h_end - analytic.h) / analytic.h:.2e}, speed {speed:.2e}"
    elif analytic.point is not None:
        dist = float(np.linalg.norm(final - np.asarray(analytic.point)))
        ok = dist <= tol
        detail = f"distance to analytic limit {dist:.2e}"
    else:
        speed = float(np.linalg.norm(drift(params, final)))
        on_curve = [c for c in curves if final[c.zero_coordinate] <= math.sqrt(tol)]
        transverse = [_transverse(params, c.name, final) for c in on_curve]
        ok = speed <= tol and bool(on_curve) and min(transverse) <= math.sqrt(tol)
        names = ",".join(c.name for c in on_curve) or "none"
        detail = f"speed {speed:.2e}, curves {names}"
        if ok:
            result = result.model_copy(update={"point": tuple(float(v) for v in final),
                                               "label": on_curve[0].name})
    return result.model_copy(update={"consistent": ok, "detail": detail})


def classify_omega_limits(params: ModelParams, x0s: Any, horizon: Optional[float] = None,
                          step: Optional[float] = None) -> List[OmegaLimitClass]:
    """Classify many initial conditions; inconsistencies are flagged, not raised."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    analytic = [analytic_omega_limit(params, x) for x in x0s]
    horizon = horizon or settings.omega_horizon / params.alpha
    h = step or settings.flow_step
    n_steps = int(math.ceil(horizon / h))
    _, states = _rk4_march(params, x0s, horizon / n_steps, n_steps, record_every=n_steps)
    final = states[-1]
    curves = equilibria(params).curves
    results = [_check_against(params, a, x, f, curves) for a, x, f in zip(analytic, x0s, final)]
    flagged = sum(1 for r in results if not r.consistent)
    if flagged:
        logger.warning(f"{flagged}/{len(results)} omega-limit classifications disagree with integration")
    return results


def omega_limit(params: ModelParams, x0: Any, horizon: Optional[float] = None) -> OmegaLimitClass:
    """Analytic omega-limit of x0, cross-validated by long-horizon integration."""
    result = classify_omega_limits(params, [x0], horizon=horizon)[0]
    if not result.consistent:
        raise DiagnosticMismatch(
            f"analytic omega-limit ({result.kind}, {result.basin_witness}) not confirmed numerically: {result.detail}"
        )
    return result
