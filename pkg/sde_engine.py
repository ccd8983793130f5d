"""
Direct integration of the stochastic Kolmogorov system and the stochastic
decomposition evaluator.

The SDE dx_i = b_i(x)dt + sigma x_i dW is stepped with Euler-Maruyama or
Milstein using the realized increments of a BrownianPath, so a direct
simulation and the decomposition g * Psi(int g^2, x0/g0) can be compared on
the same noise. The linearized cocycle is handled through the transform
v = u * exp(-sigma^2 t/2 + sigma W_t), which leaves the deterministic
equation du = F(x(t)) u dt along the base trajectory.
"""

import logging
import math
from typing import Any, Iterable, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import settings
from deterministic_flow import (
    FlowEvaluator,
    TrajectoryRecord,
    first_integral_values,
    report_flags,
)
from errors import BlowUpError, DomainError, NumericalFailure
from logistic_scalar import g_with_internal_time
from model_core import ModelParams, as_state, drift, jacobian, sphere_residual
from noise_path import BrownianPath, grid_steps, increment_matrix, path_for_step, refine

logger = logging.getLogger(__name__)

_RATIO_TOL = 1e-9
_PROPAGATOR_CHUNK = 65536


class SchemeSpec(BaseModel):
    """Stochastic scheme and step.

    Args:
        kind: euler_maruyama or milstein.
        dt: Step; must be an integer multiple or an integer fraction of the path step.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["euler_maruyama", "milstein"] = "milstein"
    dt: float = Field(gt=0)

    def align(self, path: BrownianPath) -> Tuple[BrownianPath, int]:
        """Return the path to step on (refined if needed) and the node stride."""
        ratio = self.dt / path.dt
        if ratio >= 1 - _RATIO_TOL:
            stride = int(round(ratio))
            if abs(ratio - stride) <= _RATIO_TOL * ratio:
                return path, stride
        else:
            factor = int(round(1.0 / ratio))
            if abs(1.0 / ratio - factor) <= _RATIO_TOL * factor:
                if factor & (factor - 1):
                    raise DomainError(f"path step {path.dt:g} / scheme step {self.dt:g} = {factor} is not a power of 2")
                return refine(path, factor), 1
        raise DomainError(f"scheme step {self.dt:g} and path step {path.dt:g} have no integer ratio")


# ---------------------------------------------------------------------------
# Direct integration
# ---------------------------------------------------------------------------

def sde_step(params: ModelParams, x: np.ndarray, dt: float, dw: np.ndarray, kind: str) -> np.ndarray:
    """One step for a batch x of shape (..., 3) with increments dw of shape (...)."""
    dw = np.asarray(dw)[..., None]
    out = x + drift(params, x) * dt + params.sigma * x * dw
    if kind == "milstein":
        out = out + 0.5 * params.sigma2 * x * (dw * dw - dt)
    return out


def march_batch(params: ModelParams, x0: np.ndarray, dw: np.ndarray, dt: float, kind: str,
           record_every: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Step a batch (B, 3) through increments (B, n); returns recorded steps and states."""
    x = np.array(x0, dtype=float)
    n = dw.shape[-1]
    steps = [0]
    states = [x.copy()]
    for k in range(n):
        x = sde_step(params, x, dt, dw[..., k], kind)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > settings.blowup_norm:
            raise BlowUpError(f"{kind} blew up at dt={dt:g}", (k + 1) * dt)
        if (k + 1) % record_every == 0 or k + 1 == n:
            steps.append(k + 1)
            states.append(x.copy())
    return np.asarray(steps), np.asarray(states)


def integrate_sde(params: ModelParams, path: BrownianPath, x0: Any, t_end: float,
                  scheme: SchemeSpec, record_every: int = 1) -> TrajectoryRecord:
    """Integrate the SDE from x0 over [0, t_end] on the realized increments of path."""
    if not t_end > 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    x0 = as_state(x0, nonnegative=True)
    grid, stride = scheme.align(path)
    grid.require(0.0, t_end)
    i0, i1 = grid.index_of(0.0), grid.index_of(t_end)
    if (i1 - i0) % stride:
        raise DomainError(f"t_end={t_end:g} is not a multiple of the scheme step {scheme.dt:g}")
    w = grid.values[i0:i1 + 1:stride]
    steps, states = march_batch(params, x0, np.diff(w), scheme.dt, scheme.kind, record_every)
    record = TrajectoryRecord(steps * scheme.dt, states, first_integral_values(params, states),
                              sphere_residual(states), noise=w[steps],
                              info={"scheme": scheme.kind, "dt": scheme.dt, "seed": path.seed})
    report_flags(record)
    return record


def octant_exit_fraction(params: ModelParams, seeds: Iterable[int], x0: Any, t_end: float,
                         scheme: SchemeSpec) -> float:
    """Fraction of trajectories that leave the closed positive octant before t_end."""
    x0 = as_state(x0, nonnegative=True)
    seeds = list(seeds)
    n = grid_steps(t_end, scheme.dt)
    dw = increment_matrix(seeds, n, scheme.dt)
    x = np.tile(x0, (len(seeds), 1))
    left = np.zeros(len(seeds), dtype=bool)
    for k in range(n):
        x = sde_step(params, x, scheme.dt, dw[:, k], scheme.kind)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > settings.blowup_norm:
            raise BlowUpError(f"{scheme.kind} blew up at dt={scheme.dt:g}", (k + 1) * scheme.dt)
        left |= np.any(x < 0, axis=1)
    return float(np.mean(left)) if seeds else 0.0


# ---------------------------------------------------------------------------
# Stochastic decomposition
# ---------------------------------------------------------------------------

def _require_g0(g0: float) -> float:
    if not (np.isfinite(g0) and g0 > 0):
        raise DomainError(f"g0 must be positive, got {g0}")
    return float(g0)


def decompose(params: ModelParams, path: BrownianPath, x0: Any, g0: float, t: float,
              h: Optional[float] = None) -> np.ndarray:
    """g(t, omega, g0) * Psi(int_0^t g^2 ds, x0/g0)."""
    x0 = as_state(x0, nonnegative=True)
    g0 = _require_g0(g0)
    if t == 0:
        return x0.copy()
    _, g, tau = g_with_internal_time(params, path, g0, t)
    if not np.any(x0 > 0):
        return np.zeros(3)
    return g[-1] * FlowEvaluator(params, x0 / g0, h)(float(tau[-1]))


def decompose_trajectory(params: ModelParams, path: BrownianPath, x0: Any, g0: float, t_end: float,
                         record_every: int = 1, h: Optional[float] = None) -> TrajectoryRecord:
    """Decomposition evaluated at every recorded node of [0, t_end]."""
    x0 = as_state(x0, nonnegative=True)
    g0 = _require_g0(g0)
    times, g, tau = g_with_internal_time(params, path, g0, t_end)
    keep = np.arange(0, times.size, record_every)
    if keep[-1] != times.size - 1:
        keep = np.append(keep, times.size - 1)
    psi = FlowEvaluator(params, x0 / g0, h).many(tau[keep])
    states = g[keep, None] * psi
    _, w = path.window(0.0, t_end)
    return TrajectoryRecord(times[keep], states, first_integral_values(params, states),
                            sphere_residual(states), noise=w[keep],
                            info={"method": "decomposition", "g0": g0})


def decomposition_gap(params: ModelParams, seed: int, x0: Any, t: float, dt: float,
                      kind: str = "euler_maruyama", base_dt: Optional[float] = None,
                      reference_factor: int = 16) -> float:
    """|integrate_sde(dt)(t) - decompose(t)| on one shared path.

    The path at step dt is a bridge refinement of a base_dt path when the
    ratio allows it, so gaps at dt, dt/2, ... share their coarse nodes. The
    decomposition is evaluated on a further refinement of the same path.
    """
    x0 = as_state(x0, nonnegative=True)
    base_dt = base_dt or settings.ensemble_dt
    path = path_for_step(seed, 0.0, t, dt, base_dt)
    direct = integrate_sde(params, path, x0, t, SchemeSpec(kind=kind, dt=dt), record_every=grid_steps(t, dt))
    reference = decompose(params, refine(path, reference_factor), x0, 1.0, t)
    return float(np.linalg.norm(direct.final_state - reference))


class GapStudy(NamedTuple):
    dts: np.ndarray
    mean_gap: np.ndarray
    stderr: np.ndarray
    order: float


def gap_study(params: ModelParams, seeds: Sequence[int], x0: Any, t: float, dts: Sequence[float],
              kind: str = "euler_maruyama", mapper=map) -> GapStudy:
    """Mean decomposition gap per step and the fitted empirical strong order."""
    dts = np.asarray(dts, dtype=float)
    means, errs = [], []
    for dt in dts:
        gaps = np.asarray(list(mapper(_GapTask(params, x0, t, float(dt), kind), seeds)))
        means.append(float(np.mean(gaps)))
        errs.append(float(np.std(gaps, ddof=1) / math.sqrt(gaps.size)) if gaps.size > 1 else 0.0)
        logger.info(f"dt={dt:g}: mean gap {means[-1]:.3e} over {gaps.size} seeds")
    means = np.asarray(means)
    usable = means > 0
    order = float("nan")
    if np.count_nonzero(usable) > 1:
        order = float(np.polyfit(np.log(dts[usable]), np.log(means[usable]), 1)[0])
    return GapStudy(dts, means, np.asarray(errs), order)


class _GapTask:
    """Picklable per-seed gap evaluation."""

    def __init__(self, params: ModelParams, x0: Any, t: float, dt: float, kind: str):
        self.params = params
        self.x0 = np.asarray(x0, dtype=float)
        self.t = t
        self.dt = dt
        self.kind = kind

    def __call__(self, seed: int) -> float:
        return decomposition_gap(self.params, seed, self.x0, self.t, self.dt, self.kind)


# ---------------------------------------------------------------------------
# Linearized cocycle
# ---------------------------------------------------------------------------

class LinearizedGrowth(NamedTuple):
    direction: np.ndarray
    log_norm: float
    renormalizations: int
    t_end: float


def _propagators(params: ModelParams, states: np.ndarray, h: float) -> np.ndarray:
    """RK4 one-step matrices of du = F(x(t)) u with F interpolated along the base."""
    eye = np.eye(3)
    a0 = jacobian(params, states[:-1])
    a1 = jacobian(params, states[1:])
    am = jacobian(params, 0.5 * (states[:-1] + states[1:]))
    k1 = a0
    k2 = am @ (eye + 0.5 * h * k1)
    k3 = am @ (eye + 0.5 * h * k2)
    k4 = a1 @ (eye + h * k3)
    return eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _tree_product(mats: np.ndarray) -> np.ndarray:
    """Ordered product P_{n-1} ... P_1 P_0 by pairwise reduction."""
    while mats.shape[0] > 1:
        if mats.shape[0] % 2:
            mats = np.concatenate([mats, np.eye(3)[None]], axis=0)
        mats = mats[1::2] @ mats[0::2]
    return mats[0]


def _check_base(params: ModelParams, path: BrownianPath, base: TrajectoryRecord, t_end: float) -> int:
    times = base.times
    if times[0] != 0.0 or times[-1] < t_end * (1 - 1e-12):
        raise DomainError(f"base trajectory covers [{times[0]:g}, {times[-1]:g}], need [0, {t_end:g}]")
    steps = np.diff(times)
    if steps.size and np.max(np.abs(steps - steps[0])) > 1e-9 * steps[0]:
        raise DomainError("base trajectory must be recorded on a uniform grid")
    n = int(round(t_end / steps[0])) if steps.size else 0
    if abs(times[n] - t_end) > 1e-9 * max(1.0, t_end):
        raise DomainError(f"t_end={t_end:g} is not a recorded time of the base trajectory")
    if params.sigma > 0:
        if base.noise is None:
            raise DomainError("base trajectory carries no noise column; it was not computed on a path")
        k = np.rint(times[:n + 1] / path.dt).astype(int) + path.anchor
        if k[-1] >= path.size or np.any(np.abs(path.values[k] - base.noise[:n + 1]) > 1e-12):
            raise DomainError("base trajectory was computed on a different path")
    return n


def linearized_growth(params: ModelParams, path: BrownianPath, base: TrajectoryRecord, v0: Any,
                      t_end: float, renorm_step: float = 1.0) -> LinearizedGrowth:
    """Propagate v0 along base with renormalization every renorm_step time units."""
    n = _check_base(params, path, base, t_end)
    v0 = np.asarray(v0, dtype=float)
    norm0 = float(np.linalg.norm(v0))
    if v0.shape != (3,) or not norm0 > 0:
        raise DomainError(f"v0 must be a nonzero 3-vector, got {v0}")
    u = v0 / norm0
    log_norm = math.log(norm0)
    count = 0
    if n > 0:
        h = float(base.times[1] - base.times[0])
        block = max(1, int(round(renorm_step / h)))
        chunk = max(block, (_PROPAGATOR_CHUNK // block) * block)
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            props = _propagators(params, base.states[start:stop + 1], h)
            for b in range(0, stop - start, block):
                u = _tree_product(props[b:b + block]) @ u
                norm = float(np.linalg.norm(u))
                if not (np.isfinite(norm) and norm > 0):
                    raise NumericalFailure(f"linearized cocycle degenerated at t={(start + b) * h:g}")
                log_norm += math.log(norm)
                u = u / norm
                count += 1
    w_end = float(base.noise[n]) if base.noise is not None else 0.0
    log_norm += -0.5 * params.sigma2 * t_end + params.sigma * w_end
    return LinearizedGrowth(u, log_norm, count, float(t_end))


def integrate_linearized(params: ModelParams, path: BrownianPath, base: TrajectoryRecord, v0: Any,
                         t_end: float, renorm_step: float = 1.0) -> np.ndarray:
    """v(t_end) for dv = F(x)v dt + sigma v dW along base."""
    growth = linearized_growth(params, path, base, v0, t_end, renorm_step)
    return growth.direction * np.exp(growth.log_norm)
