"""
Empirical measures and the statistics used to compare them with the
stationary measures of the stochastic Kolmogorov system: densities of mu_Q,
Kolmogorov-Smirnov distances, occupation measures on invariant cones,
vanishing-noise sweeps and the P-bifurcation probe.
"""

import logging
import math
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from config import settings
from deterministic_flow import cone_level, h_star, periodic_orbit, require_case_one
from ensemble import ensemble_seeds
from errors import DomainError
from logistic_scalar import density_mode, density_shape, g_with_internal_time, stationary_density, ug_samples
from model_core import ModelParams, as_state
from noise_path import sample_path
from sde_engine import SchemeSpec, integrate_sde

logger = logging.getLogger(__name__)

_RAY_TOL = 1e-12


class EmpiricalMeasure:
    """Weighted samples with cached one-dimensional CDFs.

    Args:
        samples: Shape (n,) for scalars or (n, k) for points.
        weights: Nonnegative raw weights, default one per sample.
        columns: Column names; defaults to value for scalars and x1, x2, x3 for states.
        coordinate: Default coordinate for CDFs and distances.
    """

    def __init__(self, samples: Any, weights: Optional[Any] = None,
                 columns: Optional[Sequence[str]] = None, coordinate: Optional[str] = None):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2:
            raise DomainError("samples must be scalars or points")
        if columns is None:
            columns = ("value",) if samples.shape[1] == 1 else tuple(f"x{i + 1}" for i in range(samples.shape[1]))
        if len(columns) != samples.shape[1]:
            raise DomainError(f"{len(columns)} column names for {samples.shape[1]} columns")
        raw = np.ones(samples.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        if raw.shape != (samples.shape[0],) or np.any(raw < 0) or not np.all(np.isfinite(raw)):
            raise DomainError("weights must be finite, nonnegative and one per sample")
        self.samples = samples
        self.raw_weights = raw
        self.columns = tuple(columns)
        self.coordinate = coordinate or self.columns[0]
        self._cdf_cache: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def weights(self) -> np.ndarray:
        total = float(np.sum(self.raw_weights))
        if not total > 0:
            raise DomainError("empirical measure carries no mass")
        return self.raw_weights / total

    def project(self, coordinate: Optional[str] = None) -> np.ndarray:
        """Samples projected onto a column or a derived coordinate (radius)."""
        name = coordinate or self.coordinate
        if name in self.columns:
            return self.samples[:, self.columns.index(name)]
        if name == "radius":
            if "log_radius" in self.columns:
                return np.exp(self.samples[:, self.columns.index("log_radius")])
            spatial = [i for i, c in enumerate(self.columns) if c in ("x1", "x2", "x3")]
            if spatial:
                return np.linalg.norm(self.samples[:, spatial], axis=1)
        raise DomainError(f"unknown coordinate {name!r} for columns {self.columns}")

    def radial(self) -> np.ndarray:
        return self.project("radius")

    def _table(self, coordinate: Optional[str]) -> Tuple[np.ndarray, np.ndarray]:
        name = coordinate or self.coordinate
        if name not in self._cdf_cache:
            if self.size == 0:
                raise DomainError("empirical measure is empty")
            values = self.project(name)
            order = np.argsort(values, kind="stable")
            xs = values[order]
            cum = np.cumsum(self.weights[order])
            # one entry per distinct value, holding the CDF just after it
            last = np.append(xs[1:] != xs[:-1], True)
            self._cdf_cache[name] = (xs[last], np.minimum(cum[last], 1.0))
        return self._cdf_cache[name]

    def cdf(self, s: Any, coordinate: Optional[str] = None) -> np.ndarray:
        xs, cum = self._table(coordinate)
        k = np.searchsorted(xs, np.asarray(s, dtype=float), side="right")
        return np.where(k > 0, cum[np.maximum(k - 1, 0)], 0.0)

    def quantile(self, p: Any, coordinate: Optional[str] = None) -> np.ndarray:
        xs, cum = self._table(coordinate)
        k = np.searchsorted(cum, np.asarray(p, dtype=float) - 1e-15, side="left")
        return xs[np.minimum(k, xs.size - 1)]

    def merge(self, *others: "EmpiricalMeasure") -> "EmpiricalMeasure":
        """Pool samples; the result does not depend on the order of the parts."""
        return merge_measures([self, *others])

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n={self.size}, columns={self.columns}, coordinate={self.coordinate!r})"


def merge_measures(parts: Sequence[EmpiricalMeasure]) -> EmpiricalMeasure:
    """Associative, order-independent merge by canonical sorting of the pooled samples."""
    if not parts:
        raise DomainError("nothing to merge")
    columns = parts[0].columns
    if any(p.columns != columns for p in parts):
        raise DomainError("cannot merge measures with different columns")
    samples = np.concatenate([p.samples for p in parts], axis=0)
    weights = np.concatenate([p.raw_weights for p in parts])
    keys = [weights] + [samples[:, i] for i in range(samples.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys)
    return EmpiricalMeasure(samples[order], weights[order], columns, parts[0].coordinate)


def ks_distance(emp: EmpiricalMeasure, cdf: Union[Callable[[np.ndarray], np.ndarray], EmpiricalMeasure],
                coordinate: Optional[str] = None) -> float:
    """sup |F_emp - F| along the coordinate; F is a CDF callable or another empirical measure."""
    xs, after = emp._table(coordinate)
    if isinstance(cdf, EmpiricalMeasure):
        other_xs, _ = cdf._table(coordinate)
        grid = np.union1d(xs, other_xs)
        return float(np.max(np.abs(emp.cdf(grid, coordinate) - cdf.cdf(grid, coordinate))))
    before = np.concatenate([[0.0], after[:-1]])
    f = np.asarray(cdf(xs), dtype=float)
    return float(max(np.max(np.abs(after - f)), np.max(np.abs(before - f))))


def ks_between(a: EmpiricalMeasure, b: EmpiricalMeasure, coordinate: Optional[str] = None) -> float:
    return ks_distance(a, b, coordinate)


# ---------------------------------------------------------------------------
# Stationary measures on rays and cycles
# ---------------------------------------------------------------------------

def mu_Q_density(params: ModelParams, q: Any, x: Any) -> float:
    """Density of mu_Q along the ray of Q at x, zero off the ray."""
    q = as_state(q, nonnegative=True)
    x = as_state(x)
    norm_q = float(np.linalg.norm(q))
    if norm_q == 0.0:
        raise DomainError("mu_Q density needs Q != O")
    r = float(x @ q) / (norm_q * norm_q)
    if not r > 0 or np.linalg.norm(x - r * q) > _RAY_TOL * max(1.0, float(np.linalg.norm(x))):
        return 0.0
    j = int(np.argmax(q))
    return float(stationary_density(params, x[j] / q[j])) / norm_q


def haar_samples(params: ModelParams, h: float, n: int) -> EmpiricalMeasure:
    """Time-parameterization samples of Gamma(h)."""
    orbit = periodic_orbit(params, h)
    return EmpiricalMeasure(orbit.haar_samples(n), coordinate="x1")


def ray_samples(params: ModelParams, q: Any, seeds: Sequence[int], dt: Optional[float] = None) -> EmpiricalMeasure:
    """Samples u_g(omega) Q of mu_Q, one per seed."""
    q = as_state(q, nonnegative=True)
    u = ug_samples(params, seeds, dt)
    return EmpiricalMeasure(u[:, None] * q[None, :], coordinate="radius")


# ---------------------------------------------------------------------------
# Occupation measures on cones
# ---------------------------------------------------------------------------

def default_burn_in(params: ModelParams) -> float:
    return 10.0 / (2.0 * params.alpha - params.sigma2)


def occupation_measure_on_cone(params: ModelParams, seed: int, h: float, t_end: float,
                               burn_in: Optional[float] = None, x0: Optional[Any] = None,
                               method: Literal["sde", "decomposition"] = "sde", dt: Optional[float] = None,
                               record_every: int = 1) -> EmpiricalMeasure:
    """Time-occupation samples on Lambda(h) in the (log radius, phase) coordinates."""
    require_case_one(params)
    if params.sigma2 >= 2.0 * params.alpha:
        raise DomainError("occupation on a cone needs sigma^2 < 2 alpha")
    hs = h_star(params)
    if not h > hs:
        raise DomainError(f"cone level h={h} must exceed h*={hs}")
    orbit = periodic_orbit(params, h)
    if x0 is None:
        x0 = orbit.anchor
    x0 = as_state(x0, nonnegative=True)
    level = cone_level(params, x0)
    if abs(level.h - h) > 1e-6 * h:
        raise DomainError(f"initial point lies on the cone h={level.h:.6g}, not h={h:.6g}")
    burn_in = default_burn_in(params) if burn_in is None else burn_in
    if dt is None:
        dt = settings.ensemble_dt
    path = sample_path(seed, 0.0, burn_in + t_end, dt)
    t_total = path.t_max

    if method == "decomposition":
        g0 = float(np.linalg.norm(x0))
        times, g, tau = g_with_internal_time(params, path, g0, t_total)
        phase0 = float(orbit.phase_of(x0 / g0))
        keep = np.arange(0, times.size, record_every)
        keep = keep[times[keep] >= burn_in]
        log_r = np.log(g[keep])
        phase = (phase0 + tau[keep]) % orbit.period
    elif method == "sde":
        record = integrate_sde(params, path, x0, t_total, SchemeSpec(kind="milstein", dt=dt), record_every)
        keep = record.times >= burn_in
        states = record.states[keep]
        radius = np.linalg.norm(states, axis=1)
        if np.any(radius <= 0):
            raise DomainError("trajectory reached the origin")
        log_r = np.log(radius)
        phase = orbit.phase_of(states / radius[:, None])
    else:
        raise DomainError(f"unknown occupation method {method!r}")
    logger.info(f"Occupation on Lambda(h={h:.6g}) by {method}: {log_r.size} samples after burn-in {burn_in:g}")
    return EmpiricalMeasure(np.column_stack([log_r, phase]), columns=("log_radius", "phase"),
                            coordinate="log_radius")


def cone_points(params: ModelParams, h: float, occupation: EmpiricalMeasure) -> np.ndarray:
    """Reconstruct x = r * Gamma(h)(phase) from occupation samples."""
    orbit = periodic_orbit(params, h)
    r = occupation.project("radius")
    return r[:, None] * orbit.point_at(occupation.project("phase"))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

class SweepRow(BaseModel):
    sigma2: float
    statistic: float
    standard_error: float
    n: int


class SweepTable(BaseModel):
    target: str
    rows: List[SweepRow]

    def is_decreasing(self, allowed_inversions: int = 1) -> bool:
        """Decreasing along the list, tolerating inversions within one standard error."""
        inversions = 0
        for prev, cur in zip(self.rows[:-1], self.rows[1:]):
            if cur.statistic >= prev.statistic:
                if cur.statistic - prev.statistic > max(cur.standard_error, prev.standard_error):
                    return False
                inversions += 1
        return inversions <= allowed_inversions


def vanishing_noise_sweep(alpha: float, d: Sequence[float], sigma2_list: Sequence[float],
                          target: Literal["equilibrium", "cycle"], q: Optional[Any] = None,
                          h: Optional[float] = None, seed: int = 0, n_samples: int = 4000,
                          t_end: float = 2000.0, max_points: int = 20000) -> SweepTable:
    """Concentration of mu_Q^sigma at Q (or nu_h^sigma at Gamma(h)) as sigma decreases."""
    if any(s2 < 0 for s2 in sigma2_list):
        raise DomainError("sigma^2 values must be nonnegative")
    if any(s2 >= 2.0 * alpha for s2 in sigma2_list):
        raise DomainError("vanishing-noise sweep needs every sigma^2 < 2 alpha")
    rows = []
    for k, s2 in enumerate(sigma2_list):
        params = ModelParams(alpha=alpha, sigma=math.sqrt(s2), d=tuple(d))
        if target == "equilibrium":
            point = as_state(q, nonnegative=True)
            u = ug_samples(params, ensemble_seeds(seed + k, n_samples))
            dist = np.linalg.norm(point) * np.abs(u - 1.0)
            stderr = float(np.std(dist, ddof=1) / math.sqrt(dist.size))
        elif target == "cycle":
            orbit = periodic_orbit(params, h)
            occ = occupation_measure_on_cone(params, seed + k, h, t_end, method="decomposition")
            stride = max(1, occ.size // max_points)
            pts = occ.project("radius")[::stride, None] * orbit.point_at(occ.project("phase")[::stride])
            dist = orbit.distance(pts)
            # successive occupation samples are correlated; batch means give the error
            batches = np.array_split(dist, 20)
            stderr = float(np.std([b.mean() for b in batches], ddof=1) / math.sqrt(len(batches)))
        else:
            raise DomainError(f"unknown sweep target {target!r}")
        rows.append(SweepRow(sigma2=s2, statistic=float(np.mean(dist)), standard_error=stderr, n=int(dist.size)))
        logger.info(f"sigma^2={s2:g}: concentration {rows[-1].statistic:.4e} +- {stderr:.1e}")
    table = SweepTable(target=target, rows=rows)
    if not table.is_decreasing():
        logger.warning("Concentration statistic is not decreasing along the sigma list")
    return table


class ShapeRow(BaseModel):
    sigma2: float
    analytic_shape: str
    analytic_mode: Optional[float]
    empirical_shape: str
    empirical_mode: float
    bin_width: float
    agree: bool


def p_bifurcation_probe(alpha: float, sigma2_list: Sequence[float], seed: int = 0, n_samples: int = 20000,
                        bins: int = 12, dt: Optional[float] = None) -> List[ShapeRow]:
    """Density shape per sigma^2, analytic against a histogram of u_g samples."""
    rows = []
    for k, s2 in enumerate(sigma2_list):
        params = ModelParams(alpha=alpha, sigma=math.sqrt(s2))
        mode = density_mode(params)
        shape = density_shape(params)
        u = ug_samples(params, ensemble_seeds(seed + k, n_samples), dt)
        counts, edges = np.histogram(u, bins=bins, range=(0.0, float(np.quantile(u, 0.995))))
        peak = int(np.argmax(counts))
        width = float(edges[1] - edges[0])
        emp_shape = "monotone-decreasing" if peak == 0 else "unimodal"
        if mode is None:
            agree = emp_shape == shape
        else:
            mode_bin = min(int(mode // width), bins - 1)
            agree = emp_shape == shape and abs(peak - mode_bin) <= 1
        rows.append(ShapeRow(sigma2=s2, analytic_shape=shape, analytic_mode=mode, empirical_shape=emp_shape,
                             empirical_mode=float(0.5 * (edges[peak] + edges[peak + 1])), bin_width=width,
                             agree=agree))
        logger.info(f"sigma^2={s2:g}: {shape} (analytic) vs {emp_shape} (histogram), agree={agree}")
    return rows
