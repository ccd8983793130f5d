"""
Command-line experiment harness for the stochastic Kolmogorov lab.

Each subcommand runs one experiment from a config file (JSON, or flat
key=value lines) and writes CSV artifacts plus a manifest.json carrying the
config hash, package versions and per-file checksums.

Usage:
    python kolmogorov_lab.py classify --config params.env
    python kolmogorov_lab.py lyapunov-sweep --config sweep.json --threads 8 --out artifacts/sweep
"""

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
from importlib import metadata
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import settings
from deterministic_flow import (
    AXIS_LABELS,
    StepControl,
    equilibria,
    h_star,
    integrate_flow,
    numerical_eigenvalues,
    omega_limit,
    periodic_orbit,
)
from ensemble import ensemble_seeds, mapper
from errors import ConfigurationError, exit_code_for
from logistic_scalar import (
    density_mode,
    density_shape,
    density_table,
    g_terminal_samples,
    stationary_cdf,
    stationary_density,
    time_average_g2,
    truncation_depth,
    ug_samples,
)
from measure_lab import (
    EmpiricalMeasure,
    ks_between,
    ks_distance,
    occupation_measure_on_cone,
    p_bifurcation_probe,
    vanishing_noise_sweep,
)
from model_core import ModelParams, classify_regime
from noise_path import sample_path
from random_dynamics import (
    MEASURE_IDS,
    cone_invariance_check,
    crps,
    ergodic_census,
    lyapunov_analytic,
    lyapunov_numeric,
    pullback_limit,
    pullback_points,
)
from sde_engine import SchemeSpec, decompose_trajectory, gap_study, integrate_sde

logger = logging.getLogger(__name__)

__version__ = "0.1.0"

ExperimentKind = Literal[
    "classify", "flow", "sde", "decompose-check", "logistic-density", "lyapunov", "lyapunov-sweep",
    "pullback", "crps", "cone-occupation", "vanishing-noise", "p-bifurcation",
]

THEOREMS = {
    "classify": "existence and stability of equilibria; classification of the global dynamics",
    "flow": "first integrals, invariant sphere and omega-limit classification of the deterministic flow",
    "sde": "global positive solutions of the stochastic system",
    "decompose-check": "stochastic decomposition formula",
    "logistic-density": "stationary density and time averages of the stochastic logistic equation",
    "lyapunov": "Lyapunov exponents of the ergodic stationary measures",
    "lyapunov-sweep": "stochastic bifurcation of the trivial measure at sigma^2 = 2 alpha",
    "pullback": "pull-back omega-limit sets",
    "crps": "random periodic solutions on invariant cones",
    "cone-occupation": "cone invariance and uniqueness of stationary measures on invariant cones",
    "vanishing-noise": "vanishing-noise limit of stationary measures",
    "p-bifurcation": "P-bifurcation of the stationary density at sigma^2 = alpha",
}

_LIST_KEYS = ("x0", "q", "dts", "sigma2_list")
_UNHASHED_KEYS = {"out", "threads"}
_VERSIONED = ("numpy", "scipy", "pydantic", "pydantic-settings", "python-dotenv")


class ExperimentConfig(BaseModel):
    """One experiment: model parameters, seeds, steps, horizons and outputs.

    Model parameters use the flat parameter-file keys alpha, sigma (or
    sigma2), d1, d2, d3. List keys accept comma-separated text.
    """

    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    kind: ExperimentKind
    alpha: float = Field(default=1.0, gt=0)
    sigma: Optional[float] = Field(default=None, ge=0)
    sigma2: Optional[float] = Field(default=None, ge=0)
    d1: float = 0.0
    d2: float = 0.0
    d3: float = 0.0

    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    n_seeds: int = Field(default=20, ge=1)
    n_samples: int = Field(default=4000, ge=2)

    x0: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    g0: float = Field(default=1.0, gt=0)
    t_end: float = Field(default=10.0, gt=0)
    t_average: Optional[float] = Field(default=None, gt=0)
    t_check: float = Field(default=10.0, gt=0)
    dt: float = Field(default=1e-2, gt=0)
    dts: List[float] = [1e-2, 5e-3, 2.5e-3]
    record_every: int = Field(default=1, ge=1)
    scheme: Literal["euler_maruyama", "milstein"] = "milstein"

    sigma2_list: Optional[List[float]] = None
    measure: Literal["O", "e1", "e2", "e3", "trajectory"] = "O"
    axis: int = Field(default=0, ge=0, le=2)
    renorm_step: float = Field(default=1.0, gt=0)
    h: Optional[float] = Field(default=None, gt=0)
    burn_in: Optional[float] = Field(default=None, ge=0)
    method: Literal["sde", "decomposition"] = "decomposition"
    target: Literal["equilibrium", "cycle"] = "equilibrium"
    q: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    bins: int = Field(default=12, ge=2)
    tol: Optional[float] = Field(default=None, gt=0)

    out: str = Field(default_factory=lambda: settings.output_dir)
    threads: int = Field(default_factory=lambda: settings.threads, ge=1)

    @field_validator(*_LIST_KEYS, mode="before")
    @classmethod
    def split_comma_lists(cls, v: Any) -> Any:
        if isinstance(v, str):
            return [part.strip() for part in v.split(",") if part.strip()]
        return v

    @field_validator("dts", "sigma2_list")
    @classmethod
    def nonempty_nonnegative(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and (not v or any(x < 0 for x in v)):
            raise ValueError("must be a nonempty list of nonnegative numbers")
        return v

    @model_validator(mode="after")
    def single_noise_key(self) -> "ExperimentConfig":
        if self.sigma is not None and self.sigma2 is not None:
            raise ValueError("give sigma or sigma2, not both")
        return self

    @property
    def params(self) -> ModelParams:
        if self.sigma2 is not None:
            sigma = math.sqrt(self.sigma2)
        else:
            sigma = self.sigma or 0.0
        return ModelParams(alpha=self.alpha, sigma=sigma, d=(self.d1, self.d2, self.d3))

    def canonical_json(self) -> str:
        """Sorted compact JSON of every key that affects the artifacts."""
        payload = self.model_dump(mode="json", exclude=_UNHASHED_KEYS)
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def read_config_file(path: str) -> Dict[str, Any]:
    """Raw key-value pairs from a JSON object or a flat key=value file."""
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file not found: {path}", ["config"])
    if path.lower().endswith(".json"):
        try:
            with open(path, "r") as handle:
                raw = json.load(handle)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {e}", ["config"]) from e
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object", ["config"])
    else:
        raw = dotenv_values(path)
    return {str(k).strip().lower(): v for k, v in raw.items()}


def validate_config(raw: Dict[str, Any]) -> ExperimentConfig:
    """Validate raw values, turning pydantic errors into a ConfigurationError listing the keys."""
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        keys, details = [], []
        for err in e.errors():
            key = ".".join(str(p) for p in err["loc"]) or "config"
            if key not in keys:
                keys.append(key)
            details.append(f"{key}: {err['msg']}")
        raise ConfigurationError("invalid experiment config: " + "; ".join(details), keys) from e


def load_config(path: Optional[str] = None, kind: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """Build an ExperimentConfig from an optional file, a subcommand and flag overrides."""
    raw = read_config_file(path) if path else {}
    if kind is not None:
        if raw.get("kind") not in (None, kind):
            raise ConfigurationError(f"config file is for {raw['kind']!r}, not {kind!r}", ["kind"])
        raw["kind"] = kind
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return validate_config(raw)


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def _plain(value: Any) -> Any:
    """Convert numpy scalars and arrays for JSON output; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactWriter:
    """Writes experiment artifacts into one directory and remembers them."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.files: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        if name not in self.files:
            self.files.append(name)
        return os.path.join(self.out_dir, name)

    def csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
        target = self.path(name)
        with open(target, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        logger.info(f"Wrote {target} ({len(rows)} rows)")
        return target

    def trajectory(self, name: str, record) -> str:
        target = self.path(name)
        record.write_csv(target)
        logger.info(f"Wrote {target} ({record.times.size} samples)")
        return target

    def checksums(self) -> List[Dict[str, str]]:
        return [{"name": name, "sha256": file_sha256(os.path.join(self.out_dir, name))} for name in self.files]


def package_versions() -> Dict[str, str]:
    versions = {"kolmogorov-lab": __version__, "python": platform.python_version()}
    for name in _VERSIONED:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _cone_level(config: ExperimentConfig, params: ModelParams) -> float:
    return config.h if config.h is not None else h_star(params) + 1.0


def _sigma2_list(config: ExperimentConfig, default: Sequence[float]) -> List[float]:
    if config.sigma2_list is not None:
        return list(config.sigma2_list)
    return [config.alpha * s for s in default]


def _zero_crossing(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """First sign change of ys along xs, by linear interpolation."""
    for x0, x1, y0, y1 in zip(xs[:-1], xs[1:], ys[:-1], ys[1:]):
        if y0 == 0:
            return float(x0)
        if y0 * y1 < 0:
            return float(x0 + (x1 - x0) * y0 / (y0 - y1))
    if ys and ys[-1] == 0:
        return float(xs[-1])
    return None


def run_classify(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    params = config.params
    regime = classify_regime(params)
    eq = equilibria(params)

    rows = []
    for e in eq.isolated:
        numeric = numerical_eigenvalues(params, e.point)
        gap = max(float(np.min(np.abs(numeric - ev))) for ev in e.eigenvalues)
        row = [e.label, *e.point]
        for re, im in zip(e.eigen_real, e.eigen_imag):
            row += [re, im]
        rows.append(row + [gap])
    out.csv("equilibria.csv", ["label", "x1", "x2", "x3", "re1", "im1", "re2", "im2", "re3", "im3", "numeric_gap"],
            rows)
    out.csv("curves.csv", ["name", "split_angle", "stable_arcs"],
            [[c.name, c.split_angle if c.split_angle is not None else float("nan"),
              ";".join(f"{lo:.17g}:{hi:.17g}" for lo, hi in c.stable_arcs)] for c in eq.curves])

    census = ergodic_census(params)
    out.csv("census.csv", ["name", "support", "x1", "x2", "x3", "h_min", "top_lyapunov_sign", "hyperbolic"],
            [[m.name, m.support, *(m.point or (float("nan"),) * 3),
              m.h_range[0] if m.h_range else float("nan"), m.top_lyapunov_sign, m.hyperbolic] for m in census])

    summary = {
        "case": regime.canonical_case,
        "sign_pattern": regime.symbols,
        "permutation": list(regime.permutation),
        "time_reversed": regime.time_reversed,
        "equilibria": eq.census(),
        "isolated": eq.labels,
        "curve_split_angles": {c.name: c.split_angle for c in eq.curves},
        "max_eigenvalue_gap": max(r[-1] for r in rows),
        "ergodic_measures": [m.name for m in census],
    }
    if regime.canonical_case == "I":
        summary["h_star"] = h_star(params)
    return summary


def run_flow(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    params = config.params.model_copy(update={"sigma": 0.0})
    record = integrate_flow(params, config.x0, config.t_end,
                            StepControl(h=config.dt, record_every=config.record_every))
    out.trajectory("flow.csv", record)
    limit = omega_limit(params, config.x0)
    return {
        "integral_drift": record.integral_drift(),
        "sphere_drift_max": record.sphere_drift(),
        "step": record.info.get("step"),
        "omega_limit": limit.model_dump(mode="json"),
    }


def run_sde(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    params = config.params
    path = sample_path(config.seed, 0.0, config.t_end, config.dt)
    record = integrate_sde(params, path, config.x0, config.t_end, SchemeSpec(kind=config.scheme, dt=config.dt),
                           config.record_every)
    out.trajectory("sde.csv", record)
    decomposed = decompose_trajectory(params, path, config.x0, config.g0, config.t_end, config.record_every)
    out.trajectory("decomposition.csv", decomposed)
    return {
        "final_state": record.final_state,
        "decomposition_gap": float(np.linalg.norm(record.final_state - decomposed.final_state)),
        "negative_samples": int(np.count_nonzero(record.negative)),
        "boundary_samples": int(np.count_nonzero(record.boundary_proximity)),
    }


def run_decompose_check(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    params = config.params
    seeds = ensemble_seeds(config.seed, config.n_seeds)
    with mapper(config.threads) as m:
        study = gap_study(params, seeds, config.x0, config.t_end, config.dts, kind=config.scheme, mapper=m)
    out.csv("gaps.csv", ["dt", "mean_gap", "stderr"], list(zip(study.dts, study.mean_gap, study.stderr)))
    order = np.argsort(-study.dts)
    return {
        "order": study.order,
        "decreasing": bool(np.all(np.diff(study.mean_gap[order]) < 0)),
        "finest_gap": float(study.mean_gap[order][-1]),
    }


def run_logistic_density(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    params = config.params
    s, p = density_table(params)
    out.csv("density.csv", ["s", "density", "cdf"], list(zip(s, p, stationary_cdf(params, s))))

    seeds = ensemble_seeds(config.seed, config.n_samples)
    g = g_terminal_samples(params, seeds, config.g0, config.t_end, config.dt)
    ks = ks_distance(EmpiricalMeasure(g), lambda x: stationary_cdf(params, x))
    counts, edges = np.histogram(g, bins=config.bins, range=(0.0, float(np.quantile(g, 0.995))), density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    out.csv("histogram.csv", ["left", "right", "empirical", "analytic"],
            list(zip(edges[:-1], edges[1:], counts, stationary_density(params, centers))))

    u = ug_samples(params, seeds, config.dt)
    t_average = config.t_average or config.t_end
    path = sample_path(config.seed, 0.0, t_average, config.dt)
    return {
        "shape": density_shape(params),
        "mode": density_mode(params),
        "ks_terminal": ks,
        "mean_u2": float(np.mean(u * u)),
        "mean_u2_expected": 1.0 - params.sigma2 / (2.0 * params.alpha),
        "time_average_g2": time_average_g2(params, path, config.g0, t_average),
    }


def _lyapunov_row(config: ExperimentConfig, params: ModelParams, m: Callable) -> List[Any]:
    base = list(config.x0) if config.measure == "trajectory" else config.measure
    estimate = lyapunov_numeric(params, config.seed, base, config.axis, config.t_end, config.renorm_step,
                                config.dt, config.n_seeds, mapper=m)
    analytic = float("nan")
    if config.measure in MEASURE_IDS:
        analytic = float(lyapunov_analytic(params, config.measure)[config.axis])
    return [params.sigma2, config.measure, config.axis, analytic, estimate.value, estimate.standard_error]


_LYAPUNOV_HEADER = ["sigma2", "measure", "axis", "analytic", "numeric", "stderr"]


def run_lyapunov(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    with mapper(config.threads) as m:
        row = _lyapunov_row(config, config.params, m)
    out.csv("lyapunov.csv", _LYAPUNOV_HEADER, [row])
    return {"analytic": row[3], "numeric": row[4], "stderr": row[5]}


def run_lyapunov_sweep(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    rows = []
    with mapper(config.threads) as m:
        for s2 in _sigma2_list(config, (0.5, 1.0, 2.0, 3.0)):
            params = config.params.with_sigma2(s2)
            if config.measure in AXIS_LABELS and s2 >= 2.0 * params.alpha:
                logger.warning(f"Skipping sigma^2={s2:g}: mu_{config.measure} does not exist for sigma^2 >= 2 alpha")
                continue
            rows.append(_lyapunov_row(config, params, m))
    out.csv("lyapunov_sweep.csv", _LYAPUNOV_HEADER, rows)
    xs = [r[0] for r in rows]
    return {
        "numeric_zero_crossing": _zero_crossing(xs, [r[4] for r in rows]),
        "analytic_zero_crossing": _zero_crossing(xs, [r[3] for r in rows]),
        "max_abs_error": max((abs(r[4] - r[3]) for r in rows if not math.isnan(r[3])), default=None),
    }


def run_pullback(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    params = config.params
    back = config.t_end
    if params.sigma2 < 2.0 * params.alpha:
        back = max(back, 2.0 * truncation_depth(params))
    path = sample_path(config.seed, -back, 0.0, config.dt)
    sample = pullback_limit(params, path, config.x0, config.t_end, config.tol)

    ts = np.rint(np.linspace(0.0, config.t_end, 51)[1:] / path.dt) * path.dt
    pts = pullback_points(params, path, config.x0, ts)
    out.csv("pullback.csv", ["t", "x1", "x2", "x3", "norm"],
            [[t, *p, np.linalg.norm(p)] for t, p in zip(ts, pts)])
    out.csv("limit_points.csv", ["x1", "x2", "x3"], sample.points)

    summary = sample.model_dump(mode="json", exclude={"points", "deterministic_limit"})
    if sample.analytic_point is not None:
        summary["analytic_gap"] = float(np.linalg.norm(np.asarray(sample.points[-1]) - sample.analytic_point))
    return summary


def run_crps(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    params = config.params
    h = _cone_level(config, params)
    orbit = periodic_orbit(params, h)
    mean_period = orbit.period * params.alpha / params.c
    back = 2.0 * truncation_depth(params) + 12.0 * mean_period
    path = sample_path(config.seed, -back, math.ceil(orbit.period / config.dt) * config.dt, config.dt)
    sample = crps(params, path, h, tol=1e-3 if config.tol is None else config.tol)
    out.csv("crps.csv", ["t", "T_h", "identity_residual"],
            list(zip(sample.check_times, sample.periods, sample.identity_residuals)))
    summary = {
        "h": h,
        "period_N": sample.period_N,
        "u_g": sample.u_g,
        "mean_T": float(np.mean(sample.periods)),
        "max_identity_residual": float(np.max(sample.identity_residuals)),
        "max_residual": sample.max_residual,
    }
    if params.sigma == 0.0:
        summary["max_period_gap"] = float(np.max(np.abs(sample.periods - sample.period_N)))
    return summary


def run_cone_occupation(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    params = config.params
    h = _cone_level(config, params)
    orbit = periodic_orbit(params, h)
    starts = [orbit.anchor, 2.0 * orbit.point_at(0.5 * orbit.period)[0]]
    seeds = ensemble_seeds(config.seed, len(starts))
    measures = [occupation_measure_on_cone(params, s, h, config.t_end, config.burn_in, x0, config.method, config.dt)
                for s, x0 in zip(seeds, starts)]
    ks = ks_between(measures[0], measures[1], coordinate="radius")
    probs = np.linspace(0.01, 0.99, 99)
    out.csv("radial_quantiles.csv", ["p", "radius_start1", "radius_start2"],
            list(zip(probs, measures[0].quantile(probs, "radius"), measures[1].quantile(probs, "radius"))))

    scheme = "rk4" if params.sigma == 0.0 else config.scheme
    steps = [config.dt, config.dt / 4.0]
    deviations = [cone_invariance_check(params, config.seed, h, config.t_check, dt, scheme) for dt in steps]
    out.csv("cone_invariance.csv", ["dt", "deviation"], list(zip(steps, deviations)))
    return {"h": h, "ks_radius": ks, "cone_deviation": deviations, "samples": [m.size for m in measures]}


def run_vanishing_noise(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    h = None
    if config.target == "cycle":
        h = _cone_level(config, config.params)
    table = vanishing_noise_sweep(config.alpha, (config.d1, config.d2, config.d3),
                                  _sigma2_list(config, (1.0, 0.5, 0.1, 0.01, 1e-4)), config.target,
                                  q=config.q, h=h, seed=config.seed, n_samples=config.n_samples,
                                  t_end=config.t_end)
    out.csv("vanishing_noise.csv", ["sigma2", "statistic", "stderr", "n"],
            [[r.sigma2, r.statistic, r.standard_error, r.n] for r in table.rows])
    return {"target": table.target, "decreasing": table.is_decreasing(), "last": table.rows[-1].statistic}


def run_p_bifurcation(config: ExperimentConfig, out: ArtifactWriter) -> Dict[str, Any]:
    sigma2_list = _sigma2_list(config, (0.5, 1.0, 1.5))
    rows = p_bifurcation_probe(config.alpha, sigma2_list, seed=config.seed, n_samples=config.n_samples,
                               bins=config.bins, dt=config.dt)
    out.csv("shapes.csv", ["sigma2", "analytic_shape", "analytic_mode", "empirical_shape", "empirical_mode",
                           "bin_width", "agree"],
            [[r.sigma2, r.analytic_shape, r.analytic_mode if r.analytic_mode is not None else float("nan"),
              r.empirical_shape, r.empirical_mode, r.bin_width, r.agree] for r in rows])
    tables = [density_table(ModelParams(alpha=config.alpha, sigma=math.sqrt(s2))) for s2 in sigma2_list]
    out.csv("densities.csv", ["s"] + [f"p_sigma2={s2:g}" for s2 in sigma2_list],
            [[s, *(t[1][k] for t in tables)] for k, s in enumerate(tables[0][0])])
    return {"agree": all(r.agree for r in rows), "shapes": {f"{r.sigma2:g}": r.empirical_shape for r in rows}}


HANDLERS: Dict[str, Callable[[ExperimentConfig, ArtifactWriter], Dict[str, Any]]] = {
    "classify": run_classify,
    "flow": run_flow,
    "sde": run_sde,
    "decompose-check": run_decompose_check,
    "logistic-density": run_logistic_density,
    "lyapunov": run_lyapunov,
    "lyapunov-sweep": run_lyapunov_sweep,
    "pullback": run_pullback,
    "crps": run_crps,
    "cone-occupation": run_cone_occupation,
    "vanishing-noise": run_vanishing_noise,
    "p-bifurcation": run_p_bifurcation,
}


def run(config: ExperimentConfig) -> Dict[str, Any]:
    """Run one experiment, write its artifacts and return the manifest.

    Args:
        config: Validated experiment configuration.

    Returns:
        The manifest, also written to manifest.json in the output directory.
    """
    logger.info(f"Running {config.kind} (config {config.config_hash()[:12]}) into {config.out}")
    out = ArtifactWriter(config.out)
    try:
        summary = HANDLERS[config.kind](config, out)
    except Exception as e:
        logger.error(f"Experiment {config.kind} failed: {e}")
        raise

    manifest = {
        "kind": config.kind,
        "theorem": THEOREMS[config.kind],
        "config": _plain(json.loads(config.canonical_json())),
        "config_sha256": config.config_hash(),
        "versions": package_versions(),
        "files": out.checksums(),
        "summary": _plain(summary),
    }
    target = os.path.join(config.out, "manifest.json")
    with open(target, "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True, allow_nan=False)
        handle.write("\n")
    logger.info(f"Experiment {config.kind} finished; manifest at {target}")
    return manifest


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Experiment config: .json or flat key=value file")
    common.add_argument("--seed", type=int, default=None, help="Experiment seed (unsigned 64-bit)")
    common.add_argument("--out", default=None, help="Output directory for CSV artifacts and manifest.json")
    common.add_argument("--threads", type=int, default=None, help="Worker processes for seed ensembles")
    common.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level (defaults to KOLMOGOROV_LOG_LEVEL)")

    parser = argparse.ArgumentParser(description="Stochastic Kolmogorov system experiments")
    subparsers = parser.add_subparsers(dest="kind", required=True, metavar="experiment")
    for kind, theorem in THEOREMS.items():
        subparsers.add_parser(kind, parents=[common], help=theorem)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level or settings.log_level),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        config = load_config(args.config, kind=args.kind, seed=args.seed, out=args.out, threads=args.threads)
        manifest = run(config)
    except Exception as e:
        logger.error(f"{args.kind}: {e}")
        return exit_code_for(e)

    print(f"✅ {manifest['kind']}: {manifest['theorem']}")
    for name, value in manifest["summary"].items():
        print(f"   {name}: {value}")
    print(f"📁 Artifacts in {os.path.abspath(config.out)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
