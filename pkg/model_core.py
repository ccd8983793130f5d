"""
Model core for the stochastic cubic Kolmogorov system.

Parameters, states, the cubic drift and its Jacobian, and the sign-pattern
regime classifier. Everything here is a pure function of its inputs.
"""

import itertools
import logging
import math
from typing import Any, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config import settings
from errors import DomainError

logger = logging.getLogger(__name__)

CANONICAL_PATTERNS = {
    "I": (1, 1, 1),
    "II": (-1, 1, -1),
    "IIIa": (0, 1, 1),
    "IIIb": (1, 0, -1),
    "IV": (0, 0, -1),
    "V": (0, 0, 0),
}

_SIGN_SYMBOLS = {-1: "-", 0: "0", 1: "+"}


class ModelParams(BaseModel):
    """Parameter tuple (alpha, sigma, d1, d2, d3).

    Args:
        alpha: Intrinsic growth rate, strictly positive.
        sigma: Noise strength; zero selects the deterministic system.
        d: Interaction coefficients (d1, d2, d3).
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    alpha: float = Field(gt=0)
    sigma: float = Field(default=0.0, ge=0)
    d: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def m(self) -> np.ndarray:
        """m_i = alpha + d_i, recomputed on every access."""
        return self.alpha + np.asarray(self.d, dtype=float)

    @property
    def m_sum(self) -> float:
        return float(np.sum(self.m))

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma

    @property
    def c(self) -> float:
        """Exponential rate alpha - sigma^2/2 of the linearization at O."""
        return self.alpha - 0.5 * self.sigma2

    @property
    def is_deterministic(self) -> bool:
        return self.sigma == 0.0

    def with_sigma2(self, sigma2: float) -> "ModelParams":
        if sigma2 < 0:
            raise DomainError(f"sigma^2 must be nonnegative, got {sigma2}")
        return self.model_copy(update={"sigma": math.sqrt(sigma2)})

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "ModelParams":
        """Build parameters from a flat key-value record.

        Recognized keys are alpha, sigma (or sigma2), d1, d2, d3. Values may be
        decimal text.
        """
        keys = {k.strip().lower(): v for k, v in record.items()}
        if "alpha" not in keys:
            raise DomainError("parameter record is missing 'alpha'")
        try:
            alpha = float(keys["alpha"])
            if "sigma" in keys:
                sigma = float(keys["sigma"])
            elif "sigma2" in keys:
                sigma = math.sqrt(float(keys["sigma2"]))
            else:
                sigma = 0.0
            d = tuple(float(keys.get(f"d{i}", 0.0)) for i in (1, 2, 3))
        except (TypeError, ValueError) as e:
            raise DomainError(f"unreadable parameter record: {e}") from e
        return cls(alpha=alpha, sigma=sigma, d=d)

    def to_record(self) -> dict:
        return {
            "alpha": self.alpha,
            "sigma": self.sigma,
            "d1": self.d[0],
            "d2": self.d[1],
            "d3": self.d[2],
        }


class DriftRegime(BaseModel):
    """Sign pattern of (m1, m2, m3) and its canonical case.

    The witness satisfies canonical[k] = flip * pattern[permutation[k]],
    where flip is -1 when time_reversed is set.
    """

    model_config = ConfigDict(frozen=True)

    sign_pattern: Tuple[int, int, int]
    canonical_case: str
    permutation: Tuple[int, int, int]
    time_reversed: bool

    @property
    def symbols(self) -> str:
        return "(" + ",".join(_SIGN_SYMBOLS[s] for s in self.sign_pattern) + ")"

    def canonical_pattern(self) -> Tuple[int, int, int]:
        flip = -1 if self.time_reversed else 1
        return tuple(flip * self.sign_pattern[p] for p in self.permutation)


def as_state(x: Any, nonnegative: bool = False) -> np.ndarray:
    """Validate and return a single state as a float array of shape (3,)."""
    arr = np.asarray(x, dtype=float)
    if arr.shape != (3,):
        raise DomainError(f"state must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"state must be finite, got {arr}")
    if nonnegative and np.any(arr < 0):
        raise DomainError(f"state must lie in the closed positive octant, got {arr}")
    return arr


def _as_states(x: Any) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1:] != (3,):
        raise DomainError(f"states must have trailing dimension 3, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("states must be finite")
    return arr


def drift(params: ModelParams, x: Any) -> np.ndarray:
    """Right-hand side b(x) of the deterministic system, vectorized over (..., 3)."""
    x = _as_states(x)
    a = params.alpha
    d1, d2, d3 = params.d
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    s1, s2, s3 = x1 * x1, x2 * x2, x3 * x3
    b1 = x1 * (a - a * s1 - (2 * a + d1) * s2 + d2 * s3)
    b2 = x2 * (a + d1 * s1 - a * s2 - (2 * a + d3) * s3)
    b3 = x3 * (a - (2 * a + d2) * s1 + d3 * s2 - a * s3)
    return np.stack([b1, b2, b3], axis=-1)


def jacobian(params: ModelParams, x: Any) -> np.ndarray:
    """Jacobian F(x) of the drift, shape (..., 3, 3)."""
    x = _as_states(x)
    a = params.alpha
    d1, d2, d3 = params.d
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    s1, s2, s3 = x1 * x1, x2 * x2, x3 * x3
    f = np.empty(x.shape[:-1] + (3, 3))
    f[..., 0, 0] = a - 3 * a * s1 - (2 * a + d1) * s2 + d2 * s3
    f[..., 0, 1] = -2 * (2 * a + d1) * x1 * x2
    f[..., 0, 2] = 2 * d2 * x1 * x3
    f[..., 1, 0] = 2 * d1 * x1 * x2
    f[..., 1, 1] = a + d1 * s1 - 3 * a * s2 - (2 * a + d3) * s3
    f[..., 1, 2] = -2 * (2 * a + d3) * x2 * x3
    f[..., 2, 0] = -2 * (2 * a + d2) * x1 * x3
    f[..., 2, 1] = 2 * d3 * x2 * x3
    f[..., 2, 2] = a - (2 * a + d2) * s1 + d3 * s2 - 3 * a * s3
    return f


def sphere_residual(x: Any) -> Any:
    """L(x) = |x|^2 - 1."""
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1) - 1.0


def sphere_derivative(params: ModelParams, x: Any) -> Any:
    """<grad L(x), b(x)>, which equals -2 alpha |x|^2 L(x)."""
    x = _as_states(x)
    return 2.0 * np.sum(x * drift(params, x), axis=-1)


def norm_generator(params: ModelParams, x: Any) -> Any:
    """Ito generator of V(x) = |x|^2 for the stochastic system."""
    x = _as_states(x)
    r2 = np.sum(x * x, axis=-1)
    return r2 * (-2.0 * params.alpha * r2 + 2.0 * params.alpha + params.sigma2)


def reduced_sphere_drift(params: ModelParams, y: Any) -> np.ndarray:
    """Flow on the positive unit sphere written in (x1, x2)."""
    y = np.asarray(y, dtype=float)
    m1, m2, m3 = params.m
    y1, y2 = y[..., 0], y[..., 1]
    s1, s2 = y1 * y1, y2 * y2
    f1 = y1 * (m2 - m2 * s1 - (m1 + m2) * s2)
    f2 = y2 * (-m3 + (m1 + m3) * s1 + m3 * s2)
    return np.stack([f1, f2], axis=-1)


def sign_pattern(params: ModelParams, zero_tol: Optional[float] = None) -> Tuple[int, int, int]:
    tol = settings.zero_tol if zero_tol is None else zero_tol
    return tuple(0 if abs(v) <= tol else (1 if v > 0 else -1) for v in params.m)


def classify_regime(params: ModelParams, zero_tol: Optional[float] = None) -> DriftRegime:
    """Reduce the sign pattern of (m1, m2, m3) to one of the six canonical cases.

    Identity without time reversal is tried first, so an already canonical
    pattern reports the trivial witness.
    """
    pattern = sign_pattern(params, zero_tol)
    for flip in (1, -1):
        for perm in itertools.permutations(range(3)):
            candidate = tuple(flip * pattern[p] for p in perm)
            for case, canonical in CANONICAL_PATTERNS.items():
                if candidate == canonical:
                    regime = DriftRegime(
                        sign_pattern=pattern,
                        canonical_case=case,
                        permutation=perm,
                        time_reversed=flip < 0,
                    )
                    logger.debug(f"Pattern {regime.symbols} -> case {case} via {perm}, flip={flip}")
                    return regime
    # every sign pattern reduces to a canonical one
    raise AssertionError(f"unreachable sign pattern {pattern}")


def is_case_one(params: ModelParams, zero_tol: Optional[float] = None) -> bool:
    return classify_regime(params, zero_tol).canonical_case == "I"
