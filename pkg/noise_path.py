"""
Two-sided discretized Brownian paths: the noise realization driving the
random dynamical system.

Each path keeps the values of the originally sampled path (the base) and an
anchor index marking its own time zero. Shifting only moves the anchor and
refinement only inserts bridge midpoints into the base, so shifted and refined
paths share realized node values bit-exactly.

Randomness comes from counter-based Philox streams keyed by the seed and a
stream identifier: forward increments, backward increments and one bridge
stream per refinement level and direction. Draw k of a stream always belongs to
the same node, so extending a window or refining never changes values that are
already realized.
"""

import logging
import math
from typing import BinaryIO, Iterable, Optional, Tuple

import numpy as np

from errors import CoverageError, DomainError

logger = logging.getLogger(__name__)

FORWARD_STREAM = 0
BACKWARD_STREAM = 1
BRIDGE_STREAM = 2

_GRID_TOL = 1e-9
_HEADER_DTYPE = np.dtype([
    ("t_min", "<f8"), ("t_max", "<f8"), ("dt", "<f8"), ("seed", "<u8"),
    ("level", "<i8"), ("zero", "<i8"), ("anchor", "<i8"), ("count", "<i8"),
])


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed >= 2 ** 64:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream_normals(seed: int, stream: Tuple[int, ...], count: int) -> np.ndarray:
    """First `count` standard normal draws of the stream (seed, stream)."""
    if count <= 0:
        return np.zeros(0)
    seq = np.random.SeedSequence(_check_seed(seed), spawn_key=tuple(stream))
    rng = np.random.Generator(np.random.Philox(seq))
    return rng.standard_normal(count)


def forward_increments(seed: int, count: int, dt: float) -> np.ndarray:
    """Increments W((k+1)dt) - W(k dt), k = 0..count-1, of sample_path(seed, ., ., dt)."""
    return math.sqrt(dt) * stream_normals(seed, (FORWARD_STREAM,), count)


def backward_increments(seed: int, count: int, dt: float) -> np.ndarray:
    """Increments W(-(k+1)dt) - W(-k dt), k = 0..count-1."""
    return math.sqrt(dt) * stream_normals(seed, (BACKWARD_STREAM,), count)


def grid_steps(span: float, dt: float) -> int:
    """Number of grid steps needed to cover a nonnegative span."""
    return int(math.ceil(span / dt - _GRID_TOL))


class BrownianPath:
    """Immutable two-sided Wiener path on a uniform grid.

    Args:
        base: Node values of the originally sampled path (refined if needed).
        dt: Grid step.
        seed: Seed that generated the path.
        zero: Index in `base` of the original time zero.
        anchor: Index in `base` of this path's time zero.
        level: Number of bridge halvings applied.
    """

    def __init__(self, base: np.ndarray, dt: float, seed: int, zero: int,
                 anchor: Optional[int] = None, level: int = 0):
        base = np.asarray(base, dtype=float)
        if base.ndim != 1 or base.size < 1:
            raise DomainError("path values must be a non-empty 1-D array")
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt}")
        base.setflags(write=False)
        self._base = base
        self.dt = float(dt)
        self.seed = _check_seed(seed)
        self.zero = int(zero)
        self.anchor = self.zero if anchor is None else int(anchor)
        self.level = int(level)
        self._values: Optional[np.ndarray] = None

    # --- geometry -------------------------------------------------------
    @property
    def size(self) -> int:
        return self._base.size

    @property
    def n_back(self) -> int:
        return self.anchor

    @property
    def t_min(self) -> float:
        return -self.anchor * self.dt

    @property
    def t_max(self) -> float:
        return (self.size - 1 - self.anchor) * self.dt

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.size) - self.anchor) * self.dt

    @property
    def values(self) -> np.ndarray:
        """W at the nodes, re-anchored so that W(0) = 0 exactly."""
        if self._values is None:
            values = self._base - self._base[self.anchor]
            values.setflags(write=False)
            self._values = values
        return self._values

    def covers(self, t0: float, t1: float) -> bool:
        slack = _GRID_TOL * self.dt
        return t0 >= self.t_min - slack and t1 <= self.t_max + slack

    def require(self, t0: float, t1: float) -> None:
        if not self.covers(t0, t1):
            raise CoverageError(
                f"path window [{self.t_min:.6g}, {self.t_max:.6g}] does not cover [{t0:.6g}, {t1:.6g}]"
            )

    def index_of(self, t: float) -> int:
        """Array index of the grid node at time t."""
        k = t / self.dt
        nearest = round(k)
        if abs(k - nearest) > _GRID_TOL * max(1.0, abs(k)):
            raise DomainError(f"time {t} is not a node of the grid with dt={self.dt}")
        index = int(nearest) + self.anchor
        if index < 0 or index >= self.size:
            raise CoverageError(f"time {t} outside path window [{self.t_min:.6g}, {self.t_max:.6g}]")
        return index

    def value_at(self, t: float) -> float:
        return float(self.values[self.index_of(t)])

    def window(self, t0: float, t1: float) -> Tuple[np.ndarray, np.ndarray]:
        """Node times and W values on [t0, t1]."""
        self.require(t0, t1)
        i0, i1 = self.index_of(t0), self.index_of(t1)
        return self.times[i0:i1 + 1], self.values[i0:i1 + 1]

    def increments(self, t0: float, t1: float) -> np.ndarray:
        """Realized increments over the grid cells of [t0, t1]."""
        self.require(t0, t1)
        i0, i1 = self.index_of(t0), self.index_of(t1)
        return np.diff(self._base[i0:i1 + 1])

    def _derive(self, anchor: int) -> "BrownianPath":
        path = BrownianPath.__new__(BrownianPath)
        path._base = self._base
        path.dt = self.dt
        path.seed = self.seed
        path.zero = self.zero
        path.anchor = anchor
        path.level = self.level
        path._values = None
        return path

    def __repr__(self) -> str:
        return (f"BrownianPath(seed={self.seed}, dt={self.dt:g}, "
                f"window=[{self.t_min:g}, {self.t_max:g}], level={self.level})")


def sample_path(seed: int, t_min: float, t_max: float, dt: float) -> BrownianPath:
    """Sample a two-sided path covering [t_min, t_max] on the grid k*dt."""
    if not (np.isfinite(dt) and dt > 0):
        raise DomainError(f"dt must be positive and finite, got {dt}")
    if not (np.isfinite(t_min) and np.isfinite(t_max)) or t_min > 0 or t_max < 0:
        raise DomainError(f"need t_min <= 0 <= t_max, got [{t_min}, {t_max}]")
    n_back = grid_steps(-t_min, dt)
    n_fwd = grid_steps(t_max, dt)
    forward = np.cumsum(forward_increments(seed, n_fwd, dt))
    backward = np.cumsum(backward_increments(seed, n_back, dt))
    base = np.concatenate([backward[::-1], [0.0], forward])
    logger.debug(f"Sampled path seed={seed} on [{-n_back * dt:g}, {n_fwd * dt:g}] with {base.size} nodes")
    return BrownianPath(base, dt, seed, zero=n_back)


def shift(path: BrownianPath, s: float) -> BrownianPath:
    """Path of the shifted noise theta_s(omega): W(s + .) - W(s)."""
    return path._derive(path.index_of(s))


def _bridge_midpoints(path: BrownianPath) -> np.ndarray:
    base = path._base
    cells = np.arange(base.size - 1) - path.zero
    forward = cells >= 0
    noise = np.empty(cells.size)
    n_fwd = int(np.count_nonzero(forward))
    n_back = cells.size - n_fwd
    fwd_draws = stream_normals(path.seed, (BRIDGE_STREAM, path.level, FORWARD_STREAM), n_fwd)
    back_draws = stream_normals(path.seed, (BRIDGE_STREAM, path.level, BACKWARD_STREAM), n_back)
    noise[forward] = fwd_draws[cells[forward]]
    noise[~forward] = back_draws[-cells[~forward] - 1]
    return 0.5 * (base[:-1] + base[1:]) + 0.5 * math.sqrt(path.dt) * noise


def refine(path: BrownianPath, factor: int) -> BrownianPath:
    """Insert Brownian-bridge midpoints until the step is dt/factor."""
    factor = int(factor)
    if factor < 1 or factor & (factor - 1):
        raise DomainError(f"refinement factor must be a power of 2, got {factor}")
    current = path
    while factor > 1:
        mids = _bridge_midpoints(current)
        base = np.empty(2 * current.size - 1)
        base[0::2] = current._base
        base[1::2] = mids
        current = BrownianPath(base, current.dt / 2, current.seed, zero=2 * current.zero,
                               anchor=2 * current.anchor, level=current.level + 1)
        factor //= 2
    return current


def path_for_step(seed: int, t_min: float, t_max: float, dt: float, base_dt: float) -> BrownianPath:
    """Path at step dt built by refining a base_dt path when the ratio is a power of 2.

    Paths built this way for dt, dt/2, dt/4, ... share the same coarse nodes.
    """
    ratio = base_dt / dt
    nearest = int(round(ratio))
    if nearest >= 1 and abs(ratio - nearest) < 1e-9 * ratio and not nearest & (nearest - 1):
        return refine(sample_path(seed, t_min, t_max, base_dt), nearest)
    return sample_path(seed, t_min, t_max, dt)


def dump(path: BrownianPath, stream: BinaryIO) -> None:
    """Write the little-endian binary form of a path."""
    header = np.zeros(1, dtype=_HEADER_DTYPE)
    header["t_min"] = path.t_min
    header["t_max"] = path.t_max
    header["dt"] = path.dt
    header["seed"] = path.seed
    header["level"] = path.level
    header["zero"] = path.zero
    header["anchor"] = path.anchor
    header["count"] = path.size
    stream.write(header.tobytes())
    stream.write(np.asarray(path._base, dtype="<f8").tobytes())


def load(stream: BinaryIO) -> BrownianPath:
    """Read a path written by dump."""
    raw = stream.read(_HEADER_DTYPE.itemsize)
    if len(raw) != _HEADER_DTYPE.itemsize:
        raise DomainError("truncated path header")
    header = np.frombuffer(raw, dtype=_HEADER_DTYPE)[0]
    count = int(header["count"])
    body = stream.read(8 * count)
    if len(body) != 8 * count:
        raise DomainError("truncated path body")
    base = np.frombuffer(body, dtype="<f8").astype(float)
    return BrownianPath(base, float(header["dt"]), int(header["seed"]), zero=int(header["zero"]),
                        anchor=int(header["anchor"]), level=int(header["level"]))


def increment_matrix(seeds: Iterable[int], count: int, dt: float, backward: bool = False) -> np.ndarray:
    """Stacked forward (or backward) increments for a batch of seeds, shape (n_seeds, count)."""
    draw = backward_increments if backward else forward_increments
    rows = [draw(seed, count, dt) for seed in seeds]
    if not rows:
        return np.zeros((0, count))
    return np.vstack(rows)
