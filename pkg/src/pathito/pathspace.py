"""Discretized cadlag paths and stopped paths.

A :class:`GridPath` samples a ``d``-dimensional cadlag path on a uniform time
grid. ``values[k]`` is the post-jump value at ``t_k``; ``jump_flags[k]`` marks
the indices at which the path jumps. Unless an explicit array of left limits is
attached, the left limit at a flagged index is ``values[k-1]`` and equals
``values[k]`` everywhere else.

Every path container may carry leading batch dimensions: ``values`` has shape
``(*batch, n_steps + 1, d)`` and ``jump_flags`` shape ``(*batch, n_steps + 1)``.
All operators below act elementwise over the batch, which is what lets the
calculus and Monte Carlo layers vectorize over paths and samples.

A :class:`StoppedPath` is the canonical representative of ``(t, omega^t)``: the
base path up to the stop index, frozen afterwards. Vertical bumps are stored
as an exact offset so that bumping is a group action in floating point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "TimeGrid",
    "GridPath",
    "StoppedPath",
    "stop",
    "stop_pre",
    "vertical_bump",
    "horizontal_extend",
    "concat",
    "d_infty",
    "coarsen",
    "write_csv",
    "read_csv",
]


class GridMismatchError(ValueError):
    """Raised when two path objects live on different grids or dimensions."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * T / n_steps`` on ``[0, T]``."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def time(self, k: int) -> float:
        return k * self.dt

    def index_of(self, t: float, atol: float = 1e-9) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        x = t / self.dt
        k = int(round(x))
        if abs(x - k) > atol * max(1.0, abs(x)) or not 0 <= k <= self.n_steps:
            raise ValueError(f"time {t} is not on the grid (T={self.T}, n={self.n_steps})")
        return k


class GridPath:
    """A (batch of) cadlag path(s) sampled on a :class:`TimeGrid`.

    Args:
        grid: The time grid.
        values: Array of shape ``(*batch, n_steps + 1, d)``. A 1-D array is
            read as a single scalar path.
        jump_flags: Boolean array ``(*batch, n_steps + 1)``; defaults to no jumps.
        left: Optional explicit left limits, same shape as ``values``. Only
            needed when the left limits are not recoverable from the grid rule
            (for instance after a vertical bump of a pre-jump stopped path).
    """

    __slots__ = ("grid", "values", "jump_flags", "_left", "__dict__")

    def __init__(self, grid: TimeGrid, values, jump_flags=None, left=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[-2] != grid.n_steps + 1:
            raise GridMismatchError(
                f"values have {values.shape[-2]} rows, grid needs {grid.n_steps + 1}"
            )
        if jump_flags is None:
            jump_flags = np.zeros(values.shape[:-1], dtype=bool)
        else:
            jump_flags = np.broadcast_to(np.asarray(jump_flags, dtype=bool), values.shape[:-1])
        if jump_flags[..., 0].any():
            raise ValueError("a jump cannot be flagged at index 0")
        if left is not None:
            left = np.asarray(left, dtype=float)
            if left.shape != values.shape:
                raise ValueError("left limits must have the same shape as values")
        self.grid = grid
        self.values = values
        self.jump_flags = jump_flags
        self._left = left

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.values.shape[:-2]

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("unbatched path has no len()")
        return self.batch_shape[0]

    def __getitem__(self, idx) -> GridPath:
        if not self.batch_shape:
            raise TypeError("cannot index an unbatched path")
        left = None if self._left is None else self._left[idx]
        return GridPath(self.grid, self.values[idx], self.jump_flags[idx], left)

    @cached_property
    def left_limits(self) -> np.ndarray:
        if self._left is not None:
            return self._left
        prev = np.concatenate([self.values[..., :1, :], self.values[..., :-1, :]], axis=-2)
        return np.where(self.jump_flags[..., None], prev, self.values)

    def left_limit(self, k: int) -> np.ndarray:
        _check_index(self.grid, k)
        if self._left is not None:
            return self._left[..., k, :]
        if k == 0:
            return self.values[..., 0, :]
        return np.where(self.jump_flags[..., k, None], self.values[..., k - 1, :], self.values[..., k, :])

    def jumps(self) -> np.ndarray:
        """Jump sizes ``Delta X_{t_k}``; zero wherever no jump is flagged."""
        return self.values - self.left_limits

    def with_explicit_left(self) -> GridPath:
        return GridPath(self.grid, self.values, self.jump_flags, self.left_limits)

    def equals(self, other: GridPath) -> bool:
        """Bitwise equality of grid, values, jump flags and left limits."""
        return (
            self.grid == other.grid
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.jump_flags, other.jump_flags)
            and np.array_equal(self.left_limits, other.left_limits)
        )

    def __repr__(self):
        return (
            f"GridPath(T={self.grid.T}, n_steps={self.n_steps}, d={self.dim}, "
            f"batch={self.batch_shape}, jumps={int(self.jump_flags.sum())})"
        )


def _check_index(grid: TimeGrid, k: int, low: int = 0):
    if int(k) != k or not low <= k <= grid.n_steps:
        raise IndexError(f"grid index {k} outside [{low}, {grid.n_steps}]")


class StoppedPath:
    """Canonical representative of a stopped path ``(t_k, omega^{t_k})``.

    The representative equals ``base`` strictly before ``stop_index`` and is
    frozen from ``stop_index`` on, at ``values[k]`` (or at the left limit
    ``omega_{t_k-}`` when ``pre`` is set), shifted by the accumulated vertical
    ``offset``. The left limit at the stop index is never moved by a bump.
    """

    __slots__ = ("base", "stop_index", "pre", "offset", "__dict__")

    def __init__(self, base: GridPath, stop_index: int, pre: bool = False, offset=None):
        _check_index(base.grid, stop_index)
        self.base = base
        self.stop_index = int(stop_index)
        self.pre = bool(pre)
        if offset is None:
            offset = np.zeros(base.dim)
        self.offset = np.asarray(offset, dtype=float)
        if self.offset.shape[-1:] != (base.dim,):
            raise GridMismatchError(f"offset dimension {self.offset.shape} != path dimension {base.dim}")

    @property
    def grid(self) -> TimeGrid:
        return self.base.grid

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def time(self) -> float:
        return self.grid.time(self.stop_index)

    @property
    def batch_shape(self) -> tuple:
        return np.broadcast_shapes(self.base.batch_shape, self.offset.shape[:-1])

    @cached_property
    def left_at_stop(self) -> np.ndarray:
        """Left limit ``omega_{t-}`` at the stop index (unaffected by bumps)."""
        return self.base.left_limit(self.stop_index)

    @cached_property
    def frozen_value(self) -> np.ndarray:
        k = self.stop_index
        raw = self.left_at_stop if self.pre else self.base.values[..., k, :]
        return raw + self.offset

    @cached_property
    def values(self) -> np.ndarray:
        """Materialized canonical values, shape ``(*batch, n_steps + 1, d)``."""
        k = self.stop_index
        n1 = self.grid.n_steps + 1
        shape = self.batch_shape + (n1, self.dim)
        out = np.empty(shape)
        out[..., :k, :] = self.base.values[..., :k, :]
        out[..., k:, :] = self.frozen_value[..., None, :]
        return out

    @cached_property
    def left_limits(self) -> np.ndarray:
        k = self.stop_index
        shape = self.batch_shape + (self.grid.n_steps + 1, self.dim)
        out = np.empty(shape)
        out[..., :k, :] = self.base.left_limits[..., :k, :]
        out[..., k, :] = self.left_at_stop
        out[..., k + 1 :, :] = self.frozen_value[..., None, :]
        return out

    @cached_property
    def jump_flags(self) -> np.ndarray:
        k = self.stop_index
        shape = self.batch_shape + (self.grid.n_steps + 1,)
        out = np.zeros(shape, dtype=bool)
        out[..., :k] = self.base.jump_flags[..., :k]
        moved = np.any(self.offset != 0, axis=-1)
        at_k = moved if self.pre else (self.base.jump_flags[..., k] | moved)
        out[..., k] = at_k
        if k == 0:
            out[..., 0] = False
        return out

    def left_limit(self, i: int) -> np.ndarray:
        return self.left_limits[..., i, :]

    def to_grid_path(self) -> GridPath:
        """The canonical representative as a :class:`GridPath` (explicit left limits)."""
        return GridPath(self.grid, self.values, self.jump_flags, self.left_limits)

    def __getitem__(self, idx) -> StoppedPath:
        base = self.base[idx] if self.base.batch_shape else self.base
        off = self.offset[idx] if self.offset.ndim > 1 else self.offset
        return StoppedPath(base, self.stop_index, self.pre, off)

    def __eq__(self, other):
        if not isinstance(other, StoppedPath):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.stop_index == other.stop_index
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"StoppedPath(t={self.time:g}, k={self.stop_index}, pre={self.pre}, "
            f"batch={self.batch_shape}, d={self.dim})"
        )


def stop(path: GridPath | StoppedPath, k: int) -> StoppedPath:
    """Stop ``path`` at grid index ``k``.

    Stopping an already stopped path at the same or a later index returns it
    unchanged (its representative is already frozen there).
    """
    if isinstance(path, StoppedPath):
        _check_index(path.grid, k)
        if k >= path.stop_index:
            return path
        return StoppedPath(path.to_grid_path(), k)
    return StoppedPath(path, k)


def stop_pre(path: GridPath | StoppedPath, k: int) -> StoppedPath:
    """Stop at the left limit ``omega^{t_k-}``; requires ``k >= 1``."""
    if k == 0:
        raise IndexError("stop_pre needs k >= 1: there is no left limit at t_0")
    grid = path.grid
    _check_index(grid, k, low=1)
    base = path.to_grid_path() if isinstance(path, StoppedPath) else path
    return StoppedPath(base, k, pre=True)


def vertical_bump(sp: StoppedPath, x) -> StoppedPath:
    """Return ``omega^t + x 1_{[t, T]}``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != sp.dim:
        raise GridMismatchError(f"bump of dimension {x.shape[-1]} on a {sp.dim}-dimensional path")
    return StoppedPath(sp.base, sp.stop_index, sp.pre, sp.offset + x)


def horizontal_extend(sp: StoppedPath, m: int) -> StoppedPath:
    """Advance the stop time by ``m`` steps keeping the frozen value."""
    if int(m) != m or m < 0:
        raise ValueError(f"extension must be a non-negative integer, got {m}")
    if sp.stop_index + m > sp.grid.n_steps:
        raise IndexError(
            f"cannot extend from index {sp.stop_index} by {m} past horizon {sp.grid.n_steps}"
        )
    if m == 0:
        return sp
    return StoppedPath(sp.to_grid_path(), sp.stop_index + m)


def concat_values(sp: StoppedPath, continuation: np.ndarray) -> np.ndarray:
    """Values of ``sp (+)_t continuation`` for a raw continuation array.

    ``continuation`` has shape ``(*batch, n_steps + 1, d)``; only its entries
    from the stop index onwards are used.
    """
    k = sp.stop_index
    shift = sp.frozen_value - continuation[..., k, :]
    shape = np.broadcast_shapes(sp.values.shape, continuation.shape)
    out = np.empty(shape)
    out[..., :k, :] = sp.values[..., :k, :]
    out[..., k:, :] = continuation[..., k:, :] + shift[..., None, :]
    return out


def concat(sp: StoppedPath, continuation: GridPath) -> GridPath:
    """Concatenate a stopped path with a continuation at the stop time.

    Before the stop index the result follows ``sp``; from there on it is
    ``continuation`` shifted to start from ``sp``'s frozen value, so only the
    continuation's increments after the stop time enter. Jump flags after the
    stop index come from the continuation.
    """
    if continuation.grid != sp.grid:
        raise GridMismatchError(f"grid mismatch: {sp.grid} vs {continuation.grid}")
    if continuation.dim != sp.dim:
        raise GridMismatchError(f"dimension mismatch: {sp.dim} vs {continuation.dim}")
    k = sp.stop_index
    values = concat_values(sp, continuation.values)
    shape = values.shape[:-1]
    flags = np.empty(shape, dtype=bool)
    flags[..., :k + 1] = sp.jump_flags[..., :k + 1]
    flags[..., k + 1 :] = continuation.jump_flags[..., k + 1 :]
    left = np.empty(values.shape)
    left[..., :k + 1, :] = sp.left_limits[..., :k + 1, :]
    left[..., k + 1 :, :] = values[..., k + 1 :, :] - continuation.jumps()[..., k + 1 :, :]
    if sp.base._left is None and not sp.pre and not np.any(sp.offset):
        # the grid rule already reproduces these left limits
        left = None
    return GridPath(sp.grid, values, flags, left)


def d_infty(a: StoppedPath, b: StoppedPath):
    """``sup_u |omega_{u ^ t} - w_{u ^ s}| + |t - s|`` on the grid."""
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")
    if a.dim != b.dim:
        raise GridMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    gap = np.hypot.reduce(np.abs(a.values - b.values), axis=-1).max(axis=-1)
    return gap + abs(a.time - b.time)


def coarsen(path: GridPath, factor: int) -> GridPath:
    """Subsample every ``factor``-th grid point.

    A coarse index is flagged as a jump when any fine index in the block
    ending there was flagged, consistent with the grid rule for left limits.
    """
    n = path.grid.n_steps
    if n % factor:
        raise ValueError(f"n_steps={n} is not divisible by {factor}")
    grid = TimeGrid(path.grid.T, n // factor)
    values = path.values[..., ::factor, :]
    fine = path.jump_flags[..., 1:].reshape(path.batch_shape + (n // factor, factor))
    flags = np.concatenate(
        [np.zeros(path.batch_shape + (1,), dtype=bool), fine.any(axis=-1)], axis=-1
    )
    return GridPath(grid, values, flags)


def write_csv(path: GridPath, file) -> None:
    """Write a single path as CSV with header ``t,x_1..x_d,jump``."""
    if path.batch_shape:
        raise ValueError("write_csv takes a single path")
    header = ["t"] + [f"x_{i + 1}" for i in range(path.dim)] + ["jump"]
    with open(file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(path.grid.times):
            row = [_fmt(t)] + [_fmt(v) for v in path.values[k]] + [int(path.jump_flags[k])]
            w.writerow(row)


def read_csv(file) -> GridPath:
    with open(file, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "t" or header[-1] != "jump":
        raise ValueError(f"unexpected header {header}")
    arr = np.array([[float(x) for x in r[:-1]] for r in body])
    times = arr[:, 0]
    grid = TimeGrid(times[-1], len(times) - 1)
    if not np.allclose(times, grid.times, rtol=0, atol=1e-9 * max(1.0, grid.T)):
        raise ValueError("CSV times are not a uniform grid starting at 0")
    flags = np.array([bool(int(r[-1])) for r in body])
    return GridPath(grid, arr[:, 1:], flags)


def _fmt(x: float) -> str:
    # repr round-trips doubles exactly (17 significant digits at most)
    return repr(float(x))
