"""Uniform time grids, discrete paths and the path functionals used downstream."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int
    delay: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise InvalidArgumentError("horizon must be positive")
        if self.steps < 1:
            raise InvalidArgumentError("step count must be at least 1")
        if not 0 < self.delay <= self.horizon * (1 + _GRID_TOL):
            raise InvalidArgumentError("delay must lie in (0, T]")
        ratio = self.delay / self.dt
        if abs(ratio - round(ratio)) > _GRID_TOL * max(1.0, ratio):
            raise InvalidArgumentError(
                f"delay {self.delay} is not an integer multiple of dt = T/N = {self.dt}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def delay_steps(self) -> int:
        return int(round(self.delay / self.dt))

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    def index(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a node."""
        x = t / self.dt
        k = int(round(x))
        if abs(x - k) > _GRID_TOL * max(1.0, abs(x)) or not 0 <= k <= self.steps:
            raise InvalidArgumentError(f"time {t} is not a grid node")
        return k


@dataclass(frozen=True)
class SamplePath:
    """Values of a d-dimensional path at grid nodes ``0..n`` (``n <= N``)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise InvalidArgumentError("path values must be (nodes, d)")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("path contains non-finite values")
        if v.shape[0] > self.grid.steps + 1:
            raise InvalidArgumentError("path longer than the grid")
        object.__setattr__(self, "values", v)

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[: len(self.values)]

    def __call__(self, t: float) -> np.ndarray:
        return self.values[self.grid.index(t)]


def delayed_indices(k: int, delay_steps: int) -> np.ndarray:
    """Node indices of ``(s + theta)^+`` for ``theta = -delay .. 0`` at node ``k``."""
    return np.maximum(np.arange(k - delay_steps, k + 1), 0)


def delayed_segment(path: SamplePath, s: float, delay: float) -> np.ndarray:
    """Segment ``theta -> path((s + theta)^+)`` on the grid, oldest value first."""
    grid = path.grid
    k = grid.index(s)
    ratio = delay / grid.dt
    if abs(ratio - round(ratio)) > _GRID_TOL * max(1.0, ratio):
        raise InvalidArgumentError("delay is not a grid multiple")
    return path.values[delayed_indices(k, int(round(ratio)))]


def _increment_norms(values: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.diff(values, axis=-2), axis=-1)


def total_variation(path: SamplePath, a: float, b: float) -> float:
    i, j = path.grid.index(a), path.grid.index(b)
    if i > j:
        raise InvalidArgumentError("total variation needs a <= b")
    return float(np.sum(_increment_norms(path.values[i: j + 1])))


def modulus_delta(path: SamplePath, delay: float) -> float:
    """Largest total variation over windows ``[s, s + delay]`` inside ``[0, T]``."""
    grid = path.grid
    if delay > grid.horizon * (1 + _GRID_TOL):
        raise InvalidArgumentError("delay exceeds the horizon")
    ratio = delay / grid.dt
    width = int(round(ratio))
    if abs(ratio - width) > _GRID_TOL * max(1.0, ratio):
        raise InvalidArgumentError("delay is not a grid multiple")
    cum = np.concatenate([[0.0], np.cumsum(_increment_norms(path.values))])
    if width >= len(cum):
        return float(cum[-1])
    return float(np.max(cum[width:] - cum[:-width]) if width else 0.0)


def sup_norm(path: SamplePath) -> float:
    return float(np.max(np.linalg.norm(path.values, axis=-1)))


@dataclass(frozen=True)
class InitialCondition:
    """History ``(phi, varphi)`` on nodes ``0..start_index``."""

    start_index: int
    phi: SamplePath
    varphi: SamplePath

    def __post_init__(self):
        n = self.start_index + 1
        if len(self.phi.values) != n or len(self.varphi.values) != n:
            raise InvalidArgumentError("history must cover nodes 0..start_index exactly")
        if self.phi.dimension != self.varphi.dimension:
            raise InvalidArgumentError("state and reflection histories differ in dimension")

    @property
    def grid(self) -> TimeGrid:
        return self.phi.grid

    @property
    def start_time(self) -> float:
        return float(self.grid.times[self.start_index])

    @property
    def dimension(self) -> int:
        return self.phi.dimension

    def validate(self, domain) -> None:
        if self.phi.dimension != domain.dimension:
            raise InvalidArgumentError("initial condition dimension does not match the domain")
        lvl = domain.level(self.phi.values)
        if np.any(lvl < -1e-12):
            raise InvalidArgumentError("state history leaves the closed domain")

    def reflection_variation(self) -> float:
        return float(np.sum(_increment_norms(self.varphi.values)))

    @classmethod
    def constant(cls, grid: TimeGrid, x, t: float = 0.0, k0=None) -> "InitialCondition":
        k = grid.index(t)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k0 = np.zeros_like(x) if k0 is None else np.atleast_1d(np.asarray(k0, dtype=float))
        return cls(k, SamplePath(grid, np.tile(x, (k + 1, 1))),
                   SamplePath(grid, np.tile(k0, (k + 1, 1))))

    @classmethod
    def ramp(cls, grid: TimeGrid, x_start, x_end, t: float) -> "InitialCondition":
        """Linear state history from ``x_start`` at time 0 to ``x_end`` at ``t``."""
        k = grid.index(t)
        a = np.atleast_1d(np.asarray(x_start, dtype=float))
        b = np.atleast_1d(np.asarray(x_end, dtype=float))
        w = np.linspace(0.0, 1.0, k + 1)[:, None] if k else np.ones((1, 1))
        phi = (1 - w) * a + w * b
        return cls(k, SamplePath(grid, phi), SamplePath(grid, np.zeros_like(phi)))

    @classmethod
    def from_arrays(cls, grid: TimeGrid, phi, varphi=None) -> "InitialCondition":
        phi = np.asarray(phi, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        varphi = np.zeros_like(phi) if varphi is None else np.asarray(varphi, dtype=float)
        if varphi.ndim == 1:
            varphi = varphi[:, None]
        return cls(len(phi) - 1, SamplePath(grid, phi), SamplePath(grid, varphi))


def write_path_csv(path: SamplePath, target) -> None:
    """One row per node: ``time, x0, x1, ...``."""
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"x{i}" for i in range(path.dimension)])
        for t, row in zip(path.times, path.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_path_csv(source, grid: TimeGrid) -> SamplePath:
    """Read a path written by :func:`write_path_csv`; times must match the grid."""
    rows = list(csv.reader(Path(source).read_text().splitlines()))
    body = [[float(v) for v in r] for r in rows[1:] if r]
    if not body:
        raise InvalidArgumentError(f"{source}: empty path file")
    arr = np.array(body)
    for i, t in enumerate(arr[:, 0]):
        if grid.index(t) != i:
            raise InvalidArgumentError(f"{source}: row {i} time {t} does not match the grid")
    return SamplePath(grid, arr[:, 1:])


def ensemble_variation(values: np.ndarray, delay_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample total variation and delay-window modulus of ``(M, nodes, d)`` paths."""
    inc = _increment_norms(values)
    cum = np.concatenate([np.zeros(inc.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    total = cum[..., -1]
    if delay_steps >= cum.shape[-1]:
        return total, total.copy()
    omega = np.max(cum[..., delay_steps:] - cum[..., :-delay_steps], axis=-1)
    return total, omega
