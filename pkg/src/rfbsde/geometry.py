"""Smooth convex domains described by a level function.

Convention: ``G = {l > 0}``, ``dG = {l = 0}`` and ``grad l`` is the inward
unit normal on the boundary.  All callables act on arrays whose last axis
is the space dimension, so a whole ensemble is processed in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, ProjectionError

ArrayFn = Callable[[np.ndarray], np.ndarray]

# slack when deciding whether a projected point is inside the closure
_INSIDE_TOL = 1e-12


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != d:
        raise InvalidArgumentError(f"expected points of dimension {d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("non-finite point")
    return x


@dataclass(frozen=True)
class ConvexDomain:
    """Closure of a bounded convex set ``{level > 0}``.

    ``project`` must return the Euclidean closest point of the closure.
    """

    name: str
    dimension: int
    level: ArrayFn
    gradient: ArrayFn
    hessian: ArrayFn
    projection: ArrayFn
    # a box containing the domain, used only for probing
    bounding_box: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)

    def contains(self, x, tol: float = _INSIDE_TOL) -> np.ndarray:
        return self.level(_as_points(x, self.dimension)) >= -tol

    def sample_interior(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Rejection sampling from the bounding box."""
        lo, hi = self.bounding_box
        out = []
        n = 0
        while n < count:
            pts = rng.uniform(lo, hi, size=(2 * count, self.dimension))
            pts = pts[self.level(pts) > 0]
            out.append(pts)
            n += len(pts)
        return np.concatenate(out)[:count]


def interval() -> ConvexDomain:
    """Unit interval with ``l(x) = x (1 - x)``, so ``|l'| = 1`` at both ends."""

    def level(x):
        return (x * (1.0 - x))[..., 0]

    def gradient(x):
        return 1.0 - 2.0 * x

    def hessian(x):
        return np.full(x.shape[:-1] + (1, 1), -2.0)

    def projection(y):
        return np.clip(y, 0.0, 1.0)

    return ConvexDomain("interval", 1, level, gradient, hessian, projection,
                        (np.zeros(1), np.ones(1)))


def ball(dimension: int = 2) -> ConvexDomain:
    """Unit ball with ``l(x) = (1 - |x|^2) / 2``."""
    if dimension < 1:
        raise InvalidArgumentError("dimension must be positive")

    def level(x):
        return 0.5 * (1.0 - np.sum(x * x, axis=-1))

    def gradient(x):
        return -x

    def hessian(x):
        return np.broadcast_to(-np.eye(dimension), x.shape[:-1] + (dimension, dimension)).copy()

    def projection(y):
        r = np.sqrt(np.sum(y * y, axis=-1, keepdims=True))
        return y / np.maximum(r, 1.0)

    return ConvexDomain("ball", dimension, level, gradient, hessian, projection,
                        (-np.ones(dimension), np.ones(dimension)))


def custom_domain(name, dimension, level, gradient, hessian, projection, bounding_box,
                  probes: int = 200, seed: int = 0) -> ConvexDomain:
    """Register a user domain after probing the projection callback.

    Probes idempotence on exterior points and closest-point optimality
    against interior samples; raises ``ProjectionError`` on failure.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in bounding_box)
    dom = ConvexDomain(name, dimension, level, gradient, hessian, projection, (lo, hi))
    rng = np.random.default_rng(seed)
    width = hi - lo
    ys = rng.uniform(lo - width, hi + width, size=(probes, dimension))
    xs = projection(ys)
    if np.any(level(xs) < -1e-9):
        raise ProjectionError("projection leaves the domain", point=ys[np.argmin(level(xs))])
    again = projection(xs)
    bad = np.max(np.abs(again - xs), axis=-1)
    if np.any(bad > 1e-9):
        raise ProjectionError("projection is not idempotent", point=xs[np.argmax(bad)])
    zs = dom.sample_interior(rng, 100)
    dist = np.linalg.norm(xs - ys, axis=-1)
    other = np.min(np.linalg.norm(zs[None, :, :] - ys[:, None, :], axis=-1), axis=1)
    if np.any(dist > other + 1e-9):
        raise ProjectionError("projection is not the closest point",
                              point=ys[np.argmax(dist - other)])
    return dom


def from_id(identifier: str, dimension: int = 1) -> ConvexDomain:
    if identifier == "interval":
        if dimension != 1:
            raise InvalidArgumentError("interval domain is one-dimensional")
        return interval()
    if identifier == "ball":
        return ball(dimension)
    raise InvalidArgumentError(f"unknown domain {identifier!r}")


def level_and_normal(domain: ConvexDomain, x):
    """Return ``(l(x), grad l(x))``; on the boundary the gradient is the inward normal."""
    pts = _as_points(x, domain.dimension)
    return domain.level(pts), domain.gradient(pts)


def project(domain: ConvexDomain, y):
    """Closest point ``x`` of the closed domain and the correction ``k = x - y``."""
    pts = _as_points(y, domain.dimension)
    x = domain.projection(pts)
    if not np.all(np.isfinite(x)):
        raise ProjectionError("projection returned non-finite values", point=pts)
    lvl = domain.level(x)
    if np.any(lvl < -1e-9):
        worst = np.unravel_index(np.argmin(lvl), lvl.shape)
        raise ProjectionError("projection failed to reach the closed domain", point=pts[worst])
    k = x - pts
    # points already inside must not move
    inside = domain.level(pts) >= 0
    k = np.where(inside[..., None], 0.0, k)
    x = np.where(inside[..., None], pts, x)
    return x, k


@dataclass(frozen=True)
class PenaltyField:
    """Penalty ``rho(x) = dist(x, closure)^2`` and its gradient ``2 (x - P(x))``."""

    domain: ConvexDomain

    # gradient of the penalty is 2-Lipschitz (projection onto a convex set is 1-Lipschitz)
    lipschitz: float = 2.0

    def rho(self, x) -> np.ndarray:
        pts = _as_points(x, self.domain.dimension)
        diff = pts - self.domain.projection(pts)
        return np.sum(diff * diff, axis=-1)

    def gradient(self, x) -> np.ndarray:
        pts = _as_points(x, self.domain.dimension)
        return 2.0 * (pts - self.domain.projection(pts))


def penalty_gradient(penalty: PenaltyField, x) -> np.ndarray:
    return penalty.gradient(x)
