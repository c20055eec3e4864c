"""Built-in problems and their closed-form or semi-analytic reference values."""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import Polynomial

from .problem import (AssumptionParams, CoefficientBundle, DelayMeasure, ProblemSpec,
                      zero_boundary, zero_generator)


def constant_drift(b):
    b = np.atleast_1d(np.asarray(b, dtype=float))

    def drift(t, X):
        return np.broadcast_to(b, (X.shape[0], b.size)).copy()

    return drift


def constant_diffusion(sigma, d: int = 1, noise_dim: int = 1):
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        s = s * np.eye(d, noise_dim)

    def diffusion(t, X):
        return np.broadcast_to(s, (X.shape[0],) + s.shape).copy()

    return diffusion


def state_terminal(fn):
    """Terminal functional ``h(X, K) = fn(X(T))`` for ``fn`` acting on ``(M, d)``."""

    def terminal(X, K):
        return fn(X[:, -1])

    return terminal


def simple_problem(name="simple", drift=0.0, sigma=1.0, d: int = 1, terminal=None,
                   generator=zero_generator, boundary=zero_boundary, params=None) -> ProblemSpec:
    co = CoefficientBundle(constant_drift(np.full(d, drift) if np.ndim(drift) == 0 else drift),
                           constant_diffusion(sigma, d, d),
                           terminal or state_terminal(lambda x: np.zeros(x.shape[0])),
                           generator, boundary, noise_dim=d)
    return ProblemSpec(name, co, params or AssumptionParams())


# ------------------------------------------------------------------ B1

def heat_exact(t, x, horizon):
    """Neumann eigenfunction solution ``exp(-pi^2 (T - t) / 2) cos(pi x)``."""
    return np.exp(-math.pi ** 2 * (horizon - t) / 2.0) * np.cos(math.pi * np.asarray(x))


def heat_exact_gradient(t, x, horizon):
    return -math.pi * np.exp(-math.pi ** 2 * (horizon - t) / 2.0) * np.sin(math.pi * np.asarray(x))


def heat_neumann() -> ProblemSpec:
    """B1: reflected Brownian motion on [0, 1], ``h = cos(pi X(T))``, ``f = g = 0``."""
    co = CoefficientBundle(constant_drift([0.0]), constant_diffusion(1.0),
                           state_terminal(lambda x: np.cos(math.pi * x[:, 0])))
    return ProblemSpec("heat-neumann", co, AssumptionParams(L=1.0))


# ------------------------------------------------------------------ B2

def manufactured_exact(t, x, horizon, lam: float = 1.0):
    """``u*(t, x) = exp(-lam (T - t)) exp(x)``; ``u*'(0) = 1`` and ``u*'(1) = e``."""
    return np.exp(-lam * (horizon - t)) * np.exp(np.asarray(x))


def manufactured_neumann(horizon: float, lam: float = 1.0) -> ProblemSpec:
    """B2: ``f = -du*/dt - u*''/2`` and ``g = -du*/dnu`` on [0, 1].

    The inward normal is ``grad l(x) = 1 - 2x`` (``+1`` at 0, ``-1`` at 1);
    ``g`` only contributes where the local time grows, i.e. on the boundary.
    """

    def generator(t, X, K, y, z, yhat):
        return -(lam + 0.5) * manufactured_exact(t, X[:, -1, 0], horizon, lam)

    def boundary(t, X, K, y, yhat):
        x = X[:, -1, 0]
        return -manufactured_exact(t, x, horizon, lam) * (1.0 - 2.0 * x)

    co = CoefficientBundle(constant_drift([0.0]), constant_diffusion(1.0),
                           state_terminal(lambda x: np.exp(x[:, 0])), generator, boundary)
    return ProblemSpec("manufactured-neumann", co, AssumptionParams(L=1.0))


# ------------------------------------------------------------------ B3

def linear_delay(a: float = 0.5) -> ProblemSpec:
    """B3: ``f = a * Y((r - delay)^+)``, ``g = 0``, ``h = 1``; state independent."""

    def generator(t, X, K, y, z, yhat):
        return a * yhat[:, 0]

    co = CoefficientBundle(constant_drift([0.0]), constant_diffusion(1.0),
                           state_terminal(lambda x: np.ones(x.shape[0])), generator)
    params = AssumptionParams(L=1.0, L1=a * a, rho_delay=DelayMeasure("point-delay"))
    return ProblemSpec("linear-delay", co, params)


def delay_ode_pieces(a: float, delay: float, horizon: float) -> list[Polynomial]:
    """Method of steps for ``p'(s) = -a p((s - delay)^+)``, ``p(0) = 1``.

    Piece ``j`` is an exact polynomial in ``s`` valid on ``[j delay, (j+1) delay]``.
    """
    pieces = [Polynomial([1.0, -a])]
    shift = Polynomial([-delay, 1.0])
    j = 1
    while j * delay < horizon:
        prev = pieces[-1]
        start = j * delay
        integrand = prev(shift)
        antider = integrand.integ(lbnd=start)
        pieces.append(prev(start) - a * antider)
        j += 1
    return pieces


def delay_ode_value(pieces, delay: float, s) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    idx = np.minimum((s / delay).astype(int), len(pieces) - 1)
    # node exactly at j*delay belongs to either piece; both agree there
    return np.array([pieces[i](x) for i, x in zip(idx, s)])


def linear_delay_exact(a: float, delay: float, horizon: float, s) -> np.ndarray:
    """Solution of ``Y(s) = 1 + int_s^T a Y((r - delay)^+) dr``.

    ``Y`` is a multiple of the forward method-of-steps solution ``p`` fixed
    by ``Y(T) = 1``.
    """
    pieces = delay_ode_pieces(a, delay, horizon)
    return delay_ode_value(pieces, delay, s) / delay_ode_value(pieces, delay, horizon)[0]


BUILTIN = {
    "heat-neumann": lambda cfg: heat_neumann(),
    "manufactured-neumann": lambda cfg: manufactured_neumann(cfg["horizon"], cfg.get("lam", 1.0)),
    "linear-delay": lambda cfg: linear_delay(cfg.get("a", 0.5)),
}
