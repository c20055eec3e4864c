"""Coefficient bundles, assumption constants and their validators.

Coefficients are vectorized over an ensemble of ``M`` samples:

* ``drift(t, X)`` and ``diffusion(t, X)`` receive the state history
  ``X[:, :k+1, :]`` (current node last) and return ``(M, d)`` and
  ``(M, d, d')``.
* ``generator(t, X, K, y, z, yhat)`` returns ``(M,)``; ``y`` is ``(M,)``,
  ``z`` is ``(M, d')`` and ``yhat`` is the delayed segment ``(M, D+1)``,
  oldest value first.
* ``boundary(t, X, K, y, yhat)`` returns ``(M,)``.
* ``terminal(X, K)`` receives the full paths and returns ``(M,)``.

Because coefficients only ever see ``X[:, :k+1]`` they cannot look at the
future of the path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import InvalidArgumentError, UndefinedConditionError
from .paths import SamplePath, TimeGrid, ensemble_variation, modulus_delta, total_variation

# slack allowed between an observed Lipschitz ratio and the declared constant
LIPSCHITZ_SLACK = 1e-9
# strictness margin for "some c < c_bound"
H_MARGIN = 1e-12

Constant = Union[float, Callable[[SamplePath], float]]


def zero_generator(t, X, K, y, z, yhat):
    return np.zeros(X.shape[0])


def zero_boundary(t, X, K, y, yhat):
    return np.zeros(X.shape[0])


@dataclass(frozen=True)
class DelayMeasure:
    """Probability measure on ``[-delay, 0]`` integrated on the grid segment.

    ``kind`` is ``"point-delay"`` (mass at ``-delay``), ``"point-zero"`` or
    ``"uniform"`` (trapezoid rule).
    """

    kind: str = "point-delay"

    def __post_init__(self):
        if self.kind not in ("point-delay", "point-zero", "uniform"):
            raise InvalidArgumentError(f"unknown delay measure {self.kind!r}")

    def weights(self, delay_steps: int) -> np.ndarray:
        w = np.zeros(delay_steps + 1)
        if self.kind == "point-delay":
            w[0] = 1.0
        elif self.kind == "point-zero":
            w[-1] = 1.0
        else:
            w[:] = 1.0
            w[0] = w[-1] = 0.5
            w /= delay_steps
        return w

    def integrate(self, segment: np.ndarray) -> np.ndarray:
        return segment @ self.weights(segment.shape[-1] - 1)


@dataclass(frozen=True)
class CoefficientBundle:
    drift: Callable
    diffusion: Callable
    terminal: Callable
    generator: Callable = zero_generator
    boundary: Callable = zero_boundary
    noise_dim: int = 1


@dataclass(frozen=True)
class AssumptionParams:
    L: float = 1.0
    L_tilde: float = 0.0
    M: float = 1.0
    M_tilde: float = 1.0
    # growth power of h; recorded only
    p: float = 2.0
    L1: Constant = 0.0
    L1_tilde: Constant = 0.0
    rho_delay: DelayMeasure = field(default_factory=DelayMeasure)
    rho_delay_tilde: DelayMeasure = field(default_factory=DelayMeasure)
    beta: float = 1.0

    def __post_init__(self):
        for name in ("L", "L_tilde", "M", "M_tilde", "p", "beta"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        for name in ("L1", "L1_tilde"):
            v = getattr(self, name)
            if not callable(v) and v < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        if not self.beta > 2 * math.sqrt(2) * self.L_tilde:
            raise InvalidArgumentError("beta must exceed 2*sqrt(2)*L_tilde")

    @property
    def delay_dependent(self) -> bool:
        """False when both delay-Lipschitz bounds are the constant 0."""
        return callable(self.L1) or callable(self.L1_tilde) or self.L1 > 0 or self.L1_tilde > 0


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    coefficients: CoefficientBundle
    params: AssumptionParams

    @property
    def delay_dependent(self) -> bool:
        return self.params.delay_dependent


def _eval_constant(c: Constant, varphi: SamplePath) -> float:
    return float(c(varphi)) if callable(c) else float(c)


def c_bound(beta: float, L_tilde: float) -> float:
    """``min{(beta^2 - 8 L_tilde^2) / (4 beta^2), 1/584}``."""
    if not beta > 2 * math.sqrt(2) * L_tilde:
        raise InvalidArgumentError("beta must exceed 2*sqrt(2)*L_tilde")
    return min((beta * beta - 8.0 * L_tilde * L_tilde) / (4.0 * beta * beta), 1.0 / 584.0)


@dataclass(frozen=True)
class HReport:
    c_bound: float
    h1_lhs: float
    h2_lhs: float
    pass_h1: bool
    pass_h2: bool

    @property
    def passed(self) -> bool:
        return self.pass_h1 and self.pass_h2


def h_lhs(params: AssumptionParams, L1: float, L1_tilde: float, horizon: float, delay: float,
          omega: float, variation: float) -> tuple[float, float]:
    growth = (8.0 * params.L ** 2 + 0.5) * delay + params.beta * omega
    if L1 == 0.0:
        h1 = 0.0
    elif params.L == 0.0:
        raise UndefinedConditionError("H1 divides by 4 L^2 but L = 0 while L1 > 0")
    else:
        h1 = L1 * max(1.0, horizon) * math.exp(growth) / (4.0 * params.L ** 2)
    if L1_tilde == 0.0 or variation == 0.0:
        h2 = 0.0
    else:
        h2 = 4.0 * L1_tilde * variation * math.exp(growth) / params.beta
    return h1, h2


def check_h1_h2(params: AssumptionParams, varphi_probe: SamplePath, horizon: float = None) -> HReport:
    """Evaluate the smallness conditions on one reflection path.

    The delay is read from the probe's grid.
    """
    grid = varphi_probe.grid
    horizon = grid.horizon if horizon is None else horizon
    cb = c_bound(params.beta, params.L_tilde)
    omega = modulus_delta(varphi_probe, grid.delay)
    tv = total_variation(varphi_probe, 0.0, float(grid.times[len(varphi_probe.values) - 1]))
    h1, h2 = h_lhs(params, _eval_constant(params.L1, varphi_probe),
                   _eval_constant(params.L1_tilde, varphi_probe), horizon, grid.delay, omega, tv)
    return HReport(cb, h1, h2, h1 <= cb - H_MARGIN, h2 <= cb - H_MARGIN)


def check_h1_h2_ensemble(params: AssumptionParams, grid: TimeGrid, K: np.ndarray) -> HReport:
    """Worst case of the smallness conditions over sampled reflection paths ``(M, N+1, d)``."""
    cb = c_bound(params.beta, params.L_tilde)
    tv, omega = ensemble_variation(K, grid.delay_steps)
    worst = np.argmax(omega)
    if callable(params.L1) or callable(params.L1_tilde):
        h1 = h2 = 0.0
        for i in range(K.shape[0]):
            probe = SamplePath(grid, K[i])
            a, b = h_lhs(params, _eval_constant(params.L1, probe),
                         _eval_constant(params.L1_tilde, probe), grid.horizon, grid.delay,
                         omega[i], tv[i])
            h1, h2 = max(h1, a), max(h2, b)
    else:
        h1, _ = h_lhs(params, params.L1, 0.0, grid.horizon, grid.delay, omega[worst], 0.0)
        _, h2 = h_lhs(params, 0.0, params.L1_tilde, grid.horizon, grid.delay,
                      float(np.max(omega)), float(np.max(tv)))
    return HReport(cb, h1, h2, h1 <= cb - H_MARGIN, h2 <= cb - H_MARGIN)


@dataclass
class LipschitzReport:
    ratios: dict
    declared: dict

    @property
    def failures(self) -> list:
        return [k for k, r in self.ratios.items() if r > self.declared[k] + LIPSCHITZ_SLACK]

    @property
    def passed(self) -> bool:
        return not self.failures


def _random_paths(domain, grid: TimeGrid, count: int, rng: np.random.Generator) -> np.ndarray:
    """Projected random walks in the closed domain, shape ``(count, N+1, d)``."""
    d = domain.dimension
    x = np.empty((count, grid.steps + 1, d))
    x[:, 0] = domain.sample_interior(rng, count)
    scale = math.sqrt(grid.dt)
    for k in range(grid.steps):
        x[:, k + 1] = domain.projection(x[:, k] + scale * rng.standard_normal((count, d)))
    return x


def validate_lipschitz(problem: ProblemSpec, domain, grid: TimeGrid, probes: int = 200,
                       seed: int = 0, nodes: int = 4) -> LipschitzReport:
    """Monte Carlo lower bounds of the Lipschitz constants of all coefficients.

    ``b`` and ``sigma`` are probed on random path pairs (sup norm of the
    history), ``f`` and ``g`` on random ``(y, z, yhat)`` pairs at random
    histories.  Delay ratios use ``|f(yhat) - f(yhat')|^2 / int |yhat - yhat'|^2 drho``.
    """
    if probes < 1:
        raise InvalidArgumentError("probes must be at least 1")
    co, params = problem.coefficients, problem.params
    rng = np.random.default_rng(seed)
    D = grid.delay_steps
    dp = co.noise_dim
    ratios = dict.fromkeys(["drift", "diffusion", "generator_yz", "boundary_y",
                            "generator_delay", "boundary_delay"], 0.0)
    paths1 = _random_paths(domain, grid, probes, rng)
    bump = rng.normal(scale=0.05, size=paths1.shape) * rng.uniform(0, 1, size=(probes, 1, 1))
    paths2 = domain.projection(paths1 + bump)
    K = np.zeros_like(paths1)
    ks = np.unique(rng.integers(0, grid.steps + 1, size=nodes))
    tiny = 1e-300
    for k in ks:
        t = grid.times[k]
        h1, h2 = paths1[:, : k + 1], paths2[:, : k + 1]
        dist = np.max(np.linalg.norm(h1 - h2, axis=-1), axis=-1)
        ok = dist > 0
        db = np.linalg.norm(co.drift(t, h1) - co.drift(t, h2), axis=-1)
        ds = np.sqrt(np.sum((co.diffusion(t, h1) - co.diffusion(t, h2)) ** 2, axis=(-2, -1)))
        if ok.any():
            ratios["drift"] = max(ratios["drift"], float(np.max(db[ok] / dist[ok])))
            ratios["diffusion"] = max(ratios["diffusion"], float(np.max(ds[ok] / dist[ok])))

        Kh = K[:, : k + 1]
        y1, y2 = rng.normal(size=probes), rng.normal(size=probes)
        z1, z2 = rng.normal(size=(probes, dp)), rng.normal(size=(probes, dp))
        s1, s2 = rng.normal(size=(probes, D + 1)), rng.normal(size=(probes, D + 1))
        df = np.abs(co.generator(t, h1, Kh, y1, z1, s1) - co.generator(t, h1, Kh, y2, z2, s1))
        den = np.abs(y1 - y2) + np.linalg.norm(z1 - z2, axis=-1)
        ratios["generator_yz"] = max(ratios["generator_yz"], float(np.max(df / np.maximum(den, tiny))))
        dg = np.abs(co.boundary(t, h1, Kh, y1, s1) - co.boundary(t, h1, Kh, y2, s1))
        ratios["boundary_y"] = max(ratios["boundary_y"],
                                   float(np.max(dg / np.maximum(np.abs(y1 - y2), tiny))))

        sq = (s1 - s2) ** 2
        dfd = (co.generator(t, h1, Kh, y1, z1, s1) - co.generator(t, h1, Kh, y1, z1, s2)) ** 2
        dgd = (co.boundary(t, h1, Kh, y1, s1) - co.boundary(t, h1, Kh, y1, s2)) ** 2
        ratios["generator_delay"] = max(ratios["generator_delay"], float(np.max(
            dfd / np.maximum(params.rho_delay.integrate(sq), tiny))))
        ratios["boundary_delay"] = max(ratios["boundary_delay"], float(np.max(
            dgd / np.maximum(params.rho_delay_tilde.integrate(sq), tiny))))

    probe = SamplePath(grid, K[0])
    declared = {
        "drift": params.L,
        "diffusion": params.L,
        "generator_yz": params.L,
        "boundary_y": params.L_tilde,
        "generator_delay": _eval_constant(params.L1, probe),
        "boundary_delay": _eval_constant(params.L1_tilde, probe),
    }
    return LipschitzReport(ratios, declared)
