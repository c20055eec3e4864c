"""Feynman-Kac evaluation and the checks built on top of the forward/backward solvers.

Functionals handed to this module are vectorized over samples:

* ``u_fn(k, X, K) -> (M,)`` and ``zeta_fn(k, X, K) -> (M, d')`` receive
  the histories ``X[:, :k+1]``, ``K[:, :k+1]``;
* path functionals ``F(X, K) -> (M,)`` receive stopped full paths.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .backward import (BackwardEnsemble, PicardConfig, RegressionBasis, basis as make_basis,
                       solve_backward)
from .errors import InvalidArgumentError, PreconditionError, StiffnessError
from .estimate import FunctionalEstimate
from .forward import (ForwardEnsemble, simulate_forward, simulate_from_history,
                      simulate_penalized)
from .geometry import ConvexDomain, PenaltyField
from .paths import InitialCondition, TimeGrid
from .problem import CoefficientBundle, ProblemSpec, zero_boundary

BOOTSTRAP_RESAMPLES = 200


def bootstrap_stderr(values: np.ndarray, seed: int, resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    rng = np.random.default_rng([seed, 0xB007])
    n = len(values)
    if n < 2:
        return 0.0
    means = np.empty(resamples)
    for i in range(resamples):
        means[i] = values[rng.integers(0, n, n)].mean()
    return float(np.std(means, ddof=1))


# ------------------------------------------------------------ u(t, psi)

@dataclass(frozen=True)
class Solution:
    forward: ForwardEnsemble
    backward: BackwardEnsemble
    estimate: FunctionalEstimate


def _truncate(init: InitialCondition, k: int) -> InitialCondition:
    return InitialCondition.from_arrays(init.grid, init.phi.values[: k + 1],
                                        init.varphi.values[: k + 1])


def solve(problem: ProblemSpec, domain: ConvexDomain, init: InitialCondition, grid: TimeGrid,
          samples: int, seed: int, rbasis: RegressionBasis = None,
          picard: PicardConfig = PicardConfig(), past=None, threads: int = 1) -> Solution:
    """Forward simulation plus backward solve, returning everything."""
    rbasis = rbasis or make_basis("poly2-state")
    ens = simulate_forward(problem, domain, init, grid, samples, seed, threads)
    back = solve_backward(problem, ens, rbasis, picard, past)
    se = bootstrap_stderr(back.pathwise, seed) if back.pathwise is not None else 0.0
    est = FunctionalEstimate(back.start_value, se, samples,
                             {"t": init.start_time, "iterations": back.iterations,
                              "converged": back.converged, "warnings": list(back.warnings)})
    return Solution(ens, back, est)


def frozen_past(problem, domain, init, grid, samples, seed, rbasis, picard, threads=1):
    """``u(s_j, psi)`` on nodes before the start, each solved from its own start node."""
    values = []
    for j in range(init.start_index):
        sol = solve(problem, domain, _truncate(init, j), grid, samples, seed, rbasis, picard,
                    np.array(values), threads)
        values.append(sol.estimate.value)
    return np.array(values)


def evaluate_u(problem: ProblemSpec, domain: ConvexDomain, t: float, init: InitialCondition,
               grid: TimeGrid, samples: int, seed: int, rbasis: RegressionBasis = None,
               picard: PicardConfig = PicardConfig(), past: str = "recursive",
               threads: int = 1) -> FunctionalEstimate:
    """``u(t, psi) = Y^{t,psi}(t)`` with a bootstrap standard error.

    For delay-dependent problems started after time 0 the values of ``Y``
    before ``t`` are ``u(s, psi)`` (frozen past); ``past="recursive"``
    computes them by solving from each earlier node, ``past="clamp"``
    repeats the start value instead.
    """
    if grid.index(t) != init.start_index:
        raise InvalidArgumentError("t must be the last node of the initial history")
    past_values = None
    if problem.delay_dependent and init.start_index > 0:
        if past == "recursive":
            past_values = frozen_past(problem, domain, init, grid, samples, seed, rbasis,
                                      picard, threads)
        elif past != "clamp":
            raise InvalidArgumentError(f"unknown past mode {past!r}")
    return solve(problem, domain, init, grid, samples, seed, rbasis, picard, past_values,
                 threads).estimate


def _digest(init: InitialCondition) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(init.phi.values).tobytes())
    h.update(np.ascontiguousarray(init.varphi.values).tobytes())
    return h.hexdigest()


class UEvaluator:
    """Memoized ``u`` keyed on ``(t, history digest, grid, seed, samples)``."""

    def __init__(self, problem, domain, samples, seed, rbasis=None, picard=PicardConfig(),
                 past="recursive"):
        self.problem, self.domain = problem, domain
        self.samples, self.seed = samples, seed
        self.rbasis, self.picard, self.past = rbasis, picard, past
        self._cache: dict = {}

    def __call__(self, t: float, init: InitialCondition) -> FunctionalEstimate:
        key = (t, _digest(init), init.grid, self.seed, self.samples)
        if key not in self._cache:
            self._cache[key] = evaluate_u(self.problem, self.domain, t, init, init.grid,
                                          self.samples, self.seed, self.rbasis, self.picard,
                                          self.past)
        return self._cache[key]

    def __len__(self):
        return len(self._cache)


# -------------------------------------------------------------- semigroup

def semigroup_apply(problem: ProblemSpec, domain: ConvexDomain, F: Callable, t: float, s: float,
                    init: InitialCondition, samples: int, seed: int) -> FunctionalEstimate:
    """Monte Carlo ``P_{t,s}[F](psi) = E[F(X(. ^ s), K(. ^ s))]``."""
    grid = init.grid
    if grid.index(t) != init.start_index:
        raise InvalidArgumentError("t must be the last node of the initial history")
    ks = grid.index(s)
    if ks < init.start_index:
        raise InvalidArgumentError("s must not precede t")
    ens = simulate_forward(problem, domain, init, grid, samples, seed, stop=ks)
    return FunctionalEstimate.from_samples(F(ens.X, ens.K), t=t, s=s)


# ----------------------------------------------------------- mild residual

@dataclass(frozen=True)
class MildResidual:
    residual: float
    signed: float
    stderr: float
    terms: dict = field(default_factory=dict)


def _along_path(fn, ens: ForwardEnsemble, start: int = 0) -> np.ndarray:
    M, n1 = ens.samples, ens.grid.steps + 1
    out = np.zeros((M, n1))
    for j in range(start, n1):
        out[:, j] = fn(j, ens.X[:, : j + 1], ens.K[:, : j + 1])
    return out


def mild_residual(problem: ProblemSpec, domain: ConvexDomain, u_fn: Callable, zeta_fn: Callable,
                  t: float, init: InitialCondition, samples: int, seed: int) -> MildResidual:
    """``|E h + int E f(s, ., u, zeta, u-segment) ds + E int g dA - u(t, psi)|``.

    ``f`` uses left-point sums; the boundary term is accumulated as
    ``sum g(t_{k+1}, ...) dA_k`` at the contact points, which equals
    ``sum g <nu, dK>`` for the projection scheme.
    """
    grid = init.grid
    k0 = grid.index(t)
    if k0 != init.start_index:
        raise InvalidArgumentError("t must be the last node of the initial history")
    co = problem.coefficients
    ens = simulate_forward(problem, domain, init, grid, samples, seed)
    # delayed arguments before t use u at the earlier (deterministic) history
    U = _along_path(u_fn, ens)
    D, dt, times = grid.delay_steps, grid.dt, grid.times
    Upad = np.concatenate([np.repeat(U[:, :1], D, axis=1), U], axis=1)
    h = co.terminal(ens.X, ens.K)
    fsum = np.zeros(samples)
    gsum = np.zeros(samples)
    dA = ens.dA
    for k in range(k0, grid.steps):
        hx, hk = ens.X[:, : k + 1], ens.K[:, : k + 1]
        z = zeta_fn(k, hx, hk)
        fsum += co.generator(times[k], hx, hk, U[:, k], z, Upad[:, k: k + D + 1]) * dt
        if np.any(dA[:, k] > 0):
            hx1, hk1 = ens.X[:, : k + 2], ens.K[:, : k + 2]
            gsum += co.boundary(times[k + 1], hx1, hk1, U[:, k + 1],
                                Upad[:, k + 1: k + D + 2]) * dA[:, k]
    total = h + fsum + gsum
    u0 = float(U[0, k0])
    signed = float(total.mean()) - u0
    se = float(total.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return MildResidual(abs(signed), signed, se,
                        {"terminal": float(h.mean()), "generator": float(fsum.mean()),
                         "boundary": float(gsum.mean()), "u": u0})


# ------------------------------------------------ generalized gradient

@dataclass(frozen=True)
class GradientEstimate:
    nodes: np.ndarray
    values: np.ndarray  # (nodes, d')
    stderr: np.ndarray
    window: float
    truncation: float


def gradient_from_values(ens: ForwardEnsemble, V: np.ndarray, window_steps: int,
                         truncation: float, nodes=None) -> GradientEstimate:
    """Truncated quadratic-variation quotient ``T_N((v(s+e) - v(s)) (W(s+e) - W(s)) / e)``.

    ``V`` holds ``v(s_j, X)`` per sample and node; returns sample means per node.
    """
    if window_steps < 1:
        raise InvalidArgumentError("window must be at least one step")
    if not truncation > 0:
        raise InvalidArgumentError("truncation level must be positive")
    grid, k0 = ens.grid, ens.start_index
    eps = window_steps * grid.dt
    last = grid.steps - window_steps
    nodes = np.arange(k0, last + 1) if nodes is None else np.asarray(nodes)
    if np.any(nodes < k0) or np.any(nodes > last):
        raise InvalidArgumentError("requested nodes leave room for no full window")
    W = ens.W
    dv = V[:, nodes + window_steps] - V[:, nodes]
    dw = W[:, nodes + window_steps] - W[:, nodes]
    q = np.clip(dv[..., None] * dw / eps, -truncation, truncation)
    M = ens.samples
    return GradientEstimate(nodes, q.mean(axis=0), q.std(axis=0, ddof=1) / math.sqrt(M), eps,
                            truncation)


def estimate_directional_gradient(problem: ProblemSpec, domain: ConvexDomain, v_fn: Callable,
                                  t: float, init: InitialCondition, window: float,
                                  truncation: float, samples: int, seed: int,
                                  nodes=None, ensemble: ForwardEnsemble = None) -> GradientEstimate:
    """Estimate ``zeta`` with ``<v(., X), W>_[t, tau] = int zeta ds`` on grid nodes."""
    grid = init.grid
    k0 = grid.index(t)
    if window < grid.dt * (1 - 1e-9):
        raise InvalidArgumentError("window is smaller than the time step")
    ratio = window / grid.dt
    steps = int(round(ratio))
    if abs(ratio - steps) > 1e-9 * ratio:
        raise InvalidArgumentError("window must be a multiple of the time step")
    ens = ensemble if ensemble is not None else simulate_forward(problem, domain, init, grid,
                                                                 samples, seed)
    V = _along_path(v_fn, ens, k0)
    return gradient_from_values(ens, V, steps, truncation, nodes)


# ------------------------------------------------------------ penalization

def penalized_generator(problem: ProblemSpec, penalty: PenaltyField, n: float) -> ProblemSpec:
    """Problem with drift ``b - n delta`` and generator ``f - n g <grad l, delta>``.

    The boundary generator is folded into ``f`` and set to zero.
    """
    if not n > 0:
        raise InvalidArgumentError("penalization stiffness n must be positive")
    co = problem.coefficients
    domain = penalty.domain

    def drift(t, X):
        return co.drift(t, X) - n * penalty.gradient(X[:, -1])

    def generator(t, X, K, y, z, yhat):
        x = X[:, -1]
        tilt = np.sum(domain.gradient(x) * penalty.gradient(x), axis=-1)
        base = co.generator(t, X, K, y, z, yhat)
        outside = tilt != 0
        if not outside.any():
            return base
        return base - n * np.where(outside, co.boundary(t, X, K, y, yhat) * tilt, 0.0)

    bundle = replace(co, drift=drift, generator=generator, boundary=zero_boundary)
    return replace(problem, name=f"{problem.name}[penalized n={n:g}]", coefficients=bundle)


@dataclass
class SweepRow:
    n: float
    status: str
    x_sup_error: float = math.nan
    x_sup_se: float = math.nan
    a_error: float = math.nan
    a_se: float = math.nan
    y_error: float = math.nan
    y_se: float = math.nan
    z_error: float = math.nan
    z_se: float = math.nan
    message: str = ""


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


def penalization_sweep(problem: ProblemSpec, penalty: PenaltyField, init: InitialCondition,
                       grid: TimeGrid, n_list, samples: int, seed: int,
                       rbasis: RegressionBasis = None,
                       picard: PicardConfig = PicardConfig()) -> list[SweepRow]:
    """Coupled errors of the penalized scheme against the projection reference.

    Columns: ``E sup|X^n - X|``, ``E|A^n(T) - A(T)|``, ``|Y^n(t) - Y(t)|`` and
    ``E sum |Z^n - Z|^2 dt``, each with a standard error.
    """
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidArgumentError("n_list must be increasing")
    rbasis = rbasis or make_basis("poly2-state")
    domain = penalty.domain
    ref = solve(problem, domain, init, grid, samples, seed, rbasis, picard)
    k0 = init.start_index
    rows = []
    for n in n_list:
        try:
            pens = simulate_penalized(problem, penalty, n, init, grid, samples, seed)
        except StiffnessError as exc:
            rows.append(SweepRow(n, "stiffness", message=str(exc)))
            continue
        pprob = penalized_generator(problem, penalty, n)
        back = solve_backward(pprob, pens, rbasis, picard)
        x_sup = np.max(np.linalg.norm(pens.X - ref.forward.X, axis=-1), axis=1)
        a_err = np.abs(pens.A[:, -1] - ref.forward.A[:, -1])
        z_err = np.sum(np.sum((back.Z[:, k0:] - ref.backward.Z[:, k0:]) ** 2, axis=-1),
                       axis=1) * grid.dt
        y_diff = back.pathwise - ref.backward.pathwise
        _, y_se = _mean_se(y_diff)
        row = SweepRow(n, "ok", *_mean_se(x_sup), *_mean_se(a_err),
                       abs(back.start_value - ref.backward.start_value), y_se, *_mean_se(z_err))
        rows.append(row)
    return rows


# ------------------------------------------------------------- generator

@dataclass(frozen=True)
class GeneratorRow:
    s: float
    quotient: float
    stderr: float
    analytic: float


def generator_check(problem: ProblemSpec, domain: ConvexDomain, F: Callable, dF: Callable,
                    d2F: Callable, t: float, init: InitialCondition, s_list, samples: int,
                    seed: int) -> list[GeneratorRow]:
    """Compare ``(P_{t,s}F - F) / (s - t)`` with ``1/2 Tr[s s* F''] + <b, F'>``.

    ``F``, ``dF`` and ``d2F`` act on the current point ``(M, d)``.
    """
    grid = init.grid
    k0 = grid.index(t)
    if k0 != init.start_index:
        raise InvalidArgumentError("t must be the last node of the initial history")
    x0 = init.phi.values[-1]
    if not domain.level(x0[None, :])[0] > 0:
        raise PreconditionError("generator check needs a start strictly inside the domain")
    ks = [grid.index(s) for s in s_list]
    if min(ks) <= k0:
        raise InvalidArgumentError("every s must come after t")
    co = problem.coefficients
    hist = init.phi.values[None, :, :]
    b = co.drift(t, hist)[0]
    sig = co.diffusion(t, hist)[0]
    x = x0[None, :]
    analytic = float(0.5 * np.trace(sig @ sig.T @ d2F(x)[0]) + b @ dF(x)[0])
    f0 = float(F(x)[0])
    ens = simulate_forward(problem, domain, init, grid, samples, seed, stop=max(ks))
    rows = []
    for s, k in zip(s_list, ks):
        vals = F(ens.X[:, k])
        m, se = _mean_se(vals)
        h = grid.times[k] - t
        rows.append(GeneratorRow(float(s), (m - f0) / h, se / h, analytic))
    return rows


# ------------------------------------------------------ Feynman-Kac check

@dataclass(frozen=True)
class FeynmanKacCheck:
    node: int
    mean_abs_error: float
    budget: float
    errors: np.ndarray


def feynman_kac_check(problem: ProblemSpec, domain: ConvexDomain, sol: Solution, node: int,
                      subsample: int, inner_samples: int, seed: int,
                      rbasis: RegressionBasis = None,
                      picard: PicardConfig = PicardConfig()) -> FeynmanKacCheck:
    """Re-solve from ``(s, realized history)`` on a subsample and compare with ``Y(s)``.

    The budget is three times the solver's regression noise at ``s`` plus
    three times the mean inner standard error.
    """
    ens, back = sol.forward, sol.backward
    grid = ens.grid
    errors, ses = [], []
    for i in range(min(subsample, ens.samples)):
        init = InitialCondition.from_arrays(grid, ens.X[i, : node + 1], ens.K[i, : node + 1])
        past = back.Y[i, :node] if problem.delay_dependent else None
        inner = solve(problem, domain, init, grid, inner_samples, seed + 1 + i, rbasis, picard,
                      past)
        errors.append(abs(inner.estimate.value - back.Y[i, node]))
        ses.append(inner.estimate.stderr)
    errors = np.array(errors)
    budget = 3.0 * float(back.regression_noise[node]) + 3.0 * float(np.mean(ses))
    return FeynmanKacCheck(node, float(errors.mean()), budget, errors)
