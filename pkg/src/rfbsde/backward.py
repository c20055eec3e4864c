"""Time-delayed generalized BSDE by Picard iteration over regression sweeps.

Each sweep runs backward from ``Y_N = h`` with an explicit scheme::

    Z_k = E_k[(Y_{k+1} - E_k Y_{k+1}) dW_k] / dt
    Y_k = E_k[Y_{k+1} + f(t_{k+1}, ..., Y_{k+1}, Z_k, U-segment) dt
                      + g(t_{k+1}, ..., Y_{k+1}, U-segment) dA_k]

where the delayed segments are read from the previous iterate ``U`` and
``E_k`` is a least-squares projection on basis functions of the path at
node ``k``.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, RegressionError
from .forward import ForwardEnsemble
from .problem import ProblemSpec, check_h1_h2_ensemble

log = logging.getLogger(__name__)

RIDGE = 1e-10


# ------------------------------------------------------------------ bases

def _monomials(x: np.ndarray, degree: int) -> list[np.ndarray]:
    """All monomials of the columns of ``x`` with total degree 1..degree."""
    d = x.shape[1]
    out = []
    terms = [((), None)]
    for _ in range(degree):
        nxt = []
        for idx, val in terms:
            start = idx[-1] if idx else 0
            for j in range(start, d):
                v = x[:, j] if val is None else val * x[:, j]
                nxt.append((idx + (j,), v))
                out.append(v)
        terms = nxt
    return out


@dataclass(frozen=True)
class RegressionBasis:
    """Feature map ``(ensemble, k) -> (M, m)`` whose first column is 1.

    Named presets ``poly<deg>-state`` use monomials of ``X_k`` plus ``A_k``;
    ``poly<deg>-path`` add the running time integral and running maximum
    of ``X``.  A custom ``prepare(ens)`` must return ``k -> features``.
    """

    name: str
    prepare: Callable[[ForwardEnsemble], Callable[[int], np.ndarray]]


def _poly_prepare(degree: int, path: bool):
    def prepare(ens: ForwardEnsemble):
        X, A = ens.X, ens.A
        if path:
            dt = ens.grid.dt
            integral = np.concatenate([np.zeros_like(X[:, :1]),
                                       np.cumsum(X[:, :-1], axis=1) * dt], axis=1)
            running_max = np.maximum.accumulate(X, axis=1)

        def features(k: int) -> np.ndarray:
            cols = [np.ones(X.shape[0])] + _monomials(X[:, k], degree) + [A[:, k]]
            if path:
                cols += list(integral[:, k].T) + list(running_max[:, k].T)
            return np.column_stack(cols)

        return features

    return prepare


def basis(name: str) -> RegressionBasis:
    m = re.fullmatch(r"poly(\d+)-(state|path)", name)
    if not m:
        raise InvalidArgumentError(f"unknown basis preset {name!r}")
    return RegressionBasis(name, _poly_prepare(int(m.group(1)), m.group(2) == "path"))


# ------------------------------------------------------------- regression

class _Projector:
    """Least squares on standardized features; constant columns are dropped."""

    def __init__(self, F: np.ndarray):
        if not np.all(np.isfinite(F)):
            raise RegressionError("non-finite regression features")
        M = F.shape[0]
        mu = F[:, 1:].mean(axis=0)
        sd = F[:, 1:].std(axis=0)
        keep = sd > 1e-12 * (1.0 + np.abs(mu))
        self.keep, self.mu, self.sd = keep, mu[keep], sd[keep]
        self.F = np.column_stack([np.ones(M), (F[:, 1:][:, keep] - self.mu) / self.sd])
        G = self.F.T @ self.F / M
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            G = G + RIDGE * np.eye(len(G))
            try:
                np.linalg.cholesky(G)
            except np.linalg.LinAlgError:
                raise RegressionError("singular normal equations after ridge retry") from None
        self.G = G
        self.M = M

    @property
    def size(self) -> int:
        return self.F.shape[1]

    def coefficients(self, target: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(target)):
            raise RegressionError("non-finite regression target")
        return np.linalg.solve(self.G, self.F.T @ target / self.M)

    def fit(self, target: np.ndarray):
        c = self.coefficients(target)
        return self.F @ c, c

    def original(self, c: np.ndarray) -> np.ndarray:
        """Map standardized coefficients back to the raw feature columns."""
        c = np.asarray(c)
        raw = np.zeros((len(self.keep) + 1,) + c.shape[1:])
        slope = c[1:] / (self.sd if c.ndim == 1 else self.sd[:, None])
        raw[1:][self.keep] = slope
        raw[0] = c[0] - (self.mu @ slope)
        return raw


def regress_z(ens: ForwardEnsemble, target: np.ndarray, rbasis: RegressionBasis, k: int,
              features=None) -> np.ndarray:
    """Fitted ``E_k[target dW_k] / dt`` per sample, shape ``(M, d')``.

    ``target`` lives at node ``k+1``; its own projection at ``k`` is removed
    first, which leaves the conditional expectation unchanged and cuts the
    variance.
    """
    features = features or rbasis.prepare(ens)
    proj = _Projector(features(k))
    mean, _ = proj.fit(target)
    fitted, _ = proj.fit((target - mean)[:, None] * ens.dW[:, k] / ens.grid.dt)
    return fitted


# -------------------------------------------------------------- solver

@dataclass(frozen=True)
class PicardConfig:
    max_iter: int = 20
    tol: float = 1e-6
    damping: float = 1.0

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be at least 1")
        if not self.tol > 0:
            raise InvalidArgumentError("tol must be positive")
        if not 0 < self.damping <= 1:
            raise InvalidArgumentError("damping must lie in (0, 1]")


@dataclass
class BackwardEnsemble:
    start_index: int
    Y: np.ndarray  # (M, N+1); nodes before the start hold the frozen past
    Z: np.ndarray  # (M, N, d'); entry k belongs to [t_k, t_{k+1})
    coef_y: np.ndarray  # (N, m_raw) regression coefficients in raw features
    coef_z: np.ndarray  # (N, m_raw, d')
    regression_noise: np.ndarray  # (N+1,) noise scale of the fitted Y
    # per-sample h + sum(f dt + g dA) along the path; its mean is Y at the start
    # whenever f and g do not depend on (y, z)
    pathwise: np.ndarray = None
    iterations: int = 0
    changes: list = field(default_factory=list)
    converged: bool = True
    warnings: list = field(default_factory=list)

    @property
    def start_value(self) -> float:
        return float(self.Y[0, self.start_index])


def _padded(U: np.ndarray, D: int) -> np.ndarray:
    """``U`` preceded by ``D`` copies of node 0 so every delayed segment is a view."""
    return np.concatenate([np.repeat(U[:, :1], D, axis=1), U], axis=1)


def _sweep(problem: ProblemSpec, ens: ForwardEnsemble, features, U: np.ndarray,
           use_boundary: bool) -> BackwardEnsemble:
    co = problem.coefficients
    grid, k0 = ens.grid, ens.start_index
    N, D, dt = grid.steps, grid.delay_steps, grid.dt
    M = ens.samples
    times = grid.times
    dA = ens.dA
    Y = np.empty((M, N + 1))
    Y[:, :k0] = U[:, :k0]
    Y[:, N] = co.terminal(ens.X, ens.K)
    Z = np.zeros((M, N, ens.dW.shape[-1]))
    m_raw = features(N).shape[1]
    coef_y = np.full((N, m_raw), np.nan)
    coef_z = np.full((N, m_raw, Z.shape[-1]), np.nan)
    noise = np.zeros(N + 1)
    Upad = _padded(U, D)
    pathwise = Y[:, N].copy()
    for k in range(N - 1, k0 - 1, -1):
        proj = _Projector(features(k))
        y_next = Y[:, k + 1]
        mean_next, _ = proj.fit(y_next)
        z_fit, cz = proj.fit((y_next - mean_next)[:, None] * ens.dW[:, k] / dt)
        Z[:, k] = z_fit
        t = times[k + 1]
        hist_x, hist_k = ens.X[:, : k + 2], ens.K[:, : k + 2]
        seg = Upad[:, k + 1: k + 2 + D]
        target = y_next + co.generator(t, hist_x, hist_k, y_next, z_fit, seg) * dt
        if use_boundary:
            active = dA[:, k] > 0
            if active.any():
                target = target + np.where(active, co.boundary(t, hist_x, hist_k, y_next, seg)
                                           * dA[:, k], 0.0)
        pathwise += target - y_next
        y_fit, cy = proj.fit(target)
        Y[:, k] = y_fit
        coef_y[k] = proj.original(cy)
        coef_z[k] = proj.original(cz)
        resid = target - y_fit
        noise[k] = float(np.sqrt(np.mean(resid ** 2) * proj.size / M))
    return BackwardEnsemble(k0, Y, Z, coef_y, coef_z, noise, pathwise)


def _initial_iterate(problem, ens, features, past):
    grid, k0 = ens.grid, ens.start_index
    M, N = ens.samples, grid.steps
    Y = np.empty((M, N + 1))
    h = problem.coefficients.terminal(ens.X, ens.K)
    Y[:, N] = h
    for k in range(N - 1, k0 - 1, -1):
        Y[:, k], _ = _Projector(features(k)).fit(h)
    Y[:, :k0] = _past_block(past, Y[:, k0], k0)
    return Y


def _past_block(past, start_values, k0):
    """Values on nodes ``0..k0-1``; defaults to the start value (clamped past)."""
    if k0 == 0:
        return np.empty((len(start_values), 0))
    if past is None:
        return np.repeat(start_values[:, None], k0, axis=1)
    past = np.asarray(past, dtype=float)
    if past.shape[-1] != k0:
        raise InvalidArgumentError(f"past values must cover {k0} nodes before the start")
    return np.broadcast_to(past, (len(start_values), k0))


def picard_map(problem: ProblemSpec, ens: ForwardEnsemble, rbasis: RegressionBasis,
               previous: BackwardEnsemble) -> BackwardEnsemble:
    """One application of the fixed-point map with delayed arguments from ``previous``."""
    if previous.Y.shape != (ens.samples, ens.grid.steps + 1):
        raise InvalidArgumentError("previous iterate does not match the ensemble")
    out = _sweep(problem, ens, rbasis.prepare(ens), previous.Y, ens.scheme == "projection")
    out.iterations = 1
    out.changes = [float(np.max(np.abs(out.Y[:, ens.start_index:]
                                       - previous.Y[:, ens.start_index:])))]
    return out


def solve_backward(problem: ProblemSpec, ens: ForwardEnsemble, rbasis: RegressionBasis,
                   picard: PicardConfig = PicardConfig(), past=None) -> BackwardEnsemble:
    """Picard iteration of regression sweeps.

    ``past`` optionally gives ``Y`` on the nodes before the start (frozen
    past); by default those nodes repeat the start value.  Problems whose
    delay-Lipschitz bounds are zero are solved by a single sweep.
    """
    features = rbasis.prepare(ens)
    use_boundary = ens.scheme == "projection"
    k0 = ens.start_index
    warnings = []
    if problem.delay_dependent:
        report = check_h1_h2_ensemble(problem.params, ens.grid, ens.K)
        if not report.passed:
            msg = (f"(H1)/(H2) not satisfied (h1={report.h1_lhs:.4g}, h2={report.h2_lhs:.4g}, "
                   f"c_bound={report.c_bound:.4g}); fixed-point contraction is not guaranteed")
            log.warning(msg)
            warnings.append(msg)
    if problem.delay_dependent:
        U = _initial_iterate(problem, ens, features, past)
    else:
        # delayed arguments are ignored; any placeholder will do
        U = np.zeros((ens.samples, ens.grid.steps + 1))
    changes = []
    converged = False
    result = None
    max_iter = picard.max_iter if problem.delay_dependent else 1
    for it in range(1, max_iter + 1):
        result = _sweep(problem, ens, features, U, use_boundary)
        if picard.damping < 1.0:
            result.Y[:, k0:] = (1 - picard.damping) * U[:, k0:] + picard.damping * result.Y[:, k0:]
        result.Y[:, :k0] = _past_block(past, result.Y[:, k0], k0)
        change = float(np.max(np.abs(result.Y[:, k0:] - U[:, k0:])))
        changes.append(change)
        log.debug("picard iteration %d: sup change %.3e", it, change)
        U = result.Y
        if change <= picard.tol or not problem.delay_dependent:
            converged = True
            break
    if not converged:
        msg = f"Picard iteration did not converge in {picard.max_iter} iterations (last change {changes[-1]:.3e})"
        log.warning(msg)
        warnings.append(msg)
    result.iterations = len(changes)
    result.changes = changes
    result.converged = converged
    result.warnings = warnings
    return result


def write_backward_csv(back: BackwardEnsemble, target) -> None:
    """Columns ``sample, step, Y, z0..``; ``Z`` is blank at the last node."""
    M, n1 = back.Y.shape
    dp = back.Z.shape[-1]
    Z = np.concatenate([back.Z, np.full((M, 1, dp), np.nan)], axis=1)
    with open(target, "w") as fh:
        fh.write(",".join(["sample", "step", "Y"] + [f"z{i}" for i in range(dp)]) + "\n")
        for i in range(M):
            for k in range(back.start_index, n1):
                zs = ",".join("" if np.isnan(v) else repr(float(v)) for v in Z[i, k])
                fh.write(f"{i},{k},{float(back.Y[i, k])!r},{zs}\n")


def write_picard_log(back: BackwardEnsemble, target) -> None:
    with open(target, "w") as fh:
        for i, c in enumerate(back.changes, 1):
            fh.write(json.dumps({"iteration": i, "sup_change": c}) + "\n")
