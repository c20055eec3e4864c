"""Forward reflected system ``(X, K, A)``.

Two schemes share one noise source:

* projection: Euler prediction followed by the closest-point projection
  onto the closed domain (discrete Skorokhod map), ``dA = |dK|``;
* penalized: unconstrained Euler with drift ``b - n * grad(rho_pen)`` and
  ``dK = -n * grad(rho_pen)(X_k) dt``.

Brownian increments are generated per block of samples from a Philox
stream keyed by ``(seed, block)``; sample ``i`` always receives the same
increments whatever the sample count or number of worker threads.
"""
from __future__ import annotations

import io
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, NumericalError, StiffnessError
from .estimate import FunctionalEstimate
from .geometry import ConvexDomain, PenaltyField, project
from .paths import InitialCondition, TimeGrid
from .problem import ProblemSpec

log = logging.getLogger(__name__)

NOISE_BLOCK = 1024
# explicit penalized Euler stays bounded while n * dt * Lip(grad rho) <= 2
STABILITY_LIMIT = 2.0


@dataclass(frozen=True)
class NoiseEnsemble:
    seed: int
    samples: int
    grid: TimeGrid
    noise_dim: int = 1

    def _block(self, b: int) -> np.ndarray:
        bitgen = np.random.Philox(np.random.SeedSequence([self.seed, b]))
        z = np.random.Generator(bitgen).standard_normal((NOISE_BLOCK, self.grid.steps, self.noise_dim))
        return z * math.sqrt(self.grid.dt)

    def increments(self, threads: int = 1) -> np.ndarray:
        """Brownian increments ``(samples, N, d')``; entry ``k`` spans ``[t_k, t_{k+1}]``."""
        nblocks = -(-self.samples // NOISE_BLOCK)
        if threads > 1 and nblocks > 1:
            with ThreadPoolExecutor(threads) as ex:
                blocks = list(ex.map(self._block, range(nblocks)))
        else:
            blocks = [self._block(b) for b in range(nblocks)]
        return np.concatenate(blocks)[: self.samples]


@dataclass
class ForwardEnsemble:
    grid: TimeGrid
    start_index: int
    X: np.ndarray  # (M, N+1, d)
    K: np.ndarray  # (M, N+1, d)
    A: np.ndarray  # (M, N+1)
    dW: np.ndarray  # (M, N, d')
    scheme: str = "projection"
    seed: int = 0
    log: dict = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return self.X.shape[0]

    @property
    def dA(self) -> np.ndarray:
        return np.diff(self.A, axis=1)

    @property
    def dK(self) -> np.ndarray:
        return np.diff(self.K, axis=1)

    @property
    def W(self) -> np.ndarray:
        """Brownian path started at 0 at the start node, ``(M, N+1, d')``."""
        W = np.zeros((self.samples, self.grid.steps + 1, self.dW.shape[-1]))
        k0 = self.start_index
        W[:, k0 + 1:] = np.cumsum(self.dW[:, k0:], axis=1)
        return W


def _coefficient_step(problem: ProblemSpec, t: float, hist: np.ndarray, dw: np.ndarray):
    co = problem.coefficients
    b = co.drift(t, hist)
    s = co.diffusion(t, hist)
    return b, s, np.einsum("mij,mj->mi", s, dw)


def _run_projection(problem, domain, X, K, A, dW, k0, stop, grid, lo, hi):
    dt = grid.dt
    times = grid.times
    for k in range(k0, stop):
        hist = X[lo:hi, : k + 1]
        b, _, noise = _coefficient_step(problem, times[k], hist, dW[lo:hi, k])
        pred = X[lo:hi, k] + b * dt + noise
        if not np.all(np.isfinite(pred)):
            raise NumericalError(f"non-finite Euler prediction at step {k}")
        x, dk = project(domain, pred)
        X[lo:hi, k + 1] = x
        K[lo:hi, k + 1] = K[lo:hi, k] + dk
        A[lo:hi, k + 1] = A[lo:hi, k] + np.linalg.norm(dk, axis=-1)


def _run_penalized(problem, penalty, n, X, K, A, dW, k0, grid, lo, hi):
    dt = grid.dt
    times = grid.times
    for k in range(k0, grid.steps):
        hist = X[lo:hi, : k + 1]
        b, _, noise = _coefficient_step(problem, times[k], hist, dW[lo:hi, k])
        push = -n * penalty.gradient(X[lo:hi, k]) * dt
        x = X[lo:hi, k] + b * dt + noise + push
        if not np.all(np.isfinite(x)):
            raise StiffnessError(f"penalized scheme overflowed at step {k} (n={n})",
                                 suggested_dt=STABILITY_LIMIT / (n * penalty.lipschitz))
        X[lo:hi, k + 1] = x
        K[lo:hi, k + 1] = K[lo:hi, k] + push
        A[lo:hi, k + 1] = A[lo:hi, k] + np.linalg.norm(push, axis=-1)


def _chunks(samples: int, size: int = 8192):
    return [(lo, min(lo + size, samples)) for lo in range(0, samples, size)]


def _freeze_after(X, K, A, stop):
    X[:, stop + 1:] = X[:, stop: stop + 1]
    K[:, stop + 1:] = K[:, stop: stop + 1]
    A[:, stop + 1:] = A[:, stop: stop + 1]


def _allocate(grid, history_X, history_K, samples, d):
    k0 = history_X.shape[-2] - 1
    X = np.empty((samples, grid.steps + 1, d))
    K = np.empty_like(X)
    A = np.zeros((samples, grid.steps + 1))
    X[:, : k0 + 1] = history_X
    K[:, : k0 + 1] = history_K
    return X, K, A, k0


def _dispatch(run: Callable, samples: int, threads: int):
    chunks = _chunks(samples)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(lambda c: run(*c), chunks))
    else:
        for c in chunks:
            run(*c)


def _check_compat(problem, domain, init, grid):
    if init.grid != grid:
        raise InvalidArgumentError("initial condition lives on a different grid")
    init.validate(domain)


def simulate_from_history(problem: ProblemSpec, domain: ConvexDomain, grid: TimeGrid,
                          history_X: np.ndarray, history_K: np.ndarray, dW: np.ndarray,
                          threads: int = 1, seed: int = 0, stop: int = None) -> ForwardEnsemble:
    """Projection scheme from per-sample histories ``(M, k0+1, d)`` or a shared ``(k0+1, d)``.

    With ``stop`` the paths are frozen after that node (stopped paths).
    """
    samples, d = dW.shape[0], domain.dimension
    X, K, A, k0 = _allocate(grid, history_X, history_K, samples, d)
    stop = grid.steps if stop is None else stop
    if not k0 <= stop <= grid.steps:
        raise InvalidArgumentError("stop node must lie between the start and the horizon")
    _dispatch(lambda lo, hi: _run_projection(problem, domain, X, K, A, dW, k0, stop, grid, lo, hi),
              samples, threads)
    _freeze_after(X, K, A, stop)
    ens = ForwardEnsemble(grid, k0, X, K, A, dW, "projection", seed, {"stop": stop})
    check_invariants(ens, domain)
    return ens


def simulate_forward(problem: ProblemSpec, domain: ConvexDomain, init: InitialCondition,
                     grid: TimeGrid, samples: int, seed: int, threads: int = 1,
                     stop: int = None) -> ForwardEnsemble:
    _check_compat(problem, domain, init, grid)
    if samples < 1:
        raise InvalidArgumentError("need at least one sample")
    dW = NoiseEnsemble(seed, samples, grid, problem.coefficients.noise_dim).increments(threads)
    return simulate_from_history(problem, domain, grid, init.phi.values, init.varphi.values, dW,
                                 threads, seed, stop)


def simulate_penalized(problem: ProblemSpec, penalty: PenaltyField, n: float,
                       init: InitialCondition, grid: TimeGrid, samples: int, seed: int,
                       threads: int = 1) -> ForwardEnsemble:
    domain = penalty.domain
    _check_compat(problem, domain, init, grid)
    if not n > 0:
        raise InvalidArgumentError("penalization stiffness n must be positive")
    stiffness = n * grid.dt * penalty.lipschitz
    if stiffness > STABILITY_LIMIT:
        raise StiffnessError(
            f"n*dt*Lip = {stiffness:g} exceeds {STABILITY_LIMIT}; use dt <= "
            f"{STABILITY_LIMIT / (n * penalty.lipschitz):g}",
            suggested_dt=STABILITY_LIMIT / (n * penalty.lipschitz))
    dW = NoiseEnsemble(seed, samples, grid, problem.coefficients.noise_dim).increments(threads)
    X, K, A, k0 = _allocate(grid, init.phi.values, init.varphi.values, samples, domain.dimension)
    _dispatch(lambda lo, hi: _run_penalized(problem, penalty, n, X, K, A, dW, k0, grid, lo, hi),
              samples, threads)
    log.info("penalized scheme n=%g stability product n*dt*Lip=%g", n, stiffness)
    return ForwardEnsemble(grid, k0, X, K, A, dW, f"penalized({n:g})", seed,
                           {"stiffness": stiffness, "n": n})


def check_invariants(ens: ForwardEnsemble, domain: ConvexDomain) -> None:
    """Post-pass over a projection-scheme ensemble; raises ``NumericalError``."""
    k0 = ens.start_index
    if np.any(domain.level(ens.X[:, k0:]) < -1e-12):
        raise NumericalError("state left the closed domain")
    dA = ens.dA[:, k0:]
    if np.any(dA < 0) or np.any(ens.A[:, : k0 + 1] != 0):
        raise NumericalError("local time is not nondecreasing from zero")
    if not np.allclose(dA, np.linalg.norm(ens.dK[:, k0:], axis=-1), rtol=0, atol=1e-12):
        raise NumericalError("local time increments differ from |dK|")


def replay_tower(problem: ProblemSpec, domain: ConvexDomain, init: InitialCondition,
                 grid: TimeGrid, r: float, seed: int, samples: int = 64) -> float:
    """Restart at ``r`` from the realized history with the same increments.

    Returns the largest ``|dX| + |dK|`` over samples and nodes in ``[r, T]``.
    """
    kr = grid.index(r)
    if kr < init.start_index:
        raise InvalidArgumentError("restart time precedes the start time")
    full = simulate_forward(problem, domain, init, grid, samples, seed)
    again = simulate_from_history(problem, domain, grid, full.X[:, : kr + 1],
                                  full.K[:, : kr + 1], full.dW, seed=seed)
    dx = np.linalg.norm(full.X[:, kr:] - again.X[:, kr:], axis=-1)
    dk = np.linalg.norm(full.K[:, kr:] - again.K[:, kr:], axis=-1)
    return float(np.max(dx + dk))


def exp_moment(ens: ForwardEnsemble, q: float) -> FunctionalEstimate:
    """Monte Carlo estimate of ``E[exp(q A(T))]``."""
    if ens.samples < 1:
        raise InvalidArgumentError("empty ensemble")
    return FunctionalEstimate.from_samples(np.exp(q * ens.A[:, -1]), q=q)


def lipschitz_initial(problem: ProblemSpec, domain: ConvexDomain, init1: InitialCondition,
                      init2: InitialCondition, grid: TimeGrid, samples: int, seed: int,
                      p: float = 2.0) -> FunctionalEstimate:
    """Coupled ratio ``E[sup (|dX| + |dA|)^p] / ||phi1 - phi2||^p``."""
    if init1.start_index != init2.start_index:
        raise InvalidArgumentError("initial conditions must share the start time")
    if not np.array_equal(init1.varphi.values, init2.varphi.values):
        raise InvalidArgumentError("initial conditions must share the reflection history")
    gap = float(np.max(np.linalg.norm(init1.phi.values - init2.phi.values, axis=-1)))
    if gap == 0.0:
        raise InvalidArgumentError("identical state histories: ratio undefined")
    e1 = simulate_forward(problem, domain, init1, grid, samples, seed)
    e2 = simulate_forward(problem, domain, init2, grid, samples, seed)
    diff = np.linalg.norm(e1.X - e2.X, axis=-1) + np.abs(e1.A - e2.A)
    num = np.max(diff, axis=1) ** p
    return FunctionalEstimate.from_samples(num / gap ** p, p=p, gap=gap)


def local_time_residual(ens: ForwardEnsemble, problem: ProblemSpec,
                        domain: ConvexDomain) -> np.ndarray:
    """Pathwise residual of the Ito identity for ``A``, shape ``(M, N+1-k0)``.

    ``A(s) - [l(X_s) - l(X_t) - sum L l(X_j) dt - sum grad l(X_j) sigma_j dW_j]``
    with left-point sums; ``L l = 1/2 Tr[sigma sigma^T Hess l] + <b, grad l>``.
    """
    grid, k0 = ens.grid, ens.start_index
    co = problem.coefficients
    M, N = ens.samples, grid.steps
    drift_term = np.zeros((M, N + 1))
    mart_term = np.zeros((M, N + 1))
    times = grid.times
    for k in range(k0, N):
        hist = ens.X[:, : k + 1]
        x = ens.X[:, k]
        b = co.drift(times[k], hist)
        s = co.diffusion(times[k], hist)
        g = domain.gradient(x)
        H = domain.hessian(x)
        gen = 0.5 * np.einsum("mij,mkj,mik->m", s, s, H) + np.sum(b * g, axis=-1)
        drift_term[:, k + 1] = drift_term[:, k] + gen * grid.dt
        mart_term[:, k + 1] = mart_term[:, k] + np.einsum("mi,mij,mj->m", g, s, ens.dW[:, k])
    lvl = domain.level(ens.X)
    rhs = lvl - lvl[:, [k0]] - drift_term - mart_term
    return (ens.A - rhs)[:, k0:]


def local_time_identity(ens: ForwardEnsemble, problem: ProblemSpec, domain: ConvexDomain) -> float:
    """Mean absolute residual over samples and nodes after the start."""
    return float(np.mean(np.abs(local_time_residual(ens, problem, domain)[:, 1:])))


# ---------------------------------------------------------------- export

_MAGIC = b"RFBS"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


def write_ensemble_csv(ens: ForwardEnsemble, target) -> None:
    """Columns ``sample, step, x0.., k0.., A``."""
    M, n1, d = ens.X.shape
    sample = np.repeat(np.arange(M), n1)
    step = np.tile(np.arange(n1), M)
    cols = [sample, step, *ens.X.reshape(-1, d).T, *ens.K.reshape(-1, d).T, ens.A.reshape(-1)]
    header = ["sample", "step"] + [f"x{i}" for i in range(d)] + [f"k{i}" for i in range(d)] + ["A"]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    table = np.column_stack(cols)
    np.savetxt(buf, table, delimiter=",", fmt=["%d", "%d"] + ["%.17g"] * (2 * d + 1))
    with open(target, "w") as fh:
        fh.write(buf.getvalue())


def write_ensemble_binary(ens: ForwardEnsemble, target) -> None:
    """Fixed little-endian layout.

    Header ``<4sIIIII``: magic ``RFBS``, version, d, d', N, samples.  Then
    float64 values: ``T, delay, start_index``, X ``(M, N+1, d)``, K
    ``(M, N+1, d)``, A ``(M, N+1)`` and dW ``(M, N, d')``, all row-major.
    """
    M, n1, d = ens.X.shape
    dp = ens.dW.shape[-1]
    with open(target, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, d, dp, n1 - 1, M))
        meta = np.array([ens.grid.horizon, ens.grid.delay, ens.start_index], dtype="<f8")
        for arr in (meta, ens.X, ens.K, ens.A, ens.dW):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_ensemble_binary(source) -> ForwardEnsemble:
    with open(source, "rb") as fh:
        raw = fh.read()
    magic, version, d, dp, N, M = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise InvalidArgumentError(f"{source}: not an RFBS v{_VERSION} ensemble file")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    T, delay, k0 = data[:3]
    pos = 3
    out = []
    for shape in ((M, N + 1, d), (M, N + 1, d), (M, N + 1), (M, N, dp)):
        size = int(np.prod(shape))
        out.append(data[pos: pos + size].reshape(shape).copy())
        pos += size
    grid = TimeGrid(float(T), int(N), float(delay))
    return ForwardEnsemble(grid, int(k0), *out)
