import numpy as np
import pytest

from rfbsde.benchmarks import heat_neumann, simple_problem
from rfbsde.errors import InvalidArgumentError, StiffnessError
from rfbsde.forward import (NoiseEnsemble, check_invariants, exp_moment, lipschitz_initial,
                            local_time_identity, local_time_residual, read_ensemble_binary,
                            replay_tower, simulate_forward, simulate_penalized,
                            write_ensemble_binary, write_ensemble_csv)
from rfbsde.geometry import PenaltyField, ball
from rfbsde.paths import InitialCondition, TimeGrid


@pytest.fixture
def frozen():
    return simple_problem("frozen", drift=0.0, sigma=0.0)


@pytest.fixture
def push():
    return simple_problem("push", drift=1.0, sigma=0.0)


def test_frozen_dynamics(frozen, unit, small_grid):
    ens = simulate_forward(frozen, unit, InitialCondition.constant(small_grid, [0.3]),
                           small_grid, 5, 0)
    assert np.all(ens.X == 0.3) and np.all(ens.K == 0) and np.all(ens.A == 0)


def test_drift_into_wall(push, unit, small_grid):
    ens = simulate_forward(push, unit, InitialCondition.constant(small_grid, [1.0]),
                           small_grid, 3, 0)
    assert np.all(ens.X == 1.0)
    assert np.allclose(ens.dK, -small_grid.dt)
    assert ens.A[0, -1] == pytest.approx(0.5)


def test_reflected_bm_symmetry(unit, small_grid):
    ens = simulate_forward(heat_neumann(), unit, InitialCondition.constant(small_grid, [0.5]),
                           small_grid, 10000, 3)
    xt = ens.X[:, -1, 0]
    assert np.all((xt >= 0) & (xt <= 1))
    assert abs(xt.mean() - 0.5) <= 3 * xt.std() / 100


def test_history_start_respected(unit):
    g = TimeGrid(1.0, 20, 0.1)
    init = InitialCondition.from_arrays(g, np.linspace(0.2, 0.6, 6), np.full(6, 0.05))
    ens = simulate_forward(heat_neumann(), unit, init, g, 50, 1)
    assert np.all(ens.X[:, :6, 0] == init.phi.values[:, 0])
    assert np.all(ens.K[:, 5] == 0.05) and np.all(ens.A[:, :6] == 0)
    check_invariants(ens, unit)


def test_threads_do_not_change_results(unit, small_grid):
    init = InitialCondition.constant(small_grid, [0.5])
    a = simulate_forward(heat_neumann(), unit, init, small_grid, 20000, 9, threads=1)
    b = simulate_forward(heat_neumann(), unit, init, small_grid, 20000, 9, threads=4)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.A, b.A)


def test_noise_prefix_stable(small_grid):
    a = NoiseEnsemble(5, 3000, small_grid, 2).increments()
    b = NoiseEnsemble(5, 1000, small_grid, 2).increments()
    assert np.array_equal(a[:1000], b)
    assert a.std() == pytest.approx(np.sqrt(small_grid.dt), rel=0.02)


def test_ball_stays_inside():
    g = TimeGrid(1.0, 100, 0.1)
    dom = ball(2)
    p = simple_problem("bm2", drift=[0.5, 0.0], sigma=1.0, d=2)
    ens = simulate_forward(p, dom, InitialCondition.constant(g, [0.9, 0.0]), g, 500, 2)
    assert np.all(dom.level(ens.X) >= -1e-12)
    assert ens.A[:, -1].mean() > 0


def test_penalized_interior_matches_projection(frozen, unit, small_grid):
    init = InitialCondition.constant(small_grid, [0.4])
    pen = simulate_penalized(frozen, PenaltyField(unit), 50, init, small_grid, 4, 0)
    ref = simulate_forward(frozen, unit, init, small_grid, 4, 0)
    assert np.array_equal(pen.X, ref.X) and np.all(pen.K == 0)


def test_penalized_stiffness(unit, small_grid):
    init = InitialCondition.constant(small_grid, [0.4])
    with pytest.raises(StiffnessError) as exc:
        simulate_penalized(heat_neumann(), PenaltyField(unit), 1000, init, small_grid, 4, 0)
    assert exc.value.suggested_dt == pytest.approx(1e-3)
    with pytest.raises(InvalidArgumentError):
        simulate_penalized(heat_neumann(), PenaltyField(unit), 0, init, small_grid, 4, 0)


def test_penalized_equilibrium(push, unit):
    # balance n * 2 (x - 1) = 1 for the squared-distance penalty
    g = TimeGrid(1.0, 2000, 0.1)
    init = InitialCondition.constant(g, [1.0])
    for n in (10, 100, 1000):
        ens = simulate_penalized(push, PenaltyField(unit), n, init, g, 1, 0)
        assert ens.X[0, -1, 0] - 1 == pytest.approx(1 / (2 * n), rel=1e-6)


def test_penalized_sweep_coupled(unit):
    g = TimeGrid(0.5, 500, 0.1)
    init = InitialCondition.constant(g, [0.5])
    ref = simulate_forward(heat_neumann(), unit, init, g, 1000, 6)
    errs = []
    for n in (10, 100, 1000):
        pen = simulate_penalized(heat_neumann(), PenaltyField(unit), n, init, g, 1000, 6)
        errs.append(np.max(np.abs(pen.X - ref.X), axis=(1, 2)).mean())
    assert errs[0] > errs[1] > errs[2]


def test_replay_tower(unit, small_grid):
    init = InitialCondition.constant(small_grid, [0.5])
    for r in (0.0, 0.25, 0.5):
        assert replay_tower(heat_neumann(), unit, init, small_grid, r, 3) <= 1e-10


def test_exp_moment_trivial(frozen, unit, small_grid):
    ens = simulate_forward(frozen, unit, InitialCondition.constant(small_grid, [0.3]),
                           small_grid, 10, 0)
    assert exp_moment(ens, 2.0).value == 1.0
    rbm = simulate_forward(heat_neumann(), unit, InitialCondition.constant(small_grid, [0.3]),
                           small_grid, 100, 0)
    est = exp_moment(rbm, 0.0)
    assert est.value == 1.0 and est.stderr == 0.0


def test_lipschitz_initial(frozen, unit, small_grid):
    a = InitialCondition.constant(small_grid, [0.3])
    b = InitialCondition.constant(small_grid, [0.5])
    assert lipschitz_initial(frozen, unit, a, b, small_grid, 10, 0).value == pytest.approx(1.0)
    c = InitialCondition.constant(small_grid, [0.4])
    r1 = lipschitz_initial(heat_neumann(), unit, a, b, small_grid, 500, 0).value
    r2 = lipschitz_initial(heat_neumann(), unit, a, c, small_grid, 500, 0).value
    assert np.isfinite(r1) and 0.5 <= r2 / r1 <= 2
    assert np.isfinite(lipschitz_initial(heat_neumann(), unit, a, b, small_grid, 500, 0, p=4).value)


def test_local_time_identity_exact_cases(frozen, push, unit, small_grid):
    ens = simulate_forward(frozen, unit, InitialCondition.constant(small_grid, [0.3]),
                           small_grid, 5, 0)
    assert local_time_identity(ens, frozen, unit) == 0.0
    ens = simulate_forward(push, unit, InitialCondition.constant(small_grid, [1.0]),
                           small_grid, 2, 0)
    assert np.allclose(local_time_residual(ens, push, unit), 0.0, atol=1e-12)
    assert np.allclose(ens.A[0], small_grid.times)


def test_local_time_refines(unit):
    res = []
    for n in (50, 500):
        g = TimeGrid(0.5, n, 0.1)
        ens = simulate_forward(heat_neumann(), unit, InitialCondition.constant(g, [0.5]), g,
                               2000, 1)
        res.append(local_time_identity(ens, heat_neumann(), unit))
    assert res[1] < res[0]


def test_stop_freezes_paths(unit, small_grid):
    ens = simulate_forward(heat_neumann(), unit, InitialCondition.constant(small_grid, [0.5]),
                           small_grid, 100, 0, stop=10)
    assert np.all(ens.X[:, 10:] == ens.X[:, 10:11])
    assert np.all(ens.A[:, 10:] == ens.A[:, 10:11])


def test_binary_roundtrip_and_csv(tmp_path, unit, small_grid):
    ens = simulate_forward(heat_neumann(), unit, InitialCondition.constant(small_grid, [0.5]),
                           small_grid, 7, 4)
    write_ensemble_binary(ens, tmp_path / "e.bin")
    back = read_ensemble_binary(tmp_path / "e.bin")
    for name in ("X", "K", "A", "dW"):
        assert np.array_equal(getattr(ens, name), getattr(back, name))
    write_ensemble_csv(ens, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0].startswith("sample,step") and len(lines) == 1 + 7 * 51
