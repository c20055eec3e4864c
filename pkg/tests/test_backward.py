import json

import numpy as np
import pytest

from rfbsde.backward import (PicardConfig, basis, picard_map, regress_z, solve_backward,
                             write_backward_csv, write_picard_log)
from rfbsde.benchmarks import (heat_neumann, linear_delay, linear_delay_exact, simple_problem,
                               state_terminal)
from rfbsde.errors import InvalidArgumentError
from rfbsde.forward import simulate_forward
from rfbsde.paths import InitialCondition, TimeGrid
from rfbsde.problem import AssumptionParams


def _ens(problem, unit, grid, x=0.5, samples=4000, seed=0):
    return simulate_forward(problem, unit, InitialCondition.constant(grid, [x]), grid, samples,
                            seed)


def test_basis_presets():
    assert basis("poly2-state").name == "poly2-state"
    assert basis("poly3-path").name == "poly3-path"
    with pytest.raises(InvalidArgumentError):
        basis("fourier")


def test_constant_terminal(unit, small_grid):
    p = simple_problem(terminal=state_terminal(lambda x: np.full(x.shape[0], 2.5)))
    back = solve_backward(p, _ens(p, unit, small_grid), basis("poly2-state"))
    assert np.allclose(back.Y, 2.5) and np.allclose(back.Z, 0.0, atol=1e-12)
    assert back.iterations == 1


def test_linear_generator(unit, small_grid):
    alpha = 0.8

    def gen(t, X, K, y, z, yhat):
        return alpha * y

    p = simple_problem(terminal=state_terminal(lambda x: np.ones(x.shape[0])), generator=gen)
    back = solve_backward(p, _ens(p, unit, small_grid, samples=500), basis("poly2-state"))
    exact = np.exp(alpha * (0.5 - small_grid.times))
    # explicit right-endpoint Euler: error O(dt)
    assert np.max(np.abs(back.Y[0] - exact)) < 0.01


def test_boundary_stieltjes_term(unit, small_grid):
    gamma = 1.7
    p = simple_problem(drift=1.0, sigma=0.0,
                       boundary=lambda t, X, K, y, yhat: np.full(X.shape[0], gamma))
    back = solve_backward(p, _ens(p, unit, small_grid, x=1.0, samples=3), basis("poly2-state"))
    assert np.allclose(back.Y[0], gamma * (0.5 - small_grid.times))


def test_delay_matches_oracle(unit):
    g = TimeGrid(0.5, 100, 0.1)
    ens = _ens(linear_delay(0.5), unit, g, samples=200)
    back = solve_backward(linear_delay(0.5), ens, basis("poly2-state"), PicardConfig(tol=1e-10))
    exact = linear_delay_exact(0.5, 0.1, 0.5, g.times)
    # explicit scheme, dt = 5e-3
    assert np.max(np.abs(back.Y[0] - exact)) < 2e-3
    assert back.converged
    ch = np.array(back.changes)
    assert np.all(ch[1:] < ch[:-1])


def test_picard_map_fixed_point(unit, small_grid):
    p = heat_neumann()
    ens = _ens(p, unit, small_grid)
    back = solve_backward(p, ens, basis("poly2-state"))
    again = picard_map(p, ens, basis("poly2-state"), back)
    assert np.max(np.abs(again.Y - back.Y)) <= 1e-10


def test_picard_config_validation():
    with pytest.raises(InvalidArgumentError):
        PicardConfig(max_iter=0)
    with pytest.raises(InvalidArgumentError):
        PicardConfig(damping=1.5)


def test_regress_z_brownian_target(unit):
    g = TimeGrid(1.0, 20, 0.1)
    ens = _ens(heat_neumann(), unit, g, samples=10000, seed=5)
    k = 10
    z = regress_z(ens, ens.W[:, k + 1, 0], basis("poly2-state"), k)
    assert abs(z.mean() - 1.0) < 3 * z.std() / 100 + 0.05
    zc = regress_z(ens, np.full(ens.samples, 3.0), basis("poly2-state"), k)
    assert np.allclose(zc, 0.0, atol=1e-10)


def test_regress_z_linear_terminal():
    # free motion (no reflection window): Z = sigma * h'
    from rfbsde.geometry import ball
    dom = ball(1)
    g = TimeGrid(0.1, 10, 0.01)
    p = simple_problem(sigma=0.3)
    ens = simulate_forward(p, dom, InitialCondition.constant(g, [0.0]), g, 10000, 2)
    target = 2.0 * ens.X[:, -1, 0]
    zs = [regress_z(ens, target, basis("poly1-state"), k).mean() for k in range(10)]
    assert np.allclose(zs, 0.6, atol=0.03)


def test_exports(tmp_path, unit, small_grid):
    ens = _ens(linear_delay(0.5), unit, small_grid, samples=20)
    back = solve_backward(linear_delay(0.5), ens, basis("poly2-state"))
    write_backward_csv(back, tmp_path / "b.csv")
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert rows[0] == "sample,step,Y,z0" and len(rows) == 1 + 20 * 51
    write_picard_log(back, tmp_path / "p.jsonl")
    log = [json.loads(x) for x in (tmp_path / "p.jsonl").read_text().splitlines()]
    assert [e["iteration"] for e in log] == list(range(1, back.iterations + 1))


def test_h_warning_recorded(unit, small_grid):
    back = solve_backward(linear_delay(0.5), _ens(linear_delay(0.5), unit, small_grid, samples=50),
                          basis("poly2-state"))
    assert any("(H1)" in w for w in back.warnings)
