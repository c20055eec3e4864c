import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfbsde.benchmarks import constant_diffusion, linear_delay, simple_problem
from rfbsde.errors import InvalidArgumentError, UndefinedConditionError
from rfbsde.problem import (AssumptionParams, CoefficientBundle, DelayMeasure, ProblemSpec,
                            c_bound, check_h1_h2, check_h1_h2_ensemble, validate_lipschitz)
from rfbsde.paths import SamplePath, TimeGrid


def _linear_drift(c):
    def drift(t, X):
        return c * X[:, -1]
    return drift


def _bundle(drift):
    return CoefficientBundle(drift, constant_diffusion(1.0),
                             lambda X, K: np.zeros(X.shape[0]))


def test_lipschitz_linear_drift_passes(unit, small_grid):
    p = ProblemSpec("half", _bundle(_linear_drift(0.5)), AssumptionParams(L=1.0))
    rep = validate_lipschitz(p, unit, small_grid, probes=100, seed=1)
    assert rep.passed and 0 < rep.ratios["drift"] <= 0.5 + 1e-12
    assert rep.ratios["diffusion"] == 0.0


def test_lipschitz_steep_drift_fails(unit, small_grid):
    p = ProblemSpec("steep", _bundle(_linear_drift(2.0)), AssumptionParams(L=1.0))
    rep = validate_lipschitz(p, unit, small_grid, probes=100, seed=1)
    assert not rep.passed and "drift" in rep.failures


def test_lipschitz_delay_generator(unit, small_grid):
    rep = validate_lipschitz(linear_delay(0.5), unit, small_grid, probes=100, seed=2)
    assert rep.passed
    assert rep.ratios["generator_delay"] == pytest.approx(0.25)


def test_c_bound_examples():
    assert c_bound(4.0, 1.0) == 1 / 584
    assert c_bound(1.0, 0.3) == min((1 - 8 * 0.09) / 4, 1 / 584)
    with pytest.raises(InvalidArgumentError):
        c_bound(1.0, 1.0)


def test_h_no_delay_passes():
    g = TimeGrid(1.0, 10, 0.1)
    rep = check_h1_h2(AssumptionParams(), SamplePath(g, np.zeros(11)))
    assert rep.h1_lhs == 0 and rep.h2_lhs == 0 and rep.passed


def test_h1_arithmetic():
    g = TimeGrid(1.0, 10, 0.1)
    params = AssumptionParams(L=1.0, L1=1.0, beta=4.0)
    rep = check_h1_h2(params, SamplePath(g, np.zeros(11)), horizon=1.0)
    assert rep.h1_lhs == pytest.approx(math.exp(0.85) / 4)
    assert rep.c_bound == 1 / 584 and not rep.pass_h1


def test_h1_with_zero_L_undefined():
    g = TimeGrid(1.0, 10, 0.1)
    with pytest.raises(UndefinedConditionError):
        check_h1_h2(AssumptionParams(L=0.0, L1=1.0), SamplePath(g, np.zeros(11)))


def test_h2_uses_reflection_variation():
    g = TimeGrid(1.0, 10, 0.1)
    K = np.zeros((3, 11, 1))
    K[1, 5:, 0] = 0.3
    params = AssumptionParams(L_tilde=0.1, L1_tilde=0.01, beta=1.0)
    rep = check_h1_h2_ensemble(params, g, K)
    growth = (8 + 0.5) * 0.1 + 1.0 * 0.3
    assert rep.h2_lhs == pytest.approx(4 * 0.01 * 0.3 * math.exp(growth))


def test_params_validation():
    with pytest.raises(InvalidArgumentError):
        AssumptionParams(L=-1.0)
    with pytest.raises(InvalidArgumentError):
        AssumptionParams(L_tilde=1.0, beta=2.0)
    assert not AssumptionParams().delay_dependent
    assert AssumptionParams(L1=0.1).delay_dependent


def test_delay_measures():
    seg = np.arange(5.0)[None, :]
    assert DelayMeasure("point-delay").integrate(seg)[0] == 0.0
    assert DelayMeasure("point-zero").integrate(seg)[0] == 4.0
    assert DelayMeasure("uniform").integrate(seg)[0] == pytest.approx(2.0)
    assert DelayMeasure("uniform").weights(7).sum() == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        DelayMeasure("gamma")


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 100), st.floats(0, 1))
def test_c_bound_bounds(beta, frac):
    lt = frac * beta / (2 * math.sqrt(2)) * 0.999
    cb = c_bound(beta, lt)
    assert 0 < cb <= 1 / 584
