import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rfbsde.errors import InvalidArgumentError
from rfbsde.paths import (InitialCondition, SamplePath, TimeGrid, delayed_indices,
                          delayed_segment, ensemble_variation, modulus_delta, read_path_csv,
                          sup_norm, total_variation, write_path_csv)


def test_grid_basics():
    g = TimeGrid(1.0, 10, 0.2)
    assert g.dt == pytest.approx(0.1) and g.delay_steps == 2
    assert g.times[-1] == 1.0 and g.index(0.3) == 3
    with pytest.raises(InvalidArgumentError, match="multiple"):
        TimeGrid(1.0, 10, 0.15)
    with pytest.raises(InvalidArgumentError):
        g.index(0.35)


def test_delayed_segment_examples():
    g = TimeGrid(1.0, 10, 0.2)
    p = SamplePath(g, np.arange(11.0))
    assert np.all(delayed_segment(p, 0.0, 0.2) == 0.0)
    assert delayed_segment(p, 0.2, 0.2).ravel().tolist() == [0, 1, 2]
    assert delayed_segment(p, 0.5, 0.2).ravel().tolist() == [3, 4, 5]
    assert delayed_indices(1, 3).tolist() == [0, 0, 1, 1][:0] + [0, 0, 0, 1]


def test_total_variation_examples():
    g = TimeGrid(3.0, 3, 1.0)
    assert total_variation(SamplePath(g, np.ones(4)), 0, 3) == 0
    assert total_variation(SamplePath(g, [0, 1, 2, 3]), 0, 3) == 3
    assert total_variation(SamplePath(g, [0, 1, 0, 1]), 0, 3) == 3


def test_modulus_examples():
    g = TimeGrid(1.0, 100, 0.1)
    assert modulus_delta(SamplePath(g, np.zeros(101)), 0.1) == 0
    assert modulus_delta(SamplePath(g, 2.5 * g.times), 0.1) == pytest.approx(0.25)
    jump = np.where(g.times > 0.505, 1.0, 0.0)
    assert modulus_delta(SamplePath(g, jump), 0.01) == pytest.approx(1.0)


def test_sup_norm_examples():
    g = TimeGrid(math.pi / 2, 10, math.pi / 20)
    assert sup_norm(SamplePath(g, np.zeros(11))) == 0
    assert sup_norm(SamplePath(g, np.sin(g.times))) == pytest.approx(1.0)
    assert sup_norm(SamplePath(g, np.tile([3.0, 4.0], (11, 1)))) == pytest.approx(5.0)


def test_path_rejects_nan():
    with pytest.raises(InvalidArgumentError):
        SamplePath(TimeGrid(1.0, 2, 0.5), [0.0, np.nan, 1.0])


def test_initial_conditions(unit):
    g = TimeGrid(1.0, 10, 0.2)
    ic = InitialCondition.constant(g, [0.3], t=0.4)
    assert ic.start_index == 4 and ic.start_time == pytest.approx(0.4)
    ic.validate(unit)
    r = InitialCondition.ramp(g, [0.1], [0.9], 0.5)
    assert r.phi.values[0, 0] == pytest.approx(0.1) and r.phi.values[-1, 0] == pytest.approx(0.9)
    with pytest.raises(InvalidArgumentError):
        InitialCondition.constant(g, [1.5]).validate(unit)


def test_path_csv_roundtrip(tmp_path):
    g = TimeGrid(1.0, 10, 0.2)
    p = SamplePath(g, np.random.default_rng(0).uniform(size=(6, 2)))
    write_path_csv(p, tmp_path / "p.csv")
    q = read_path_csv(tmp_path / "p.csv", g)
    assert np.array_equal(p.values, q.values)


def test_ensemble_variation_matches_scalar():
    g = TimeGrid(1.0, 20, 0.25)
    vals = np.random.default_rng(3).normal(size=(4, 21, 2))
    tv, om = ensemble_variation(vals, g.delay_steps)
    for i in range(4):
        p = SamplePath(g, vals[i])
        assert tv[i] == pytest.approx(total_variation(p, 0, 1.0))
        assert om[i] == pytest.approx(modulus_delta(p, 0.25))


values = arrays(float, 13, elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(values, st.integers(0, 12))
def test_total_variation_additive(v, m):
    g = TimeGrid(1.2, 12, 0.1)
    p = SamplePath(g, v)
    tm = g.times[m]
    total = total_variation(p, 0, 1.2)
    assert total == pytest.approx(total_variation(p, 0, tm) + total_variation(p, tm, 1.2),
                                  abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(values, st.integers(1, 11))
def test_modulus_monotone_in_delay(v, w):
    g = TimeGrid(1.2, 12, 0.1)
    p = SamplePath(g, v)
    assert modulus_delta(p, w * 0.1) <= modulus_delta(p, (w + 1) * 0.1) + 1e-12
    assert modulus_delta(p, 1.2) == pytest.approx(total_variation(p, 0, 1.2))
