"""RNG, schedule and Stark-interaction units."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from microtrap.geometry_fields import FieldSample
from microtrap.rng import LANE_DETECT, LANE_DYNAMICS, LANE_LOAD, Stream, uniform_block
from microtrap.schedule import MAX_PERIMETER_FIELD, ElectrodeConfig, RampSchedule, offset_voltage
from microtrap.stark import CH3F, DEBYE, RotState, Species, effective_dipole, stark_energy, stark_force, \
    trap_depth_velocity


def test_streams_are_pure_functions_of_key_and_counter():
    a = uniform_block(42, LANE_LOAD, [0, 1, 2, 3], 5)
    b = uniform_block(42, LANE_LOAD, [3, 2, 1, 0], 5)[::-1]
    assert np.array_equal(a, b)
    assert np.array_equal(uniform_block(42, LANE_LOAD, [2], 3, start=2)[0], a[2, 2:5])


def test_stream_walks_block_sequence():
    s = Stream(7, 11, LANE_DYNAMICS)
    seq = [s.uniform() for _ in range(6)]
    assert np.array_equal(seq, uniform_block(7, LANE_DYNAMICS, [11], 6)[0])
    assert s.counter == 6


def test_lanes_and_seeds_decorrelate():
    base = uniform_block(1, LANE_LOAD, range(1000), 1)[:, 0]
    for other in (uniform_block(1, LANE_DETECT, range(1000), 1)[:, 0], uniform_block(2, LANE_LOAD, range(1000), 1)[:, 0]):
        assert abs(np.corrcoef(base, other)[0, 1]) < 0.1


def test_uniform_moments():
    u = uniform_block(3, LANE_DYNAMICS, range(2000), 50).ravel()
    assert np.all((u >= 0) & (u < 1))
    assert u.mean() == pytest.approx(0.5, abs=0.005)
    assert u.var() == pytest.approx(1 / 12, rel=0.02)


def test_schedule_interpolates_linearly():
    c0 = ElectrodeConfig(v_micro=100.0, e_perimeter=1e6)
    c1 = ElectrodeConfig(v_micro=300.0, e_perimeter=3e6, exit_open=1.0)
    s = RampSchedule([(0.0, c0), (2.0, c1)])
    mid = s.at(0.5)
    assert mid.v_micro == pytest.approx(150.0) and mid.e_perimeter == pytest.approx(1.5e6)
    assert mid.exit_open == pytest.approx(0.25)
    assert s.duration == 2.0 and s.t_end == 2.0
    with pytest.raises(IndexError):
        s.at(2.5)


@given(st.floats(-1e3, 1e3))
def test_static_schedule_is_valid_forever(t0):
    c = ElectrodeConfig(v_micro=5.0)
    s = RampSchedule.static(c, t0)
    assert s.t_end == math.inf
    assert s.at(t0 + 1e6) == c


def test_schedule_validation():
    with pytest.raises(ValueError):
        RampSchedule([])
    c = ElectrodeConfig()
    with pytest.raises(ValueError):
        RampSchedule([(1.0, c), (1.0, c)])
    with pytest.raises(ValueError):
        ElectrodeConfig(e_perimeter=MAX_PERIMETER_FIELD * 1.01)
    with pytest.raises(ValueError):
        ElectrodeConfig(wedge_bias=-0.1)
    assert offset_voltage(1e5, 3e-3) == pytest.approx(150.0)


def test_effective_dipole_signs():
    lfs = RotState(1, 1, -1)
    assert lfs.low_field_seeking and not RotState(1, 1, 1).low_field_seeking
    assert effective_dipole(CH3F, lfs) == pytest.approx(CH3F.dipole / 2)
    assert effective_dipole(CH3F, RotState(2, 2, -2)) == pytest.approx(CH3F.dipole * 4 / 6)
    assert effective_dipole(CH3F, RotState(0, 0, 0)) == 0.0
    assert CH3F.dipole / DEBYE == pytest.approx(1.85, abs=0.02)
    with pytest.raises(ValueError):
        RotState(1, 2, 0)
    with pytest.raises(ValueError):
        Species(mass=-1.0, dipole=1.0)


def test_stark_force_and_energy():
    mu = effective_dipole(CH3F, RotState(1, 1, -1))
    f = FieldSample(np.array([0.0, 0.0, 1e6]), 0.0, 1e6, np.array([1e8, 0.0, -2e8]))
    assert np.allclose(stark_force(mu, f), [-mu * 1e8, 0.0, 2 * mu * 1e8])
    assert stark_energy(mu, 1e6) == pytest.approx(mu * 1e6)


def test_trap_depth_velocity_inverts_energy():
    mu = CH3F.dipole / 2
    v = trap_depth_velocity(mu, 6e6, CH3F.mass)
    assert 0.5 * CH3F.mass * v ** 2 == pytest.approx(mu * 6e6)
    with pytest.raises(ValueError):
        trap_depth_velocity(-mu, 1e6, CH3F.mass)
