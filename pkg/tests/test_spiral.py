import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsm_dtheory.model import NN, SDOTS, SZSZ, N, LatticeGeometry, build_d6_heisenberg, staggered_map
from nlsm_dtheory.observables import DegenerateSpectrumError
from nlsm_dtheory.spiral import (AX_PRESETS, OMEGA_D, BudgetError, HardwareLimitError, PulseSchedule,
                                 add_measurement_quench, build_spiral, exact_spiral, optimize_penalty,
                                 prepared_coupling, preset_geometry, run_spiral, table_values)

# direct 35-term sum at (0,0) on 6x6, ax=12.5, ay=11, C6=5.42e6
CORNER_OFFSET_6x6 = 2.429355428909788


@pytest.fixture(scope="module")
def spiral_6x6():
    return build_spiral(preset_geometry(6, 6, 12.5))


def test_rabi_end_points(spiral_6x6):
    assert spiral_6x6.rabi(0.0) == 0.0
    assert spiral_6x6.rabi(spiral_6x6.T) == pytest.approx(25.0, rel=1e-12)


def test_corner_offset_by_direct_sum(spiral_6x6):
    g = spiral_6x6.geometry
    direct = sum(0.5 * 5.42e6 / ((12.5 * x) ** 2 + (11.0 * y) ** 2) ** 3
                 for x in range(6) for y in range(6) if (x, y) != (0, 0))
    assert direct == pytest.approx(CORNER_OFFSET_6x6, rel=1e-14)
    corner = g.index(0, 0)
    assert spiral_6x6.offsets[corner] == pytest.approx(direct, rel=1e-12)
    assert spiral_6x6.detuning(0.0)[corner] == pytest.approx(OMEGA_D + 0.44 + direct, rel=1e-12)


def test_hardware_limit():
    with pytest.raises(HardwareLimitError):
        build_spiral(LatticeGeometry(2, 2, 12.5, 11.0), omega_D=26.0 / math.sqrt(2))
    with pytest.raises(ValueError):
        build_spiral(LatticeGeometry(2, 2, 12.5, 11.0), T=0.0)


def test_quench_budget(spiral_6x6):
    q = add_measurement_quench(spiral_6x6)
    assert q.total_time == pytest.approx(4.0, abs=1e-12)
    assert q.rabi(q.T + q.quench) == 0.0
    assert q.rabi(q.T + q.quench / 2) == pytest.approx(12.5, rel=1e-12)
    with pytest.raises(BudgetError):
        add_measurement_quench(build_spiral(spiral_6x6.geometry, T=3.9))


def test_rabi_monotone_and_penalty_vanishes(spiral_6x6):
    t = np.linspace(0, spiral_6x6.T, 1001)
    om = np.array([spiral_6x6.rabi(x) for x in t])
    assert np.all(np.diff(om) >= 0)
    base = build_spiral(spiral_6x6.geometry, h_P=0.0)
    assert np.allclose(spiral_6x6.detuning(spiral_6x6.T), base.detuning(base.T), atol=1e-12)
    assert not np.allclose(spiral_6x6.detuning(0.0), base.detuning(0.0))


def test_final_hamiltonian_maps_to_d6_target():
    g = LatticeGeometry(3, 2, 12.5, 11.0)
    s = build_spiral(g)
    spin = staggered_map(g).to_spin_terms(s.terms_at(s.T))
    zz = {t.sites: t.coefficient for t in spin if t.kind == SZSZ}
    target = {t.sites: t.coefficient for t in build_d6_heisenberg(g) if t.kind == SDOTS}
    assert set(zz) == set(target)
    for k, c in target.items():
        # Rydberg ZZ is the zz part of the 1/r^6 target up to a factor -C6
        assert zz[k] == pytest.approx(-5.42e6 * c, rel=1e-10)
    assert all(t.kind != NN and t.kind != N for t in spin)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(3.0, 3.83), st.booleans())
def test_json_roundtrip(h_P, T, quench):
    s = build_spiral(LatticeGeometry(3, 2, 12.1, 11.0), h_P=h_P, T=T)
    if quench:
        s = add_measurement_quench(s, overhead=0.0)
    back = PulseSchedule.from_json(s.to_json(11))
    assert back == s
    assert back.to_json(11) == s.to_json(11)
    for t in (0.0, T / 3, T, s.duration):
        assert back.rabi(t) == s.rabi(t)
        assert np.array_equal(back.detuning(t), s.detuning(t))


def test_table_presets():
    assert table_values(6, 6, 12.5) == (0.44, 2.81)
    assert table_values(8, 6, 11.1) == (0.45, 7.52)
    assert AX_PRESETS == (12.5, 12.1, 11.8, 11.1)
    with pytest.raises(KeyError):
        table_values(4, 4, 12.5)


def test_optimize_single_element_grid():
    res = optimize_penalty(lambda h: 0.3 + h, 1.0, grid=[0.2])
    assert res.h_P == 0.2
    assert res.evaluations == [(0.2, 0.5)]


def test_optimize_ties_prefer_smaller_penalty():
    res = optimize_penalty(lambda h: 0.5, 0.5, grid=[0.4, 0.1, 0.3], refine=False)
    assert res.h_P == 0.1


def test_optimize_refines_to_root():
    res = optimize_penalty(lambda h: 2 * h, 0.7, grid=[0.1, 0.3, 0.5], tol=1e-4, max_iter=40)
    assert res.h_P == pytest.approx(0.35, abs=1e-3)


def test_optimize_skips_and_reports_degenerate():
    def measure(h):
        if h < 0.3:
            raise DegenerateSpectrumError("toy")
        return h

    res = optimize_penalty(measure, 0.0, grid=[0.1, 0.2, 0.4], refine=False)
    assert res.h_P == 0.4
    assert (0.1, None) in res.evaluations

    def never(h):
        raise DegenerateSpectrumError("toy")

    with pytest.raises(DegenerateSpectrumError):
        optimize_penalty(never, 0.5, grid=[0.1, 0.2])


def test_tdvp_spiral_matches_exact_propagator():
    g = LatticeGeometry(3, 2, 12.5, 11.0)
    s = add_measurement_quench(build_spiral(g))
    res = run_spiral(s, 100, 64)
    at_T, after = exact_spiral(s, 100)
    assert abs(np.vdot(after, res.trajectory.state.to_vector())) ** 2 >= 1 - 1e-8
    assert res.reference == "exact"
    assert res.trajectory.rows[-1]["time"] == pytest.approx(s.duration, abs=1e-12)
    assert prepared_coupling(g, 0.44, 100, 64, "exact") == pytest.approx(
        prepared_coupling(g, 0.44, 100, 64, "tdvp"), abs=1e-8)


def test_slow_spiral_approaches_ground_state():
    g = LatticeGeometry(2, 2, 12.5, 11.0)
    fast = run_spiral(build_spiral(g, T=0.5), 50, 16)
    slow = run_spiral(build_spiral(g, T=3.83), 200, 16)
    assert 0 <= slow.energy_ratio < fast.energy_ratio


def test_two_shots_warn_about_degenerate_resamples():
    from nlsm_dtheory.observables import bootstrap_coupling

    g = LatticeGeometry(2, 2, 12.5, 11.0)
    shots = np.array([[0, 0, 0, 0], [0, 0, 0, 1]])
    with pytest.warns(RuntimeWarning, match="degenerate"):
        res = bootstrap_coupling(shots, g, 200, seed=3)
    assert 0 < res.n_degenerate < 200


def test_sampled_spiral_summary():
    g = LatticeGeometry(2, 2, 12.5, 11.0)
    res = run_spiral(add_measurement_quench(build_spiral(g)), 100, 16, shots=500, seed=3, n_resamples=200)
    assert res.shots.shape == (500, 4)
    assert set(np.unique(res.shots)) <= {0, 1}
    summary = res.summary()
    assert summary["gbar"] == res.coupling.gbar and summary["h_P"] == 0.44
    assert res.coupling.stat_error > 0
