import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import deskmd.mdsim as mdsim
from deskmd.core import K_B, assign_parameters, make_system
from deskmd.mdsim import (
    EMSettings,
    IntegrationError,
    SimState,
    Stage,
    Status,
    StuckMinimizationError,
    ThermoSettings,
    UnsupportedFeatureError,
    apply_thermostat,
    degrees_of_freedom,
    instantaneous_temperature,
    leapfrog_step,
    maxwell_boltzmann,
    remove_com_motion,
    run_stage,
    steepest_descent_minimize,
    trajectory_csv,
)
from deskmd.potential import EnergyForces, PotentialParams, Restraint, max_force_norm, system_energy_forces
from deskmd.systems import random_gas

import oracles

AR_SIGMA, AR_EPS, AR_MASS = 0.3405, 0.996, 39.948
R_MIN = 2 ** (1 / 6) * AR_SIGMA
NO_SHIFT = PotentialParams(shift_at_cutoff=False)


def free_state(v, m=1.0, n=1):
    return SimState(np.zeros((n, 3)), np.tile(v, (n, 1)), np.full(n, m))


# -- energy minimization -------------------------------------------------------

def test_em_relaxes_severe_clash(argon_pair):
    system, report = steepest_descent_minimize(argon_pair(0.5 * AR_SIGMA), NO_SHIFT, EMSettings(fmax_tol=1.0))
    r = np.linalg.norm(system.positions[1] - system.positions[0])
    assert report.status is Status.CONVERGED
    assert report.final_energy <= -0.99 * AR_EPS
    assert abs(r - R_MIN) / R_MIN < 0.01


def test_em_default_tolerance_converges_on_clash(argon_pair):
    _, report = steepest_descent_minimize(argon_pair(0.5 * AR_SIGMA), NO_SHIFT)
    assert report.status is Status.CONVERGED
    assert report.final_fmax < 1000.0


def test_em_already_converged(argon_pair):
    _, report = steepest_descent_minimize(argon_pair(0.45), PotentialParams())
    assert report.final_fmax < 1000.0
    assert report.status is Status.CONVERGED
    assert report.accepted_steps == 0 and report.steps_taken == 0


def test_em_unreachable_tolerance_hits_step_limit(argon_pair):
    _, report = steepest_descent_minimize(argon_pair(0.40), PotentialParams(), EMSettings(fmax_tol=0.0))
    assert report.status is Status.MAX_STEPS
    assert report.steps_taken == 50000


def test_em_energies_strictly_decrease():
    _, report = steepest_descent_minimize(random_gas(40, 2.5, seed=3), PotentialParams(periodic=True),
                                          EMSettings(fmax_tol=50.0, max_steps=2000))
    trace = report.energy_trace
    assert len(trace) == report.accepted_steps + 1
    assert all(b < a for a, b in zip(trace, trace[1:]))
    assert (report.status is Status.CONVERGED) == (report.final_fmax < 50.0)


def test_em_stuck_raises(monkeypatch, argon_pair):
    class Flat(mdsim.ForceField):
        def evaluate(self, positions, cfg=None):
            # constant energy with a nonzero force: no step can ever improve it
            return EnergyForces(1.0, np.ones((self.n, 3)) * 5000.0)

    monkeypatch.setattr(mdsim, "ForceField", Flat)
    with pytest.raises(StuckMinimizationError):
        steepest_descent_minimize(argon_pair(0.4), PotentialParams())


def test_em_settings_validation():
    with pytest.raises(ValueError):
        EMSettings(max_steps=0)
    with pytest.raises(ValueError):
        EMSettings(initial_step=0.0)


def test_em_with_restraint_pulls_to_center():
    system = assign_parameters(make_system(["Ar"], [[0.3, 0, 0]]))
    out, report = steepest_descent_minimize(system, PotentialParams(),
                                            EMSettings(fmax_tol=1e-3),
                                            restraint=Restraint((0, 0, 0), 100.0, (0,)))
    assert report.status is Status.CONVERGED
    assert np.linalg.norm(out.positions[0]) < 1e-4


# -- integrator ------------------------------------------------------------------

def test_leapfrog_free_flight():
    out = leapfrog_step(free_state((1.0, 0, 0)), np.zeros((1, 3)), 0.002)
    assert out.positions[0].tolist() == [0.002, 0, 0]
    assert out.velocities[0].tolist() == [1.0, 0, 0]
    assert out.time == 0.002


def test_leapfrog_identity_at_rest():
    out = leapfrog_step(free_state((0, 0, 0)), np.zeros((1, 3)), 0.002)
    assert not out.positions.any() and not out.velocities.any()
    assert out.time == 0.002


def test_leapfrog_nan_force_names_step():
    state = free_state((0, 0, 0))
    state.step = 17
    with pytest.raises(IntegrationError, match="17"):
        leapfrog_step(state, np.array([[np.nan, 0, 0]]), 0.002)


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(1e-4, 0.01))
def test_leapfrog_reversible_free_particle(v, dt):
    state = SimState(np.array([[0.3, -0.2, 1.1]]), np.array([v]), np.array([12.0]))
    fwd = leapfrog_step(state, np.zeros((1, 3)), dt)
    back = leapfrog_step(fwd, np.zeros((1, 3)), -dt)
    assert np.abs(back.positions - state.positions).max() < 1e-12


def test_periodic_positions_are_wrapped():
    state = SimState(np.array([[2.1, 0, 0]]), np.array([[100.0, 0, 0]]), np.array([1.0]), box_length=2.2)
    out = leapfrog_step(state, np.zeros((1, 3)), 0.002)
    assert 0 <= out.positions[0, 0] < 2.2
    assert out.positions[0, 0] == pytest.approx(0.1)


def test_leapfrog_matches_fine_reference(argon_pair):
    r0 = 0.40
    system = argon_pair(r0)
    state = SimState.from_system(system)
    thermo = ThermoSettings(n_steps=10000, remove_com_interval=0)
    _, _, rows = run_stage(system, state, Stage.MD, thermo, PotentialParams(), False, stride=1)
    total = np.array([r.epot_kjmol + r.ekin_kjmol for r in rows])
    ref = oracles.rk4_pair_energy(r0, AR_SIGMA, AR_EPS, AR_MASS, 0.0, 1e-4, 200000)
    e_ref = float(np.mean(ref))
    assert np.ptp(ref) / abs(e_ref) < 1e-9
    assert np.max(np.abs(total - e_ref)) / abs(e_ref) < 1e-3


# -- temperature, thermostat, COM -------------------------------------------------

def test_temperature_zero_at_rest():
    assert instantaneous_temperature(free_state((0, 0, 0)), 3) == 0.0


def test_temperature_inverts_definition():
    m = 39.948
    speed = math.sqrt(3 * K_B * 300.0 / m)
    state = free_state((speed, 0, 0), m=m)
    assert instantaneous_temperature(state, 3) == pytest.approx(300.0, rel=1e-12)


def test_temperature_quadratic_in_speed():
    state = SimState(np.zeros((4, 3)), np.random.default_rng(0).normal(size=(4, 3)), np.full(4, 12.0))
    t1 = instantaneous_temperature(state, 9)
    state.velocities = state.velocities * 2
    assert instantaneous_temperature(state, 9) == pytest.approx(4 * t1, rel=1e-12)


def test_temperature_needs_degrees_of_freedom():
    with pytest.raises(ValueError):
        instantaneous_temperature(free_state((1, 0, 0)), 0)


def test_degrees_of_freedom():
    assert degrees_of_freedom(64, True) == 189
    assert degrees_of_freedom(64, False) == 192


def state_at(temp, n=10, m=39.948):
    v = maxwell_boltzmann(np.full(n, m), temp, seed=1, remove_com=False)
    return SimState(np.zeros((n, 3)), v, np.full(n, m))


def test_thermostat_fixed_point_is_bitwise():
    state = state_at(300.0)
    assert instantaneous_temperature(state, 30) == pytest.approx(300.0, rel=1e-12)
    t_inst = instantaneous_temperature(state, 30)
    out = apply_thermostat(state, t_inst, 0.1, 0.002, 30)
    assert np.array_equal(out.velocities, state.velocities)


def test_thermostat_scale_factor():
    state = state_at(600.0)
    out = apply_thermostat(state, 300.0, 0.1, 0.002, 30)
    lam = out.velocities / state.velocities
    assert np.allclose(lam, math.sqrt(0.99), rtol=1e-12)
    assert math.sqrt(0.99) == pytest.approx(0.99499, abs=1e-5)


def test_thermostat_clamps_lambda():
    state = state_at(1e-3)
    out = apply_thermostat(state, 300.0, 0.002, 0.002, 30)
    assert np.allclose(out.velocities / state.velocities, 1.25)
    state = state_at(1e6)
    out = apply_thermostat(state, 300.0, 0.002, 0.002, 30)
    assert np.allclose(out.velocities / state.velocities, 0.8)


def test_thermostat_leaves_zero_velocities():
    state = free_state((0, 0, 0), n=3)
    out = apply_thermostat(state, 300.0, 0.1, 0.002, 9)
    assert not out.velocities.any()


def test_com_drift_removed():
    out = remove_com_motion(free_state((1.0, 0, 0), n=5))
    assert np.abs(out.velocities).max() == 0.0


def test_com_already_zero_is_unchanged():
    v = maxwell_boltzmann(np.full(8, 12.0), 300.0, seed=4)
    state = SimState(np.zeros((8, 3)), v, np.full(8, 12.0))
    assert np.abs(remove_com_motion(state).velocities - v).max() < 1e-12


def test_com_symmetric_pair_unchanged():
    state = SimState(np.zeros((2, 3)), np.array([[1.0, 0, 0], [-1.0, 0, 0]]), np.array([5.0, 5.0]))
    assert np.array_equal(remove_com_motion(state).velocities, state.velocities)


@settings(max_examples=50)
@given(st.integers(1, 40), st.integers(0, 10 ** 6))
def test_com_removal_zeroes_momentum(n, seed):
    rng = np.random.default_rng(seed)
    state = SimState(np.zeros((n, 3)), rng.normal(size=(n, 3)) * 3, rng.uniform(1, 200, n))
    out = remove_com_motion(state)
    assert np.abs((out.masses[:, None] * out.velocities).sum(axis=0)).max() < 1e-10


def test_maxwell_boltzmann_is_seeded_and_exact():
    masses = np.full(64, 39.948)
    a = maxwell_boltzmann(masses, 300.0, seed=42)
    b = maxwell_boltzmann(masses, 300.0, seed=42)
    assert np.array_equal(a, b)
    state = SimState(np.zeros((64, 3)), a, masses)
    assert instantaneous_temperature(state, 189) == pytest.approx(300.0, rel=1e-12)


# -- stage driver --------------------------------------------------------------------

def test_zero_steps_leaves_state(fluid64):
    state = SimState.from_system(fluid64, maxwell_boltzmann(fluid64.masses, 300.0, 42))
    out, report, rows = run_stage(fluid64, state, "NVT", ThermoSettings(n_steps=0),
                                  PotentialParams(periodic=True))
    assert out is state
    assert report.status is Status.COMPLETED and report.steps_taken == 0
    assert rows == []


def test_pressure_coupling_is_refused(fluid64):
    state = SimState.from_system(fluid64)
    with pytest.raises(UnsupportedFeatureError):
        run_stage(fluid64, state, "MD", ThermoSettings(n_steps=10), PotentialParams(periodic=True),
                  pressure_coupling="parrinello-rahman")


def test_thermo_settings_validation():
    with pytest.raises(ValueError):
        ThermoSettings(tau=0.001, dt=0.002)
    with pytest.raises(ValueError):
        ThermoSettings(t_ref=0)


def test_nve_conserves_momentum(fluid64):
    pot = PotentialParams(periodic=True)
    v = maxwell_boltzmann(fluid64.masses, 300.0, 7)
    state = SimState.from_system(fluid64, v)
    out, _, _ = run_stage(fluid64, state, "MD", ThermoSettings(n_steps=300, remove_com_interval=0), pot, False)
    assert np.linalg.norm((out.masses[:, None] * out.velocities).sum(axis=0)) < 1e-8


def test_run_is_deterministic(fluid64):
    pot = PotentialParams(periodic=True)
    thermo = ThermoSettings(n_steps=200, remove_com_interval=50)
    runs = []
    for _ in range(2):
        state = SimState.from_system(fluid64, maxwell_boltzmann(fluid64.masses, 300.0, 11))
        out, report, rows = run_stage(fluid64, state, "NVT", thermo, pot, stride=10)
        runs.append((out.positions.tobytes(), out.velocities.tobytes(), trajectory_csv(rows)))
    assert runs[0] == runs[1]


def test_rows_follow_stride(fluid64):
    state = SimState.from_system(fluid64, maxwell_boltzmann(fluid64.masses, 300.0, 3))
    _, report, rows = run_stage(fluid64, state, "NVT", ThermoSettings(n_steps=50), PotentialParams(periodic=True),
                                stride=10)
    assert [r.step for r in rows] == [0, 10, 20, 30, 40]
    assert rows[1].time_ps == pytest.approx(0.02)
    assert report.mean_temperature > 0
    text = trajectory_csv(rows)
    assert text.splitlines()[0] == "step,time_ps,epot_kjmol,ekin_kjmol,temperature_k"


def test_first_row_energy_matches_force_field(fluid64):
    pot = PotentialParams(periodic=True)
    state = SimState.from_system(fluid64)
    _, _, rows = run_stage(fluid64, state, "MD", ThermoSettings(n_steps=1), pot, False)
    assert rows[0].epot_kjmol == system_energy_forces(fluid64, pot).potential_energy
    assert max_force_norm(system_energy_forces(fluid64, pot)) > 0
