"""Energy minimization, NVT equilibration and leapfrog production MD."""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .core import K_B, STREAM_VELOCITIES, MolecularSystem, rng_for, wrap_positions
from .potential import (
    ForceField,
    OverlappingAtomsError,
    PotentialParams,
    Restraint,
    max_force_norm,
)
from .workers import WorkerPoolConfig

log = logging.getLogger(__name__)

MIN_EM_STEP = 1e-12  # nm
LAMBDA_MIN, LAMBDA_MAX = 0.8, 1.25


class Stage(str, enum.Enum):
    EM = "EM"
    NVT = "NVT"
    MD = "MD"


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_STEPS = "MaxSteps"
    COMPLETED = "Completed"


class StuckMinimizationError(RuntimeError):
    pass


class IntegrationError(FloatingPointError):
    def __init__(self, step: int, what: str = "non-finite forces"):
        self.step = step
        super().__init__(f"{what} at step {step}")


class UnsupportedFeatureError(ValueError):
    pass


@dataclass
class SimState:
    """Positions at ``time``; velocities lag half a step behind (leapfrog)."""

    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    time: float = 0.0
    box_length: float | None = None
    step: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        n = len(self.masses)
        if self.positions.shape != (n, 3) or self.velocities.shape != (n, 3):
            raise ValueError("positions, velocities and masses must have equal length")
        if np.any(self.masses <= 0):
            raise ValueError("masses must be positive")

    @classmethod
    def from_system(cls, system: MolecularSystem, velocities=None) -> "SimState":
        n = len(system)
        v = np.zeros((n, 3)) if velocities is None else velocities
        return cls(np.array(system.positions), v, np.array(system.masses), 0.0, system.box_length)


@dataclass(frozen=True)
class EMSettings:
    fmax_tol: float = 1000.0
    max_steps: int = 50000
    initial_step: float = 0.01
    grow_factor: float = 1.2
    shrink_factor: float = 0.2

    def __post_init__(self):
        if self.fmax_tol < 0 or self.max_steps < 1 or not self.initial_step > 0:
            raise ValueError("invalid EM settings")


@dataclass(frozen=True)
class ThermoSettings:
    t_ref: float = 300.0
    tau: float = 0.1
    dt: float = 0.002
    n_steps: int = 5000
    remove_com_interval: int = 100

    def __post_init__(self):
        if not self.t_ref > 0:
            raise ValueError("t_ref must be positive")
        if not (self.dt > 0 and self.tau >= self.dt):
            raise ValueError("need tau >= dt > 0")
        if self.n_steps < 0 or self.remove_com_interval < 0:
            raise ValueError("step counts must be non-negative")


@dataclass
class StageReport:
    stage: Stage
    status: Status
    steps_taken: int
    final_energy: float
    final_fmax: float
    mean_temperature: float | None = None
    wall_seconds: float = 0.0
    accepted_steps: int = 0
    energy_trace: list[float] = field(default_factory=list, repr=False)


class TrajectoryRow(NamedTuple):
    step: int
    time_ps: float
    epot_kjmol: float
    ekin_kjmol: float
    temperature_k: float


TRAJECTORY_HEADER = TrajectoryRow._fields


# -- energy minimization ---------------------------------------------------

def steepest_descent_minimize(system: MolecularSystem, pot: PotentialParams,
                              em: EMSettings = EMSettings(), restraint: Restraint | None = None,
                              cfg: WorkerPoolConfig | None = None):
    """Adaptive-step steepest descent.

    Each iteration moves every atom by ``h * F_i / F_max``. A lower trial
    energy is accepted and grows ``h``; otherwise ``h`` shrinks and the
    step is retried. Iterations (accepted or not) count toward
    ``max_steps``. Once some step has been accepted, ``h`` is floored at
    1e-12 nm so the run ends on one of the two normal criteria.

    Returns the minimized system and a :class:`StageReport` whose
    ``energy_trace`` lists the initial and every accepted energy.
    """
    t0 = time.perf_counter()
    ff = ForceField(system, pot, restraint)
    x = np.array(system.positions)
    ef = ff.evaluate(x, cfg)
    fmax = max_force_norm(ef)
    energies = [ef.potential_energy]
    h = em.initial_step
    steps = accepted = 0
    while fmax >= em.fmax_tol and steps < em.max_steps:
        steps += 1
        trial = wrap_positions(x + (h / fmax) * ef.forces, ff.box)
        try:
            trial_ef = ff.evaluate(trial, cfg)
            better = trial_ef.potential_energy < ef.potential_energy
        except OverlappingAtomsError:
            better = False
        if better:
            x, ef = trial, trial_ef
            fmax = max_force_norm(ef)
            energies.append(ef.potential_energy)
            accepted += 1
            h *= em.grow_factor
        else:
            h *= em.shrink_factor
            if h < MIN_EM_STEP:
                if accepted == 0:
                    raise StuckMinimizationError(
                        f"step size fell below {MIN_EM_STEP} nm without an accepted step")
                h = MIN_EM_STEP
    status = Status.CONVERGED if fmax < em.fmax_tol else Status.MAX_STEPS
    report = StageReport(Stage.EM, status, steps, ef.potential_energy, fmax,
                         wall_seconds=time.perf_counter() - t0, accepted_steps=accepted,
                         energy_trace=energies)
    log.info("EM %s after %d steps (%d accepted): E=%.6g F_max=%.6g",
             status.value, steps, accepted, ef.potential_energy, fmax)
    return system.with_positions(x), report


# -- dynamics ----------------------------------------------------------------

def leapfrog_step(state: SimState, forces: np.ndarray, dt: float) -> SimState:
    """v(t+dt/2) = v(t-dt/2) + F/m dt;  x(t+dt) = x(t) + v(t+dt/2) dt."""
    forces = np.asarray(forces, dtype=float)
    if not np.all(np.isfinite(forces)):
        raise IntegrationError(state.step)
    v = state.velocities + forces * (dt / state.masses[:, None])
    x = wrap_positions(state.positions + v * dt, state.box_length)
    return SimState(x, v, state.masses, state.time + dt, state.box_length, state.step + 1)


def kinetic_energy(velocities: np.ndarray, masses: np.ndarray) -> float:
    return 0.5 * float(np.einsum("i,ij,ij->", masses, velocities, velocities))


def instantaneous_temperature(state: SimState, n_df: int) -> float:
    if n_df < 1:
        raise ValueError("need at least one degree of freedom")
    return 2.0 * kinetic_energy(state.velocities, state.masses) / (n_df * K_B)


def degrees_of_freedom(n_atoms: int, com_removed: bool) -> int:
    return max(3 * n_atoms - (3 if com_removed else 0), 1)


def rescale_factor(t_inst: float, t_ref: float, tau: float, dt: float) -> float:
    lam2 = 1.0 + (dt / tau) * (t_ref / t_inst - 1.0)
    lam = math.sqrt(lam2) if lam2 > 0 else 0.0
    return min(max(lam, LAMBDA_MIN), LAMBDA_MAX)


def apply_thermostat(state: SimState, t_ref: float, tau: float, dt: float, n_df: int) -> SimState:
    """Weak-coupling velocity rescale toward ``t_ref``; lambda clamped to [0.8, 1.25]."""
    t_inst = instantaneous_temperature(state, n_df)
    if t_inst == 0.0:
        return state
    lam = rescale_factor(t_inst, t_ref, tau, dt)
    if lam == 1.0:
        return state
    return replace(state, velocities=state.velocities * lam)


def remove_com_motion(state: SimState) -> SimState:
    m = state.masses[:, None]
    v_com = (m * state.velocities).sum(axis=0) / m.sum()
    return replace(state, velocities=state.velocities - v_com)


def maxwell_boltzmann(masses: np.ndarray, t_ref: float, seed: int, *, remove_com: bool = True) -> np.ndarray:
    """Seeded Maxwell-Boltzmann velocities scaled to exactly ``t_ref``."""
    masses = np.asarray(masses, dtype=float)
    rng = rng_for(seed, STREAM_VELOCITIES, len(masses))
    v = rng.standard_normal((len(masses), 3)) * np.sqrt(K_B * t_ref / masses)[:, None]
    if remove_com and len(masses) > 1:
        v -= (masses[:, None] * v).sum(axis=0) / masses.sum()
    n_df = degrees_of_freedom(len(masses), remove_com and len(masses) > 1)
    t_now = 2.0 * kinetic_energy(v, masses) / (n_df * K_B)
    if t_now > 0:
        v *= math.sqrt(t_ref / t_now)
    return v


def run_stage(system: MolecularSystem, state: SimState, stage: Stage | str,
              thermo: ThermoSettings, pot: PotentialParams, thermostat_on: bool = True, *,
              restraint: Restraint | None = None, cfg: WorkerPoolConfig | None = None,
              stride: int = 100, pressure_coupling: str | None = None):
    """Run ``thermo.n_steps`` leapfrog steps and summarize them.

    Kinetic energy at integer times is the mean of the two bracketing
    half-step values. Returns ``(state, report, rows)``; rows are
    :class:`TrajectoryRow` every ``stride`` steps.
    """
    stage = Stage(stage)
    if stage is Stage.EM:
        raise ValueError("use steepest_descent_minimize for EM")
    if pressure_coupling:
        raise UnsupportedFeatureError(
            f"pressure coupling ({pressure_coupling}) is not supported; runs are constant-volume")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    t0 = time.perf_counter()
    ff = ForceField(system, pot, restraint)
    n = len(system)
    n_df = degrees_of_freedom(n, thermo.remove_com_interval > 0)
    dt = thermo.dt
    ef = ff.evaluate(state.positions, cfg)
    rows: list[TrajectoryRow] = []
    temps_tail: list[float] = []
    half = thermo.n_steps // 2
    for s in range(thermo.n_steps):
        if thermostat_on:
            state = apply_thermostat(state, thermo.t_ref, thermo.tau, dt, n_df)
        ke_before = kinetic_energy(state.velocities, state.masses)
        t_now, step_now, epot = state.time, state.step, ef.potential_energy
        state = leapfrog_step(state, ef.forces, dt)
        ke = 0.5 * (ke_before + kinetic_energy(state.velocities, state.masses))
        temp = 2.0 * ke / (n_df * K_B)
        if not (math.isfinite(ke) and math.isfinite(epot)):
            raise IntegrationError(step_now, "non-finite energy")
        if s >= half:
            temps_tail.append(temp)
        if s % stride == 0:
            rows.append(TrajectoryRow(step_now, t_now, epot, ke, temp))
        if thermo.remove_com_interval and (s + 1) % thermo.remove_com_interval == 0:
            state = remove_com_motion(state)
        ef = ff.evaluate(state.positions, cfg)
    report = StageReport(
        stage, Status.COMPLETED, thermo.n_steps, ef.potential_energy, max_force_norm(ef),
        mean_temperature=float(np.mean(temps_tail)) if temps_tail else None,
        wall_seconds=time.perf_counter() - t0,
    )
    return state, report, rows


def trajectory_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_HEADER)
    for row in rows:
        writer.writerow([row.step, repr(row.time_ps), repr(row.epot_kjmol),
                         repr(row.ekin_kjmol), repr(row.temperature_k)])
    return buf.getvalue()
