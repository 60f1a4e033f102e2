"""Lennard-Jones + Coulomb pair potential with a truncated-shifted cutoff.

Pair sums run over row blocks of the upper triangle. Each block yields an
:class:`~deskmd.workers.Accumulator`; blocks have a fixed size that does
not depend on the worker count, and they are folded in block order, so
energies and forces are bit-identical however many workers evaluate them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import COULOMB_F, MolecularSystem, min_image_displacement
from .workers import Accumulator, TaskError, WorkerPoolConfig, parallel_reduce, plan_chunks

ROW_BLOCK = 32


class OverlappingAtomsError(ValueError):
    def __init__(self, i: int | None = None, j: int | None = None):
        self.pair = (i, j)
        where = f" (atoms {i} and {j})" if i is not None else ""
        super().__init__(f"overlapping atoms at zero separation{where}")

    def __reduce__(self):
        return OverlappingAtomsError, self.pair


@dataclass(frozen=True)
class PotentialParams:
    cutoff: float = 1.0
    periodic: bool = False
    shift_at_cutoff: bool = True
    electrostatics: bool = True
    combining: str = "lorentz-berthelot"

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError(f"cutoff must be positive, got {self.cutoff}")
        if self.combining != "lorentz-berthelot":
            raise ValueError(f"unsupported combining rule {self.combining!r}")

    def check_box(self, box_length: float | None) -> None:
        if self.periodic != (box_length is not None):
            raise ValueError("periodic flag does not match the system box")
        if self.periodic and not self.cutoff < box_length / 2:
            raise ValueError(f"cutoff {self.cutoff} nm must be < half the box ({box_length} nm)")


@dataclass(frozen=True)
class PairParams:
    """Per-atom interaction parameters: sigma (nm), epsilon (kJ/mol), charge (e)."""

    sigma: float = 0.0
    epsilon: float = 0.0
    charge: float = 0.0


@dataclass(frozen=True)
class Restraint:
    """Harmonic restraint ``k/2 |x - center|^2`` on the selected atoms."""

    center: tuple[float, float, float]
    spring_k: float
    atom_selection: tuple[int, ...]

    def __post_init__(self):
        if self.spring_k < 0:
            raise ValueError("spring_k must be non-negative")
        object.__setattr__(self, "atom_selection", tuple(int(i) for i in self.atom_selection))


@dataclass
class EnergyForces:
    potential_energy: float
    forces: np.ndarray = field(repr=False)


def combine(sig_i, sig_j, eps_i, eps_j):
    """Lorentz-Berthelot mixing."""
    return 0.5 * (sig_i + sig_j), np.sqrt(eps_i * eps_j)


def pair_terms(r2, sig, eps, qq, electrostatics: bool = True):
    """Unshifted pair energy and ``-dV/dr / r`` for squared distance ``r2``.

    ``qq`` is the product ``f q_i q_j`` including the Coulomb factor.
    Works on scalars or broadcastable arrays.
    """
    inv_r2 = 1.0 / r2
    s6 = (sig * sig * inv_r2) ** 3
    s12 = s6 * s6
    energy = 4.0 * eps * (s12 - s6)
    f_over_r = 24.0 * eps * (2.0 * s12 - s6) * inv_r2
    if electrostatics:
        coul = qq * np.sqrt(inv_r2)
        energy = energy + coul
        f_over_r = f_over_r + coul * inv_r2
    return energy, f_over_r


def cutoff_shift(sig, eps, qq, pot: PotentialParams, electrostatics: bool):
    if not pot.shift_at_cutoff or math.isinf(pot.cutoff):
        return np.zeros(np.broadcast(sig, eps, qq).shape) if np.ndim(sig) else 0.0
    shift, _ = pair_terms(pot.cutoff ** 2, sig, eps, qq, electrostatics)
    return shift


def pair_energy_force(r_vec, params_i: PairParams, params_j: PairParams,
                      pot: PotentialParams) -> tuple[float, np.ndarray]:
    """Energy of one pair and the force it exerts on ``j``.

    ``r_vec`` is the displacement from ``i`` to ``j``.
    """
    r_vec = np.asarray(r_vec, dtype=float)
    r2 = float(r_vec @ r_vec)
    if r2 == 0.0:
        raise OverlappingAtomsError()
    if r2 >= pot.cutoff ** 2:
        return 0.0, np.zeros(3)
    sig, eps = combine(params_i.sigma, params_j.sigma, params_i.epsilon, params_j.epsilon)
    qq = COULOMB_F * params_i.charge * params_j.charge
    energy, f_over_r = pair_terms(r2, sig, eps, qq, pot.electrostatics)
    energy -= cutoff_shift(sig, eps, qq, pot, pot.electrostatics)
    return float(energy), f_over_r * r_vec


class ForceField:
    """Precomputed pair tables for one system; evaluate at any positions."""

    def __init__(self, system: MolecularSystem, pot: PotentialParams,
                 restraint: Restraint | None = None):
        if len(system) < 1:
            raise ValueError("system has no atoms")
        pot.check_box(system.box_length)
        self.pot = pot
        self.box = system.box_length if pot.periodic else None
        self.n = len(system)
        self.restraint = restraint
        sig, eps = combine(system.sigmas[:, None], system.sigmas[None, :],
                           system.epsilons[:, None], system.epsilons[None, :])
        self.sig = sig
        self.eps = eps
        self.qq = COULOMB_F * system.charges[:, None] * system.charges[None, :]
        self.shift = cutoff_shift(sig, eps, self.qq, pot, pot.electrostatics)
        self.cut2 = pot.cutoff ** 2
        self.n_blocks = -(-self.n // ROW_BLOCK)
        self._block_tables = [self._tables(b) for b in range(self.n_blocks)]
        if restraint is not None and any(not 0 <= i < self.n for i in restraint.atom_selection):
            raise ValueError("restraint selects atoms outside the system")

    def _tables(self, b: int):
        lo = b * ROW_BLOCK
        hi = min(lo + ROW_BLOCK, self.n)
        sl = (slice(lo, hi), slice(lo + 1, self.n))
        # column c holds atom lo+1+c; keep j > i
        upper = np.triu(np.ones((hi - lo, self.n - lo - 1), dtype=bool))
        return lo, hi, upper, self.sig[sl], self.eps[sl], self.qq[sl], self.shift[sl]

    def block(self, positions: np.ndarray, b: int) -> Accumulator:
        """Pairs (i, j) with i in row block ``b`` and j > i."""
        n = self.n
        lo, hi, upper, sig, eps, qq, shift = self._block_tables[b]
        partial = np.zeros((n, 3))
        if lo + 1 >= n:
            return Accumulator(0.0, partial)
        d = min_image_displacement(positions[lo:hi, None, :], positions[None, lo + 1:, :], self.box)
        r2 = np.einsum("ijk,ijk->ij", d, d)
        if not np.all(r2[upper]):
            rows, cols = np.nonzero(upper & (r2 == 0.0))
            raise OverlappingAtomsError(lo + int(rows[0]), lo + 1 + int(cols[0]))
        mask = upper & (r2 < self.cut2)
        r2s = np.where(mask, r2, 1.0)
        energy, f_over_r = pair_terms(r2s, sig, eps, qq, self.pot.electrostatics)
        energy = np.where(mask, energy - shift, 0.0)
        f_over_r = np.where(mask, f_over_r, 0.0)
        fij = f_over_r[:, :, None] * d  # force on j from i
        partial[lo:hi] -= fij.sum(axis=1)
        partial[lo + 1:] += fij.sum(axis=0)
        return Accumulator(float(energy.sum()), partial)

    def restraint_terms(self, positions: np.ndarray) -> Accumulator:
        forces = np.zeros((self.n, 3))
        r = self.restraint
        if r is None or not r.atom_selection:
            return Accumulator(0.0, forces)
        sel = np.asarray(r.atom_selection)
        delta = positions[sel] - np.asarray(r.center, dtype=float)
        energy = 0.5 * r.spring_k * float(np.einsum("ij,ij->", delta, delta))
        np.add.at(forces, sel, -r.spring_k * delta)
        return Accumulator(energy, forces)

    def evaluate(self, positions, cfg: WorkerPoolConfig | None = None) -> EnergyForces:
        positions = np.asarray(positions, dtype=float)
        cfg = cfg or WorkerPoolConfig(backend="thread")
        plan = plan_chunks(self.n_blocks, cfg.workers)
        try:
            total = parallel_reduce(plan, lambda b: self.block(positions, b), cfg, n_atoms=self.n)
        except TaskError as exc:
            if isinstance(exc.cause, OverlappingAtomsError):
                raise exc.cause from None
            raise
        rest = self.restraint_terms(positions)
        return EnergyForces(total.energy + rest.energy, total.forces + rest.forces)


def system_energy_forces(system: MolecularSystem, pot: PotentialParams,
                         restraint: Restraint | None = None,
                         cfg: WorkerPoolConfig | None = None) -> EnergyForces:
    """Total potential energy and analytic forces of ``system``.

    Pair terms use the minimum image when ``pot.periodic``; the optional
    restraint adds ``k/2 |x - center|^2`` per selected atom.
    """
    return ForceField(system, pot, restraint).evaluate(system.positions, cfg)


def max_force_norm(ef: EnergyForces | np.ndarray) -> float:
    forces = ef.forces if isinstance(ef, EnergyForces) else np.asarray(ef, dtype=float)
    if len(forces) == 0:
        raise ValueError("no forces")
    return float(np.sqrt(np.einsum("ij,ij->i", forces, forces)).max())


def pair_params(system: MolecularSystem) -> Sequence[PairParams]:
    return [PairParams(a.lj_sigma, a.lj_epsilon, a.charge) for a in system.atoms]
