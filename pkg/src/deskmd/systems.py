"""Small reproducible test systems: argon fluids and a synthetic docking pair."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .core import STREAM_SYSTEMS, MolecularSystem, assign_parameters, make_system, rng_for

# fluid sizes that the default 1.0 nm cutoff still fits (box > 2 * cutoff)
DEFAULT_FLUID_BOX = 2.2


def lattice_fluid(n_atoms: int = 64, box_length: float = DEFAULT_FLUID_BOX, *, seed: int = 0,
                  jitter: float = 0.02, element: str = "Ar") -> MolecularSystem:
    """Argon on a simple cubic lattice filling a periodic box, lightly jittered."""
    per_side = math.ceil(round(n_atoms ** (1 / 3), 9))
    spacing = box_length / per_side
    grid = (np.indices((per_side,) * 3).reshape(3, -1).T[:n_atoms] + 0.5) * spacing
    rng = rng_for(seed, STREAM_SYSTEMS, 1, n_atoms)
    grid = grid + rng.uniform(-jitter, jitter, grid.shape)
    system = make_system([element] * n_atoms, grid % box_length, box_length=box_length,
                         label=f"{element}{n_atoms}-fluid")
    return assign_parameters(system)


def random_gas(n_atoms: int = 100, box_length: float = 3.0, *, seed: int = 0,
               element: str = "Ar") -> MolecularSystem:
    """Uniformly scattered atoms in a periodic box; close contacts are expected."""
    rng = rng_for(seed, STREAM_SYSTEMS, 2, n_atoms)
    pos = rng.uniform(0.0, box_length, (n_atoms, 3))
    system = make_system([element] * n_atoms, pos, box_length=box_length, label=f"{element}{n_atoms}-gas")
    return assign_parameters(system)


def _spaced_points(rng, n, sampler, min_sep, max_tries=200000):
    pts: list[np.ndarray] = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could only place {len(pts)} of {n} points")
        p = sampler()
        if pts and np.min(np.linalg.norm(np.asarray(pts) - p, axis=1)) < min_sep:
            continue
        pts.append(p)
    return np.asarray(pts)


def synthetic_receptor(n_atoms: int = 300, *, seed: int = 0, inner_radius: float = 1.2,
                       outer_radius: float = 2.6, charge_scale: float = 0.3) -> MolecularSystem:
    """A shell of C/N/O atoms around an empty spherical pocket at the origin."""
    rng = rng_for(seed, STREAM_SYSTEMS, 3, n_atoms)

    def sample():
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        r = (rng.uniform(inner_radius ** 3, outer_radius ** 3)) ** (1 / 3)
        return direction * r

    pos = _spaced_points(rng, n_atoms, sample, min_sep=0.12)
    elements = list(rng.choice(["C", "C", "C", "N", "O"], size=n_atoms))
    system = assign_parameters(make_system(elements, pos, label="receptor"))
    return _with_charges(system, rng.uniform(-charge_scale, charge_scale, n_atoms))


def synthetic_ligand(n_atoms: int = 12, *, seed: int = 1, radius: float = 0.45,
                     charge_scale: float = 0.3) -> MolecularSystem:
    """A compact blob of C/N/O atoms centred on the origin."""
    rng = rng_for(seed, STREAM_SYSTEMS, 4, n_atoms)

    def sample():
        while True:
            p = rng.uniform(-radius, radius, 3)
            if p @ p <= radius * radius:
                return p

    pos = _spaced_points(rng, n_atoms, sample, min_sep=0.13)
    pos -= pos.mean(axis=0)
    elements = list(rng.choice(["C", "C", "N", "O"], size=n_atoms))
    system = assign_parameters(make_system(elements, pos, label="ligand"))
    return _with_charges(system, rng.uniform(-charge_scale, charge_scale, n_atoms))


def _with_charges(system: MolecularSystem, charges) -> MolecularSystem:
    atoms = tuple(replace(a, charge=float(q)) for a, q in zip(system.atoms, charges))
    return replace(system, atoms=atoms)


def pdb_text(system: MolecularSystem, resname: str = "LIG") -> str:
    """Minimal fixed-column PDB writer (Angstrom), used for demo inputs and tests."""
    lines = []
    if system.box_length is not None:
        a = system.box_length * 10.0
        lines.append(f"CRYST1{a:9.3f}{a:9.3f}{a:9.3f}{90.0:7.2f}{90.0:7.2f}{90.0:7.2f} P 1           1")
    for atom in system.atoms:
        x, y, z = (10.0 * c for c in atom.position)
        name = atom.name if len(atom.name) >= 4 else f" {atom.name:<3}"
        lines.append(
            f"HETATM{atom.id + 1:5d} {name:4s} {resname:3s} A   1    "
            f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00          {atom.element:>2s}"
        )
    lines.append("END")
    return "\n".join(lines) + "\n"
