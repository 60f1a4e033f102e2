"""Reference implementations that share no code with the package under test."""

import math

import numpy as np
from scipy.spatial.distance import pdist

# 1/(4 pi eps0) in kJ mol^-1 nm e^-2 from CODATA 2018 constants
ELEMENTARY_CHARGE = 1.602176634e-19
VACUUM_PERMITTIVITY = 8.8541878128e-12
AVOGADRO = 6.02214076e23
COULOMB = AVOGADRO * ELEMENTARY_CHARGE ** 2 / (4 * math.pi * VACUUM_PERMITTIVITY) * 1e9 / 1e3


def lj_coulomb(r, sigma, eps, qq):
    sr6 = (sigma / r) ** 6
    return 4 * eps * (sr6 * sr6 - sr6) + qq / r


def total_energy(pos, sigmas, epsilons, charges, cutoff=1.0, coulomb=COULOMB):
    """Truncated-shifted LJ + Coulomb energy over all pairs (non-periodic)."""
    n = len(pos)
    i, j = np.triu_indices(n, k=1)
    r = pdist(pos)
    sig = 0.5 * (sigmas[i] + sigmas[j])
    eps = np.sqrt(epsilons[i] * epsilons[j])
    qq = coulomb * charges[i] * charges[j]
    inside = r < cutoff
    e = lj_coulomb(r[inside], sig[inside], eps[inside], qq[inside])
    e -= lj_coulomb(cutoff, sig[inside], eps[inside], qq[inside])
    return float(e.sum())


def fd_forces(energy, pos, h=1e-6):
    """Central finite-difference forces ``-dE/dx`` of ``energy(pos)``."""
    pos = np.array(pos, dtype=float)
    out = np.zeros_like(pos)
    for a in range(pos.shape[0]):
        for k in range(3):
            save = pos[a, k]
            pos[a, k] = save + h
            ep = energy(pos)
            pos[a, k] = save - h
            em = energy(pos)
            pos[a, k] = save
            out[a, k] = -(ep - em) / (2 * h)
    return out


def max_relative_error(analytic, reference, floor=1.0):
    """Largest per-atom ``|F - F_ref| / max(|F_ref|, floor)``."""
    diff = np.linalg.norm(np.asarray(analytic) - reference, axis=1)
    scale = np.maximum(np.linalg.norm(reference, axis=1), floor)
    return float(np.max(diff / scale))


def rk4_pair_energy(r0, sigma, eps, mass, v0, dt, n_steps, cutoff=1.0):
    """Integrate a 1-D LJ dimer (relative coordinate) with classic RK4.

    Returns total energy samples; the shifted LJ is used so the energy
    matches the package's convention.
    """
    mu = mass / 2.0
    shift = 4 * eps * ((sigma / cutoff) ** 12 - (sigma / cutoff) ** 6)

    def potential(r):
        return 4 * eps * ((sigma / r) ** 12 - (sigma / r) ** 6) - shift

    def accel(r):
        f = 24 * eps * (2 * (sigma / r) ** 12 - (sigma / r) ** 6) / r
        return f / mu

    r, v = r0, v0
    energies = [0.5 * mu * v * v + potential(r)]
    for _ in range(n_steps):
        k1r, k1v = v, accel(r)
        k2r, k2v = v + 0.5 * dt * k1v, accel(r + 0.5 * dt * k1r)
        k3r, k3v = v + 0.5 * dt * k2v, accel(r + 0.5 * dt * k2r)
        k4r, k4v = v + dt * k3v, accel(r + dt * k3r)
        r += dt / 6 * (k1r + 2 * k2r + 2 * k3r + k4r)
        v += dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        energies.append(0.5 * mu * v * v + potential(r))
    return energies


def amdahl_time(t1, f, p):
    return t1 * (f + (1 - f) / p)
