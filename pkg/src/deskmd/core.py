"""Domain types, units, structure-file I/O and periodic geometry.

Internal units follow the usual MD-engine conventions: nm, ps, kJ/mol,
amu and elementary charges. XYZ files are read and written in nm; PDB
coordinates are in Angstrom and converted on input.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class UnitsConstants:
    k_b: float = 0.00831446262  # kJ mol^-1 K^-1
    coulomb_f: float = 138.935458  # kJ mol^-1 nm e^-2
    length: str = "nm"
    time: str = "ps"
    energy: str = "kJ/mol"
    mass: str = "amu"


UNITS = UnitsConstants()
K_B = UNITS.k_b
COULOMB_F = UNITS.coulomb_f
ANGSTROM_TO_NM = 0.1

ELEMENT_MASSES: Mapping[str, float] = MappingProxyType({
    "H": 1.008, "He": 4.0026, "C": 12.011, "N": 14.007, "O": 15.999,
    "F": 18.998, "Ne": 20.180, "Na": 22.990, "Mg": 24.305, "P": 30.974,
    "S": 32.06, "Cl": 35.45, "Ar": 39.948, "K": 39.098, "Ca": 40.078,
    "Fe": 55.845, "Zn": 65.38, "Se": 78.971, "Br": 79.904, "Kr": 83.798,
    "I": 126.904, "Xe": 131.293,
})


class StructureParseError(ValueError):
    """Raised for malformed structure or parameter files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Atom:
    id: int
    name: str
    element: str
    mass: float
    charge: float = 0.0
    lj_sigma: float = 0.0
    lj_epsilon: float = 0.0
    position: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"atom {self.id}: mass must be positive, got {self.mass}")
        if self.lj_sigma < 0 or self.lj_epsilon < 0:
            raise ValueError(f"atom {self.id}: LJ parameters must be non-negative")
        if not all(math.isfinite(c) for c in self.position):
            raise ValueError(f"atom {self.id}: non-finite position {self.position}")


@dataclass(frozen=True)
class MolecularSystem:
    """An ordered, immutable collection of atoms with an optional cubic box.

    ``box_length`` of ``None`` means the system is not periodic.
    ``skipped_records`` counts input records the reader ignored.
    """

    atoms: tuple[Atom, ...]
    box_length: float | None = None
    label: str = ""
    skipped_records: int = 0
    _arrays: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        for i, atom in enumerate(self.atoms):
            if atom.id != i:
                raise ValueError(f"atom ids must be 0..N-1 in order; position {i} has id {atom.id}")
        if self.box_length is not None and not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")

    def __len__(self) -> int:
        return len(self.atoms)

    def _column(self, key: str, getter) -> np.ndarray:
        arr = self._arrays.get(key)
        if arr is None:
            arr = np.array([getter(a) for a in self.atoms], dtype=float)
            if key == "positions":
                arr = arr.reshape(len(self.atoms), 3)
            arr.flags.writeable = False
            self._arrays[key] = arr
        return arr

    @property
    def positions(self) -> np.ndarray:
        return self._column("positions", lambda a: a.position)

    @property
    def masses(self) -> np.ndarray:
        return self._column("masses", lambda a: a.mass)

    @property
    def charges(self) -> np.ndarray:
        return self._column("charges", lambda a: a.charge)

    @property
    def sigmas(self) -> np.ndarray:
        return self._column("sigmas", lambda a: a.lj_sigma)

    @property
    def epsilons(self) -> np.ndarray:
        return self._column("epsilons", lambda a: a.lj_epsilon)

    @property
    def periodic(self) -> bool:
        return self.box_length is not None

    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def with_positions(self, positions) -> "MolecularSystem":
        positions = np.asarray(positions, dtype=float)
        if positions.shape != (len(self.atoms), 3):
            raise ValueError(f"expected positions of shape {(len(self.atoms), 3)}, got {positions.shape}")
        atoms = [replace(a, position=tuple(float(c) for c in p)) for a, p in zip(self.atoms, positions)]
        return replace(self, atoms=tuple(atoms))

    def with_box(self, box_length: float | None) -> "MolecularSystem":
        return replace(self, box_length=box_length)


def make_system(elements: Sequence[str], positions, *, box_length=None, label="",
                names: Sequence[str] | None = None) -> MolecularSystem:
    """Build a system with default (unassigned) parameters from raw columns."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(elements) != len(positions):
        raise ValueError("elements and positions differ in length")
    names = names or elements
    atoms = tuple(
        Atom(id=i, name=n, element=e, mass=element_mass(e), position=tuple(float(c) for c in p))
        for i, (n, e, p) in enumerate(zip(names, elements, positions))
    )
    return MolecularSystem(atoms=atoms, box_length=box_length, label=label)


def element_mass(element: str) -> float:
    try:
        return ELEMENT_MASSES[element]
    except KeyError:
        raise StructureParseError(f"unknown element {element!r}") from None


def _normalize_element(symbol: str) -> str | None:
    symbol = symbol.strip()
    if not symbol:
        return None
    symbol = symbol[0].upper() + symbol[1:].lower()
    return symbol if symbol in ELEMENT_MASSES else None


# -- structure files -------------------------------------------------------

def parse_structure(text: str, format: str, label: str = "") -> MolecularSystem:
    """Parse PDB-subset or XYZ text into a :class:`MolecularSystem`.

    The format must be given explicitly, ``"pdb"`` or ``"xyz"``.
    """
    if not text or not text.strip():
        raise StructureParseError("empty structure file")
    if format == "pdb":
        return _parse_pdb(text, label)
    if format == "xyz":
        return _parse_xyz(text, label)
    raise ValueError(f"unsupported structure format {format!r}")


def _pdb_float(line: str, start: int, stop: int, what: str, lineno: int) -> float:
    field_text = line[start:stop]
    try:
        value = float(field_text)
    except ValueError:
        raise StructureParseError(f"bad {what} field {field_text.strip()!r}", lineno) from None
    if not math.isfinite(value):
        raise StructureParseError(f"non-finite {what} field", lineno)
    return value


def _parse_pdb(text: str, label: str) -> MolecularSystem:
    atoms: list[Atom] = []
    skipped = 0
    box = None
    models_seen = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        record = line[:6].strip().upper()
        if record == "MODEL":
            models_seen += 1
            if models_seen > 1:
                break
            continue
        if record == "ENDMDL":
            break
        if record == "CRYST1":
            box = _cryst1_box(line, lineno)
            continue
        if record not in ("ATOM", "HETATM"):
            if line.strip() and record not in ("END", "TER"):
                skipped += 1
            continue
        if len(line) < 54:
            raise StructureParseError("truncated ATOM/HETATM record", lineno)
        name = line[12:16].strip()
        x = _pdb_float(line, 30, 38, "x", lineno)
        y = _pdb_float(line, 38, 46, "y", lineno)
        z = _pdb_float(line, 46, 54, "z", lineno)
        element = _normalize_element(line[76:78]) if len(line) >= 77 else None
        if element is None:
            first_alpha = next((c for c in name if c.isalpha()), "")
            element = _normalize_element(first_alpha)
        if element is None:
            raise StructureParseError(f"cannot determine element for atom {name!r}", lineno)
        atoms.append(Atom(
            id=len(atoms), name=name or element, element=element, mass=ELEMENT_MASSES[element],
            position=(x * ANGSTROM_TO_NM, y * ANGSTROM_TO_NM, z * ANGSTROM_TO_NM),
        ))
    if not atoms:
        raise StructureParseError("no ATOM/HETATM records found")
    if skipped:
        log.warning("skipped %d unsupported PDB records", skipped)
    return MolecularSystem(atoms=tuple(atoms), box_length=box, label=label, skipped_records=skipped)


def _cryst1_box(line: str, lineno: int) -> float | None:
    try:
        a, b, c = (float(line[i:i + 9]) for i in (6, 15, 24))
        angles = [float(line[i:i + 7]) for i in (33, 40, 47)]
    except ValueError:
        raise StructureParseError("malformed CRYST1 record", lineno) from None
    # only cubic boxes are representable; anything else is treated as non-periodic
    if a == b == c and all(abs(ang - 90.0) < 1e-6 for ang in angles) and a > 1.0:
        return a * ANGSTROM_TO_NM
    log.warning("line %d: non-cubic CRYST1 ignored", lineno)
    return None


def _parse_xyz(text: str, label: str) -> MolecularSystem:
    lines = text.splitlines()
    try:
        count = int(lines[0].split()[0])
    except (ValueError, IndexError):
        raise StructureParseError("first line must hold the atom count", 1) from None
    if count < 1:
        raise StructureParseError("atom count must be at least 1", 1)
    comment = lines[1] if len(lines) > 1 else ""
    box = None
    for token in comment.split():
        if token.startswith("box_nm="):
            try:
                box = float(token.split("=", 1)[1])
            except ValueError:
                raise StructureParseError("bad box_nm value", 2) from None
    if len(lines) < count + 2:
        raise StructureParseError(f"expected {count} atom lines, found {max(len(lines) - 2, 0)}")
    atoms = []
    for offset in range(count):
        lineno = offset + 3
        parts = lines[offset + 2].split()
        if len(parts) < 4:
            raise StructureParseError("expected 'element x y z'", lineno)
        element = _normalize_element(parts[0])
        if element is None:
            first_alpha = next((c for c in parts[0] if c.isalpha()), "")
            element = _normalize_element(first_alpha)
        if element is None:
            raise StructureParseError(f"unknown element {parts[0]!r}", lineno)
        try:
            pos = tuple(float(v) for v in parts[1:4])
        except ValueError:
            raise StructureParseError("non-numeric coordinate", lineno) from None
        if not all(math.isfinite(c) for c in pos):
            raise StructureParseError("non-finite coordinate", lineno)
        atoms.append(Atom(id=offset, name=parts[0], element=element,
                          mass=ELEMENT_MASSES[element], position=pos))
    return MolecularSystem(atoms=tuple(atoms), box_length=box, label=label or comment.strip())


def write_structure(system: MolecularSystem, format: str = "xyz") -> str:
    """Serialize to XYZ (nm). Coordinates use shortest round-trip repr."""
    if format != "xyz":
        raise ValueError(f"unsupported output format {format!r}")
    if len(system) == 0:
        raise ValueError("cannot write an empty system")
    comment = []
    if system.label:
        comment.append("_".join(system.label.split()))
    if system.box_length is not None:
        comment.append(f"box_nm={system.box_length!r}")
    out = [str(len(system)), " ".join(comment)]
    for atom in system.atoms:
        x, y, z = atom.position
        out.append(f"{atom.element} {x!r} {y!r} {z!r}")
    return "\n".join(out) + "\n"


def read_structure(path, format: str | None = None) -> MolecularSystem:
    """Read a structure file; ``format`` defaults to the file extension."""
    path = Path(path)
    if format is None:
        format = path.suffix.lstrip(".").lower()
    return parse_structure(path.read_text(), format, label=path.stem)


# -- parameters ------------------------------------------------------------

PARAM_FIELDS = ("mass", "charge", "sigma", "epsilon")

# sigma in nm, epsilon in kJ/mol; Ar from the classic liquid-argon fit,
# the rest are generic united-atom-like values for the docking scorer.
DEFAULT_PARAMETERS: Mapping[str, Mapping[str, float]] = MappingProxyType({
    "Ar": MappingProxyType({"sigma": 0.3405, "epsilon": 0.996, "charge": 0.0}),
    "C": MappingProxyType({"sigma": 0.340, "epsilon": 0.360, "charge": 0.0}),
    "N": MappingProxyType({"sigma": 0.325, "epsilon": 0.711, "charge": 0.0}),
    "O": MappingProxyType({"sigma": 0.296, "epsilon": 0.879, "charge": 0.0}),
    "S": MappingProxyType({"sigma": 0.356, "epsilon": 1.046, "charge": 0.0}),
    "H": MappingProxyType({"sigma": 0.107, "epsilon": 0.066, "charge": 0.0}),
})


def parse_parameters(text: str) -> dict[str, dict[str, float]]:
    """Parse a ``selector.field = value`` parameter file.

    A selector is an element symbol (``Ar``) or ``name:<atom name>``;
    atom-name entries take precedence over element entries. Blank lines
    and ``#`` comments are ignored.
    """
    table: dict[str, dict[str, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise StructureParseError("expected 'selector.field = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        selector, dot, fieldname = key.rpartition(".")
        if not dot or not selector or fieldname not in PARAM_FIELDS:
            raise StructureParseError(f"bad key {key!r}; field must be one of {PARAM_FIELDS}", lineno)
        try:
            number = float(value)
        except ValueError:
            raise StructureParseError(f"non-numeric value {value!r}", lineno) from None
        if fieldname in ("mass", "sigma", "epsilon") and number < 0:
            raise StructureParseError(f"{fieldname} must be non-negative", lineno)
        table.setdefault(selector, {})[fieldname] = number
    return table


def format_parameters(table: Mapping[str, Mapping[str, float]]) -> str:
    lines = []
    for selector in sorted(table):
        for fieldname in PARAM_FIELDS:
            if fieldname in table[selector]:
                lines.append(f"{selector}.{fieldname} = {table[selector][fieldname]!r}")
    return "\n".join(lines) + "\n"


def assign_parameters(system: MolecularSystem,
                      table: Mapping[str, Mapping[str, float]] | None = None,
                      *, use_defaults: bool = True) -> MolecularSystem:
    """Return a copy of ``system`` with mass/charge/LJ values from ``table``.

    Lookup order per atom: ``name:<atom name>``, then element, then the
    built-in defaults (when ``use_defaults``). Missing fields keep their
    current value.
    """
    layers: list[Mapping[str, Mapping[str, float]]] = []
    if use_defaults:
        layers.append(DEFAULT_PARAMETERS)
    if table:
        layers.append(table)
    atoms = []
    for atom in system.atoms:
        merged: dict[str, float] = {}
        for layer in layers:
            merged.update(layer.get(atom.element, {}))
        if table:
            merged.update(table.get(f"name:{atom.name}", {}))
        atoms.append(replace(
            atom,
            mass=merged.get("mass", atom.mass),
            charge=merged.get("charge", atom.charge),
            lj_sigma=merged.get("sigma", atom.lj_sigma),
            lj_epsilon=merged.get("epsilon", atom.lj_epsilon),
        ))
    return replace(system, atoms=tuple(atoms))


# -- geometry ----------------------------------------------------------------

def min_image_displacement(a, b, box_length: float | None = None) -> np.ndarray:
    """Displacement ``b - a``, wrapped into (-L/2, L/2] when periodic.

    Works element-wise, so ``a`` and ``b`` may be broadcastable arrays
    of 3-vectors.
    """
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    if box_length is None:
        return d
    if not box_length > 0:
        raise ValueError("box_length must be positive")
    return d - box_length * np.ceil(d / box_length - 0.5)


def wrap_positions(positions: np.ndarray, box_length: float | None) -> np.ndarray:
    if box_length is None:
        return positions
    return positions - box_length * np.floor(positions / box_length)


# -- reproducible random streams -------------------------------------------

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Mix a base seed with integer keys into an independent 64-bit seed."""
    state = splitmix64(seed & _MASK64)
    for key in keys:
        state = splitmix64(state ^ splitmix64(key & _MASK64))
    return state


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Generator whose stream depends only on ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))


# stream identifiers, so distinct uses of one seed never share a stream
STREAM_POSES = 1
STREAM_VELOCITIES = 2
STREAM_SYSTEMS = 3


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))

