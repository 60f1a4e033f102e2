import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskmd.core import (
    COULOMB_F,
    K_B,
    UNITS,
    StructureParseError,
    assign_parameters,
    derive_seed,
    format_parameters,
    make_system,
    min_image_displacement,
    parse_parameters,
    parse_structure,
    rng_for,
    wrap_positions,
    write_structure,
)

PDB_LINE = "ATOM      1  N   ASP A   1      10.000  12.500   8.300  1.00  0.00           N"


def test_pdb_line_converts_angstrom_to_nm():
    system = parse_structure(PDB_LINE + "\n", "pdb")
    assert len(system) == 1
    atom = system.atoms[0]
    assert atom.element == "N"
    assert atom.position == pytest.approx((1.0, 1.25, 0.83), abs=1e-12)
    assert atom.mass == pytest.approx(14.007)
    assert (atom.charge, atom.lj_sigma, atom.lj_epsilon) == (0.0, 0.0, 0.0)


def test_pdb_element_falls_back_to_atom_name():
    line = "HETATM    2  CA  LIG A   1       1.000   2.000   3.000  1.00  0.00"
    atom = parse_structure(line, "pdb").atoms[0]
    assert atom.element == "C"
    assert atom.name == "CA"


def test_pdb_non_numeric_coordinate_names_line():
    text = "REMARK test\n" + PDB_LINE[:30] + "  abcdef" + PDB_LINE[38:] + "\n"
    with pytest.raises(StructureParseError, match="line 2") as err:
        parse_structure(text, "pdb")
    assert err.value.line == 2


def test_pdb_unknown_element_without_fallback():
    line = "ATOM      1  1XX LIG A   1       1.000   2.000   3.000  1.00  0.00           Qq"
    with pytest.raises(StructureParseError, match="line 1"):
        parse_structure(line, "pdb")


def test_pdb_skips_unsupported_records_and_reads_first_model_only():
    text = "\n".join([
        "CRYST1   65.000   65.000   65.000  90.00  90.00  90.00 P 1           1",
        "MODEL        1",
        PDB_LINE,
        "ANISOU    1  N   ASP A   1     1000   1000   1000      0      0      0       N",
        "ENDMDL",
        "MODEL        2",
        PDB_LINE,
        "ENDMDL",
    ])
    system = parse_structure(text, "pdb")
    assert len(system) == 1
    assert system.skipped_records == 1
    assert system.box_length == pytest.approx(6.5)


@pytest.mark.parametrize("fmt", ["pdb", "xyz"])
def test_empty_file_is_an_error(fmt):
    with pytest.raises(StructureParseError):
        parse_structure("", fmt)
    with pytest.raises(StructureParseError):
        parse_structure("   \n\n", fmt)


def test_xyz_reads_nm_directly():
    system = parse_structure("2\nargon pair\nAr 0 0 0\nAr 0.38 0 0\n", "xyz")
    assert len(system) == 2
    assert system.positions.tolist() == [[0, 0, 0], [0.38, 0, 0]]
    assert [a.element for a in system.atoms] == ["Ar", "Ar"]


def test_xyz_errors():
    with pytest.raises(StructureParseError, match="line 4"):
        parse_structure("2\n\nAr 0 0 0\nAr x 0 0\n", "xyz")
    with pytest.raises(StructureParseError, match="line 3"):
        parse_structure("1\n\nZz 0 0 0\n", "xyz")
    with pytest.raises(StructureParseError):
        parse_structure("3\n\nAr 0 0 0\n", "xyz")


def test_format_must_be_explicit():
    with pytest.raises(ValueError):
        parse_structure(PDB_LINE, "auto")


def test_write_xyz_count_line():
    system = make_system(["Ar", "Ar"], [[0, 0, 0], [0.38, 0, 0]])
    text = write_structure(system)
    assert text.splitlines()[0] == "2"


def test_write_empty_system_is_an_error():
    with pytest.raises(ValueError):
        write_structure(make_system([], np.zeros((0, 3))))


def test_round_trip_50_random_atoms():
    rng = np.random.default_rng(7)
    elements = list(rng.choice(["C", "N", "O", "H", "S", "Ar"], size=50))
    pos = rng.uniform(-5, 5, (50, 3))
    system = make_system(elements, pos, box_length=6.5)
    back = parse_structure(write_structure(system), "xyz")
    assert [a.element for a in back.atoms] == elements
    assert np.max(np.abs(back.positions - pos)) < 1e-6
    assert back.box_length == 6.5


coords = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["H", "C", "N", "O", "Ar"]), coords, coords, coords),
                min_size=1, max_size=20))
def test_round_trip_property(rows):
    system = make_system([r[0] for r in rows], [r[1:] for r in rows])
    back = parse_structure(write_structure(system), "xyz")
    assert [a.element for a in back.atoms] == [r[0] for r in rows]
    assert np.array_equal(back.positions, system.positions)


# -- geometry ------------------------------------------------------------------

def test_min_image_wraps_across_box():
    d = min_image_displacement((0, 0, 0), (6.0, 0, 0), 6.5)
    assert d == pytest.approx([-0.5, 0, 0], abs=1e-12)


@pytest.mark.parametrize("box", [None, 1.0, 6.5, 100.0])
def test_min_image_identity(box):
    assert np.array_equal(min_image_displacement((1.2, -3.0, 9.0), (1.2, -3.0, 9.0), box), [0, 0, 0])


def test_min_image_non_periodic_is_plain_subtraction():
    assert min_image_displacement((1, 1, 1), (2, 3, 4), None).tolist() == [1, 2, 3]


def test_min_image_half_box_maps_to_positive_half():
    assert min_image_displacement((0, 0, 0), (-3.25, 3.25, 0), 6.5).tolist() == [3.25, 3.25, 0]


@settings(max_examples=200)
@given(st.tuples(coords, coords, coords), st.tuples(coords, coords, coords),
       st.floats(min_value=0.5, max_value=50))
def test_min_image_range_and_shrinks(a, b, box):
    d = min_image_displacement(a, b, box)
    raw = np.subtract(b, a)
    assert np.all(d > -box / 2 - 1e-9) and np.all(d <= box / 2 + 1e-9)
    assert np.linalg.norm(d) <= np.linalg.norm(raw) + 1e-9
    # wrapped vector differs from the raw one by whole box lengths
    k = (raw - d) / box
    assert np.allclose(k, np.round(k), atol=1e-6)


def test_wrap_positions_into_box():
    wrapped = wrap_positions(np.array([[-0.1, 6.6, 3.0]]), 6.5)
    assert np.allclose(wrapped, [[6.4, 0.1, 3.0]])


# -- units and parameters --------------------------------------------------------

def test_units_against_codata():
    e, eps0, n_a, r_gas = 1.602176634e-19, 8.8541878128e-12, 6.02214076e23, 8.314462618
    coulomb = n_a * e * e / (4 * math.pi * eps0) * 1e9 / 1e3
    assert COULOMB_F == pytest.approx(coulomb, rel=1e-8)
    assert K_B == pytest.approx(r_gas / 1e3, rel=1e-9)


def test_units_are_frozen():
    with pytest.raises(AttributeError):
        UNITS.k_b = 1.0


def test_parameter_file_round_trip_and_precedence():
    text = """
    # argon and an oxygen override
    Ar.sigma = 0.3405
    Ar.epsilon = 0.996
    O.charge = -0.5
    name:OW.charge = -0.834
    """
    table = parse_parameters(text)
    assert table["Ar"] == {"sigma": 0.3405, "epsilon": 0.996}
    assert parse_parameters(format_parameters(table)) == table
    system = make_system(["Ar", "O", "O"], np.zeros((3, 3)), names=["AR", "O1", "OW"])
    system = assign_parameters(system, table)
    assert system.atoms[0].lj_sigma == 0.3405
    assert system.atoms[1].charge == -0.5
    assert system.atoms[2].charge == -0.834
    assert system.atoms[2].lj_sigma > 0  # element default still applies


@pytest.mark.parametrize("bad", ["Ar.sigma 0.3", "Ar.size = 1", "Ar.sigma = abc", "Ar.sigma = -1"])
def test_parameter_file_errors(bad):
    with pytest.raises(StructureParseError, match="line 1"):
        parse_parameters(bad)


def test_argon_defaults():
    atom = assign_parameters(make_system(["Ar"], [[0, 0, 0]])).atoms[0]
    assert (atom.lj_sigma, atom.lj_epsilon) == (0.3405, 0.996)


def test_atom_invariants():
    from deskmd.core import Atom, MolecularSystem

    with pytest.raises(ValueError):
        Atom(0, "X", "C", mass=0.0)
    with pytest.raises(ValueError):
        Atom(0, "X", "C", mass=12.0, lj_sigma=-1)
    with pytest.raises(ValueError):
        MolecularSystem(atoms=(Atom(1, "X", "C", 12.0),))


def test_derived_streams_are_independent_and_stable():
    assert derive_seed(42, 1, 0) == derive_seed(42, 1, 0)
    assert len({derive_seed(42, 1, k) for k in range(1000)}) == 1000
    a = rng_for(42, 1, 5).random(4)
    b = rng_for(42, 1, 5).random(4)
    assert np.array_equal(a, b)
