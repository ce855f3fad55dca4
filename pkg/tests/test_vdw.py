import numpy as np
import pytest
from numpy.polynomial import legendre

from vdwlab.errors import DegenerateStateError, DomainError, RiggingError, WindowError
from vdwlab.lattice import build_grid, build_radial_grid
from vdwlab.manybody import Decomposition, two_atom_spec
from vdwlab.symmetry import symmetry_type
from vdwlab.vdw import (IonTableEntry, bo_correction, c6_angular_factor, c6_coefficient,
                        c6_coefficient_3d, dipole_coupling_3d, fit_power_law, first_order_energy,
                        interaction_sweep, ionic_gap, kernel_coefficients, load_ion_table,
                        multipole_expand, multipole_terms_3d, necessity_experiment,
                        pair_interaction_3d, property_E_check, property_E_numeric,
                        property_E_table, rig_degenerate_ion, sphere_moment_matrix)


def test_kernel_coefficients_are_scaled_legendre():
    b, c = 0.3, 1.7
    q = kernel_coefficients(b, c, 6)
    for n, qn in enumerate(q):
        ref = c ** (n / 2) * legendre.legval(-b / np.sqrt(c), [0] * n + [1])
        assert qn == pytest.approx(ref, rel=1e-13, abs=1e-15)
    R = 40.0
    series = sum(qn / R ** (n + 1) for n, qn in enumerate(q))
    assert series == pytest.approx(1 / np.sqrt(R * R + 2 * b * R + c), rel=1e-12)


def test_3d_multipole_terms_and_remainder():
    rng = np.random.default_rng(0)
    z = rng.uniform(-0.5, 0.5, (200, 3))
    zp = rng.uniform(-0.5, 0.5, (200, 3))
    y = np.array([0.2, -0.4, 1.0])
    rems = []
    for R in (20.0, 40.0):
        terms = multipole_terms_3d(z, zp, R, y)
        assert np.abs(terms[1]).max() < 1e-14 and np.abs(terms[2]).max() < 1e-14
        np.testing.assert_allclose(terms[3] * R**3, dipole_coupling_3d(z, zp, y), atol=1e-12)
        rems.append(np.abs(pair_interaction_3d(z, zp, R, y) - sum(terms.values())).max())
    assert np.log2(rems[0] / rems[1]) == pytest.approx(4.0, abs=0.3)


def test_1d_multipole_expansion():
    g = build_grid(121, (-30, 30))
    spec = two_atom_spec(14.0, g)
    a = Decomposition((0, 1), (1, 1))
    exp = multipole_expand(spec, a)
    assert np.abs(exp.terms[1]).max() < 1e-14
    assert np.abs(exp.terms[2]).max() < 1e-14
    x = g.points
    z0, z1 = x + 7.0, x - 7.0
    np.testing.assert_allclose(exp.terms[3], (-2 * np.outer(z0, z1) / 14.0**3).ravel(), atol=1e-14)
    # keeping more terms shrinks the remainder on the same region
    assert multipole_expand(spec, a, order=5).remainder < 0.2 * exp.remainder
    with pytest.raises(DomainError):
        multipole_expand(spec, a, cutoff_fraction=0.4)


def test_1d_c6_matches_sum_over_states():
    g = build_grid(101, (-25, 25))
    res = c6_coefficient(two_atom_spec(14.0, g))
    assert res.value > 0
    assert res.value == pytest.approx(res.sum_over_states, rel=1e-9)


def test_angular_factor_is_rotation_invariant():
    np.testing.assert_allclose(sphere_moment_matrix(), np.eye(3) / 3, atol=1e-14)
    rng = np.random.default_rng(2)
    for d in rng.standard_normal((5, 3)):
        assert c6_angular_factor(d) == pytest.approx(2 / 3, abs=1e-13)


def test_3d_c6_routes_agree_on_coarse_grid():
    res = c6_coefficient_3d(build_radial_grid(300, 30.0))
    assert res.value == pytest.approx(res.sum_over_states, rel=1e-8)
    # coarse grid: still within a few percent of the converged hydrogen value
    assert res.value == pytest.approx(6.499, rel=0.05)


def test_fit_power_law_recovers_exponent():
    R = np.linspace(12, 24, 7)
    fit = fit_power_law(R, values=-3.0 * R**-6)
    assert fit.exponent == pytest.approx(-6.0, abs=1e-12)
    assert fit.coefficient == pytest.approx(3.0, rel=1e-10)
    with pytest.raises(WindowError):
        fit_power_law(R, values=np.sin(R))
    with pytest.raises(WindowError):
        fit_power_law(R[:3], values=R[:3] ** -6)


def test_sweep_routes_agree():
    g = build_grid(61, (-16, 16))
    spec = two_atom_spec(10.0, g)
    rep = interaction_sweep(spec, [10.0, 12.0], method="both")
    np.testing.assert_allclose(rep.w_direct, rep.w_feshbach, atol=1e-9)
    assert "w_minus_first_order" in rep.columns()
    assert rep.first_order[0] == pytest.approx(first_order_energy(two_atom_spec(10.0, g)), abs=1e-12)


def test_sweep_error_names_separation():
    g = build_grid(41, (-10, 10))
    with pytest.raises(Exception) as info:
        interaction_sweep(two_atom_spec(10.0, g), [19.0], method="feshbach")
    assert info.value.separation == 19.0


def test_ion_table_and_property_e():
    table = load_ion_table()
    h = next(e for e in table if e.element == "H")
    assert (h.ionization, h.affinity) == (313.5, 17.3)
    with pytest.warns(RuntimeWarning):
        rep = property_E_table(table)
    assert rep.passed and not rep.violations
    assert rep.skipped
    bad = [IonTableEntry(1, "X", 10.0, 50.0), IonTableEntry(2, "Y", 100.0, 1.0)]
    assert not property_E_table(bad).passed
    with pytest.raises(ValueError):
        IonTableEntry(1, "Z", -1.0)


def test_property_e_numeric():
    rep = property_E_numeric(build_grid(81, (-15, 15)))
    chk = rep.checks[0]
    assert rep.passed
    assert chk["margin"] >= chk["mean_repulsion"] > 0
    assert property_E_check(two_atom_spec(10.0, build_grid(41, (-10, 10)))).passed


def test_rigged_ion_ties_and_necessity_refuses_plain_system():
    g = build_grid(81, (-20, 20))
    rig = rig_degenerate_ion(g, separation=12.0)
    assert abs(rig.gap) < 1e-6
    assert abs(ionic_gap(rig.spec)) < 1e-6
    with pytest.raises(RiggingError):
        necessity_experiment(two_atom_spec(12.0, g), [10, 12, 14, 16])


def test_bo_correction_properties():
    g = build_grid(41, (-10, 10))
    spec = two_atom_spec(4.0, g)
    sigma = symmetry_type((2,))
    light = bo_correction(spec, [1.0, 1.0], sigma=sigma)
    heavy = bo_correction(spec, [1000.0, 1000.0], sigma=sigma)
    assert light.correction > 0
    assert heavy.correction == pytest.approx(light.correction / 1000, rel=1e-12)
    far = two_atom_spec(16.0, g)
    with pytest.raises(DegenerateStateError):
        bo_correction(far, [1.0, 1.0])
