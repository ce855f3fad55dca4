import numpy as np
import pytest

from vdwlab.errors import GeometryError, ResolutionError
from vdwlab.feshbach import build_P
from vdwlab.lattice import PotentialSpec, build_grid
from vdwlab.localization import (build_partition, gap_constants, hat_omega_mask, ims_residual,
                                 localization_error, omega_mask, one_electron_profiles,
                                 stability_bound)
from vdwlab.manybody import Decomposition, Nucleus, SystemSpec, assemble_full, two_atom_spec


@pytest.fixture(scope="module")
def system():
    g = build_grid(81, (-14, 14))
    spec = two_atom_spec(10.0, g)
    return spec, assemble_full(spec), build_partition(spec)


def test_partition_of_unity(system):
    spec, _, part = system
    assert len(part.decompositions) == 4
    assert np.abs(part.sum_of_squares() - 1).max() < 1e-14
    assert all(np.all(J >= 0) for J in part.members.values())


def test_partition_support_and_plateau(system):
    spec, _, part = system
    R = 10.0
    a = Decomposition((0, 1), (1, 1))
    J = part.member(a)
    # J_a vanishes off the set where electrons keep R/5 from foreign nuclei
    assert np.all(J[~omega_mask(spec, a, 0.2, R)] == 0)
    # and is 1 where every electron stays near its own nucleus
    assert np.all(J[hat_omega_mask(spec, a, 0.2, R)] == 1)
    # far from every nucleus the two owner choices share the weight
    far = omega_mask(spec, a, 0.4, R) & omega_mask(spec, Decomposition((1, 0), (1, 1)), 0.4, R)
    np.testing.assert_allclose(J[far], 0.5)


def test_ims_identity_is_exact(system):
    _, H, part = system
    res = ims_residual(H, part)
    assert res.relative < 1e-12
    assert res.gradient_sup > 0


def test_edge_operator_matches_explicit_commutator(system):
    _, H, part = system
    A = H.matrix
    t = float(A[0, 1])
    G = localization_error(part, t)
    rng = np.random.default_rng(1)
    v = rng.standard_normal(A.shape[0])
    # sum_a J_a H J_a - H = G computed independently through double commutators
    lhs = sum(J * (A @ (J * v)) for J in part.members.values()) - A @ v
    assert np.abs(lhs - G(v)).max() < 1e-12


def test_gradient_term_scales_like_inverse_square():
    values = []
    for R in (10.0, 20.0):
        g = build_grid(321, (-2 * R, 2 * R))
        values.append(build_partition(two_atom_spec(R, g)).gradient_sup())
    slope = np.log(values[1] / values[0]) / np.log(2.0)
    assert slope == pytest.approx(-2.0, abs=0.2)


def test_profiles_sum_and_csv(tmp_path, system):
    spec, _, part = system
    prof = one_electron_profiles(spec.grid.points, [-5.0, 5.0], 10.0, 0.7)
    assert prof.shape == (2, 81)
    part.profiles_to_csv(tmp_path / "p.csv")
    data = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(np.sum(data[:, 1:] ** 2, axis=1), 1.0)


def test_partition_errors():
    g = build_grid(41, (-14, 14))
    with pytest.raises(ResolutionError):
        build_partition(two_atom_spec(10.0, g))
    single = SystemSpec([Nucleus(0.0)], 1, PotentialSpec(), g)
    with pytest.raises(GeometryError):
        build_partition(single)


def test_gap_constants_for_hydrogen_pair():
    g = build_grid(121, (-20, 20))
    gaps = gap_constants(two_atom_spec(12.0, g))
    x = g.points
    h = g.spacing
    T = (np.diag(np.full(121, 1 / h**2)) - 0.5 / h**2 * (np.eye(121, k=1) + np.eye(121, k=-1)))
    w = np.linalg.eigvalsh(T - np.diag(1 / np.sqrt((x + 6) ** 2 + 1)))
    assert gaps.e_infinity == pytest.approx(2 * w[0], abs=1e-10)
    assert gaps.gamma1 == pytest.approx(w[1] - w[0], abs=1e-10)
    assert 0 < gaps.gamma0 <= gaps.gamma2


def test_stability_bound_at_moderate_separation():
    g = build_grid(81, (-20, 20))
    spec = two_atom_spec(14.0, g)
    H = assemble_full(spec)
    res = stability_bound(H, build_P(spec), spec=spec)
    assert res.leakage < 1e-8
    assert res.passed
    assert res.threshold == pytest.approx(res.gaps.e_infinity + 0.5 * res.gaps.gamma0)
