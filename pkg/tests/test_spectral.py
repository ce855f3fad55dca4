import numpy as np
import pytest
import scipy.sparse as sp

from vdwlab.errors import InvalidBasisError, ScreeningInapplicableError
from vdwlab.lattice import build_grid, build_radial_grid
from vdwlab.manybody import assemble_full, radial_hamiltonian, two_atom_spec
from vdwlab.spectral import (DensityProfile, cluster_eigenvalues, decay_check, ground_state_1d,
                             low_spectrum, newton_screening_residual, one_electron_density,
                             orbital_density, radial_density, sample_rotations,
                             spherical_symmetry_check, tridiagonal_spectrum)


def _random_sparse_hermitian(n, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.01, random_state=seed)
    return (A + A.T + sp.diags(rng.uniform(0, 5, n))).tocsr()


def test_low_spectrum_dense_and_sparse_agree():
    A = _random_sparse_hermitian(600, 1)
    ref = np.linalg.eigvalsh(A.toarray())[:4]
    dense = low_spectrum(A, k=4)
    sparse = low_spectrum(A, k=4, dense_limit=10)
    np.testing.assert_allclose(dense.eigenvalues, ref, atol=1e-10)
    np.testing.assert_allclose(sparse.eigenvalues, ref, atol=1e-10)
    assert sparse.residuals.max() < 1e-8


def test_low_spectrum_on_two_electron_operator():
    g = build_grid(31, (-10, 10))
    H = assemble_full(two_atom_spec(4.0, g))
    res = low_spectrum(H, k=2, dense_limit=100)
    ref = np.linalg.eigvalsh(H.matrix.toarray())[:2]
    np.testing.assert_allclose(res.eigenvalues, ref, atol=1e-10)
    assert res.gap == pytest.approx(ref[1] - ref[0], abs=1e-10)


def test_cluster_eigenvalues_groups_near_degenerate():
    assert cluster_eigenvalues([0.0, 1e-12, 1.0, 2.0, 2.0 + 1e-11]) == [[0, 1], [2], [3, 4]]


def test_spectral_result_csv(tmp_path):
    res = low_spectrum(np.diag([3.0, 1.0, 2.0]), k=2)
    res.to_csv(tmp_path / "s.csv")
    rows = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(rows[:, 1], [1.0, 2.0])


def test_ground_state_1d_and_tridiagonal():
    n = 50
    T = sp.diags([np.full(n - 1, -1.0), np.full(n, 2.0), np.full(n - 1, -1.0)], [-1, 0, 1])
    e, v = ground_state_1d(T)
    assert e == pytest.approx(2 - 2 * np.cos(np.pi / (n + 1)), abs=1e-13)
    assert v.sum() > 0 and abs(np.linalg.norm(v) - 1) < 1e-13
    w, _ = tridiagonal_spectrum(T, k=3)
    np.testing.assert_allclose(w, 2 - 2 * np.cos(np.pi * np.arange(1, 4) / (n + 1)), atol=1e-12)


def test_decay_check_recovers_rate():
    x = np.linspace(-30, 30, 601)
    psi = np.exp(-0.7 * np.abs(x))
    res = decay_check(psi, x, 0.0, 0.6)
    assert res.passed and res.rate == pytest.approx(0.7, abs=1e-6)
    assert not decay_check(psi, x, 0.0, 0.8).passed


def test_one_electron_density_integrates_to_rank():
    g = build_grid(10, (0, 9))
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((100, 3)))
    prof = one_electron_density(Q, g, 2)
    assert prof.total == pytest.approx(3.0)
    with pytest.raises(InvalidBasisError):
        one_electron_density(2 * Q, g, 2)


def test_newton_screening_spherical_and_anisotropic():
    grid = build_radial_grid(2000, 40.0)
    H = radial_hamiltonian(grid, 1.0, 0)
    _, v = np.linalg.eigh(H.toarray())
    u = v[:, 0]
    prof = radial_density(u, grid)
    assert prof.total == pytest.approx(1.0, abs=1e-12)
    # truncated spherical density: screening is exact up to quadrature
    mask = grid.points <= 10.0
    cut = DensityProfile(np.where(mask, prof.values, 0.0), grid.points, prof.total)
    assert newton_screening_residual(cut, 12.0) < 1e-8

    def p_orbital(r, c):
        return np.exp(-r) * r * r * c * c

    assert newton_screening_residual(p_orbital, 12.0, support=10.0) > 1e-4
    with pytest.raises(ScreeningInapplicableError):
        newton_screening_residual(cut, 5.0)


def test_rotations_and_spherical_check():
    rots = sample_rotations(seed=3, n_random=4)
    assert len(rots) == 28

    def radial(r):
        return 2 * np.exp(-r)

    full_p = orbital_density(radial, 1, "xyz")
    single_p = orbital_density(radial, 1, "z")
    assert spherical_symmetry_check(full_p) < 1e-12
    assert spherical_symmetry_check(single_p) > 0.1
