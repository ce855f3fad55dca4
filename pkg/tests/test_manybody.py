import itertools

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from vdwlab.errors import InvalidDecompositionError, InvalidSystemError
from vdwlab.lattice import PotentialSpec, build_grid, build_radial_grid, soft_coulomb
from vdwlab.manybody import (Decomposition, Nucleus, SystemSpec, assemble_cluster, assemble_full,
                             atomic_decompositions, enumerate_decompositions, intercluster,
                             kinetic_1d, radial_hamiltonian, two_atom_spec)


def _dense_two_electron(x, y1, y2, a=1.0):
    """Independent dense assembly of the two-electron, two-nucleus Hamiltonian."""
    n = len(x)
    h = x[1] - x[0]
    T = (np.diag(np.full(n, 1 / h**2)) + np.diag(np.full(n - 1, -0.5 / h**2), 1)
         + np.diag(np.full(n - 1, -0.5 / h**2), -1))
    V = np.diag(-soft_coulomb(x - y1, a) - soft_coulomb(x - y2, a))
    h1 = T + V
    I = np.eye(n)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    return (np.kron(h1, I) + np.kron(I, h1) + np.diag(soft_coulomb(X1 - X2, a).ravel())
            + soft_coulomb(y2 - y1, a) * np.eye(n * n))


def test_full_operator_matches_dense_oracle():
    g = build_grid(15, (-6, 6))
    spec = two_atom_spec(3.0, g)
    H = assemble_full(spec)
    ref = _dense_two_electron(g.points, -1.5, 1.5)
    assert np.abs(H.matrix.toarray() - ref).max() < 1e-13
    assert H.hermiticity_error() == 0.0


def test_cluster_plus_intercluster_is_full():
    g = build_grid(21, (-8, 8))
    spec = two_atom_spec(4.0, g)
    H = assemble_full(spec).matrix
    for a in enumerate_decompositions(2, (1, 1)):
        diff = H - assemble_cluster(spec, a).matrix - intercluster(spec, a).matrix
        assert abs(diff).max() < 1e-13


def test_one_electron_levels_match_tridiagonal_oracle():
    g = build_grid(201, (-20, 20))
    spec = SystemSpec([Nucleus(0.0)], 1, PotentialSpec(), g)
    w = np.linalg.eigvalsh(assemble_full(spec).matrix.toarray())[:2]
    h = g.spacing
    ref = eigh_tridiagonal(1 / h**2 - soft_coulomb(g.points), np.full(g.n - 1, -0.5 / h**2))[0][:2]
    np.testing.assert_allclose(w, ref, atol=1e-12)


def test_nuclear_repulsion_bare_and_soft():
    g = build_grid(11, (-5, 5))
    soft = two_atom_spec(2.0, g)
    bare = two_atom_spec(2.0, g, PotentialSpec(nn_softening=0.0))
    assert abs(soft.nuclear_repulsion() - 1 / np.sqrt(5)) < 1e-15
    assert abs(bare.nuclear_repulsion() - 0.5) < 1e-15


def test_radial_hamiltonian_hydrogen_levels():
    g = build_radial_grid(2000, 40.0)
    H = radial_hamiltonian(g, 1.0, 0).toarray()
    w = np.linalg.eigvalsh(H)[:2]
    np.testing.assert_allclose(w, [-0.5, -0.125], atol=2e-4)


def test_kinetic_stencil():
    g = build_grid(4, (0, 3))
    K = kinetic_1d(g).toarray()
    np.testing.assert_allclose(np.diag(K), 1.0)
    np.testing.assert_allclose(np.diag(K, 1), -0.5)


def test_decomposition_enumeration_and_stabilizer():
    decs = enumerate_decompositions(3, (2, 1))
    assert len(decs) == 8
    atomic = atomic_decompositions(3, (2, 1))
    assert len(atomic) == 3
    a = atomic[0]
    assert a.stabilizer_order == 2
    assert len(a.stabilizer()) == 2
    assert a.is_atomic


def test_permuted_decomposition_moves_labels():
    a = Decomposition((0, 0, 1), (2, 1))
    b = a.permuted((2, 1, 0))
    assert b.owners == (1, 0, 0)
    assert a.permuted((1, 0, 2)) == a


def test_decomposition_validation():
    with pytest.raises(InvalidDecompositionError):
        Decomposition((0, 2), (1, 1))
    with pytest.raises(InvalidDecompositionError):
        Decomposition.from_clusters([(0,), (0,)], (1, 1))
    g = build_grid(5, (0, 1))
    with pytest.raises(InvalidDecompositionError):
        Decomposition((0, 0, 1), (2, 1)).validate_for(two_atom_spec(0.5, g))


def test_system_rejects_coincident_nuclei():
    g = build_grid(5, (0, 1))
    with pytest.raises(InvalidSystemError):
        SystemSpec([Nucleus(0.0), Nucleus(0.0)], 2, PotentialSpec(), g)


def test_permutation_invariance_of_full_operator():
    g = build_grid(9, (-4, 4))
    spec = two_atom_spec(2.0, g, charges=(2, 1))
    H = assemble_full(spec).matrix.toarray()
    n = g.n
    for p in itertools.permutations(range(3)):
        idx = np.arange(n**3).reshape((n,) * 3).transpose(p).ravel()
        assert np.abs(H[np.ix_(idx, idx)] - H).max() < 1e-13
