import itertools
import math

import numpy as np
import pytest

from vdwlab.errors import InvalidInducedTypeError, ResourceLimitError, SupportOverlapError
from vdwlab.manybody import Decomposition
from vdwlab.symmetry import (algebra_report, character, class_size, compose, hook_dimension,
                             induced_types, inverse, irreps, norm_after_projection, partitions,
                             permute_tensor, projector, restriction_multiplicity, sector_isometry,
                             subgroup_projector, symmetry_type, write_character_table)


def test_partitions_and_dimensions():
    assert partitions(4) == [(4,), (3, 1), (2, 2), (2, 1, 1), (1, 1, 1, 1)]
    assert [hook_dimension(p) for p in partitions(4)] == [1, 3, 2, 3, 1]
    for n in range(1, 6):
        assert sum(hook_dimension(p) ** 2 for p in partitions(n)) == math.factorial(n)


def test_s3_character_table():
    # rows: trivial, standard, sign; columns: identity, transposition, 3-cycle
    table = {(3,): [1, 1, 1], (2, 1): [2, 0, -1], (1, 1, 1): [1, -1, 1]}
    classes = [(1, 1, 1), (2, 1), (3,)]
    for shape, row in table.items():
        assert [character(shape, mu) for mu in classes] == row
    assert [class_size(mu) for mu in classes] == [1, 3, 2]


def test_character_orthogonality_s5():
    types = irreps(5)
    cls = partitions(5)
    for s, t in itertools.product(types, repeat=2):
        inner = sum(class_size(mu) * s.characters[mu] * t.characters[mu] for mu in cls) / 120
        assert inner == (1 if s == t else 0)


def test_character_table_csv(tmp_path):
    write_character_table(3, tmp_path / "chars.csv")
    lines = (tmp_path / "chars.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("class,cycle_type,class_size")


def test_irreps_limit():
    with pytest.raises(ResourceLimitError):
        irreps(20)


def test_permute_tensor_relabels_arguments():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((4, 4, 4))
    p = (1, 2, 0)
    out = permute_tensor(t.ravel(), p, 4).reshape(4, 4, 4)
    # out(x_0, x_1, x_2) = t(x_{p^-1(0)}, x_{p^-1(1)}, x_{p^-1(2)})
    pinv = inverse(p)
    for x in itertools.product(range(4), repeat=3):
        assert out[x] == t[tuple(x[pinv[m]] for m in range(3))]
    for q in itertools.permutations(range(3)):
        lhs = permute_tensor(permute_tensor(t.ravel(), q, 4), p, 4)
        assert np.allclose(lhs, permute_tensor(t.ravel(), compose(q, p), 4))


def test_projector_traces_match_dimension_formula():
    n_points = 4
    for s in irreps(3):
        Q = projector(s, n_points)
        assert Q.trace() == pytest.approx(np.trace(Q.matrix()))
    # symmetric and antisymmetric sectors of three particles on four sites
    assert projector(symmetry_type((3,)), 4).rank() == math.comb(6, 3)
    assert projector(symmetry_type((1, 1, 1)), 4).rank() == math.comb(4, 3)


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_algebra_report_identities(N):
    rep = algebra_report(N, n_points=3 if N < 4 else 2)
    for key in ("completeness", "idempotence", "hermiticity", "orthogonality", "trace",
                "factorization", "branching"):
        assert rep[key] < 1e-12, key
    assert rep["norm_formula"] < 1e-8


def test_sector_isometry_matches_projector():
    for shape in [(3,), (1, 1, 1)]:
        s = symmetry_type(shape)
        S = sector_isometry(s, 4).toarray()
        assert np.abs(S.T @ S - np.eye(S.shape[1])).max() < 1e-13
        assert np.abs(S @ S.T - projector(s, 4).matrix()).max() < 1e-13
    with pytest.raises(InvalidInducedTypeError):
        sector_isometry(symmetry_type((2, 1)), 4)


def test_induced_types_and_multiplicity():
    a = Decomposition((0, 0, 1), (2, 1))
    sign3 = symmetry_type((1, 1, 1))
    found = induced_types(sign3, a)
    assert [t.diagrams for t in found] == [((1, 1), (1,))]
    assert restriction_multiplicity(symmetry_type((2, 1)), a, found[0].alpha) == 1
    energies = {((2,), (1,)): -1.0, ((1, 1), (1,)): -0.5}
    flagged = induced_types(symmetry_type((2, 1)), a, energies, want_minimizers=True)
    assert [t.minimizer for t in flagged] == [True, False]


def test_norm_after_projection_requires_disjoint_support():
    a = Decomposition((0, 1), (1, 1))
    s = symmetry_type((2,))
    alpha = (symmetry_type((1,)), symmetry_type((1,)))
    psi = np.zeros((4, 4))
    psi[0, 1] = 1.0
    measured, predicted = norm_after_projection(psi.ravel(), s, a, alpha, 4)
    assert measured == pytest.approx(predicted) == pytest.approx(0.5)
    psi[1, 0] = 1.0
    with pytest.raises(SupportOverlapError):
        norm_after_projection(psi.ravel(), s, a, alpha, 4)


def test_subgroup_projector_rejects_wrong_type():
    a = Decomposition((0, 0, 1), (2, 1))
    with pytest.raises(InvalidInducedTypeError):
        subgroup_projector(a, (symmetry_type((1,)), symmetry_type((1,))), 3)
