"""Symmetric-group characters, isotypic projectors and restriction to cluster stabilizers."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (DependencyMissingError, InvalidInducedTypeError,
                     ResourceLimitError, SupportOverlapError)
from .manybody import Decomposition

MAX_N = 6
ENERGY_TOL = 1e-8


# ---------------------------------------------------------------------------
# permutations (tuples p with p[i] = image of i)

def compose(p, q) -> tuple:
    """(p q)(i) = p(q(i))."""
    return tuple(p[i] for i in q)


def inverse(p) -> tuple:
    out = [0] * len(p)
    for i, j in enumerate(p):
        out[j] = i
    return tuple(out)


def cycle_type(p, support: Optional[Sequence] = None) -> tuple:
    """Cycle lengths in decreasing order, optionally of p restricted to an invariant set."""
    elems = range(len(p)) if support is None else support
    seen = set()
    lengths = []
    for start in elems:
        if start in seen:
            continue
        k, length = start, 0
        while k not in seen:
            seen.add(k)
            k = p[k]
            length += 1
        lengths.append(length)
    return tuple(sorted(lengths, reverse=True))


def partitions(n: int) -> list:
    """Partitions of n in reverse lexicographic order, (n) first."""
    if n == 0:
        return [()]
    out = []

    def rec(remaining, largest, prefix):
        if remaining == 0:
            out.append(tuple(prefix))
            return
        for part in range(min(remaining, largest), 0, -1):
            rec(remaining - part, part, prefix + [part])

    rec(n, n, [])
    return out


def hook_dimension(shape) -> int:
    n = sum(shape)
    conj = [sum(1 for row in shape if row > c) for c in range(shape[0])] if shape else []
    hooks = 1
    for i, row in enumerate(shape):
        for j in range(row):
            hooks *= (row - j - 1) + (conj[j] - i - 1) + 1
    return math.factorial(n) // hooks


@lru_cache(maxsize=None)
def _mn(beta: tuple, mu: tuple) -> int:
    """Murnaghan-Nakayama recursion on a beta-set (distinct first-column hook lengths)."""
    if not mu:
        return 1
    r, rest = mu[0], mu[1:]
    occupied = set(beta)
    total = 0
    for b in beta:
        target = b - r
        if target < 0 or target in occupied:
            continue
        sign = (-1) ** sum(1 for c in beta if target < c < b)
        new = tuple(sorted((occupied - {b}) | {target}, reverse=True))
        total += sign * _mn(new, rest)
    return total


def character(shape, cycles) -> int:
    """Irreducible character of S_n labelled by ``shape`` on the class ``cycles``."""
    k = len(shape)
    beta = tuple(shape[i] + (k - 1 - i) for i in range(k))
    return _mn(beta, tuple(cycles))


def class_size(cycles) -> int:
    n = sum(cycles)
    denom = 1
    for length, mult in ((l, cycles.count(l)) for l in set(cycles)):
        denom *= length**mult * math.factorial(mult)
    return math.factorial(n) // denom


@dataclass(frozen=True)
class SymmetryType:
    """Irreducible representation of S_n labelled by a Young diagram."""

    diagram: tuple
    dimension: int
    characters: dict = field(compare=False, repr=False)

    @property
    def n(self) -> int:
        return sum(self.diagram)

    @property
    def two_column(self) -> bool:
        """Diagrams with at most two columns are the spatial types of spin-1/2 fermions."""
        return not self.diagram or self.diagram[0] <= 2

    def character(self, perm, support=None) -> int:
        return self.characters[cycle_type(perm, support)]


def symmetry_type(diagram) -> SymmetryType:
    diagram = tuple(int(d) for d in diagram)
    n = sum(diagram)
    chars = {mu: character(diagram, mu) for mu in partitions(n)}
    return SymmetryType(diagram, hook_dimension(diagram) if diagram else 1, chars)


def irreps(n: int) -> list:
    """All irreducible types of S_n with dimensions and full character tables."""
    if n > MAX_N:
        raise ResourceLimitError(f"character tables are limited to N <= {MAX_N}")
    if n < 0:
        raise ValueError("n must be non-negative")
    return [symmetry_type(lam) for lam in partitions(n)]


def write_character_table(n: int, path):
    types = irreps(n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "cycle_type", "class_size"] + ["chi_" + "-".join(map(str, t.diagram)) for t in types])
        for k, mu in enumerate(partitions(n)):
            w.writerow([k, "-".join(map(str, mu)), class_size(mu)] + [t.characters[mu] for t in types])


# ---------------------------------------------------------------------------
# action on tensor-grid vectors

def permute_tensor(v, perm, n_points: int):
    """T_pi acting on flattened tensors: (T_pi psi)(x_1..x_N) = psi(x_pi^-1(1), ...)."""
    v = np.asarray(v)
    N = len(perm)
    tail = v.shape[1:]
    t = v.reshape((n_points,) * N + tail)
    axes = tuple(perm) + tuple(range(N, N + len(tail)))
    return np.ascontiguousarray(t.transpose(axes)).reshape(v.shape)


class CharacterProjector:
    """Matrix-free operator sum_pi c_pi T_pi on (n_points,)^N tensors."""

    def __init__(self, terms, n_points: int, n_electrons: int, label=None):
        self.terms = [(tuple(p), float(c)) for p, c in terms if c != 0]
        self.n_points = n_points
        self.n_electrons = n_electrons
        self.label = label

    @property
    def dimension(self) -> int:
        return self.n_points ** self.n_electrons

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        for p, c in self.terms:
            out += c * permute_tensor(v, p, self.n_points)
        return out

    __call__ = apply

    def __matmul__(self, v):
        return self.apply(v)

    def trace(self) -> float:
        """Exact trace: tr T_pi = n_points^(number of cycles)."""
        return float(sum(c * self.n_points ** len(cycle_type(p)) for p, c in self.terms))

    def rank(self) -> int:
        return int(round(self.trace()))

    def as_linear_operator(self):
        d = self.dimension
        return spla.LinearOperator((d, d), matvec=self.apply, matmat=self.apply, dtype=float)

    def matrix(self) -> np.ndarray:
        if self.dimension > 4096:
            raise ResourceLimitError("explicit projector matrix limited to dimension 4096")
        return self.apply(np.eye(self.dimension))

    def range_basis(self, vectors, tol=1e-8) -> np.ndarray:
        """Orthonormal basis of the span of this projector applied to ``vectors``."""
        return orthonormal_range(self.apply(np.asarray(vectors, dtype=float)), tol)


class BasisProjector:
    """Orthogonal projection onto the span of orthonormal columns."""

    def __init__(self, basis):
        self.basis = np.asarray(basis, dtype=float)

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def apply(self, v):
        return self.basis @ (self.basis.T @ v)

    __call__ = apply

    def __matmul__(self, v):
        return self.apply(v)

    def complement(self, v):
        return v - self.apply(v)


def orthonormal_range(vectors, tol=1e-8) -> np.ndarray:
    """Orthonormal basis of the column span, dropping directions below ``tol`` relative."""
    A = np.atleast_2d(np.asarray(vectors, dtype=float))
    if A.shape[1] == 0:
        return A
    u, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return u[:, :0]
    keep = s > tol * max(1.0, s[0])
    return u[:, keep]


def projector(sigma: SymmetryType, n_points: int) -> CharacterProjector:
    """Isotypic projector (d/N!) sum_pi chi(pi^-1) T_pi on the N-electron grid space."""
    N = sigma.n
    if N > MAX_N:
        raise ResourceLimitError(f"N = {N} above {MAX_N}")
    scale = sigma.dimension / math.factorial(N)
    terms = [(p, scale * sigma.character(inverse(p))) for p in itertools.permutations(range(N))]
    return CharacterProjector(terms, n_points, N, label=sigma.diagram)


def sector_isometry(sigma: SymmetryType, n_points: int) -> sp.csc_matrix:
    """Sparse isometry onto Ran Q^sigma for a one-dimensional irrep (symmetric or sign).

    Columns are normalized orbit sums of basis tensors, one per sorted index
    tuple (strictly increasing for the sign irrep).
    """
    if sigma.dimension != 1:
        raise InvalidInducedTypeError("explicit sector bases are built for one-dimensional irreps only")
    N = sigma.n
    sign = sigma.diagram != (N,)
    combos = itertools.combinations(range(n_points), N) if sign else \
        itertools.combinations_with_replacement(range(n_points), N)
    idx = np.array(list(combos), dtype=np.int64).reshape(-1, N)
    cols = np.arange(len(idx))
    rows, data, cidx = [], [], []
    for p in itertools.permutations(range(N)):
        rows.append(np.ravel_multi_index(tuple(idx[:, k] for k in p), (n_points,) * N))
        data.append(np.full(len(idx), float(sigma.character(p))))
        cidx.append(cols)
    S = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cidx))),
                      shape=(n_points**N, len(idx)))
    S.sum_duplicates()
    norms = np.sqrt(np.asarray(S.multiply(S).sum(axis=0)).ravel())
    return (S @ sp.diags(1.0 / norms)).tocsc()


def _check_alpha(a: Decomposition, alpha):
    if len(alpha) != len(a.clusters):
        raise InvalidInducedTypeError("one irreducible type per cluster is required")
    for c, t in zip(a.clusters, alpha):
        if t.n != len(c):
            raise InvalidInducedTypeError(f"type {t.diagram} does not fit a cluster of size {len(c)}")


def alpha_character(alpha, a: Decomposition, perm) -> int:
    """Character of the outer product type alpha at a stabilizer element."""
    return math.prod(t.character(perm, c) for t, c in zip(alpha, a.clusters))


def alpha_dimension(alpha) -> int:
    return math.prod(t.dimension for t in alpha)


def subgroup_projector(a: Decomposition, alpha, n_points: int) -> CharacterProjector:
    """Projector onto the alpha-isotypic part for the stabilizer S(a)."""
    alpha = tuple(alpha)
    _check_alpha(a, alpha)
    scale = alpha_dimension(alpha) / a.stabilizer_order
    terms = [(p, scale * alpha_character(alpha, a, inverse(p))) for p in a.stabilizer()]
    return CharacterProjector(terms, n_points, a.n_electrons, label=tuple(t.diagram for t in alpha))


def cluster_projector(labels, alpha_j: SymmetryType, n_points: int, n_electrons: int) -> CharacterProjector:
    """Projector for the permutations of one cluster's labels only."""
    labels = tuple(labels)
    if alpha_j.n != len(labels):
        raise InvalidInducedTypeError("type size does not match the cluster")
    scale = alpha_j.dimension / math.factorial(len(labels))
    terms = []
    for images in itertools.permutations(labels):
        p = list(range(n_electrons))
        for src, dst in zip(labels, images):
            p[src] = dst
        p = tuple(p)
        terms.append((p, scale * alpha_j.character(inverse(p), labels)))
    return CharacterProjector(terms, n_points, n_electrons)


@dataclass(frozen=True)
class InducedType:
    alpha: tuple
    multiplicity: int
    minimizer: Optional[bool] = None
    energy: Optional[float] = None

    @property
    def diagrams(self) -> tuple:
        return tuple(t.diagram for t in self.alpha)

    @property
    def dimension(self) -> int:
        return alpha_dimension(self.alpha)


def restriction_multiplicity(sigma: SymmetryType, a: Decomposition, alpha) -> int:
    """<chi^sigma restricted to S(a), chi^alpha> over the stabilizer."""
    total = sum(sigma.character(p) * alpha_character(alpha, a, p) for p in a.stabilizer())
    value = total / a.stabilizer_order
    return int(round(value))


def induced_types(sigma: SymmetryType, a: Decomposition, cluster_energies=None,
                  want_minimizers: bool = False, tol: float = ENERGY_TOL) -> list:
    """Types alpha of S(a) occurring in sigma, with multiplicities.

    ``cluster_energies`` maps a tuple of diagrams (one per cluster) to the
    ground energy of H_a restricted to that type, or is a callable doing so.
    When given, minimizers over the occurring types are flagged.
    """
    per_cluster = [irreps(len(c)) for c in a.clusters]
    found = []
    for alpha in itertools.product(*per_cluster):
        m = restriction_multiplicity(sigma, a, alpha)
        if m:
            found.append((alpha, m))
    if cluster_energies is None:
        if want_minimizers:
            raise DependencyMissingError("cluster ground energies are needed to flag minimal types")
        return [InducedType(alpha, m) for alpha, m in found]
    lookup = cluster_energies if callable(cluster_energies) else cluster_energies.__getitem__
    energies = [float(lookup(tuple(t.diagram for t in alpha))) for alpha, _ in found]
    best = min(energies)
    return [InducedType(alpha, m, bool(e <= best + tol), e) for (alpha, m), e in zip(found, energies)]


def norm_after_projection(psi, sigma: SymmetryType, a: Decomposition, alpha, n_points: int,
                          overlap_tol: float = 1e-8) -> tuple:
    """Measured and predicted ||Q^sigma psi||^2 for psi in the alpha-part of S(a).

    The prediction (d_sigma/N!) (|S(a)|/d_alpha) m assumes psi has unit norm
    and <psi, T_pi psi> = 0 for every pi outside S(a); m is the multiplicity of
    alpha in the restriction of sigma.
    """
    psi = np.asarray(psi, dtype=float)
    psi = psi / np.linalg.norm(psi)
    N = a.n_electrons
    stab = set(a.stabilizer())
    worst = 0.0
    for p in itertools.permutations(range(N)):
        if p in stab:
            continue
        worst = max(worst, abs(float(psi @ permute_tensor(psi, p, n_points))))
    if worst > overlap_tol:
        raise SupportOverlapError(f"<psi, T_pi psi> = {worst:.2e} for pi outside S(a)")
    Q = projector(sigma, n_points)
    q = Q.apply(psi)
    measured = float(q @ q)
    m = restriction_multiplicity(sigma, a, tuple(alpha))
    predicted = sigma.dimension / math.factorial(N) * a.stabilizer_order / alpha_dimension(alpha) * m
    return measured, predicted


def _disjoint_support_vector(a: Decomposition, alpha, n_points: int, rng) -> np.ndarray:
    """Random vector of type alpha for S(a) whose electrons sit on owner-specific grid points.

    Owner k only uses grid points congruent to k modulo the number of
    clusters, so T_pi psi is orthogonal to psi for every pi outside S(a).
    """
    M = len(a.clusters)
    N = a.n_electrons
    shape = (n_points,) * N
    mask = np.ones(shape, dtype=bool)
    idx = np.arange(n_points)
    for i, k in enumerate(a.owners):
        view = [1] * N
        view[i] = n_points
        mask &= (idx % M == k).reshape(view)
    v = rng.standard_normal(shape) * mask
    return subgroup_projector(a, alpha, n_points).apply(v.ravel())


def algebra_report(n_electrons: int, n_points: int = 3, seed: int = 0) -> dict:
    """Largest deviations of the projector identities on the N-electron grid space.

    Keys: completeness, idempotence, orthogonality, hermiticity, trace,
    factorization, branching (all absolute) and norm_formula (the worst
    |measured - predicted| over decompositions and types).
    """
    N = n_electrons
    rng = np.random.default_rng(seed)
    types = irreps(N)
    Qs = [projector(s, n_points).matrix() for s in types]
    dim = n_points**N
    out = {"completeness": float(np.abs(sum(Qs) - np.eye(dim)).max()),
           "idempotence": max(float(np.abs(Q @ Q - Q).max()) for Q in Qs),
           "hermiticity": max(float(np.abs(Q - Q.T).max()) for Q in Qs),
           "orthogonality": 0.0, "trace": 0.0, "factorization": 0.0, "branching": 0.0,
           "norm_formula": 0.0}
    for i, j in itertools.combinations(range(len(Qs)), 2):
        out["orthogonality"] = max(out["orthogonality"], float(np.abs(Qs[i] @ Qs[j]).max()))
    for s, Q in zip(types, Qs):
        out["trace"] = max(out["trace"], abs(float(np.trace(Q)) - projector(s, n_points).trace()))
    n_sites = max(2, min(N, n_points))
    charges = [1] * n_sites
    seen = set()
    from .manybody import enumerate_decompositions
    for a in enumerate_decompositions(N, charges):
        key = tuple(sorted(a.sizes))
        if key in seen:
            continue
        seen.add(key)
        per_cluster = [irreps(len(c)) for c in a.clusters]
        for alpha in itertools.product(*per_cluster):
            Qa = subgroup_projector(a, alpha, n_points).matrix()
            prod = np.eye(dim)
            for c, t in zip(a.clusters, alpha):
                if c:
                    prod = prod @ cluster_projector(c, t, n_points, N).matrix()
            out["factorization"] = max(out["factorization"], float(np.abs(Qa - prod).max()))
        for s in types:
            dims = sum(restriction_multiplicity(s, a, alpha) * alpha_dimension(alpha)
                       for alpha in itertools.product(*per_cluster))
            out["branching"] = max(out["branching"], abs(dims - s.dimension))
        if len(a.clusters) <= n_points:
            for alpha in itertools.product(*per_cluster):
                psi = _disjoint_support_vector(a, alpha, n_points, rng)
                if np.linalg.norm(psi) < 1e-8:
                    continue
                for s in types:
                    measured, predicted = norm_after_projection(psi, s, a, alpha, n_points)
                    out["norm_formula"] = max(out["norm_formula"], abs(measured - predicted))
    return out
