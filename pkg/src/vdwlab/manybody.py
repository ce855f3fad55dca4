"""Clamped-nuclei Hamiltonians on tensor-product grids and cluster decompositions."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (InvalidDecompositionError, InvalidSystemError,
                     ResourceLimitError)
from .lattice import Grid, PotentialSpec, RadialGrid, nuclear_potential, soft_coulomb

MODES = ("1D_manybody", "3D_radial")
DEFAULT_MAX_NNZ = 20_000_000


@dataclass(frozen=True)
class Nucleus:
    position: object
    charge: int = 1
    mass: Optional[float] = None
    softening: Optional[float] = None

    def __post_init__(self):
        if int(self.charge) != self.charge or self.charge < 1:
            raise InvalidSystemError(f"nuclear charge must be a positive integer, got {self.charge}")
        if self.mass is not None and not self.mass > 0:
            raise InvalidSystemError(f"nuclear mass must be positive, got {self.mass}")

    @property
    def coords(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class SystemSpec:
    """Nuclei, electron count, interaction model and discretization.

    In ``1D_manybody`` mode every electron lives on ``grid`` and nuclei sit at
    scalar positions. ``3D_radial`` mode handles one electron around one
    nucleus in a fixed angular-momentum channel on a :class:`RadialGrid`.
    """

    nuclei: tuple
    n_electrons: int
    potential: PotentialSpec
    grid: object
    coupling: float = 1.0
    mode: str = "1D_manybody"
    max_nnz: int = DEFAULT_MAX_NNZ

    def __post_init__(self):
        object.__setattr__(self, "nuclei", tuple(self.nuclei))
        if self.mode not in MODES:
            raise InvalidSystemError(f"unknown mode {self.mode!r}")
        if not self.nuclei:
            raise InvalidSystemError("at least one nucleus is required")
        if int(self.n_electrons) != self.n_electrons or self.n_electrons < 1:
            raise InvalidSystemError(f"electron count must be positive, got {self.n_electrons}")
        for i, j in itertools.combinations(range(len(self.nuclei)), 2):
            if np.allclose(self.nuclei[i].coords, self.nuclei[j].coords, atol=1e-12, rtol=0):
                raise InvalidSystemError(f"nuclei {i} and {j} coincide")
        if self.mode == "1D_manybody" and not isinstance(self.grid, Grid):
            raise InvalidSystemError("1D mode needs a uniform Grid")
        if self.mode == "3D_radial" and not isinstance(self.grid, RadialGrid):
            raise InvalidSystemError("3D radial mode needs a RadialGrid")

    @property
    def charges(self) -> tuple:
        return tuple(int(nu.charge) for nu in self.nuclei)

    @property
    def positions(self) -> np.ndarray:
        return np.array([nu.coords for nu in self.nuclei])

    @property
    def n_nuclei(self) -> int:
        return len(self.nuclei)

    @property
    def neutral(self) -> bool:
        return sum(self.charges) == self.n_electrons

    @property
    def pair_scale(self) -> float:
        return self.coupling * self.potential.strength

    def attraction_softening(self, j: int) -> float:
        s = self.nuclei[j].softening
        return self.potential.softening if s is None else s

    def min_separation(self) -> float:
        pos = self.positions
        if len(pos) < 2:
            return np.inf
        return min(float(np.linalg.norm(pos[i] - pos[j]))
                   for i, j in itertools.combinations(range(len(pos)), 2))

    def nuclear_repulsion(self) -> float:
        """Sum over nucleus pairs of Z_i Z_j times the nucleus-nucleus kernel."""
        total = 0.0
        a = self.potential.nn_scale
        for i, j in itertools.combinations(range(self.n_nuclei), 2):
            r = float(np.linalg.norm(self.nuclei[i].coords - self.nuclei[j].coords))
            total += self.charges[i] * self.charges[j] * float(soft_coulomb(r, a))
        return self.pair_scale * total

    def with_nuclei(self, nuclei) -> "SystemSpec":
        return replace(self, nuclei=tuple(nuclei))

    def single_nucleus(self, j: int, n_electrons: int) -> "SystemSpec":
        """The isolated cluster made of nucleus ``j`` and ``n_electrons`` electrons."""
        return replace(self, nuclei=(self.nuclei[j],), n_electrons=n_electrons)


def two_atom_spec(separation, grid, potential=None, charges=(1, 1), n_electrons=None,
                  softenings=(None, None), masses=(None, None), coupling=1.0,
                  center=0.0) -> SystemSpec:
    """Two nuclei at ``center -+ separation/2`` on a 1D grid."""
    potential = potential or PotentialSpec()
    n_electrons = sum(charges) if n_electrons is None else n_electrons
    half = separation / 2.0
    nuclei = (Nucleus(center - half, charges[0], masses[0], softenings[0]),
              Nucleus(center + half, charges[1], masses[1], softenings[1]))
    return SystemSpec(nuclei, n_electrons, potential, grid, coupling=coupling)


# ---------------------------------------------------------------------------
# decompositions

@dataclass(frozen=True)
class Decomposition:
    """Assignment of electrons (0-based labels) to nuclei.

    ``owners[i]`` is the nucleus carrying electron ``i``; clusters may be empty.
    """

    owners: tuple
    charges: tuple

    def __post_init__(self):
        object.__setattr__(self, "owners", tuple(int(o) for o in self.owners))
        object.__setattr__(self, "charges", tuple(int(c) for c in self.charges))
        if any(o < 0 or o >= len(self.charges) for o in self.owners):
            raise InvalidDecompositionError(f"cluster label out of range in {self.owners}")

    @classmethod
    def from_clusters(cls, clusters: Sequence, charges) -> "Decomposition":
        labels = sorted(i for c in clusters for i in c)
        n = len(labels)
        if labels != list(range(n)):
            raise InvalidDecompositionError("clusters must be disjoint and cover 0..N-1")
        if len(clusters) != len(charges):
            raise InvalidDecompositionError("one cluster per nucleus is required")
        owners = [0] * n
        for j, c in enumerate(clusters):
            for i in c:
                owners[i] = j
        return cls(tuple(owners), tuple(charges))

    @property
    def n_electrons(self) -> int:
        return len(self.owners)

    @property
    def clusters(self) -> tuple:
        return tuple(tuple(i for i, o in enumerate(self.owners) if o == j)
                     for j in range(len(self.charges)))

    @property
    def sizes(self) -> tuple:
        return tuple(len(c) for c in self.clusters)

    @property
    def is_atomic(self) -> bool:
        return self.sizes == self.charges

    @property
    def stabilizer_order(self) -> int:
        """|S(a)|, the product of the cluster-size factorials."""
        return math.prod(math.factorial(s) for s in self.sizes)

    def stabilizer(self) -> list:
        """All permutations (as image tuples) mapping every cluster onto itself."""
        n = self.n_electrons
        perms = []
        blocks = [c for c in self.clusters if c]
        for parts in itertools.product(*(itertools.permutations(c) for c in blocks)):
            image = list(range(n))
            for c, p in zip(blocks, parts):
                for src, dst in zip(c, p):
                    image[src] = dst
            perms.append(tuple(image))
        return perms

    def permuted(self, perm) -> "Decomposition":
        """The decomposition pi*a whose clusters are the images pi(A_j)."""
        owners = [0] * self.n_electrons
        for i, o in enumerate(self.owners):
            owners[perm[i]] = o
        return Decomposition(tuple(owners), self.charges)

    def validate_for(self, spec: SystemSpec):
        if self.n_electrons != spec.n_electrons or self.charges != spec.charges:
            raise InvalidDecompositionError(
                f"decomposition {self.owners} does not match the system")


def enumerate_decompositions(n_electrons: int, charges, cap: int = 100_000) -> list:
    """All M^N electron-to-nucleus assignments, atomic ones flagged by ``is_atomic``."""
    charges = tuple(int(c) for c in charges)
    if n_electrons < 1 or len(charges) < 1:
        raise InvalidDecompositionError("need N >= 1 and M >= 1")
    count = len(charges) ** n_electrons
    if count > cap:
        raise ResourceLimitError(f"{count} decompositions exceed the cap {cap}")
    return [Decomposition(owners, charges)
            for owners in itertools.product(range(len(charges)), repeat=n_electrons)]


def atomic_decompositions(n_electrons: int, charges) -> list:
    return [a for a in enumerate_decompositions(n_electrons, charges) if a.is_atomic]


# ---------------------------------------------------------------------------
# operators

@dataclass(frozen=True)
class ManyBodyOperator:
    matrix: sp.csr_matrix = field(repr=False)
    n_electrons: int
    grid: object
    terms: tuple
    constant: float = 0.0
    decomposition: Optional[Decomposition] = None

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    @property
    def tensor_shape(self) -> tuple:
        n = self.grid.n
        return (n,) * self.n_electrons

    @cached_property
    def norm1(self) -> float:
        return float(abs(self.matrix).sum(axis=0).max())

    def hermiticity_error(self) -> float:
        d = self.matrix - self.matrix.T.conj()
        return float(abs(d).max()) if d.nnz else 0.0

    def __matmul__(self, v):
        return self.matrix @ v

    def __sub__(self, other):
        return self.matrix - _as_matrix(other)

    def __add__(self, other):
        return self.matrix + _as_matrix(other)


def _as_matrix(op):
    return op.matrix if isinstance(op, ManyBodyOperator) else op


def kinetic_1d(grid: Grid) -> sp.csr_matrix:
    """Three-point discretization of -1/2 d^2/dx^2 with Dirichlet ends."""
    n, h = grid.n, grid.spacing
    off = np.full(n - 1, -0.5 / h**2)
    return sp.diags([off, np.full(n, 1.0 / h**2), off], [-1, 0, 1], format="csr")


def radial_hamiltonian(grid: RadialGrid, charge=1.0, ell=0, strength=1.0) -> sp.csr_matrix:
    """Reduced radial operator -1/2 u'' + l(l+1)/(2r^2) u - Z u/r with u(0) = 0."""
    r, h = grid.points, grid.spacing
    diag = 1.0 / h**2 + ell * (ell + 1) / (2 * r * r) - strength * charge / r
    off = np.full(grid.n - 1, -0.5 / h**2)
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def _axis_view(values, axis, n_axes):
    shape = [1] * n_axes
    shape[axis] = values.shape[0]
    return values.reshape(shape)


def _pair_view(matrix, i, k, n_axes):
    shape = [1] * n_axes
    shape[i] = matrix.shape[0]
    shape[k] = matrix.shape[1]
    return matrix.reshape(shape)


def _kinetic_sum(grid: Grid, n_electrons: int) -> sp.csr_matrix:
    k = kinetic_1d(grid)
    eye = sp.identity(grid.n, format="csr")
    total = None
    for i in range(n_electrons):
        term = None
        for m in range(n_electrons):
            factor = k if m == i else eye
            term = factor if term is None else sp.kron(term, factor, format="csr")
        total = term if total is None else total + term
    return total


def _check_budget(spec: SystemSpec):
    n = spec.grid.n
    dim = n ** spec.n_electrons
    nnz = dim * (2 * spec.n_electrons + 1)
    if nnz > spec.max_nnz:
        raise ResourceLimitError(f"operator needs ~{nnz} nonzeros, cap is {spec.max_nnz}")


def _potential_diagonal(spec: SystemSpec, attract, repel_pairs, constant):
    """Diagonal of the potential part as a flattened tensor.

    ``attract`` lists (electron, nucleus) pairs, ``repel_pairs`` electron pairs.
    """
    grid = spec.grid
    x = grid.points
    N = spec.n_electrons
    diag = np.zeros((grid.n,) * N)
    for i, j in attract:
        v = nuclear_potential(spec.potential, x, spec.nuclei[j].coords[0], spec.charges[j] * spec.coupling,
                              spec.attraction_softening(j))
        diag = diag + _axis_view(v, i, N)
    if repel_pairs:
        pair = spec.pair_scale * soft_coulomb(x[:, None] - x[None, :], spec.potential.ee_scale)
        for i, k in repel_pairs:
            diag = diag + _pair_view(pair, i, k, N)
    return diag.ravel() + constant


def _assemble(spec, attract, repel_pairs, constant, terms, with_kinetic=True, decomposition=None):
    _check_budget(spec)
    diag = _potential_diagonal(spec, attract, repel_pairs, constant)
    mat = sp.diags(diag, format="csr")
    if with_kinetic:
        mat = (_kinetic_sum(spec.grid, spec.n_electrons) + mat).tocsr()
    return ManyBodyOperator(mat, spec.n_electrons, spec.grid, tuple(terms), constant, decomposition)


def assemble_full(spec: SystemSpec) -> ManyBodyOperator:
    """Full clamped-nuclei Hamiltonian on the tensor grid, repulsion constant included."""
    if spec.mode == "3D_radial":
        if spec.n_electrons != 1 or spec.n_nuclei != 1:
            raise InvalidSystemError("3D radial mode supports one electron and one nucleus")
        mat = radial_hamiltonian(spec.grid, spec.charges[0] * spec.coupling, spec.potential.ell,
                                 spec.potential.strength)
        return ManyBodyOperator(mat, 1, spec.grid, ("kinetic", "nuclear_attraction", "centrifugal"))
    N, M = spec.n_electrons, spec.n_nuclei
    attract = [(i, j) for i in range(N) for j in range(M)]
    pairs = list(itertools.combinations(range(N), 2))
    return _assemble(spec, attract, pairs, spec.nuclear_repulsion(),
                     ("kinetic", "nuclear_attraction", "electron_repulsion", "nuclear_repulsion"))


def assemble_cluster(spec: SystemSpec, a: Decomposition) -> ManyBodyOperator:
    """Sum of the isolated cluster Hamiltonians H_a (no cross terms, no constant)."""
    a.validate_for(spec)
    attract = [(i, o) for i, o in enumerate(a.owners)]
    pairs = [(i, k) for i, k in itertools.combinations(range(spec.n_electrons), 2)
             if a.owners[i] == a.owners[k]]
    return _assemble(spec, attract, pairs, 0.0, ("kinetic", "nuclear_attraction", "electron_repulsion"),
                     decomposition=a)


def intercluster(spec: SystemSpec, a: Decomposition) -> ManyBodyOperator:
    """Interaction I_a = H - H_a between different clusters (a diagonal operator)."""
    a.validate_for(spec)
    attract = [(i, j) for i, o in enumerate(a.owners) for j in range(spec.n_nuclei) if j != o]
    pairs = [(i, k) for i, k in itertools.combinations(range(spec.n_electrons), 2)
             if a.owners[i] != a.owners[k]]
    return _assemble(spec, attract, pairs, spec.nuclear_repulsion(),
                     ("nuclear_attraction", "electron_repulsion", "nuclear_repulsion"),
                     with_kinetic=False, decomposition=a)


def intercluster_values(spec: SystemSpec, a: Decomposition) -> np.ndarray:
    """Diagonal of I_a as a tensor of shape (n,)*N."""
    return intercluster(spec, a).matrix.diagonal().reshape((spec.grid.n,) * spec.n_electrons)
