"""Partitions of unity over decompositions, the IMS identity and the lower bound for H-perp."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DeflationError, GeometryError, ResolutionError
from .feshbach import CutoffGroundBasis, FeshbachProblem, cluster_ground, one_electron_operator
from .lattice import mollified_interval
from .manybody import (Decomposition, ManyBodyOperator, SystemSpec, assemble_cluster,
                       enumerate_decompositions, intercluster_values, kinetic_1d)
from .spectral import low_spectrum, tridiagonal_spectrum
from .symmetry import projector

INNER = 0.3
MIN_POINTS_PER_WIDTH = 2.0


@dataclass
class Partition:
    """J_a for every decomposition a on the tensor grid of an N-electron system.

    When every owner assignment is present, J_a is the product over electrons
    of normalized one-electron profiles, which is how members are stored.
    Otherwise members are stored explicitly.
    """

    decompositions: list
    scale: float
    width: float
    n_points: int
    n_electrons: int
    spacing: float
    factors: Optional[np.ndarray] = field(default=None, repr=False)
    explicit: Optional[dict] = field(default=None, repr=False)
    gradient_constant: float = float("nan")

    def member(self, a: Decomposition) -> np.ndarray:
        if self.explicit is not None:
            return self.explicit[a.owners]
        t = np.ones(())
        for k in a.owners:
            t = np.multiply.outer(t, self.factors[k])
        return t.ravel()

    @property
    def members(self) -> dict:
        return {a.owners: self.member(a) for a in self.decompositions}

    def sum_of_squares(self) -> np.ndarray:
        return sum(self.member(a) ** 2 for a in self.decompositions)

    def forward_gradients(self, a: Decomposition) -> list:
        t = self.member(a).reshape((self.n_points,) * self.n_electrons)
        return [np.diff(t, axis=m) / self.spacing for m in range(self.n_electrons)]

    def max_derivative(self) -> float:
        return max(float(np.abs(g).max()) for a in self.decompositions for g in self.forward_gradients(a))

    def gradient_term(self) -> np.ndarray:
        """sum_a |grad J_a|^2 with forward differences (last row per axis padded with 0)."""
        shape = (self.n_points,) * self.n_electrons
        total = np.zeros(shape)
        for a in self.decompositions:
            for m, g in enumerate(self.forward_gradients(a)):
                pad = [(0, 0)] * self.n_electrons
                pad[m] = (0, 1)
                total += np.pad(g * g, pad)
        return total.ravel()

    def gradient_sup(self) -> float:
        return float(self.gradient_term().max())

    def profiles_to_csv(self, path):
        """Per-electron profiles (one column per nucleus); only for product partitions."""
        if self.factors is None:
            raise ValueError("explicit partitions have no per-axis profiles")
        x = np.arange(self.n_points)
        header = "index," + ",".join(f"nucleus_{k}" for k in range(self.factors.shape[0]))
        np.savetxt(path, np.column_stack([x, self.factors.T]), delimiter=",", header=header,
                   comments="", fmt="%.15g")


def one_electron_profiles(x, positions, R: float, width: float) -> np.ndarray:
    """Mollified indicators of {|x - y_m| >= 0.3 R for all m != k}, one row per k."""
    M = len(positions)
    out = np.ones((M, len(x)))
    for k in range(M):
        for m in range(M):
            if m != k:
                out[k] -= mollified_interval(x, positions[m], INNER * R, width)
    return out


def build_partition(spec: SystemSpec, decomps=None, R: Optional[float] = None,
                    max_decompositions: int = 4096) -> Partition:
    """Partition of unity J_a = F_a / sqrt(sum_b F_b^2).

    F_a is the indicator of the set where every electron keeps distance
    0.3 R from all nuclei other than its owner, smoothed with a product
    mollifier of half-width R/(10 sqrt(N)) per coordinate (so the joint
    support lies in the ball of radius R/10). Hence supp J_a lies where those
    distances are at least R/5, and J_a = 1 where every electron is within
    R/5 of its owner (for separations of at least R).
    """
    if spec.mode != "1D_manybody":
        raise ValueError("partitions are built on 1D many-body grids")
    N, M = spec.n_electrons, spec.n_nuclei
    R = spec.min_separation() if R is None else float(R)
    if not np.isfinite(R):
        raise GeometryError("a partition needs at least two nuclei")
    width = R / (10.0 * math.sqrt(N))
    h = spec.grid.spacing
    if width < MIN_POINTS_PER_WIDTH * h:
        raise ResolutionError(f"mollifier half-width {width:.3g} is resolved by fewer than "
                              f"{MIN_POINTS_PER_WIDTH} grid spacings ({h:.3g})")
    x = spec.grid.points
    pos = [nu.coords[0] for nu in spec.nuclei]
    raw = one_electron_profiles(x, pos, R, width)
    full = decomps is None
    if full:
        if M**N > max_decompositions:
            decomps = _near_atomic(N, spec.charges)
            full = False
        else:
            decomps = enumerate_decompositions(N, spec.charges)
    else:
        full = len(decomps) == M**N
    if full:
        norm = np.sqrt(np.sum(raw * raw, axis=0))
        if np.any(norm == 0):
            raise GeometryError("profiles leave part of the grid uncovered")
        part = Partition(list(decomps), R, width, spec.grid.n, N, h, factors=raw / norm)
    else:
        F = {}
        for a in decomps:
            t = np.ones(())
            for k in a.owners:
                t = np.multiply.outer(t, raw[k])
            F[a.owners] = t.ravel()
        norm = np.sqrt(sum(f * f for f in F.values()))
        if np.any(norm == 0):
            raise GeometryError("the truncated decomposition set leaves grid points uncovered")
        part = Partition(list(decomps), R, width, spec.grid.n, N, h,
                         explicit={k: f / norm for k, f in F.items()})
    part.gradient_constant = part.max_derivative() * R
    return part


def _near_atomic(N, charges) -> list:
    """Decompositions whose cluster sizes differ from the charges by at most one transfer."""
    out = []
    for a in enumerate_decompositions(N, charges, cap=10**9):
        if sum(abs(s - z) for s, z in zip(a.sizes, charges)) <= 2:
            out.append(a)
    return out


def omega_mask(spec: SystemSpec, a: Decomposition, nu: float, R: Optional[float] = None) -> np.ndarray:
    """Grid points where each electron is at least nu*R from every nucleus except its owner."""
    R = spec.min_separation() if R is None else R
    x = spec.grid.points
    pos = [nu_.coords[0] for nu_ in spec.nuclei]
    ok = []
    for k in range(spec.n_nuclei):
        m = np.ones(len(x), dtype=bool)
        for j, y in enumerate(pos):
            if j != k:
                m &= np.abs(x - y) >= nu * R
        ok.append(m)
    t = np.ones((), dtype=bool)
    for k in a.owners:
        t = np.logical_and.outer(t, ok[k])
    return t.ravel()


def hat_omega_mask(spec: SystemSpec, a: Decomposition, nu: float, R: Optional[float] = None) -> np.ndarray:
    """Grid points where each electron lies within nu*R of its own nucleus."""
    R = spec.min_separation() if R is None else R
    x = spec.grid.points
    near = [np.abs(x - nu_.coords[0]) <= nu * R for nu_ in spec.nuclei]
    t = np.ones((), dtype=bool)
    for k in a.owners:
        t = np.logical_and.outer(t, near[k])
    return t.ravel()


# ---------------------------------------------------------------------------
# IMS

def localization_error(part: Partition, kinetic_offdiag: float):
    """The discrete counterpart of sum_a |grad J_a|^2 for a 3-point Laplacian.

    Acts as an edge operator: for neighbouring grid points i, j its entry is
    -t * sum_a (J_a(i) - J_a(j))^2 / 2 with t the kinetic off-diagonal entry.
    With it, sum_a J_a H J_a - G equals H exactly.
    """
    N, n = part.n_electrons, part.n_points
    shape = (n,) * N
    weights = []
    for m in range(N):
        w = np.zeros(tuple(n - 1 if k == m else n for k in range(N)))
        for a in part.decompositions:
            d = np.diff(part.member(a).reshape(shape), axis=m)
            w += d * d
        weights.append(-0.5 * kinetic_offdiag * w)

    def apply(v):
        t = np.asarray(v).reshape(shape)
        out = np.zeros(shape)
        for m, w in enumerate(weights):
            lo = [slice(None)] * N
            hi = [slice(None)] * N
            lo[m] = slice(0, n - 1)
            hi[m] = slice(1, n)
            out[tuple(lo)] += w * t[tuple(hi)]
            out[tuple(hi)] += w * t[tuple(lo)]
        return out.ravel()

    return apply


@dataclass(frozen=True)
class IMSResult:
    residual: float
    operator_norm: float
    gradient_sup: float

    @property
    def relative(self) -> float:
        return self.residual / self.operator_norm


def ims_residual(H, part: Partition, iterations: int = 60, seed: int = 0) -> IMSResult:
    """Operator norm (power iteration) of H - sum_a (J_a H J_a - G_a)."""
    A = H.matrix if isinstance(H, ManyBodyOperator) else H
    grid = getattr(H, "grid", None)
    if grid is None:
        raise ValueError("ims_residual needs a ManyBodyOperator carrying its grid")
    if A.shape[0] != part.n_points**part.n_electrons:
        raise ValueError("partition and operator live on different grids")
    t = float(kinetic_1d(grid)[0, 1])
    G = localization_error(part, t)
    members = [part.member(a) for a in part.decompositions]

    def resid(v):
        out = A @ v + G(v)
        for J in members:
            out -= J * (A @ (J * v))
        return out

    v = np.random.default_rng(seed).standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iterations):
        w = resid(v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            break
        v = w / est
    norm = float(abs(A).sum(axis=0).max())
    return IMSResult(est, norm, part.gradient_sup())


def intercluster_sup(spec: SystemSpec, part: Partition, a: Decomposition) -> float:
    """sup of |I_a| over the support of J_a."""
    J = part.member(a)
    I = intercluster_values(spec, a).ravel()
    return float(np.abs(I[J > 0]).max())


# ---------------------------------------------------------------------------
# gaps and the stability bound

@dataclass(frozen=True)
class Gaps:
    e_infinity: float
    gamma1: float
    gamma2: float
    cluster_energies: dict

    @property
    def gamma0(self) -> float:
        return min(self.gamma1, self.gamma2)


def cluster_energy_table(spec: SystemSpec, seed: int = 0) -> dict:
    """(nucleus, electron count) -> isolated ground energy for counts 0..N."""
    out = {}
    for j in range(spec.n_nuclei):
        for k in range(spec.n_electrons + 1):
            out[(j, k)] = cluster_ground(spec, j, k, seed=seed)[0]
    return out


def gap_constants(spec: SystemSpec, seed: int = 0) -> Gaps:
    """E(inf), the atomic excitation gap gamma1 and the ionization gap gamma2.

    gamma1 is the bottom of each atomic H_a above its ground block, less
    E(inf); gamma2 the lowest ionic E_a less E(inf).
    """
    table = cluster_energy_table(spec, seed)
    decomps = enumerate_decompositions(spec.n_electrons, spec.charges)
    atomic = [a for a in decomps if a.is_atomic]
    if not atomic:
        raise GeometryError("the system has no atomic decomposition")

    def energy(a):
        return sum(table[(j, len(c))] for j, c in enumerate(a.clusters))

    e_inf = min(energy(a) for a in atomic)
    ionic = [energy(a) for a in decomps if not a.is_atomic]
    gamma2 = (min(ionic) - e_inf) if ionic else float("inf")
    # the atomic spectrum above the ground block only depends on cluster sizes
    seen = {}
    for a in atomic:
        if a.sizes in seen:
            continue
        if max(a.sizes) <= 1:
            # separable: the first excitation raises one electron to its next level
            steps = []
            for j, c in enumerate(a.clusters):
                if c:
                    w = tridiagonal_spectrum(one_electron_operator(spec, j), k=2)[0]
                    steps.append(w[1] - w[0])
            seen[a.sizes] = energy(a) + min(steps)
            continue
        Ha = assemble_cluster(spec, a)
        res = low_spectrum(Ha, k=min(8, Ha.dimension - 2), seed=seed)
        vals = res.eigenvalues
        above = vals[vals > vals[0] + 1e-8]
        seen[a.sizes] = float(above[0]) if above.size else float("inf")
    gamma1 = min(seen.values()) - e_inf
    return Gaps(e_inf, gamma1, gamma2, table)


@dataclass(frozen=True)
class StabilityResult:
    measured: float
    predicted: float
    threshold: float
    passed: bool
    leakage: float
    gaps: Gaps


def stability_bound(H, P: CutoffGroundBasis, part: Optional[Partition] = None, spec: Optional[SystemSpec] = None,
                    gaps: Optional[Gaps] = None, sigma=None, seed: int = 0, leakage_tol: float = 1e-8) -> StabilityResult:
    """Bottom of H on (Ran P)-perp against E(inf) + gamma0/2.

    The prediction E(inf) + gamma0 - err subtracts the measured localization
    error sup sum_a |grad J_a|^2 / 2 and the largest |I_a| on supp J_a for
    atomic a. With ``sigma`` the complement is taken inside Ran Q^sigma and P
    is replaced by its symmetric part.
    """
    if gaps is None:
        if spec is None:
            raise ValueError("either gaps or spec is needed")
        gaps = gap_constants(spec, seed)
    if sigma is not None:
        basis = P.sigma_vectors
        sector = projector(sigma, H.grid.n)
    else:
        basis, sector = P.vectors, None
    problem = FeshbachProblem(H, basis, sector=sector, seed=seed, dense_limit=0)
    measured, vec = problem.perp_bottom_pair
    leakage = float(np.linalg.norm(problem.B.T @ vec))
    if leakage > leakage_tol:
        raise DeflationError(f"bottom vector overlaps Ran P by {leakage:.2e}", leakage=leakage)
    err = 0.0
    if part is not None and spec is not None:
        err = 0.5 * part.gradient_sup()
        err += max(intercluster_sup(spec, part, a) for a in part.decompositions if a.is_atomic)
    predicted = gaps.e_infinity + gaps.gamma0 - err
    threshold = gaps.e_infinity + 0.5 * gaps.gamma0
    return StabilityResult(measured, predicted, threshold, bool(measured >= threshold), leakage, gaps)
