"""Low-lying spectra, decay and density diagnostics, Newton screening checks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial.transform import Rotation

from .errors import ConvergenceFailure, InvalidBasisError, ScreeningInapplicableError
from .lattice import RadialGrid

DENSE_LIMIT = 2000
DEGENERACY_TOL = 1e-8


@dataclass(frozen=True)
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray

    @property
    def gap(self) -> float:
        if len(self.eigenvalues) < 2:
            raise ValueError("gap needs at least two eigenvalues")
        return float(self.eigenvalues[1] - self.eigenvalues[0])

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    def blocks(self, tol: float = DEGENERACY_TOL) -> list:
        return cluster_eigenvalues(self.eigenvalues, tol)

    def to_csv(self, path):
        rows = np.column_stack([np.arange(len(self.eigenvalues)), self.eigenvalues, self.residuals])
        np.savetxt(path, rows, delimiter=",", header="index,energy,residual", comments="",
                   fmt=["%d", "%.15g", "%.3e"])


def cluster_eigenvalues(values, tol: float = DEGENERACY_TOL) -> list:
    """Group sorted eigenvalues into index blocks whose neighbours differ by < tol."""
    blocks = []
    for i, v in enumerate(values):
        if blocks and abs(v - values[blocks[-1][-1]]) < tol:
            blocks[-1].append(i)
        else:
            blocks.append([i])
    return blocks


def _matrix(op):
    return getattr(op, "matrix", op)


def low_spectrum(op, k: int = 1, tol: float = 1e-9, seed: int = 0,
                 dense_limit: int = DENSE_LIMIT, maxiter: Optional[int] = None) -> SpectralResult:
    """The ``k`` lowest eigenpairs of a Hermitian operator.

    Dense diagonalization below ``dense_limit``, otherwise shift-invert
    Lanczos about a Gershgorin lower bound, started from a seeded vector. Every pair is certified with
    ||Hv - lv|| <= tol * ||H||_1; a failed certificate raises ConvergenceFailure.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    A = _matrix(op)
    n = A.shape[0]
    if n <= dense_limit or k >= n - 1:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        w, v = sla.eigh(dense, subset_by_index=(0, min(k, n) - 1))
    else:
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            if sp.issparse(A):
                # shift-invert about the Gershgorin lower bound of the spectrum
                d = A.diagonal()
                shift = float(np.min(d - (abs(A).sum(axis=1).A1 - np.abs(d))))
                w, v = spla.eigsh(A.tocsc(), k=k, sigma=shift, which="LM", tol=1e-13, v0=v0,
                                  maxiter=maxiter)
            else:
                w, v = spla.eigsh(A, k=k, which="SA", tol=1e-13, v0=v0, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceFailure("Lanczos did not converge", best_residual=None) from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    scale = float(abs(A).sum(axis=0).max()) if sp.issparse(A) else float(np.abs(A).sum(axis=0).max())
    res = np.linalg.norm(A @ v - v * w, axis=0)
    if np.any(res > tol * max(scale, 1.0)):
        raise ConvergenceFailure(f"eigenpair residual {res.max():.2e} above tolerance",
                                 best_residual=float(res.max()))
    return SpectralResult(np.asarray(w), np.asarray(v), res)


def ground_state_1d(matrix) -> tuple:
    """Ground energy and unit-norm vector of a tridiagonal 1D operator."""
    A = sp.csr_matrix(matrix)
    d, e = A.diagonal(), A.diagonal(1)
    w, v = sla.eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
    vec = v[:, 0]
    if vec[np.argmax(np.abs(vec))] < 0:
        vec = -vec
    return float(w[0]), vec


def tridiagonal_spectrum(matrix, k=None) -> tuple:
    A = sp.csr_matrix(matrix)
    if k is None:
        return sla.eigh_tridiagonal(A.diagonal(), A.diagonal(1))
    return sla.eigh_tridiagonal(A.diagonal(), A.diagonal(1), select="i", select_range=(0, k - 1))


# ---------------------------------------------------------------------------
# decay

@dataclass(frozen=True)
class DecayResult:
    passed: bool
    rate: float
    n_points: int
    truncated: bool


def decay_check(state, points, center, theta_trial, lower=1e-3, floor=1e-12) -> DecayResult:
    """Fit the exponential tail rate of a sampled state.

    The tail is the set of points where |psi| lies between ``floor`` and
    ``lower`` times its maximum. The fitted rate is minus the least-squares
    slope of log|psi| against distance from ``center``; the check passes when
    rate >= theta_trial.
    """
    psi = np.abs(np.asarray(state, dtype=float))
    dist = np.abs(np.asarray(points, dtype=float) - center)
    peak = psi.max()
    mask = (psi <= lower * peak) & (psi >= floor * peak)
    truncated = False
    if mask.sum() < 5:
        truncated = True
        warnings.warn("tail below the floating-point floor; fitting the whole profile", RuntimeWarning)
        mask = psi >= floor * peak
    if mask.sum() < 2:
        return DecayResult(False, 0.0, int(mask.sum()), True)
    slope = np.polyfit(dist[mask], np.log(psi[mask]), 1)[0]
    rate = float(-slope)
    return DecayResult(bool(rate >= theta_trial), rate, int(mask.sum()), truncated)


# ---------------------------------------------------------------------------
# densities

@dataclass(frozen=True)
class DensityProfile:
    values: np.ndarray
    points: np.ndarray
    total: float


def one_electron_density(basis, grid, n_electrons: int, axis: int = 0, tol: float = 1e-10) -> DensityProfile:
    """One-electron marginal density, summed over an orthonormal set of grid vectors.

    Args:
        basis: array (dim, r) of columns with unit Euclidean norm.
        grid: the one-particle Grid.
        n_electrons: number of tensor factors.
        axis: which electron's marginal to keep.

    Returns:
        DensityProfile with values per unit length; ``total`` equals r.
    """
    B = np.asarray(basis, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    gram = B.T @ B
    if np.max(np.abs(gram - np.eye(B.shape[1]))) > tol:
        raise InvalidBasisError("basis is not orthonormal")
    n = grid.n
    shape = (n,) * n_electrons
    rho = np.zeros(n)
    others = tuple(m for m in range(n_electrons) if m != axis)
    for c in range(B.shape[1]):
        t = B[:, c].reshape(shape)
        rho += np.sum(t * t, axis=others) if others else t * t
    rho /= grid.spacing
    return DensityProfile(rho, grid.points, float(rho.sum() * grid.spacing))


# ---------------------------------------------------------------------------
# Newton screening in 3D

def _angular_potential(r, y, n_ang=64):
    """Integral over the sphere of radius r of 1/|y e + z| dOmega, by Gauss-Legendre in cos(theta)."""
    u, w = np.polynomial.legendre.leggauss(n_ang)
    r = np.atleast_1d(r)[:, None]
    dist = np.sqrt(y * y + r * r + 2 * y * r * u[None, :])
    return 2 * np.pi * np.sum(w / dist, axis=1)


def potential_of_density(density, y, support, n_radial=200, n_ang=64):
    """Electrostatic potential at distance ``y`` of a 3D charge density.

    ``density`` is either a DensityProfile sampled on radial nodes (spherical)
    or a callable rho(r, cos_theta) axially symmetric about the observation
    axis. Returns (potential, total charge) computed by the same radial rule.
    """
    if isinstance(density, DensityProfile):
        r = density.points
        rho = density.values
        ang = _angular_potential(r, y, n_ang)
        weights = np.full(r.shape, r[1] - r[0]) if len(r) > 1 else np.ones(1)
        mass = np.sum(weights * 4 * np.pi * r * r * rho)
        pot = np.sum(weights * r * r * rho * ang)
        return float(pot), float(mass)
    xr, wr = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * support * (xr + 1)
    wr = 0.5 * support * wr
    u, wu = np.polynomial.legendre.leggauss(n_ang)
    R, U = np.meshgrid(r, u, indexing="ij")
    rho = density(R, U)
    dist = np.sqrt(y * y + R * R + 2 * y * R * U)
    jac = 2 * np.pi * R * R
    pot = np.einsum("i,j,ij->", wr, wu, jac * rho / dist)
    mass = np.einsum("i,j,ij->", wr, wu, jac * rho)
    return float(pot), float(mass)


def newton_screening_residual(density, y: float, support: Optional[float] = None,
                              n_radial=200, n_ang=64) -> float:
    """|potential of the density at distance y - total charge / y|.

    For a spherical density supported inside the ball of radius ``support < y``
    this vanishes up to quadrature error; anisotropic densities leave a
    multipole tail.
    """
    if support is None:
        if not isinstance(density, DensityProfile):
            raise ValueError("support radius is required for callable densities")
        nz = np.nonzero(density.values > 0)[0]
        support = float(density.points[nz[-1]]) if nz.size else 0.0
    if support >= y:
        raise ScreeningInapplicableError(f"support radius {support} reaches the observation distance {y}")
    pot, mass = potential_of_density(density, y, support, n_radial, n_ang)
    return abs(pot - mass / y)


def radial_density(u, grid: RadialGrid) -> DensityProfile:
    """Spherical density |u(r)/r|^2/(4 pi) of a unit-norm reduced radial vector."""
    r = grid.points
    u = np.asarray(u, dtype=float) / np.sqrt(grid.spacing)
    rho = u * u / (4 * np.pi * r * r)
    total = float(np.sum(4 * np.pi * r * r * rho) * grid.spacing)
    return DensityProfile(rho, r, total)


# ---------------------------------------------------------------------------
# spherical symmetry

def sample_rotations(seed: int = 0, n_random: int = 10):
    """The 24 proper rotations of the cube followed by ``n_random`` seeded random ones."""
    cube = Rotation.create_group("O")
    rand = Rotation.random(n_random, random_state=seed)
    return Rotation.concatenate([cube, rand])


def orbital_density(radial: Callable, ell: int, components) -> Callable:
    """Density sum_m |R(r) Y_m(x)|^2 over real harmonics of degree 0 or 1.

    ``components`` selects which real harmonics enter: for ell = 1 a subset of
    {"x", "y", "z"}.
    """
    index = {"x": 0, "y": 1, "z": 2}

    def rho(points):
        p = np.atleast_2d(points)
        r = np.linalg.norm(p, axis=1)
        rad = radial(r)
        if ell == 0:
            return rad * rad / (4 * np.pi)
        ang = sum((p[:, index[c]] / np.where(r > 0, r, 1.0)) ** 2 for c in components)
        return rad * rad * 3.0 / (4 * np.pi) * ang

    return rho


def spherical_symmetry_check(density: Callable, radius: float = 4.0, n_points: int = 2000,
                             seed: int = 0) -> float:
    """Largest relative change of a 3D density under the sampled rotations."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-radius, radius, size=(n_points, 3))
    base = density(pts)
    norm = np.linalg.norm(base)
    worst = 0.0
    for rot in sample_rotations(seed):
        diff = np.linalg.norm(density(rot.apply(pts)) - base) / norm
        worst = max(worst, float(diff))
    return worst
