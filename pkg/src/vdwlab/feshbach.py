"""Cut-off ground-state projections, the Feshbach-Schur map and its fixed points."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .errors import (BoostTooLargeError, ConvergenceFailure, DomainError,
                     GeometryError, NotInvertibleError, WindowExitError)
from .lattice import bump_cdf, cutoff_profile, nuclear_potential
from .manybody import (Decomposition, ManyBodyOperator, SystemSpec, assemble_cluster,
                       assemble_full, atomic_decompositions, intercluster_values,
                       kinetic_1d)
from .spectral import cluster_eigenvalues, ground_state_1d, low_spectrum
from .symmetry import SymmetryType, induced_types, irreps, orthonormal_range, projector

DEFAULT_CUTOFF_FRACTION = 1.0 / 6.0
DENSE_LIMIT = 2000


# ---------------------------------------------------------------------------
# cluster ground states

def one_electron_operator(spec: SystemSpec, j: int) -> sp.csr_matrix:
    x = spec.grid.points
    v = nuclear_potential(spec.potential, x, spec.nuclei[j].coords[0],
                          spec.charges[j] * spec.coupling, spec.attraction_softening(j))
    return (kinetic_1d(spec.grid) + sp.diags(v)).tocsr()


def cluster_ground(spec: SystemSpec, j: int, n_electrons: int, alpha: Optional[SymmetryType] = None,
                   seed: int = 0) -> tuple:
    """Ground energy and ground-block tensors of nucleus ``j`` carrying ``n_electrons``.

    With ``alpha`` the operator is restricted to that symmetry type of the
    cluster's own electrons. Returns (energy, array of shape (n^k, block)).
    """
    n = spec.grid.n
    if n_electrons == 0:
        return 0.0, np.ones((1, 1))
    if n_electrons == 1:
        e, v = ground_state_1d(one_electron_operator(spec, j))
        return e, v[:, None]
    sub = spec.single_nucleus(j, n_electrons)
    H = assemble_full(sub).matrix
    if alpha is None:
        res = low_spectrum(H, k=3, seed=seed)
        block = cluster_eigenvalues(res.eigenvalues)[0]
        return float(res.eigenvalues[block[0]]), res.eigenvectors[:, block]
    Q = projector(alpha, n)
    shift = 2.0 * float(abs(H).sum(axis=0).max())

    def mv(v):
        q = Q.apply(v)
        return Q.apply(H @ q) + shift * (v - q)

    op = spla.LinearOperator(H.shape, matvec=mv, dtype=float)
    v0 = Q.apply(np.random.default_rng(seed).standard_normal(H.shape[0]))
    w, V = spla.eigsh(op, k=min(4, H.shape[0] - 2), which="SA", tol=1e-13, v0=v0)
    order = np.argsort(w)
    w, V = w[order], V[:, order]
    block = cluster_eigenvalues(w)[0]
    return float(w[block[0]]), orthonormal_range(Q.apply(V[:, block]))


def _assemble_product(a: Decomposition, factors, n: int) -> np.ndarray:
    """Tensor product of per-cluster tensors placed on the cluster's electron labels."""
    N = a.n_electrons
    out = np.ones(())
    axes = []
    for cluster, t in zip(a.clusters, factors):
        if not cluster:
            continue
        out = np.multiply.outer(out, t.reshape((n,) * len(cluster)))
        axes.extend(cluster)
    perm = np.argsort(axes)
    return out.transpose(perm).reshape(n**N)


# ---------------------------------------------------------------------------
# the projection P

@dataclass
class CutoffGroundBasis:
    """Orthonormal basis of span{cut-off cluster ground states} grouped by (a, alpha)."""

    vectors: np.ndarray = field(repr=False)
    labels: list
    cutoff_radius: float
    overlap: float
    residuals: np.ndarray
    energies: np.ndarray
    e_infinity: float
    sigma: Optional[SymmetryType] = None
    sigma_vectors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]

    @property
    def sigma_rank(self) -> int:
        return 0 if self.sigma_vectors is None else self.sigma_vectors.shape[1]

    def project(self, v):
        return self.vectors @ (self.vectors.T @ v)

    def complement(self, v):
        return v - self.project(v)


def build_P(spec: SystemSpec, cutoff_fraction: float = DEFAULT_CUTOFF_FRACTION, sigma: Optional[SymmetryType] = None,
            decompositions=None, width: Optional[float] = None, seed: int = 0) -> CutoffGroundBasis:
    """Projection onto the cut-off cluster ground states of the given decompositions.

    Cluster ground states are multiplied, per electron, by the smoothed cut-off
    of radius ``cutoff_fraction * R`` around the owning nucleus (R the smallest
    internuclear distance). ``decompositions`` defaults to the atomic ones.
    With ``sigma`` only the induced types of minimal energy enter and the
    basis of Q^sigma P is returned in ``sigma_vectors``.
    """
    if spec.mode != "1D_manybody":
        raise ValueError("build_P works on 1D many-body grids")
    R = spec.min_separation()
    radius = cutoff_fraction * R
    if not np.isfinite(R) or 2 * radius >= R:
        raise GeometryError(f"cut-off balls of radius {radius} overlap for separation {R}")
    width = radius / 4.0 if width is None else width
    x = spec.grid.points
    n = spec.grid.n
    for nu in spec.nuclei:
        y = nu.coords[0]
        if y - radius < x[0] or y + radius > x[-1]:
            raise GeometryError(f"cut-off ball around {y} leaves the grid")
    if decompositions is None:
        decompositions = atomic_decompositions(spec.n_electrons, spec.charges)

    cache = {}

    def ground(j, k, alpha=None):
        key = (j, k, None if alpha is None else alpha.diagram)
        if key not in cache:
            e, block = cluster_ground(spec, j, k, alpha, seed)
            chi = cutoff_profile(x - spec.nuclei[j].coords[0], radius, width)
            cut = block.reshape((n,) * k + (block.shape[1],)) if k else block
            for ax in range(k):
                shape = [1] * (k + 1)
                shape[ax] = n
                cut = cut * chi.reshape(shape)
            cache[key] = (e, cut.reshape(-1, block.shape[1]))
        return cache[key]

    if sigma is None:
        plan = [(a, None) for a in decompositions]
    else:
        plan = []
        for a in decompositions:
            def energy(diagrams, a=a):
                return sum(ground(j, len(c), _type_of(d))[0]
                           for j, (c, d) in enumerate(zip(a.clusters, diagrams)))
            found = induced_types(sigma, a, energy, want_minimizers=True)
            plan.extend((a, it.alpha, it.energy) for it in found if it.minimizer)
        best = min(e for _, _, e in plan)
        plan = [(a, al) for a, al, e in plan if e <= best + 1e-8]

    raw, labels, energies = [], [], []
    for a, alpha in plan:
        parts = []
        e_a = 0.0
        for j, c in enumerate(a.clusters):
            e, cut = ground(j, len(c), None if alpha is None else alpha[j])
            parts.append(cut)
            e_a += e
        for combo in itertools.product(*(range(p.shape[1]) for p in parts)):
            vec = _assemble_product(a, [p[:, i] for p, i in zip(parts, combo)], n)
            raw.append(vec / np.linalg.norm(vec))
            labels.append((a, None if alpha is None else tuple(t.diagram for t in alpha)))
            energies.append(e_a)
    raw = np.array(raw).T
    gram = raw.T @ raw
    same = np.array([[la[0] == lb[0] for lb in labels] for la in labels])
    overlap = float(np.max(np.abs(np.where(same, 0.0, gram)))) if len(labels) > 1 else 0.0
    vectors = orthonormal_range(raw, 1e-10)
    residuals = []
    for (a, _), v in zip(labels, raw.T):
        Ha = assemble_cluster(spec, a).matrix
        e = float(v @ (Ha @ v))
        residuals.append(float(np.linalg.norm(Ha @ v - e * v)))
    energies = np.array(energies)
    atomic = [e for (a, _), e in zip(labels, energies) if a.is_atomic]
    e_inf = float(min(atomic)) if atomic else float(min(energies))
    basis = CutoffGroundBasis(vectors, labels, radius, overlap, np.array(residuals), energies, e_inf)
    basis.raw = raw
    if sigma is not None:
        basis.sigma = sigma
        basis.sigma_vectors = projector(sigma, n).range_basis(vectors, 1e-8)
    return basis


def _type_of(diagram) -> SymmetryType:
    for t in irreps(sum(diagram)):
        if t.diagram == tuple(diagram):
            return t
    raise ValueError(f"unknown diagram {diagram}")


# ---------------------------------------------------------------------------
# the Feshbach-Schur map

@dataclass(frozen=True)
class FeshbachResult:
    lam: float
    F: np.ndarray
    U: np.ndarray
    PHP: np.ndarray
    margin: float

    @property
    def lowest(self) -> float:
        return float(np.linalg.eigvalsh(self.F)[0])


class FeshbachProblem:
    """H together with a projection P (and optionally a symmetry sector Q^sigma).

    All Schur-complement quantities live on Ran P and its complement inside
    the sector. Small problems use explicit dense complements; large ones use
    conjugate gradients with the complement projection applied at every step.
    """

    def __init__(self, H, basis, sector=None, dense_limit: int = DENSE_LIMIT, seed: int = 0,
                 cg_rtol: float = 1e-12, margin_tol: float = 1e-10):
        A = H.matrix if isinstance(H, ManyBodyOperator) else H
        self.A = A
        self.B = np.asarray(basis.vectors if isinstance(basis, CutoffGroundBasis) else basis, dtype=float)
        if self.B.ndim == 1:
            self.B = self.B[:, None]
        self.sector = sector
        self.dim = A.shape[0]
        self.dense = self.dim <= dense_limit
        self.seed = seed
        self.cg_rtol = cg_rtol
        self.margin_tol = margin_tol
        self.cg_iterations = 0

    # projections ---------------------------------------------------------
    def complement(self, v):
        w = self.sector.apply(v) if self.sector is not None else v
        return w - self.B @ (self.B.T @ w)

    @cached_property
    def complement_basis(self) -> np.ndarray:
        if not self.dense:
            raise ValueError("explicit complement only for dense problems")
        return orthonormal_range(self.complement(np.eye(self.dim)), 1e-8)

    def _dense_A(self):
        return self.A.toarray() if sp.issparse(self.A) else np.asarray(self.A)

    @cached_property
    def perp_bottom_pair(self) -> tuple:
        """Lowest eigenpair of H restricted to the complement of Ran P."""
        if self.dense:
            C = self.complement_basis
            w, V = np.linalg.eigh(C.T @ self._dense_A() @ C)
            return float(w[0]), C @ V[:, 0]
        shift = 2.0 * float(abs(self.A).sum(axis=0).max())

        def mv(v):
            c = self.complement(v)
            return self.complement(self.A @ c) + shift * (v - c)

        op = spla.LinearOperator(self.A.shape, matvec=mv, dtype=float)
        v0 = self.complement(np.random.default_rng(self.seed).standard_normal(self.dim))
        w, V = spla.eigsh(op, k=1, which="SA", tol=1e-12, v0=v0)
        return float(w[0]), V[:, 0]

    @property
    def perp_bottom(self) -> float:
        return self.perp_bottom_pair[0]

    @cached_property
    def PHP(self) -> np.ndarray:
        M = self.B.T @ (self.A @ self.B)
        return 0.5 * (M + M.T)

    @cached_property
    def coupling(self) -> np.ndarray:
        """P-perp H P as columns."""
        return self.complement(self.A @ self.B)

    # solves ----------------------------------------------------------------
    def check_window(self, lam):
        margin = self.perp_bottom - lam
        if margin <= self.margin_tol:
            raise NotInvertibleError(f"H_perp - lambda is not invertible (margin {margin:.3e})", margin=margin)
        return margin

    def solve_perp(self, rhs, lam):
        """Solve (H_perp - lam) X = rhs on the complement; rhs columns must lie there."""
        rhs = np.asarray(rhs, dtype=float)
        single = rhs.ndim == 1
        R = rhs[:, None] if single else rhs
        if self.dense:
            C = self.complement_basis
            Hp = C.T @ self._dense_A() @ C - lam * np.eye(C.shape[1])
            X = C @ np.linalg.solve(Hp, C.T @ R)
            return X[:, 0] if single else X

        def mv(v):
            c = self.complement(v)
            return self.complement(self.A @ c) - lam * c

        op = spla.LinearOperator(self.A.shape, matvec=mv, dtype=float)
        cols = []
        for k in range(R.shape[1]):
            b = R[:, k]
            bnorm = np.linalg.norm(b)
            if bnorm == 0:
                cols.append(np.zeros_like(b))
                continue
            count = [0]

            def cb(_):
                count[0] += 1

            x, info = spla.cg(op, b, rtol=self.cg_rtol, atol=0.0, maxiter=20 * self.dim, callback=cb)
            self.cg_iterations += count[0]
            x = self.complement(x)
            res = np.linalg.norm(mv(x) - b) / bnorm
            if res > 1e-9:
                raise ConvergenceFailure(f"inner solve residual {res:.2e}", best_residual=res)
            cols.append(x)
        X = np.column_stack(cols)
        return X[:, 0] if single else X

    def map(self, lam: float) -> FeshbachResult:
        margin = self.check_window(lam)
        W = self.coupling
        X = self.solve_perp(W, lam)
        U = W.T @ X
        U = 0.5 * (U + U.T)
        return FeshbachResult(float(lam), self.PHP - U, U, self.PHP, margin)

    def reconstruct(self, lam: float, coeffs) -> np.ndarray:
        """psi = Q(lam) phi with phi = B coeffs."""
        phi = self.B @ np.asarray(coeffs, dtype=float)
        return phi - self.solve_perp(self.complement(self.A @ phi), lam)


def feshbach_map(H, P, lam: float, **kwargs) -> FeshbachResult:
    """F_P(lam) = PHP - PH P_perp (H_perp - lam)^-1 P_perp H P on Ran P."""
    return FeshbachProblem(H, P, **kwargs).map(lam)


@dataclass(frozen=True)
class FixedPoint:
    energy: float
    vector: np.ndarray = field(repr=False)
    residual: float
    eigen_residual: float
    trace: tuple
    coefficients: np.ndarray = field(repr=False)


def solve_fixed_point(problem, lam0: float, tol: float = 1e-10, max_iter: int = 200,
                      damping: float = 0.5, validate: float = 1e-7, P=None) -> FixedPoint:
    """Find E with E = min eig F_P(E) by relaxed iteration, then rebuild the eigenvector.

    The step is lam <- lam + w (mu(lam) - lam) with w = 1 until successive
    steps change sign, after which w is multiplied by ``damping`` on each
    further sign change.
    """
    if not isinstance(problem, FeshbachProblem):
        problem = FeshbachProblem(problem, P)
    window = problem.perp_bottom
    if lam0 >= window - problem.margin_tol:
        raise WindowExitError(f"initial energy {lam0} is not below the complement bottom {window}")
    lam = float(lam0)
    w = 1.0
    last_step = None
    trace = []
    for _ in range(max_iter):
        res = problem.map(lam)
        vals, vecs = np.linalg.eigh(res.F)
        mu = float(vals[0])
        trace.append((lam, mu))
        step = mu - lam
        if abs(step) < tol:
            break
        if last_step is not None and np.sign(step) != np.sign(last_step):
            w *= damping
        last_step = step
        lam = lam + w * step
        if lam >= window - problem.margin_tol:
            raise WindowExitError(f"iteration left the invertibility window at {lam}")
    else:
        raise ConvergenceFailure("fixed-point iteration did not converge", best_residual=abs(step))
    coeffs = vecs[:, 0]
    psi = problem.reconstruct(mu, coeffs)
    Hpsi = problem.A @ psi
    eres = float(np.linalg.norm(Hpsi - mu * psi) / np.linalg.norm(psi))
    if eres > validate:
        raise ConvergenceFailure(f"reconstructed eigenvector residual {eres:.2e}", best_residual=eres)
    return FixedPoint(mu, psi, abs(step), eres, tuple(trace), coeffs)


def fixed_points(problem: FeshbachProblem, rel_gap: float = 1e-9) -> list:
    """Every solution of lam in eig F_P(lam) below the complement bottom.

    Each eigenvalue branch mu_k(lam) is non-increasing, so mu_k(lam) - lam has
    at most one root, bracketed between a point below spec(H) and the bottom.
    """
    bottom = problem.perp_bottom
    A = problem._dense_A() if problem.dense else None
    scale = max(1.0, abs(bottom))
    hi = bottom - rel_gap * scale
    if A is not None:
        lo = float(np.linalg.eigvalsh(A)[0]) - 1.0
    else:
        lo = float(spla.eigsh(problem.A, k=1, which="SA")[0][0]) - 1.0
    r = problem.B.shape[1]
    out = []
    for k in range(r):
        g = lambda lam, k=k: float(np.linalg.eigvalsh(problem.map(lam).F)[k]) - lam
        if g(hi) > 0:
            continue
        lam = brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
        vals, vecs = np.linalg.eigh(problem.map(lam).F)
        psi = problem.reconstruct(lam, vecs[:, k])
        res = float(np.linalg.norm(problem.A @ psi - lam * psi) / np.linalg.norm(psi))
        out.append((lam, psi, res))
    return sorted(out, key=lambda t: t[0])


# ---------------------------------------------------------------------------
# diagnostics

def php_diagnostics(spec: SystemSpec, P: CutoffGroundBasis, H=None) -> dict:
    """Deviation of PHP from E(inf) P and the diagonal interaction of each block."""
    H = assemble_full(spec) if H is None else H
    A = H.matrix if isinstance(H, ManyBodyOperator) else H
    PHP = P.vectors.T @ (A @ P.vectors)
    dev = float(np.linalg.norm(PHP - P.e_infinity * np.eye(P.rank), 2))
    diagonal = []
    for (a, _), v in zip(P.labels, P.raw.T):
        I = intercluster_values(spec, a).ravel()
        diagonal.append(float(v @ (I * v)))
    return {"php_deviation": dev, "diagonal": diagonal, "e_infinity": P.e_infinity,
            "labels": [a.owners for a, _ in P.labels]}


def saturating_distance_weight(spec: SystemSpec, radius: float, saturation: float, nucleus: int = 0) -> np.ndarray:
    """Sum over electrons of a C^2 ramp in the distance to one nucleus's ball.

    Each electron contributes ``saturation * S(2 d / saturation - 1)`` with d
    the distance to the ball of ``radius`` around the nucleus and S the bump
    CDF, so the weight is 0 inside the ball and constant beyond distance
    ``radius + saturation``.
    """
    x = spec.grid.points
    d = np.maximum(np.abs(x - spec.nuclei[nucleus].coords[0]) - radius, 0.0)
    g = saturation * bump_cdf(2 * d / saturation - 1)
    N = spec.n_electrons
    total = np.zeros((spec.grid.n,) * N)
    for i in range(N):
        shape = [1] * N
        shape[i] = spec.grid.n
        total = total + g.reshape(shape)
    return total.ravel()


def weight_derivative_bounds(weight, n_points: int, n_electrons: int, spacing: float) -> tuple:
    """(max |grad phi|^2, max |Laplacian phi|) by finite differences on the tensor grid."""
    t = np.asarray(weight).reshape((n_points,) * n_electrons)
    grad2 = np.zeros_like(t)
    lap = np.zeros_like(t)
    for ax in range(n_electrons):
        g = np.gradient(t, spacing, axis=ax)
        grad2 += g * g
        lap += np.gradient(g, spacing, axis=ax)
    return float(grad2.max()), float(np.abs(lap).max())


@dataclass(frozen=True)
class BoostedResolvent:
    norm: float
    smallest_singular_value: float
    estimate: float
    iterations: int


def boosted_resolvent_norm(problem: FeshbachProblem, weight, delta: float, E: float,
                           n_points: int, n_electrons: int, spacing: float,
                           tol: float = 1e-12, max_iter: int = 2000, seed: int = 0) -> BoostedResolvent:
    """||(e^{-delta phi} H_perp e^{delta phi} - E)^{-1}|| from the top eigenvalue of (A^T A)^-1.

    The weight must be constant on the support of every basis vector of P so
    that multiplication by e^{delta phi} leaves Ran P invariant.
    """
    if problem.sector is not None:
        raise ValueError("boosted resolvent is implemented without symmetry sectors")
    weight = np.asarray(weight, dtype=float)
    for v in problem.B.T:
        supp = np.abs(v) > 1e-14 * np.abs(v).max()
        spread = weight[supp].max() - weight[supp].min()
        if spread > 1e-10:
            raise DomainError(f"weight varies by {spread:.2e} on the support of a P vector")
    grad2, lap = weight_derivative_bounds(weight, n_points, n_electrons, spacing)
    margin = problem.perp_bottom - E
    estimate = 0.5 * delta**2 * grad2 + 0.5 * delta * lap
    if estimate >= 0.5 * margin:
        raise BoostTooLargeError(f"boost estimate {estimate:.3e} exceeds half the margin {margin:.3e}",
                                 estimate=estimate)
    A = sp.csr_matrix(problem.A)
    D = sp.diags(np.exp(delta * weight))
    Dinv = sp.diags(np.exp(-delta * weight))
    M = (Dinv @ A @ D - E * sp.identity(A.shape[0])).tocsc()
    B = sp.csc_matrix(problem.B)
    r = B.shape[1]
    K = sp.bmat([[M, B], [B.T, None]], format="csc")
    lu = spla.splu(K)
    dim = A.shape[0]

    def solve(b, trans="N"):
        return lu.solve(np.concatenate([b, np.zeros(r)]), trans=trans)[:dim]

    calls = [0]

    def normal_inverse(v):
        calls[0] += 1
        c = problem.complement(v)
        return problem.complement(solve(solve(c), trans="T"))

    # Lanczos on (A^T A)^-1 over the complement: a Krylov-accelerated inverse iteration
    op = spla.LinearOperator((dim, dim), matvec=normal_inverse, dtype=float)
    v0 = problem.complement(np.random.default_rng(seed).standard_normal(dim))
    try:
        w, V = spla.eigsh(op, k=1, which="LA", tol=tol, v0=v0, maxiter=max_iter)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceFailure("boosted resolvent iteration did not converge",
                                 best_residual=float("nan")) from exc
    top = float(w[0])
    if not np.isfinite(top) or top <= 0:
        raise BoostTooLargeError("inverse iteration diverged", estimate=estimate)
    smin = 1.0 / np.sqrt(top)
    return BoostedResolvent(1.0 / smin, smin, estimate, calls[0])
