"""Uniform grids, model potentials and smoothed cut-off functions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CutoffClippedError, InvalidExtentError, InvalidGridError

POTENTIAL_KINDS = ("soft_coulomb", "coulomb_radial", "custom_table")


@dataclass(frozen=True)
class Grid:
    """Uniform one-dimensional grid including both endpoints."""

    points_per_axis: int
    x_min: float
    x_max: float

    def __post_init__(self):
        if int(self.points_per_axis) != self.points_per_axis or self.points_per_axis < 2:
            raise InvalidGridError(f"need at least 2 grid points, got {self.points_per_axis}")
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)) or self.x_min >= self.x_max:
            raise InvalidExtentError(f"degenerate extent [{self.x_min}, {self.x_max}]")

    @property
    def n(self) -> int:
        return int(self.points_per_axis)

    @property
    def extent(self) -> tuple:
        return (self.x_min, self.x_max)

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.points_per_axis - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)


def build_grid(n: int, extent) -> Grid:
    """Build a uniform grid with ``n`` points spanning ``extent`` (both ends included).

    Args:
        n: number of sampling points, at least 2.
        extent: pair ``(x_min, x_max)`` with ``x_min < x_max``.

    Returns:
        Grid
    """
    x_min, x_max = extent
    return Grid(int(n), float(x_min), float(x_max))


@dataclass(frozen=True)
class RadialGrid:
    """Interior nodes r_i = i*h, i = 1..n, of (0, r_max) with u(0) = u(r_max) = 0."""

    n: int
    r_max: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidGridError(f"need at least 2 radial nodes, got {self.n}")
        if not self.r_max > 0:
            raise InvalidExtentError(f"r_max must be positive, got {self.r_max}")

    @property
    def spacing(self) -> float:
        return self.r_max / (self.n + 1)

    @property
    def points(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.n + 1)


def build_radial_grid(n: int, r_max: float) -> RadialGrid:
    return RadialGrid(int(n), float(r_max))


@dataclass(frozen=True)
class PotentialSpec:
    """Model for the electron-nucleus attraction and the pair kernels.

    ``strength`` multiplies every Coulomb-like term (the squared charge unit).
    The attraction sign is applied during assembly. ``ee_softening`` and
    ``nn_softening`` default to ``softening``; ``nn_softening=0`` gives the bare
    1/R repulsion between nuclei. Per-nucleus overrides of the attraction
    softening live on the nuclei themselves.
    """

    kind: str = "soft_coulomb"
    softening: float = 1.0
    strength: float = 1.0
    ell: int = 0
    ee_softening: Optional[float] = None
    nn_softening: Optional[float] = None
    table: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not np.isfinite(self.strength):
            raise ValueError("strength must be finite")
        for name in ("softening", "ee_softening"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.nn_softening is not None and not self.nn_softening >= 0:
            raise ValueError(f"nn_softening must be non-negative, got {self.nn_softening}")
        if self.kind == "coulomb_radial" and self.ell < 0:
            raise ValueError("angular momentum must be non-negative")
        if self.kind == "custom_table":
            if self.table is None:
                raise ValueError("custom_table needs a (positions, values) table")
            z, v = (np.asarray(t, dtype=float) for t in self.table)
            if z.ndim != 1 or z.shape != v.shape or z.size < 2 or np.any(np.diff(z) <= 0):
                raise ValueError("table positions must be increasing and match values")

    @property
    def ee_scale(self) -> float:
        return self.softening if self.ee_softening is None else self.ee_softening

    @property
    def nn_scale(self) -> float:
        return self.softening if self.nn_softening is None else self.nn_softening


def soft_coulomb(r, a=1.0):
    """Regularized kernel 1/sqrt(r^2 + a^2)."""
    r = np.asarray(r, dtype=float)
    return 1.0 / np.sqrt(r * r + a * a)


def load_potential_table(path, **kwargs) -> PotentialSpec:
    """Read a two-column (position, value) text table into a custom potential."""
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, got {data.shape[1]}")
    return PotentialSpec(kind="custom_table", table=(data[:, 0], data[:, 1]), **kwargs)


def nuclear_potential(potential: PotentialSpec, x, center, charge, softening=None):
    """Potential energy of one electron at ``x`` due to a nucleus at ``center``.

    For soft-Coulomb this is ``-strength*charge/sqrt((x-center)^2 + a^2)``; a
    custom table is read as the one-body profile for unit charge and
    interpolated linearly (zero outside the table).
    """
    z = np.asarray(x, dtype=float) - center
    if potential.kind == "soft_coulomb":
        a = potential.softening if softening is None else softening
        return -potential.strength * charge * soft_coulomb(z, a)
    if potential.kind == "custom_table":
        zt, vt = potential.table
        return potential.strength * charge * np.interp(z, zt, vt, left=0.0, right=0.0)
    raise ValueError("radial Coulomb potentials are assembled by manybody.radial_hamiltonian")


# ---------------------------------------------------------------------------
# mollifier and cut-offs

def bump(t):
    """Normalized polynomial bump (35/32)(1 - t^2)^3 supported on [-1, 1]."""
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) < 1, 35.0 / 32.0 * (1 - t * t) ** 3, 0.0)


def bump_cdf(t):
    """Integral of :func:`bump` from -1 to t (C^3, monotone, 0 -> 1)."""
    t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    return 0.5 + 35.0 / 32.0 * (t - t**3 + 0.6 * t**5 - t**7 / 7.0)


def mollified_interval(x, center, half_length, half_width):
    """Indicator of [center - L, center + L] convolved with the bump of half-width w."""
    x = np.asarray(x, dtype=float)
    lo = (x - (center - half_length)) / half_width
    hi = (x - (center + half_length)) / half_width
    return bump_cdf(lo) - bump_cdf(hi)


def cutoff_profile(z, radius, width):
    """Smoothed ball indicator: 1 for |z| <= radius - width, 0 for |z| >= radius."""
    return mollified_interval(z, 0.0, radius - width / 2.0, width / 2.0)


@dataclass(frozen=True)
class CutoffFn:
    radius: float
    transition_width: float
    center: float
    grid: Grid
    samples: np.ndarray = field(compare=False)

    def __call__(self, z):
        return cutoff_profile(np.asarray(z, dtype=float) - self.center, self.radius, self.transition_width)

    def max_slope(self) -> float:
        """Largest finite-difference slope of the sampled profile."""
        return float(np.max(np.abs(np.diff(self.samples))) / self.grid.spacing)


def smoothed_cutoff(radius: float, width: Optional[float], grid: Grid, center: float = 0.0) -> CutoffFn:
    """Sample the smoothed cut-off of a ball of ``radius`` centred at ``center``.

    ``width`` defaults to radius/4. The profile is the sharp indicator of the
    ball of radius ``radius - width/2`` convolved with a bump of half-width
    ``width/2``, so its slope never exceeds 35/(16*width).
    """
    if width is None:
        width = radius / 4.0
    if not 0 < width < radius:
        raise ValueError(f"need 0 < width < radius, got width={width}, radius={radius}")
    if center - radius < grid.x_min or center + radius > grid.x_max:
        raise CutoffClippedError(
            f"cut-off [{center - radius}, {center + radius}] leaves the grid {grid.extent}")
    samples = cutoff_profile(grid.points - center, radius, width)
    return CutoffFn(float(radius), float(width), float(center), grid, samples)
