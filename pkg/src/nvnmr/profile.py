"""Sensitivity profile of a shallow NV: where on the surface (or in the bath)
the measured B_rms^2 comes from.

The minimal region holding a given fraction of the signal is the superlevel
set of the single-spin integrand: sort cells by value and accumulate until
the fraction is reached. Fractions always refer to B_rms^2; half of B_rms^2
is ~70 % of B_rms.

On uniform cell-centred grids (half-width 12 d, spacing d/40) the half-B^2
area converges to 0.735 d^2 and the half-B^2 volume to about (1.00 d)^3.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scipy.integrate import quad

from .core import DEFAULT_CONSTANTS, H1, InputError, NuclearSpecies, PhysicalConstants
from .dipolar import _moment_coupling2

__all__ = [
    "AREA_COEFFICIENT",
    "VOLUME_EDGE_COEFFICIENT",
    "ExtentWarning",
    "SensitivityMap",
    "Region",
    "VolumeRegion",
    "build_map_2d",
    "minimal_region_fraction",
    "minimal_volume_fraction",
    "sensitive_area",
    "write_map_csv",
    "disk_tail_fraction",
]

# Published constants: A = 0.735 d^2 and V = (0.98 d)^3 for half of B_rms^2.
AREA_COEFFICIENT = 0.735
VOLUME_EDGE_COEFFICIENT = 0.98

DEFAULT_EXTENT = 12.0  # half-width in units of depth
DEFAULT_RESOLUTION = 1 / 40  # cell size in units of depth
DEFAULT_Z_EXTENT = 20.0  # slab thickness for the volume integrand, units of depth


class ExtentWarning(UserWarning):
    """The requested region reaches the edge of the integration domain."""


@dataclass(frozen=True)
class SensitivityMap:
    grid: np.ndarray  # (nx, ny) single-spin B^2 per spin, T^2
    cell_size: float  # m
    depth: float  # m
    total: float  # sum(grid) * cell area: B^2 per unit areal density, T^2 m^2
    x: np.ndarray
    y: np.ndarray

    @property
    def cell_area(self) -> float:
        return self.cell_size ** 2


@dataclass(frozen=True)
class Region:
    area: float
    boundary: float  # smallest included integrand value
    n_cells: int
    fraction: float
    extent_limited: bool


@dataclass(frozen=True)
class VolumeRegion:
    volume: float
    boundary: float
    n_cells: int
    fraction: float
    total: float  # B^2 per unit volumetric density, T^2 m^3
    extent_limited: bool

    @property
    def edge(self) -> float:
        return self.volume ** (1 / 3)


def _centres(half_width: float, h: float) -> np.ndarray:
    n = int(round(2 * half_width / h))
    # offsets are exact (half-)integers, so the grid is mirror-symmetric
    return (np.arange(n) - (n - 1) / 2) * h


def _check_grid(depth: float, extent: float, resolution: float) -> None:
    if not depth > 0:
        raise InputError("depth must be positive")
    if extent < 10 * depth * (1 - 1e-12):
        raise InputError(f"grid half-width must be at least 10 x depth, got {extent / depth:.3g} x")
    if resolution > depth / 20 * (1 + 1e-12):
        warnings.warn(f"grid spacing d/{depth / resolution:.3g} is coarser than d/20", RuntimeWarning, stacklevel=3)


def _slab_values(x: np.ndarray, y2: np.ndarray, z: float, s: float, c: float) -> np.ndarray:
    a = x * s + z * c
    a2 = (a * a)[:, None]
    r2 = (x * x + z * z)[:, None] + y2[None, :]
    r4 = r2 * r2
    return 9.0 * a2 * (r2 - a2) / (r4 * r4 * r2)


def build_map_2d(depth: float, species: NuclearSpecies = H1, grid_extent: float | None = None,
                 resolution: float | None = None,
                 constants: PhysicalConstants = DEFAULT_CONSTANTS) -> SensitivityMap:
    """Single-spin B^2 on the surface plane z = depth.

    ``grid_extent`` is the half-width of the square domain (default 12 d);
    ``resolution`` the cell size (default d/40).
    """
    extent = DEFAULT_EXTENT * depth if grid_extent is None else grid_extent
    h = DEFAULT_RESOLUTION * depth if resolution is None else resolution
    _check_grid(depth, extent, h)
    x = _centres(extent, h)
    y = x.copy()
    th = constants.theta0
    grid = _moment_coupling2(species, constants) * _slab_values(x, y * y, depth, math.sin(th), math.cos(th))
    total = float(grid.sum()) * h * h
    return SensitivityMap(grid, h, depth, total, x, y)


# A region is extent-limited when the signal lost outside the domain exceeds
# this share of the remainder 1 - fraction left out on purpose.
TAIL_SHARE = 0.05


def _ring_density(rho: float, theta0: float) -> float:
    """Azimuthal integral of the integrand at radius rho on the plane z = 1."""
    s2, c2 = math.sin(theta0) ** 2, math.cos(theta0) ** 2
    r2 = rho * rho + 1.0
    a2 = rho * rho * s2 / 2 + c2
    a4 = 3 / 8 * rho ** 4 * s2 * s2 + 3 * rho * rho * s2 * c2 + c2 * c2
    return 2 * math.pi * rho * 9 * (r2 * a2 - a4) / r2 ** 5


def disk_tail_fraction(radius_over_depth: float, theta0: float = DEFAULT_CONSTANTS.theta0) -> float:
    """Share of the infinite-plane B^2 lying outside a disk of the given radius."""
    inside, _ = quad(_ring_density, 0.0, radius_over_depth, args=(theta0,), epsabs=0, epsrel=1e-12, limit=200)
    outside, _ = quad(_ring_density, radius_over_depth, np.inf, args=(theta0,), epsabs=0, epsrel=1e-10, limit=200)
    return outside / (inside + outside)


def _volume_tail_fraction(depth: float, extent: float, zext: float, theta0: float) -> float:
    """Share of the half-space B^2 outside [-L, L]^2 x [d, d + zext] (upper bound)."""
    z1 = depth + zext
    beyond = (depth / z1) ** 3
    lateral, _ = quad(lambda z: disk_tail_fraction(extent / z, theta0) * z ** -4, depth, z1, epsrel=1e-8)
    return beyond + lateral * 3 * depth ** 3


def _edge_max(grid: np.ndarray) -> float:
    return float(max(grid[0].max(), grid[-1].max(), grid[:, 0].max(), grid[:, -1].max()))


def minimal_region_fraction(smap: SensitivityMap, fraction: float) -> Region:
    """Smallest set of cells carrying ``fraction`` of the map's total B^2."""
    if not 0 < fraction < 1:
        raise InputError("fraction must lie in (0, 1)")
    values = smap.grid.ravel()
    order = np.argsort(-values, kind="stable")
    ranked = values[order]
    cumulative = np.cumsum(ranked) * smap.cell_area
    n = int(np.searchsorted(cumulative, fraction * smap.total)) + 1
    n = min(n, len(ranked))
    boundary = float(ranked[n - 1])
    half_width = float(smap.x[-1] + smap.cell_size / 2)
    tail = disk_tail_fraction(half_width / smap.depth)
    limited = boundary <= _edge_max(smap.grid) or tail > TAIL_SHARE * (1 - fraction)
    if limited:
        warnings.warn(f"region for fraction {fraction} reaches the grid edge; enlarge the extent",
                      ExtentWarning, stacklevel=2)
    return Region(n * smap.cell_area, boundary, n, fraction, limited)


def sensitive_area(depth: float, coefficient: float = AREA_COEFFICIENT) -> float:
    return coefficient * depth ** 2


def minimal_volume_fraction(depth: float, species: NuclearSpecies = H1, fraction: float = 0.5,
                            resolution: float | None = None, lateral_extent: float | None = None,
                            z_extent: float | None = None,
                            constants: PhysicalConstants = DEFAULT_CONSTANTS) -> VolumeRegion:
    """Smallest bath volume (m^3) carrying ``fraction`` of the half-space B^2.

    The domain is [-L, L]^2 x [d, d + z_extent] (defaults L = 12 d,
    z_extent = 20 d) on a uniform grid of spacing ``resolution`` (d/40).
    Slabs are processed one at a time in increasing z. Only cells above a
    floor are kept; if they turn out to hold less than ``fraction`` of the
    total, the floor is lowered and the pass repeated.
    """
    if not 0 < fraction < 1:
        raise InputError("fraction must lie in (0, 1)")
    extent = DEFAULT_EXTENT * depth if lateral_extent is None else lateral_extent
    h = DEFAULT_RESOLUTION * depth if resolution is None else resolution
    zext = DEFAULT_Z_EXTENT * depth if z_extent is None else z_extent
    _check_grid(depth, extent, h)
    x = _centres(extent, h)
    # mirror symmetry in y: evaluate y > 0 only and count every cell twice
    mirrored = len(x) % 2 == 0
    y_half = x[x > 0] if mirrored else x
    y2 = y_half * y_half
    mult = 2 if mirrored else 1
    nz = int(round(zext / h))
    zs = depth + (np.arange(nz) + 0.5) * h
    th = constants.theta0
    s, c = math.sin(th), math.cos(th)
    coupling = _moment_coupling2(species, constants)
    cell = h ** 3

    floor_rel = 1e-3
    while True:
        total = 0.0
        kept = []
        edge_max = 0.0
        floor = None
        for k, z in enumerate(zs):
            g = _slab_values(x, y2, z, s, c)
            total += mult * float(g.sum())
            if floor is None:
                floor = float(g.max()) * floor_rel
            edge_max = max(edge_max, _edge_max(g) if not mirrored else
                           max(float(g[0].max()), float(g[-1].max()), float(g[:, -1].max())))
            if k == nz - 1:
                edge_max = max(edge_max, float(g.max()))
            hit = g[g >= floor]
            if hit.size:
                kept.append(np.repeat(hit, mult))
        ranked = np.sort(np.concatenate(kept))[::-1]
        cumulative = np.cumsum(ranked)
        target = fraction * total
        if cumulative[-1] >= target:
            break
        floor_rel *= 1e-2
    n = int(np.searchsorted(cumulative, target)) + 1
    boundary = float(ranked[n - 1])
    tail = _volume_tail_fraction(depth, extent, zext, th)
    limited = boundary <= edge_max or tail > TAIL_SHARE * (1 - fraction)
    if limited:
        warnings.warn(f"volume for fraction {fraction} reaches the domain edge", ExtentWarning, stacklevel=2)
    return VolumeRegion(n * cell, coupling * boundary, n, fraction, coupling * total * cell, limited)


def write_map_csv(smap: SensitivityMap, path: str | Path) -> int:
    """Write ``x_nm,y_nm,value`` rows; returns the number of data rows."""
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_nm", "y_nm", "value"])
        for i, xv in enumerate(smap.x):
            for j, yv in enumerate(smap.y):
                w.writerow([f"{xv * 1e9:.6g}", f"{yv * 1e9:.6g}", f"{smap.grid[i, j]:.10g}"])
                rows += 1
    return rows
