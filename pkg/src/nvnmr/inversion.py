"""Invert rms-field measurements into NV depth, surface density and molecule
counts, and tabulate how those depend on the assumed adsorbate thickness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import DEFAULT_CONSTANTS, F19, H1, InputError, NumericalError, NuclearSpecies, PhysicalConstants
from .dipolar import (
    HALF_SPACE,
    Thickness,
    _plane_coefficient,
    as_thickness,
    layer_brms2,
    surface2d_brms2,
)
from .profile import AREA_COEFFICIENT

__all__ = [
    "DEFAULT_RHO3D",
    "DEFAULT_DELTA",
    "TABLE_DELTAS",
    "DepthEstimate",
    "ThicknessRow",
    "SurfaceReport",
    "depth_from_brms",
    "density2d_from_brms",
    "molecule_count",
    "thickness_sensitivity",
    "depth_error_curve",
    "propagate_uncertainty",
    "surface_report",
]

DEFAULT_RHO3D = 60e27  # protons per m^3 in an adsorbed water film
DEFAULT_DELTA = 1e-9
TABLE_DELTAS: tuple[Thickness, ...] = (1e-9, 2e-9, 0.5e-9, 0.25e-9, HALF_SPACE)

_BRACKET = (0.1e-9, 100e-9)
_REL_TOL = 1e-12
_MAX_DECADES = 60


@dataclass(frozen=True)
class DepthEstimate:
    depth: float
    assumed_delta: Thickness
    assumed_rho3d: float
    brms_in: float
    uncertainty: float = 0.0


@dataclass(frozen=True)
class ThicknessRow:
    delta: Thickness
    depth: float
    rho2d_spins: float
    rho2d_molecules: float
    count: float


@dataclass
class SurfaceReport:
    nv_label: str
    depth: DepthEstimate
    rho2d_spins: float
    rho2d_molecules: float
    atoms_per_molecule: int
    sensitive_area: float
    molecule_count: float
    thickness_table: list[ThicknessRow] = field(default_factory=list)
    sigma_rho2d_spins: float = 0.0
    sigma_molecule_count: float = 0.0
    brms_f: float = 0.0
    reported_depth: float = float("nan")

    @property
    def molecules_display(self) -> int:
        return int(round(self.molecule_count))


def _bisect_depth(brms2: float, delta: Thickness, rho3d: float, species: NuclearSpecies,
                  constants: PhysicalConstants) -> float:
    """Bisection on the strictly decreasing map d -> B^2(d)."""

    if not (brms2 > 0 and math.isfinite(brms2)):
        raise NumericalError(f"brms^2 = {brms2!r} is not representable; depth cannot be bracketed")

    def f(d):
        return layer_brms2(d, delta, rho3d, species, constants) - brms2

    lo, hi = _BRACKET
    # 60 decades either way keeps d^3 and d^-3 finite in double precision
    for _ in range(_MAX_DECADES):
        if f(lo) > 0:
            break
        lo /= 10
    else:
        raise NumericalError("could not bracket the depth from below")
    for _ in range(_MAX_DECADES):
        if f(hi) < 0:
            break
        hi *= 10
    else:
        raise NumericalError("could not bracket the depth from above")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _REL_TOL * mid:
            break
    return 0.5 * (lo + hi)


def _dlog_brms2_dd(d: float, delta: Thickness) -> float:
    """d ln(B^2) / dd for the layer model."""
    if delta is HALF_SPACE:
        return -3.0 / d
    h = d ** -3 - (d + delta) ** -3
    dh = -3 * d ** -4 + 3 * (d + delta) ** -4
    return dh / h


def depth_from_brms(brms: float, delta=DEFAULT_DELTA, rho3d: float = DEFAULT_RHO3D,
                    species: NuclearSpecies = H1, brms_sigma: float = 0.0,
                    constants: PhysicalConstants = DEFAULT_CONSTANTS) -> DepthEstimate:
    """NV depth whose adsorbate layer would produce ``brms`` (T)."""
    if brms == 0:
        raise InputError("infinite depth: brms = 0 corresponds to no detectable bath")
    if not brms > 0:
        raise InputError(f"brms must be positive, got {brms!r}")
    if not rho3d > 0:
        raise InputError(f"spin density must be positive, got {rho3d!r}")
    delta = as_thickness(delta)
    if delta is not HALF_SPACE and delta == 0:
        raise InputError("a zero-thickness layer produces no field")
    d = _bisect_depth(brms * brms, delta, rho3d, species, constants)
    sigma = depth_sigma(d, delta, brms, brms_sigma)
    return DepthEstimate(d, delta, rho3d, brms, sigma)


def depth_sigma(depth: float, delta: Thickness, brms: float, brms_sigma: float) -> float:
    """First-order depth error: sigma_d = 2 sigma_B / (B |d ln B^2/dd|)."""
    if brms_sigma < 0:
        raise InputError("brms_sigma must be non-negative")
    if brms_sigma == 0:
        return 0.0
    return 2 * brms_sigma / (brms * abs(_dlog_brms2_dd(depth, as_thickness(delta))))


def density2d_from_brms(brms: float, depth: float, species: NuclearSpecies = F19,
                        constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Areal spin density (m^-2) of a surface monolayer producing ``brms`` (T)."""
    if brms < 0:
        raise InputError(f"brms must be non-negative, got {brms!r}")
    if not depth > 0:
        raise InputError(f"depth must be positive, got {depth!r}")
    return brms * brms * depth ** 4 / _plane_coefficient(species, constants)


def molecule_count(rho2d_spins: float, atoms_per_molecule: int, depth: float,
                   area_coefficient: float = AREA_COEFFICIENT) -> float:
    """Molecules inside the sensitive area A = area_coefficient * d^2."""
    if atoms_per_molecule < 1:
        raise InputError("atoms_per_molecule must be at least 1")
    return rho2d_spins / atoms_per_molecule * area_coefficient * depth ** 2


def propagate_uncertainty(depth: float, delta: Thickness, brms_h: float, brms_h_sigma: float,
                          brms_f: float = 0.0, brms_f_sigma: float = 0.0,
                          species_f: NuclearSpecies = F19, atoms_per_molecule: int = 1,
                          area_coefficient: float = AREA_COEFFICIENT,
                          constants: PhysicalConstants = DEFAULT_CONSTANTS) -> dict[str, float]:
    """First-order sigmas for depth, areal density and molecule count.

    rho2d ~ B_F^2 d^4 and N ~ B_F^2 d^6, with independent errors on the two
    field measurements:
        sigma_rho/rho = sqrt((2 sB_F/B_F)^2 + (4 s_d/d)^2)
        sigma_N/N     = sqrt((2 sB_F/B_F)^2 + (6 s_d/d)^2)
    """
    if brms_h_sigma < 0 or brms_f_sigma < 0:
        raise InputError("uncertainties must be non-negative")
    s_d = depth_sigma(depth, delta, brms_h, brms_h_sigma)
    rho = density2d_from_brms(brms_f, depth, species_f, constants)
    count = molecule_count(rho, atoms_per_molecule, depth, area_coefficient)
    rel_b = 2 * brms_f_sigma / brms_f if brms_f > 0 else 0.0
    rel_d = s_d / depth
    return {
        "depth": s_d,
        "rho2d": rho * math.hypot(rel_b, 4 * rel_d),
        "molecule_count": count * math.hypot(rel_b, 6 * rel_d),
    }


def thickness_sensitivity(brms: float, rho3d: float = DEFAULT_RHO3D, species: NuclearSpecies = H1,
                          delta_grid: Sequence = TABLE_DELTAS, brms_f: float = 0.0,
                          species_f: NuclearSpecies = F19, atoms_per_molecule: int = 3,
                          depth_round: float | None = None,
                          area_coefficient: float = AREA_COEFFICIENT,
                          constants: PhysicalConstants = DEFAULT_CONSTANTS) -> list[ThicknessRow]:
    """Depth, density and count for each assumed layer thickness.

    ``depth_round`` (m) rounds each inferred depth before the density step,
    the way tabulated values are usually derived from displayed depths.
    """
    if not delta_grid:
        raise InputError("delta_grid must not be empty")
    rows = []
    for delta in delta_grid:
        est = depth_from_brms(brms, delta, rho3d, species, constants=constants)
        d = _round_depth(est.depth, depth_round)
        rho = density2d_from_brms(brms_f, d, species_f, constants)
        rows.append(ThicknessRow(est.assumed_delta, est.depth, rho, rho / atoms_per_molecule,
                                 molecule_count(rho, atoms_per_molecule, d, area_coefficient)))
    return rows


def depth_error_curve(depth_true: float, delta_true: Thickness, delta_grid: Sequence,
                      rho3d: float = DEFAULT_RHO3D, species: NuclearSpecies = H1,
                      constants: PhysicalConstants = DEFAULT_CONSTANTS) -> list[tuple[Thickness, float]]:
    """(d_inferred - d_true)/d_true when inverting with a wrong thickness.

    The field is computed forward for (depth_true, delta_true), then inverted
    using each assumed thickness in ``delta_grid``.
    """
    b = math.sqrt(layer_brms2(depth_true, delta_true, rho3d, species, constants))
    out = []
    for delta in delta_grid:
        delta = as_thickness(delta)
        if delta == as_thickness(delta_true):
            out.append((delta, 0.0))
            continue
        d = depth_from_brms(b, delta, rho3d, species, constants=constants).depth
        out.append((delta, (d - depth_true) / depth_true))
    return out


def _round_depth(depth: float, step: float | None) -> float:
    if not step:
        return depth
    return round(depth / step) * step


def surface_report(nv_label: str, brms_h: Sequence[float] | float | None, brms_f: float,
                   delta=DEFAULT_DELTA, rho3d: float = DEFAULT_RHO3D, atoms_per_molecule: int = 3,
                   species_h: NuclearSpecies = H1, species_f: NuclearSpecies = F19,
                   depth: float | None = None, brms_h_sigma: float = 0.0, brms_f_sigma: float = 0.0,
                   depth_round: float | None = 0.1e-9, delta_grid: Sequence = TABLE_DELTAS,
                   area_coefficient: float = AREA_COEFFICIENT,
                   constants: PhysicalConstants = DEFAULT_CONSTANTS) -> SurfaceReport:
    """Depth from the proton field, then density and molecule count from the
    fluorine field.

    Several proton measurements are averaged before inversion. ``depth``
    bypasses the proton inversion with an externally known depth. The depth
    used downstream is the inferred depth rounded to ``depth_round``
    (default 0.1 nm, i.e. the displayed value); pass ``None`` to chain at
    full precision.
    """
    if brms_f < 0:
        raise InputError("fluorine brms must be non-negative")
    if depth is not None:
        if not depth > 0:
            raise InputError("depth must be positive")
        b_h = _mean_brms(brms_h) if brms_h is not None else float("nan")
        est = DepthEstimate(depth, as_thickness(delta), rho3d, b_h, 0.0)
        d_used = depth
        table = []
    else:
        if brms_h is None:
            raise InputError("either a proton brms or an explicit depth is required")
        b_h = _mean_brms(brms_h)
        est = depth_from_brms(b_h, delta, rho3d, species_h, brms_h_sigma, constants)
        d_used = _round_depth(est.depth, depth_round)
        table = thickness_sensitivity(b_h, rho3d, species_h, delta_grid, brms_f, species_f,
                                      atoms_per_molecule, depth_round, area_coefficient, constants)
    rho = density2d_from_brms(brms_f, d_used, species_f, constants)
    area = area_coefficient * d_used ** 2
    count = molecule_count(rho, atoms_per_molecule, d_used, area_coefficient)
    if depth is None:
        sig = propagate_uncertainty(d_used, est.assumed_delta, b_h, brms_h_sigma, brms_f, brms_f_sigma,
                                    species_f, atoms_per_molecule, area_coefficient, constants)
    else:
        rel_b = 2 * brms_f_sigma / brms_f if brms_f > 0 else 0.0
        sig = {"rho2d": rho * rel_b, "molecule_count": count * rel_b}
    return SurfaceReport(nv_label, est, rho, rho / atoms_per_molecule, atoms_per_molecule, area, count,
                         table, sig["rho2d"], sig["molecule_count"], brms_f, d_used)


def _mean_brms(values) -> float:
    if isinstance(values, (int, float)):
        return float(values)
    values = [float(v) for v in values]
    if not values:
        raise InputError("no proton brms measurements given")
    return sum(values) / len(values)
