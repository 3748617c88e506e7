"""Closed-form rms dipolar fields from nuclear-spin baths above a shallow NV.

Coordinates: the NV sits at the origin, ``z`` points from the NV towards the
surface (and into the bath), the surface plane is ``z = d`` and the NV axis
lies in the x-z plane at angle ``theta0`` from the surface normal.

Normalization: the single-spin expression uses mu_I = hbar*gamma/2 for I=1/2
nuclei. Integrating it over a plane at height ``d`` gives
5 mu0^2 (gamma hbar)^2 / (512 pi d^4), so the layer and 2D closed forms below
already absorb the spin-1/2 convention. The Monte-Carlo tests check this
numerically.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import DEFAULT_CONSTANTS, H1, InputError, NuclearSpecies, PhysicalConstants

__all__ = [
    "HALF_SPACE",
    "Thickness",
    "as_thickness",
    "BathGeometry",
    "SpinPosition",
    "geometric_factor",
    "single_spin_brms2",
    "layer_correction_factor",
    "layer_brms2",
    "layer_brms",
    "surface2d_brms2",
    "surface2d_brms",
    "prefactor_3d",
    "prefactor_2d",
]


class _HalfSpace(enum.Enum):
    HALF_SPACE = "inf"

    def __repr__(self) -> str:
        return "HALF_SPACE"


HALF_SPACE = _HalfSpace.HALF_SPACE
Thickness = Union[float, _HalfSpace]


def as_thickness(value) -> Thickness:
    """Normalize a thickness given as a number, ``inf`` or the string "inf"."""
    if value is HALF_SPACE:
        return HALF_SPACE
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "half-space", "halfspace"):
            return HALF_SPACE
        try:
            value = float(value)
        except ValueError:
            raise InputError(f"cannot parse thickness {value!r}") from None
    value = float(value)
    if math.isinf(value) and value > 0:
        return HALF_SPACE
    if not value >= 0 or math.isnan(value):
        raise InputError(f"layer thickness must be non-negative, got {value!r}")
    return value


@dataclass(frozen=True)
class BathGeometry:
    """NV depth and bath description, all in SI.

    Set ``rho3d`` for a layer / half-space bath, ``rho2d`` for a surface
    monolayer; never both.
    """

    depth: float
    thickness: Thickness = HALF_SPACE
    rho3d: float | None = None
    rho2d: float | None = None
    species: NuclearSpecies = H1

    def __post_init__(self) -> None:
        if not self.depth > 0:
            raise InputError(f"NV depth must be positive, got {self.depth!r}")
        object.__setattr__(self, "thickness", as_thickness(self.thickness))
        if (self.rho3d is None) == (self.rho2d is None):
            raise InputError("exactly one of rho3d / rho2d must be set")
        rho = self.rho3d if self.rho3d is not None else self.rho2d
        if not rho >= 0:
            raise InputError(f"spin density must be non-negative, got {rho!r}")

    @property
    def is_2d(self) -> bool:
        return self.rho2d is not None


@dataclass(frozen=True)
class SpinPosition:
    """Nuclear spin position in the NV frame (m). Fields may be arrays."""

    x: float
    y: float
    z: float


def geometric_factor(x, y, z, theta0: float = DEFAULT_CONSTANTS.theta0):
    """Dimensionless angular/radial part of the single-spin squared field.

    9 * a^2 (r^2 - a^2) / r^10 with a the projection of r on the NV axis. This
    equals 9 [(x s + z c)^2 y^2 + (x s + z c)^2 (x c - z s)^2] / r^10.
    Units: length^-6. Works elementwise on arrays.
    """
    s, c = math.sin(theta0), math.cos(theta0)
    a = x * s + z * c
    r2 = x * x + y * y + z * z
    r4 = r2 * r2
    return 9.0 * a * a * (r2 - a * a) / (r4 * r4 * r2)


def _moment_coupling2(species: NuclearSpecies, constants: PhysicalConstants) -> float:
    mu_i = constants.hbar * species.gamma / 2.0
    return (constants.mu0 * mu_i / (4 * math.pi)) ** 2


def single_spin_brms2(pos: SpinPosition, species: NuclearSpecies = H1,
                      constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Squared rms field (T^2) along the NV axis from one precessing nucleus."""
    x, y, z = np.asarray(pos.x, float), np.asarray(pos.y, float), np.asarray(pos.z, float)
    if np.any(x * x + y * y + z * z == 0):
        raise InputError("spin position coincides with the NV")
    out = _moment_coupling2(species, constants) * geometric_factor(x, y, z, constants.theta0)
    return float(out) if out.ndim == 0 else out


def _plane_coefficient(species: NuclearSpecies, constants: PhysicalConstants) -> float:
    # 5 mu0^2 (gamma hbar)^2 / (512 pi): B^2 = coefficient * rho2d / d^4
    return 5 * constants.mu0 ** 2 * (species.gamma * constants.hbar) ** 2 / (512 * math.pi)


def layer_correction_factor(d: float, delta: Thickness) -> float:
    """1 - d^3/(d+delta)^3; exactly 1 for the half-space."""
    if not d > 0:
        raise InputError(f"depth must be positive, got {d!r}")
    delta = as_thickness(delta)
    if delta is HALF_SPACE:
        return 1.0
    return 1.0 - (d / (d + delta)) ** 3


def _check_depth(d: float) -> None:
    if not d > 0:
        raise InputError(f"NV depth must be positive, got {d!r}")


def layer_brms2(d: float, delta: Thickness, rho3d: float, species: NuclearSpecies = H1,
                constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    _check_depth(d)
    if rho3d < 0:
        raise InputError(f"spin density must be non-negative, got {rho3d!r}")
    coef = _plane_coefficient(species, constants) / 3.0
    return coef * rho3d / d ** 3 * layer_correction_factor(d, delta)


def layer_brms(geom: BathGeometry, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """rms field (T) of a uniform layer [d, d+delta] (or half-space) of spins."""
    if geom.rho3d is None:
        raise InputError("layer_brms requires a volumetric density (rho3d)")
    return math.sqrt(layer_brms2(geom.depth, geom.thickness, geom.rho3d, geom.species, constants))


def surface2d_brms2(d: float, rho2d: float, species: NuclearSpecies = H1,
                    constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    _check_depth(d)
    if rho2d < 0:
        raise InputError(f"areal density must be non-negative, got {rho2d!r}")
    return _plane_coefficient(species, constants) * rho2d / d ** 4


def surface2d_brms(geom: BathGeometry, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """rms field (T) of a spin monolayer in the surface plane z = d."""
    if geom.rho2d is None:
        raise InputError("surface2d_brms requires an areal density (rho2d)")
    return math.sqrt(surface2d_brms2(geom.depth, geom.rho2d, geom.species, constants))


# Prefactors in uT nm^3: B = P sqrt(rho/d^3) with rho in nm^-3 and d in nm
# (3D), or B = P sqrt(rho2d)/d^2 with rho2d in nm^-2 and d in nm (2D).
_T_M3_TO_UT_NM3 = 1e6 * 1e27


def prefactor_3d(species: NuclearSpecies = H1, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    return math.sqrt(_plane_coefficient(species, constants) / 3.0) * _T_M3_TO_UT_NM3


def prefactor_2d(species: NuclearSpecies = H1, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    return math.sqrt(_plane_coefficient(species, constants)) * _T_M3_TO_UT_NM3
