"""Physical constants, the nuclear species registry, unit conversions and the
error hierarchy shared by every module.

Everything is computed in SI internally. Lab units (nm, nT, us, kHz, mT and
nm^-2 / nm^-3 densities) only appear at the IO boundary, via the helpers
defined here.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from scipy import constants as _codata

__all__ = [
    "NVNMRError",
    "InputError",
    "NumericalError",
    "PhysicalConstants",
    "DEFAULT_CONSTANTS",
    "NuclearSpecies",
    "SpeciesRegistry",
    "DEFAULT_REGISTRY",
    "H1",
    "F19",
    "register_species",
    "get_species",
    "larmor_frequency",
]


class NVNMRError(Exception):
    """Base class for all errors raised by this package."""


class InputError(NVNMRError, ValueError):
    """Invalid user input: bad parameter values, malformed files."""


class NumericalError(NVNMRError, RuntimeError):
    """A numerical procedure failed (bracketing, quadrature, fit)."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Constants used by the field models.

    ``theta0`` is the angle between the NV axis and the surface normal of a
    <100>-cut diamond, stored as exactly 54.7 degrees rather than the
    tetrahedral arccos(1/sqrt(3)).
    """

    mu0: float = _codata.mu_0
    hbar: float = _codata.hbar
    gamma_e: float = 2 * math.pi * 28.0249e9
    theta0: float = math.radians(54.7)


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class NuclearSpecies:
    label: str
    gamma: float  # rad s^-1 T^-1
    spin: float = 0.5

    def __post_init__(self) -> None:
        if not self.label:
            raise InputError("species label must be non-empty")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InputError(f"gyromagnetic ratio must be positive, got {self.gamma!r}")
        if self.spin <= 0:
            raise InputError(f"spin must be positive, got {self.spin!r}")

    @property
    def gamma_MHz_per_T(self) -> float:
        return self.gamma / (2 * math.pi) / 1e6

    @classmethod
    def from_MHz_per_T(cls, label: str, gamma_MHz_per_T: float, spin: float = 0.5) -> "NuclearSpecies":
        return cls(label, 2 * math.pi * gamma_MHz_per_T * 1e6, spin)


# Gyromagnetic ratios as quoted alongside the published prefactors, not CODATA.
H1 = NuclearSpecies.from_MHz_per_T("1H", 42.58)
F19 = NuclearSpecies.from_MHz_per_T("19F", 40.078)


@dataclass
class SpeciesRegistry:
    """Label -> species lookup with JSON round trip.

    The JSON document is an array of ``{label, gamma_MHz_per_T, spin}``.
    """

    _species: dict[str, NuclearSpecies] = field(default_factory=dict)

    @classmethod
    def with_defaults(cls) -> "SpeciesRegistry":
        reg = cls()
        reg.add(H1)
        reg.add(F19)
        return reg

    def add(self, species: NuclearSpecies) -> NuclearSpecies:
        if species.label in self._species:
            raise InputError(f"species {species.label!r} is already registered")
        self._species[species.label] = species
        return species

    def register(self, label: str, gamma: float, spin: float = 0.5) -> NuclearSpecies:
        return self.add(NuclearSpecies(label, gamma, spin))

    def get(self, label: str) -> NuclearSpecies:
        try:
            return self._species[label]
        except KeyError:
            known = ", ".join(sorted(self._species))
            raise InputError(f"unknown species {label!r} (known: {known})") from None

    def __contains__(self, label: object) -> bool:
        return label in self._species

    def __iter__(self) -> Iterator[NuclearSpecies]:
        return iter(self._species.values())

    def __len__(self) -> int:
        return len(self._species)

    def to_json(self) -> str:
        doc = [
            {"label": s.label, "gamma_MHz_per_T": s.gamma_MHz_per_T, "spin": s.spin}
            for s in self._species.values()
        ]
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SpeciesRegistry":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"species registry is not valid JSON: {exc}") from exc
        if not isinstance(doc, list):
            raise InputError("species registry must be a JSON array")
        reg = cls()
        for i, entry in enumerate(doc):
            try:
                reg.add(NuclearSpecies.from_MHz_per_T(
                    str(entry["label"]), float(entry["gamma_MHz_per_T"]), float(entry.get("spin", 0.5))))
            except InputError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise InputError(f"species entry {i} is malformed: {entry!r}") from exc
        return reg

    @classmethod
    def from_species(cls, species: Iterable[NuclearSpecies]) -> "SpeciesRegistry":
        reg = cls()
        for s in species:
            reg.add(s)
        return reg


DEFAULT_REGISTRY = SpeciesRegistry.with_defaults()


def register_species(label: str, gamma: float, spin: float = 0.5,
                     registry: SpeciesRegistry | None = None) -> NuclearSpecies:
    """Register a species (gamma in rad/s/T) in ``registry`` (default: global)."""
    return (registry or DEFAULT_REGISTRY).register(label, gamma, spin)


def get_species(label: str | NuclearSpecies, registry: SpeciesRegistry | None = None) -> NuclearSpecies:
    if isinstance(label, NuclearSpecies):
        return label
    return (registry or DEFAULT_REGISTRY).get(label)


def larmor_frequency(species: NuclearSpecies, b0: float) -> float:
    """Nuclear precession frequency in Hz at bias field ``b0`` (T)."""
    if b0 < 0:
        raise InputError(f"bias field must be non-negative, got {b0!r}")
    return species.gamma * b0 / (2 * math.pi)


# Unit conversions. Only the pairs used at the IO boundary are provided.

NM = 1e-9
NT = 1e-9
US = 1e-6
NS = 1e-9
MT = 1e-3
KHZ = 1e3


def nm_to_m(x):
    return x * NM


def m_to_nm(x):
    return x / NM


def nT_to_T(x):
    return x * NT


def T_to_nT(x):
    return x / NT


def us_to_s(x):
    return x * US


def s_to_us(x):
    return x / US


def mT_to_T(x):
    return x * MT


def T_to_mT(x):
    return x / MT


def kHz_to_Hz(x):
    return x * KHZ


def Hz_to_kHz(x):
    return x / KHZ


def per_nm3_to_per_m3(x):
    return x * 1e27


def per_m3_to_per_nm3(x):
    return x / 1e27


def per_nm2_to_per_m2(x):
    return x * 1e18


def per_m2_to_per_nm2(x):
    return x / 1e18
