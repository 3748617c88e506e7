"""Monte-Carlo spin-bath oracle for the closed forms in :mod:`nvnmr.dipolar`.

Each realization places a Poisson number of spins uniformly in the bath
(a slab ``[d, d+delta]`` or the plane ``z = d``) over the square
``[-L, L]^2`` and sums their single-spin squared fields.

Random numbers come from numpy's Philox4x64-10 counter-based generator.
Realization ``i`` of a run with master seed ``s`` uses the key ``(s, i)``, so
results depend on the seed and realization index only, never on the order
in which realizations are evaluated.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .core import DEFAULT_CONSTANTS, InputError, NuclearSpecies, PhysicalConstants
from .dipolar import (
    HALF_SPACE,
    BathGeometry,
    SpinPosition,
    _moment_coupling2,
    geometric_factor,
    layer_correction_factor,
)

__all__ = [
    "MIN_EXTENT_FACTOR",
    "HALF_SPACE_CUTOFF_FACTOR",
    "BathSample",
    "McEstimate",
    "realization_rng",
    "sample_layer",
    "sample_surface",
    "sample_brms2",
    "estimate_brms",
    "estimate_brms_2d",
    "estimate_from_samples",
    "write_positions_csv",
]

MIN_EXTENT_FACTOR = 20.0
HALF_SPACE_CUTOFF_FACTOR = 50.0
_CHUNK = 1 << 20


@dataclass(frozen=True)
class BathSample:
    positions: np.ndarray  # (n, 3), m
    lateral_extent: float
    seed: int
    realization: int = 0

    def __len__(self) -> int:
        return len(self.positions)

    def spin_positions(self) -> list[SpinPosition]:
        return [SpinPosition(*p) for p in self.positions]


@dataclass(frozen=True)
class McEstimate:
    brms: float
    std_error: float
    n_realizations: int
    seed: int
    mean_count: float = float("nan")


def realization_rng(seed: int, realization: int) -> np.random.Generator:
    if seed < 0 or realization < 0:
        raise InputError("seed and realization index must be non-negative")
    return np.random.Generator(np.random.Philox(key=[seed, realization]))


def _slab(geom: BathGeometry, cutoff_factor: float) -> tuple[float, float]:
    d = geom.depth
    if geom.is_2d:
        return d, d
    if geom.thickness is HALF_SPACE:
        return d, d + cutoff_factor * d
    return d, d + geom.thickness


def _check_extent(geom: BathGeometry, lateral_extent: float) -> None:
    if lateral_extent < MIN_EXTENT_FACTOR * geom.depth * (1 - 1e-12):
        raise InputError(
            f"lateral extent {lateral_extent:.3g} m is below {MIN_EXTENT_FACTOR:g} x depth"
            f" ({MIN_EXTENT_FACTOR * geom.depth:.3g} m)")


def _iter_chunks(geom: BathGeometry, lateral_extent: float, rng: np.random.Generator,
                 cutoff_factor: float) -> Iterator[np.ndarray]:
    """Yield (m, 3) position blocks of one realization; count ~ Poisson."""
    z0, z1 = _slab(geom, cutoff_factor)
    L = lateral_extent
    area = (2 * L) ** 2
    mean = geom.rho2d * area if geom.is_2d else geom.rho3d * area * (z1 - z0)
    remaining = int(rng.poisson(mean)) if mean > 0 else 0
    while remaining > 0:
        m = min(remaining, _CHUNK)
        block = np.empty((m, 3))
        block[:, 0] = rng.uniform(-L, L, m)
        block[:, 1] = rng.uniform(-L, L, m)
        block[:, 2] = z0 if z1 == z0 else rng.uniform(z0, z1, m)
        remaining -= m
        yield block


def sample_layer(geom: BathGeometry, lateral_extent: float, seed: int, realization: int = 0,
                 cutoff_factor: float = HALF_SPACE_CUTOFF_FACTOR) -> BathSample:
    """Draw one realization of the bath described by ``geom``.

    Works for both layer (rho3d) and surface (rho2d) geometries. A half-space
    is cut off at ``d + cutoff_factor * d``.
    """
    _check_extent(geom, lateral_extent)
    rng = realization_rng(seed, realization)
    blocks = list(_iter_chunks(geom, lateral_extent, rng, cutoff_factor))
    positions = np.concatenate(blocks) if blocks else np.empty((0, 3))
    return BathSample(positions, lateral_extent, seed, realization)


def sample_surface(geom: BathGeometry, lateral_extent: float, seed: int, realization: int = 0) -> BathSample:
    if not geom.is_2d:
        raise InputError("sample_surface requires an areal density (rho2d)")
    return sample_layer(geom, lateral_extent, seed, realization)


def sample_brms2(sample: BathSample, species: NuclearSpecies,
                 constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Total squared field (T^2) of one bath realization."""
    if len(sample) == 0:
        return 0.0
    p = sample.positions
    g = geometric_factor(p[:, 0], p[:, 1], p[:, 2], constants.theta0)
    return float(_moment_coupling2(species, constants) * g.sum())


def _summarize(values: Sequence[float], seed: int, counts: Sequence[int] | None = None) -> McEstimate:
    v = np.asarray(values, float)
    n = len(v)
    if n < 2:
        raise InputError("at least two realizations are required for an error estimate")
    mean = float(v.mean())
    brms = math.sqrt(mean)
    # delta method on sqrt of the realization mean
    sem2 = float(v.std(ddof=1)) / math.sqrt(n)
    std_error = sem2 / (2 * brms) if brms > 0 else 0.0
    mean_count = float(np.mean(counts)) if counts is not None else float("nan")
    return McEstimate(brms, std_error, n, seed, mean_count)


def _realization_brms2(geom: BathGeometry, lateral_extent: float, seed: int, realization: int,
                       cutoff_factor: float, constants: PhysicalConstants) -> tuple[float, int]:
    rng = realization_rng(seed, realization)
    total = 0.0
    count = 0
    th = constants.theta0
    for block in _iter_chunks(geom, lateral_extent, rng, cutoff_factor):
        total += float(geometric_factor(block[:, 0], block[:, 1], block[:, 2], th).sum())
        count += len(block)
    b2 = _moment_coupling2(geom.species, constants) * total
    if not geom.is_2d and geom.thickness is HALF_SPACE:
        # spins beyond the cutoff contribute the analytic remainder of the
        # correction factor
        b2 /= layer_correction_factor(geom.depth, cutoff_factor * geom.depth)
    return b2, count


def estimate_brms(geom: BathGeometry, lateral_extent: float, n_realizations: int, seed: int,
                  cutoff_factor: float = HALF_SPACE_CUTOFF_FACTOR,
                  constants: PhysicalConstants = DEFAULT_CONSTANTS) -> McEstimate:
    """rms field of the bath averaged over ``n_realizations`` Poisson baths.

    brms = sqrt(mean of per-realization B^2); ``std_error`` is propagated
    from the realization-to-realization spread of B^2.
    """
    _check_extent(geom, lateral_extent)
    if n_realizations < 2:
        raise InputError("n_realizations must be at least 2")
    values, counts = [], []
    for i in range(n_realizations):
        b2, c = _realization_brms2(geom, lateral_extent, seed, i, cutoff_factor, constants)
        values.append(b2)
        counts.append(c)
    return _summarize(values, seed, counts)


def estimate_brms_2d(geom: BathGeometry, lateral_extent: float, n_realizations: int, seed: int,
                     constants: PhysicalConstants = DEFAULT_CONSTANTS) -> McEstimate:
    if not geom.is_2d:
        raise InputError("estimate_brms_2d requires an areal density (rho2d)")
    return estimate_brms(geom, lateral_extent, n_realizations, seed, constants=constants)


def estimate_from_samples(samples: Sequence[BathSample], species: NuclearSpecies,
                          constants: PhysicalConstants = DEFAULT_CONSTANTS) -> McEstimate:
    """Estimate from explicit realizations, e.g. hand-placed spins."""
    values = [sample_brms2(s, species, constants) for s in samples]
    seed = samples[0].seed if samples else 0
    return _summarize(values, seed, [len(s) for s in samples])


def write_positions_csv(sample: BathSample, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_nm", "y_nm", "z_nm"])
        for x, y, z in sample.positions / 1e-9:
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z))])
