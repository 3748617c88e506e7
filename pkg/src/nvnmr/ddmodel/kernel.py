"""Decoherence of the NV under CPMG-type decoupling with nuclear-noise lines.

The attenuation for one noise line is

    chi(T) = (gamma_e^2 / pi) * integral_0^inf S(w) F_N(w T) / w^2 dw

with T = N tau the total evolution time, F_N the ideal-pulse CPMG filter
function and S the two-sided power spectral density of the field projected
on the NV axis: S(w) = integral C(t) exp(iwt) dt, so that
integral_{-inf}^{inf} S dw / 2pi = B_rms^2. Each nuclear line is a
Lorentzian pair at +-w_L (autocorrelation B^2 exp(-G|t|) cos(w_L t), with
G = pi * FWHM in Hz).

For a narrow line on resonance this reduces to chi = 2 gamma_e^2 B^2 T^2/pi^2.

Two evaluation routes are provided. ``"quadrature"`` integrates the filter
integral adaptively in the Lorentzian angle variable w = w_L + G tan(theta).
``"exact"`` evaluates the same quantity as a closed-form double time integral
over the piecewise-constant modulation, O(N) per delay; it is what the fitter
uses. XY8/XY16 phase cycling changes pulse-error robustness only, so all
cycles share the CPMG filter.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad, quad_vec

from ..core import DEFAULT_CONSTANTS, InputError, NuclearSpecies, NumericalError, PhysicalConstants, larmor_frequency

__all__ = [
    "PhaseCycle",
    "SequenceSpec",
    "Resonance",
    "NoiseModel",
    "DEFAULT_LINEWIDTH_RATIO",
    "cpmg_filter",
    "filter_weight",
    "lorentzian_psd",
    "line_power",
    "chi_background",
    "chi_resonance",
    "coherence",
]

TYPICAL_PULSES = (96, 384)
DEFAULT_LINEWIDTH_RATIO = 1 / 500  # linewidth = f_L / 500 unless given


class PhaseCycle(str, enum.Enum):
    XY8 = "XY8"
    XY16 = "XY16"
    CPMG = "CPMG"

    @property
    def block(self) -> int:
        return {"XY8": 8, "XY16": 16, "CPMG": 1}[self.value]


@dataclass(frozen=True)
class SequenceSpec:
    n_pulses: int
    phase_cycle: PhaseCycle = PhaseCycle.XY8
    pulse_length: float = 0.0  # s; 0 = ideal instantaneous pulses

    def __post_init__(self) -> None:
        try:
            cycle = PhaseCycle(self.phase_cycle)
        except ValueError:
            raise InputError(f"unknown phase cycle {self.phase_cycle!r}") from None
        object.__setattr__(self, "phase_cycle", cycle)
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise InputError(f"n_pulses must be a positive integer, got {self.n_pulses!r}")
        object.__setattr__(self, "n_pulses", int(self.n_pulses))
        if self.n_pulses % cycle.block:
            raise InputError(f"{cycle.value} needs a multiple of {cycle.block} pulses, got {self.n_pulses}")
        if self.pulse_length < 0:
            raise InputError("pulse_length must be non-negative")

    def advisories(self) -> list[str]:
        lo, hi = TYPICAL_PULSES
        if not lo <= self.n_pulses <= hi:
            return [f"n_pulses={self.n_pulses} outside the typical range {lo}-{hi}"]
        return []

    def total_time(self, tau):
        return self.n_pulses * np.asarray(tau, float)


@dataclass(frozen=True)
class Resonance:
    """One nuclear noise line: rms field (T), centre (Hz) and FWHM (Hz)."""

    species: NuclearSpecies
    brms: float
    frequency: float
    linewidth: float

    def __post_init__(self) -> None:
        if not self.brms >= 0:
            raise InputError(f"brms must be non-negative, got {self.brms!r}")
        if not self.frequency > 0:
            raise InputError(f"line frequency must be positive, got {self.frequency!r}")
        if not self.linewidth > 0:
            raise InputError(f"linewidth must be positive, got {self.linewidth!r}")

    @classmethod
    def at_field(cls, species: NuclearSpecies, b0: float, brms: float,
                 linewidth: float | None = None) -> "Resonance":
        f = larmor_frequency(species, b0)
        return cls(species, brms, f, f * DEFAULT_LINEWIDTH_RATIO if linewidth is None else linewidth)


@dataclass(frozen=True)
class NoiseModel:
    resonances: tuple[Resonance, ...] = field(default_factory=tuple)
    t2_background: float = 50e-6
    stretch_p: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "resonances", tuple(self.resonances))
        if not self.t2_background > 0:
            raise InputError("t2_background must be positive")
        if not 0.5 < self.stretch_p <= 3:
            raise InputError(f"stretch_p must lie in (0.5, 3], got {self.stretch_p!r}")

    def with_resonance(self, index: int, **changes) -> "NoiseModel":
        res = list(self.resonances)
        res[index] = replace(res[index], **changes)
        return replace(self, resonances=tuple(res))


def cpmg_filter(z, n: int):
    """Ideal N-pulse CPMG filter function F_N(z), z = w T.

    8 sin^4(z/4N) sin^2(z/2) / cos^2(z/2N) for even N (cos^2(z/2) for odd N).
    The 0/0 points at cos(z/2N) = 0 are replaced by their limit.
    """
    z = np.asarray(z, float)
    u = z / (2 * n)
    c = np.cos(u)
    regular = np.abs(c) > 1e-6
    c_safe = np.where(regular, c, 1.0)
    if n % 2 == 0:
        ratio = np.where(regular, np.sin(n * u) / c_safe, -n * np.cos(n * u) / np.sin(u))
    else:
        ratio = np.where(regular, np.cos(n * u) / c_safe, n * np.sin(n * u) / np.sin(u))
    return 8.0 * np.sin(u / 2) ** 4 * ratio ** 2


def filter_weight(omega, total_time, n: int, pulse_length: float = 0.0):
    """F_N(w T) / w^2, optionally windowed by sinc^2(w t_p / 2) for finite pulses.

    The window is the exact effect of convolving the ideal +-1 modulation
    with a box of width t_p (linear switching during each pulse).
    """
    omega = np.asarray(omega, float)
    w = cpmg_filter(omega * total_time, n) / omega ** 2
    if pulse_length > 0:
        w = w * np.sinc(omega * pulse_length / (2 * np.pi)) ** 2
    return w


def lorentzian_psd(omega, res: Resonance):
    """Two-sided PSD S(w) (T^2 s) of one line; integral S dw/2pi = brms^2."""
    omega = np.asarray(omega, float)
    g = math.pi * res.linewidth
    wl = 2 * math.pi * res.frequency
    return res.brms ** 2 * (g / (g * g + (omega - wl) ** 2) + g / (g * g + (omega + wl) ** 2))


def line_power(res: Resonance) -> float:
    """(1/pi) integral_0^inf S dw, evaluated numerically; equals brms^2."""
    if res.brms == 0:
        return 0.0
    unit = replace(res, brms=1.0)
    wl = 2 * math.pi * res.frequency
    g = math.pi * res.linewidth
    offsets = g * np.logspace(-1, 9, 21)
    edges = np.unique(np.clip(np.concatenate([wl - offsets, [wl], wl + offsets]), 0.0, None))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = quad(lambda w: float(lorentzian_psd(w, unit)), a, b, epsrel=1e-10, epsabs=0, limit=200)
        total += val
    # tail beyond the last edge with w = 1/s
    s_max = 1.0 / edges[-1]
    tail, _ = quad(lambda s: float(lorentzian_psd(1.0 / s, unit)) / s ** 2 if s > 0 else 2 * g,
                   0.0, s_max, epsrel=1e-10, epsabs=0)
    return res.brms ** 2 * (total + tail) / math.pi


def chi_background(sequence: SequenceSpec, tau, t2: float, p: float):
    return (sequence.total_time(tau) / t2) ** p


def _chi_unit_quadrature(res: Resonance, sequence: SequenceSpec, tau: np.ndarray) -> np.ndarray:
    """integral_0^inf S(w)/B^2 * F/w^2 dw by adaptive quadrature in theta."""
    total = sequence.total_time(tau)
    n = sequence.n_pulses
    tp = sequence.pulse_length
    g = math.pi * res.linewidth
    wl = 2 * math.pi * res.frequency
    th0 = math.atan(wl / g)

    def integrand(theta):
        t = math.tan(theta)
        val = filter_weight(wl + g * t, total, n, tp)
        w_mirror = -wl + g * t
        if w_mirror > 0:
            val = val + filter_weight(w_mirror, total, n, tp)
        return val

    scale = float(np.max(total)) ** 2
    val, err, info = quad_vec(integrand, -th0, math.pi / 2, epsrel=1e-6, epsabs=1e-12 * scale,
                              norm="max", limit=20000, points=[0.0, th0], full_output=True)
    if info.status != 0:
        raise NumericalError(f"coherence quadrature did not converge: {info.message}")
    return val


def _chi_unit_exact(res: Resonance, sequence: SequenceSpec, tau: np.ndarray) -> np.ndarray:
    """Closed-form double time integral of y(t) y(s) C(t-s)/B^2 (times pi)."""
    n = sequence.n_pulses
    z = complex(-math.pi * res.linewidth, 2 * math.pi * res.frequency)
    tau = np.asarray(tau, float)
    total = np.zeros(tau.shape, complex)
    carry = np.zeros(tau.shape, complex)
    e_half = np.exp(z * tau / 2)
    e_full = e_half * e_half
    for k in range(n + 1):
        length = tau / 2 if k in (0, n) else tau
        e = e_half if k in (0, n) else e_full
        y = 1.0 if k % 2 == 0 else -1.0
        seg = (e - 1) / z
        total += (seg - length) / z + y * carry * seg
        carry = carry * e + y * seg
    # chi = gamma^2 B^2 Re(total); the quadrature route returns chi/(gamma^2 B^2/pi)
    return math.pi * total.real


def chi_resonance(res: Resonance, sequence: SequenceSpec, tau, method: str = "quadrature",
                  constants: PhysicalConstants = DEFAULT_CONSTANTS):
    tau = np.asarray(tau, float)
    if np.any(tau <= 0):
        raise InputError("inter-pulse delays must be positive")
    if res.brms == 0:
        return np.zeros(tau.shape)
    if method == "quadrature":
        unit = _chi_unit_quadrature(res, sequence, np.atleast_1d(tau)).reshape(tau.shape)
    elif method == "exact":
        if sequence.pulse_length > 0:
            raise InputError("the exact route assumes ideal pulses; use method='quadrature'")
        unit = _chi_unit_exact(res, sequence, tau)
    else:
        raise InputError(f"unknown coherence method {method!r}")
    return constants.gamma_e ** 2 * res.brms ** 2 / math.pi * unit


def coherence(model: NoiseModel, sequence: SequenceSpec, tau, method: str = "quadrature",
              constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """exp(-chi_bg - sum chi_res) at each inter-pulse delay ``tau`` (s)."""
    tau = np.asarray(tau, float)
    chi = chi_background(sequence, tau, model.t2_background, model.stretch_p)
    for res in model.resonances:
        chi = chi + chi_resonance(res, sequence, tau, method, constants)
    return np.exp(-chi)
