"""Least-squares extraction of B_rms, line frequencies and T2 from traces."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

from ..core import H1, InputError, NuclearSpecies, larmor_frequency
from .kernel import NoiseModel, Resonance, SequenceSpec, chi_background, chi_resonance, coherence
from .traces import CoherenceTrace

__all__ = [
    "FitResult",
    "T2Result",
    "DipAssignment",
    "parameter_names",
    "fit_trace",
    "extract_t2",
    "resonance_windows",
    "assign_dips",
    "dip_chi",
    "brms_from_dip_area",
    "initial_model",
]

MIN_POINTS = 8
CHI_FLOOR = 1e-3
# multiplicative perturbations (brms, t2) of the three deterministic starts
STARTS = ((1.0, 1.0), (0.5, 0.7), (2.0, 1.4))

_SCALE = {"brms": 1e-9, "frequency": 1e3, "linewidth": 1e3, "t2_background": 1e-6, "stretch_p": 1.0}


@dataclass
class FitResult:
    model: NoiseModel
    uncertainties: dict[str, float]
    residual_norm: float
    converged: bool
    at_bound: list[str] = field(default_factory=list)
    free_params: list[str] = field(default_factory=list)
    cost: float = float("nan")
    nfev: int = 0
    message: str = ""


@dataclass
class T2Result:
    t2: float
    stretch_p: float
    contrast0: float
    uncertainties: dict[str, float]
    converged: bool
    residual_norm: float = float("nan")

    def background(self, sequence: SequenceSpec, tau):
        return self.contrast0 * np.exp(-chi_background(sequence, tau, self.t2, self.stretch_p))


@dataclass(frozen=True)
class DipAssignment:
    species: NuclearSpecies
    expected_frequency: float
    frequency: float
    tau: float
    deviation_pct: float
    depth: float
    found: bool


def parameter_names(model: NoiseModel) -> list[str]:
    names = ["t2_background", "stretch_p"]
    for i in range(len(model.resonances)):
        names += [f"brms[{i}]", f"frequency[{i}]", f"linewidth[{i}]"]
    return names


def _split(name: str) -> tuple[str, int | None]:
    if "[" in name:
        base, idx = name.rstrip("]").split("[")
        return base, int(idx)
    return name, None


def _get(model: NoiseModel, name: str) -> float:
    base, idx = _split(name)
    if idx is None:
        return getattr(model, base)
    return getattr(model.resonances[idx], base)


def _set_all(model: NoiseModel, names: Sequence[str], values: Sequence[float]) -> NoiseModel:
    top, per_res = {}, {}
    for name, v in zip(names, values):
        base, idx = _split(name)
        if idx is None:
            top[base] = float(v)
        else:
            per_res.setdefault(idx, {})[base] = float(v)
    res = list(model.resonances)
    for idx, changes in per_res.items():
        res[idx] = replace(res[idx], **changes)
    return replace(model, resonances=tuple(res), **top)


def _bounds(model: NoiseModel, name: str, reference: NoiseModel) -> tuple[float, float]:
    base, idx = _split(name)
    if base == "t2_background":
        return 1e-8, 1.0
    if base == "stretch_p":
        return 0.5 + 1e-9, 3.0
    f0 = reference.resonances[idx].frequency
    if base == "brms":
        return 0.0, 20e-6
    if base == "frequency":
        return 0.8 * f0, 1.2 * f0
    if base == "linewidth":
        return f0 * 1e-5, f0 * 0.2
    raise InputError(f"unknown parameter {name!r}")


def _residual_norm(r: np.ndarray) -> float:
    return float(np.sqrt(np.mean(r * r)))


def _covariance_sigmas(jac: np.ndarray, resid: np.ndarray, scales: np.ndarray) -> np.ndarray:
    m, n = jac.shape
    dof = max(m - n, 1)
    s2 = float(resid @ resid) / dof
    cov = np.linalg.pinv(jac.T @ jac) * s2
    return np.sqrt(np.clip(np.diag(cov), 0, None)) * scales


def fit_trace(trace: CoherenceTrace, initial: NoiseModel, free_params: Iterable[str] | None = None,
              method: str = "exact", max_nfev: int | None = None) -> FitResult:
    """Bounded least squares of ``signal - coherence`` over the free parameters.

    Three deterministic starts are tried (brms x {1, 0.5, 2} together with
    t2 x {1, 0.7, 1.4}); the lowest objective wins, earlier starts on ties.
    Uncertainties come from the Gauss-Newton covariance at the optimum.
    """
    if len(trace) < MIN_POINTS:
        raise InputError(f"trace needs at least {MIN_POINTS} points, has {len(trace)}")
    if trace.sequence.pulse_length > 0 and method == "exact":
        method = "quadrature"
    names = list(free_params) if free_params is not None else parameter_names(initial)
    known = set(parameter_names(initial))
    unknown = [n for n in names if n not in known]
    if unknown:
        raise InputError(f"unknown free parameters: {unknown}")
    scales = np.array([_SCALE[_split(n)[0]] for n in names])
    bounds = [_bounds(initial, n, initial) for n in names]
    lb = np.array([b[0] for b in bounds]) / scales
    ub = np.array([b[1] for b in bounds]) / scales
    x_init = np.array([_get(initial, n) for n in names]) / scales
    if np.any(x_init < lb) or np.any(x_init > ub):
        raise InputError("initial model lies outside the parameter bounds")

    def residuals(x):
        model = _set_all(initial, names, x * scales)
        return trace.signal - coherence(model, trace.sequence, trace.tau, method=method)

    best = None
    for brms_f, t2_f in STARTS:
        x0 = x_init.copy()
        for i, n in enumerate(names):
            base = _split(n)[0]
            if base == "brms":
                x0[i] *= brms_f
            elif base == "t2_background":
                x0[i] *= t2_f
        x0 = np.clip(x0, lb, ub)
        if not names:
            break
        sol = least_squares(residuals, x0, bounds=(lb, ub), method="trf", x_scale="jac",
                            ftol=1e-12, xtol=1e-12, gtol=1e-12,
                            max_nfev=max_nfev if max_nfev is not None else 100 * (len(names) + 1))
        if best is None or sol.cost < best.cost:
            best = sol

    if best is None:
        r = residuals(x_init)
        return FitResult(initial, {}, _residual_norm(r), True, [], [], float(0.5 * r @ r), 1, "no free parameters")

    model = _set_all(initial, names, best.x * scales)
    sig = _covariance_sigmas(best.jac, best.fun, scales)
    span = ub - lb
    at_bound = [n for n, x, lo, hi, s in zip(names, best.x, lb, ub, span)
                if (x - lo) <= 1e-6 * max(s, 1) or (hi - x) <= 1e-6 * max(s, 1)]
    converged = bool(best.success and best.status > 0)
    return FitResult(
        model=model,
        uncertainties={n: float(s) for n, s in zip(names, sig)},
        residual_norm=_residual_norm(best.fun),
        converged=converged,
        at_bound=at_bound,
        free_params=names,
        cost=float(best.cost),
        nfev=int(best.nfev),
        message=str(best.message),
    )


def resonance_windows(species: Sequence[NuclearSpecies], b0: float, window_pct: float) -> list[tuple[float, float]]:
    """Delay windows 1/(2 f (1 +- w)) around each species' expected dip."""
    out = []
    w = window_pct / 100.0
    for s in species:
        f = larmor_frequency(s, b0)
        if f <= 0:
            raise InputError("bias field must be positive to place resonance windows")
        out.append((1 / (2 * f * (1 + w)), 1 / (2 * f * max(1 - w, 1e-9))))
    return out


def _mask(tau: np.ndarray, windows: Sequence[tuple[float, float]] | None) -> np.ndarray:
    keep = np.ones(tau.shape, bool)
    for lo, hi in windows or ():
        keep &= ~((tau >= lo) & (tau <= hi))
    return keep


def extract_t2(trace: CoherenceTrace, mask: Sequence[tuple[float, float]] | None = None) -> T2Result:
    """Fit c0 exp(-(N tau / T2)^p) to the points outside the masked windows."""
    keep = _mask(trace.tau, mask)
    tau, sig = trace.tau[keep], trace.signal[keep]
    if len(tau) < 4:
        raise InputError("too few unmasked points for a background fit")
    if tau[-1] / tau[0] < 5:
        raise InputError("insufficient dynamic range: trace must span a factor 5 in evolution time")
    seq = trace.sequence
    t_total = seq.total_time(tau)
    t2_max = 1e3 * float(t_total[-1])
    lb = np.array([0.0, float(t_total[0]) * 1e-3, 0.5 + 1e-9])
    ub = np.array([1.5, t2_max, 3.0])
    scale = np.array([1.0, 1e-6, 1.0])

    def residuals(x):
        c0, t2, p = x * scale
        return sig - c0 * np.exp(-(t_total / t2) ** p)

    c0_guess = float(np.clip(np.max(sig[: max(3, len(sig) // 10)]), 0.05, 1.5))
    below = np.flatnonzero(sig < c0_guess / math.e)
    t2_guess = float(t_total[below[0]]) if below.size else float(t_total[-1]) * 3
    best = None
    for p0 in (1.0, 1.5, 2.0):
        x0 = np.clip(np.array([c0_guess, t2_guess, p0]) / scale, lb / scale, ub / scale)
        sol = least_squares(residuals, x0, bounds=(lb / scale, ub / scale), method="trf",
                            x_scale="jac", ftol=1e-12, xtol=1e-12, gtol=1e-12)
        if best is None or sol.cost < best.cost:
            best = sol
    c0, t2, p = best.x * scale
    sig_c0, sig_t2, sig_p = _covariance_sigmas(best.jac, best.fun, scale)
    unbounded = t2 >= t2_max * (1 - 1e-6)
    return T2Result(float(t2), float(p), float(c0),
                    {"t2": float(sig_t2), "stretch_p": float(sig_p), "contrast0": float(sig_c0)},
                    bool(best.success and not unbounded), _residual_norm(best.fun))


def dip_chi(trace: CoherenceTrace, background: T2Result, floor: float = CHI_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Resonant attenuation -ln(signal / background).

    Ratios below ``floor`` (including non-positive signals) are clipped to it;
    the second return value flags those points.
    """
    ratio = trace.signal / background.background(trace.sequence, trace.tau)
    clipped = ratio < floor
    return -np.log(np.where(clipped, floor, ratio)), clipped


def brms_from_dip_area(trace: CoherenceTrace, background: T2Result, frequency: float,
                       linewidth: float, window: tuple[float, float],
                       species: NuclearSpecies | None = None) -> tuple[float, bool]:
    """B_rms from the area of the dip in attenuation space.

    The model attenuation is linear in B^2, so B = sqrt(A_data / A_unit) with
    A_unit the area of a 1 nT line on the same delay grid. The flag reports
    whether any point in the window was clipped.
    """
    lo, hi = window
    sel = (trace.tau >= lo) & (trace.tau <= hi)
    if sel.sum() < 2:
        raise InputError("dip window contains fewer than two points")
    chi, clipped = dip_chi(trace, background)
    tau = trace.tau[sel]
    unit = Resonance(species if species is not None else H1, 1e-9, frequency, linewidth)
    chi_unit = chi_resonance(unit, trace.sequence, tau, method="exact" if trace.sequence.pulse_length == 0 else "quadrature")
    area = float(np.trapezoid(chi[sel], tau))
    area_unit = float(np.trapezoid(chi_unit, tau))
    return (1e-9 * math.sqrt(area / area_unit) if area > 0 else 0.0), bool(clipped[sel].any())


def assign_dips(trace: CoherenceTrace, species: Sequence[NuclearSpecies], window_pct: float,
                background: T2Result | None = None) -> list[DipAssignment]:
    """Locate each species' dip within +-window_pct of its expected frequency."""
    out = []
    windows = resonance_windows(species, trace.b0, window_pct)
    if background is not None:
        chi, _ = dip_chi(trace, background)
    else:
        chi = -np.log(np.clip(trace.signal, CHI_FLOOR, None))
    for s, (lo, hi) in zip(species, windows):
        f_exp = larmor_frequency(s, trace.b0)
        sel = np.flatnonzero((trace.tau >= lo) & (trace.tau <= hi))
        if sel.size == 0:
            out.append(DipAssignment(s, f_exp, f_exp, 1 / (2 * f_exp), 0.0, 0.0, False))
            continue
        i = sel[np.argmax(chi[sel])]
        f = 1 / (2 * trace.tau[i])
        out.append(DipAssignment(s, f_exp, f, float(trace.tau[i]), 100 * (f - f_exp) / f_exp,
                                 float(chi[i]), bool(chi[i] > 0)))
    return out


def initial_model(trace: CoherenceTrace, species: Sequence[NuclearSpecies], window_pct: float = 5.0,
                  linewidth_ratio: float | None = None) -> tuple[NoiseModel, list[DipAssignment]]:
    """Starting point for :func:`fit_trace` built from the trace itself.

    Background from a masked T2 fit, line centres from the assigned dips,
    amplitudes from the dip areas.
    """
    from .kernel import DEFAULT_LINEWIDTH_RATIO
    ratio = DEFAULT_LINEWIDTH_RATIO if linewidth_ratio is None else linewidth_ratio
    windows = resonance_windows(species, trace.b0, window_pct)
    try:
        bg = extract_t2(trace, mask=windows)
    except InputError:
        bg = T2Result(float(trace.sequence.total_time(trace.tau[-1])), 1.0, 1.0, {}, False)
    assignments = assign_dips(trace, species, window_pct, bg)
    resonances = []
    for a, win in zip(assignments, windows):
        lw = a.frequency * ratio
        try:
            b, _ = brms_from_dip_area(trace, bg, a.frequency, lw, win, a.species)
        except InputError:
            b = 0.0
        resonances.append(Resonance(a.species, min(b, 20e-6), a.frequency, lw))
    p = min(max(bg.stretch_p, 0.5 + 1e-6), 3.0)
    model = NoiseModel(tuple(resonances), min(max(bg.t2, 1e-8), 1.0), p)
    return model, assignments
