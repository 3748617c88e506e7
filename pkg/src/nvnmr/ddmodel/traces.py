"""Coherence traces: normalization against bright/dark references, synthetic
generation and the CSV + JSON sidecar file format.

CSV headers are fixed: ``tau_us,signal`` or
``tau_us,counts_signal,counts_bright,counts_dark``. The sidecar holds
``{n_pulses, phase_cycle, b0_mT, pulse_length_ns}``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import InputError
from .kernel import NoiseModel, SequenceSpec, coherence

__all__ = [
    "SIGNAL_HEADER",
    "RAW_HEADER",
    "CoherenceTrace",
    "normalize_trace",
    "synthesize_trace",
    "read_trace",
    "write_trace",
    "read_metadata",
    "write_metadata",
    "metadata_path_for",
]

SIGNAL_HEADER = ["tau_us", "signal"]
RAW_HEADER = ["tau_us", "counts_signal", "counts_bright", "counts_dark"]
SIGNAL_RANGE = (-0.2, 1.2)


@dataclass(frozen=True)
class CoherenceTrace:
    tau: np.ndarray
    signal: np.ndarray
    sequence: SequenceSpec
    b0: float
    counts_signal: np.ndarray | None = None
    counts_bright: np.ndarray | None = None
    counts_dark: np.ndarray | None = None

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau, float)
        sig = np.asarray(self.signal, float)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "signal", sig)
        if tau.ndim != 1 or tau.shape != sig.shape:
            raise InputError("tau and signal must be 1-D arrays of equal length")
        if len(tau) == 0:
            raise InputError("trace is empty")
        if np.any(tau <= 0) or np.any(np.diff(tau) <= 0):
            raise InputError("tau must be positive and strictly increasing")
        if not np.all(np.isfinite(sig)):
            raise InputError("signal contains non-finite values")
        lo, hi = SIGNAL_RANGE
        if np.any(sig < lo) or np.any(sig > hi):
            raise InputError(f"normalized signal outside [{lo}, {hi}]")
        if self.b0 < 0:
            raise InputError("bias field must be non-negative")

    @property
    def has_raw(self) -> bool:
        return self.counts_signal is not None

    def __len__(self) -> int:
        return len(self.tau)


def normalize_trace(tau, counts_signal, counts_bright, counts_dark,
                    sequence: SequenceSpec, b0: float) -> CoherenceTrace:
    """(signal - dark) / (bright - dark), keeping the raw counts."""
    cs, cb, cd = (np.asarray(a, float) for a in (counts_signal, counts_bright, counts_dark))
    if not cs.shape == cb.shape == cd.shape:
        raise InputError("count arrays must have equal length")
    bad = np.flatnonzero(cb <= cd)
    if bad.size:
        raise InputError(f"bright reference not above dark reference at index {int(bad[0])}")
    signal = (cs - cd) / (cb - cd)
    return CoherenceTrace(np.asarray(tau, float), signal, sequence, b0, cs, cb, cd)


def synthesize_trace(model: NoiseModel, sequence: SequenceSpec, tau_grid, b0: float,
                     photon_noise: float = 0.0, seed: int = 0,
                     method: str = "quadrature") -> CoherenceTrace:
    """Model curve on ``tau_grid`` plus optional Gaussian noise of std ``photon_noise``.

    Noise uses numpy's Philox generator keyed by ``seed``.
    """
    tau = np.asarray(tau_grid, float)
    if np.any(np.diff(tau) <= 0):
        raise InputError("tau grid must be strictly increasing")
    signal = coherence(model, sequence, tau, method=method)
    if photon_noise > 0:
        rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
        signal = signal + rng.normal(0.0, photon_noise, signal.shape)
        signal = np.clip(signal, *SIGNAL_RANGE)
    return CoherenceTrace(tau, signal, sequence, b0)


def metadata_path_for(trace_path: str | Path) -> Path:
    trace_path = Path(trace_path)
    return trace_path.with_suffix(".json")


def write_metadata(path: str | Path, sequence: SequenceSpec, b0: float) -> None:
    doc = {
        "n_pulses": sequence.n_pulses,
        "phase_cycle": sequence.phase_cycle.value,
        "b0_mT": b0 * 1e3,
        "pulse_length_ns": sequence.pulse_length * 1e9,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_metadata(path: str | Path) -> tuple[SequenceSpec, float]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"metadata sidecar not found: expected {path}")
    try:
        doc = json.loads(path.read_text())
        seq = SequenceSpec(int(doc["n_pulses"]), doc.get("phase_cycle", "XY8"),
                           float(doc.get("pulse_length_ns", 0.0)) * 1e-9)
        b0 = float(doc["b0_mT"]) * 1e-3
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{path}: inconsistent metadata ({exc!r})") from exc
    return seq, b0


def write_trace(path: str | Path, trace: CoherenceTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if trace.has_raw:
            w.writerow(RAW_HEADER)
            for row in zip(trace.tau, trace.counts_signal, trace.counts_bright, trace.counts_dark):
                w.writerow([repr(float(row[0] * 1e6))] + [repr(float(v)) for v in row[1:]])
        else:
            w.writerow(SIGNAL_HEADER)
            for t, s in zip(trace.tau, trace.signal):
                w.writerow([repr(float(t * 1e6)), repr(float(s))])


def read_trace(path: str | Path, meta_path: str | Path | None = None) -> CoherenceTrace:
    """Load a trace CSV and its sidecar (default: same stem, ``.json``)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"trace file not found: {path}")
    sequence, b0 = read_metadata(meta_path if meta_path is not None else metadata_path_for(path))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty trace file")
    header = [h.strip() for h in rows[0]]
    if header not in (SIGNAL_HEADER, RAW_HEADER):
        raise InputError(f"{path}:1: unexpected header {','.join(header)!r}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
    if not data:
        raise InputError(f"{path}: trace has no data rows")
    arr = np.asarray(data)
    tau = arr[:, 0] * 1e-6
    if header == RAW_HEADER:
        return normalize_trace(tau, arr[:, 1], arr[:, 2], arr[:, 3], sequence, b0)
    return CoherenceTrace(tau, arr[:, 1], sequence, b0)
