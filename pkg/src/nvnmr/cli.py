"""Command-line pipeline: synth, fit, depth, report, mc, profile.

Settings are resolved in this order, later entries winning:

1. built-in defaults (delta 1 nm, rho 60 nm^-3, 3 atoms per molecule,
   species 1H and 19F, assignment window 5 %),
2. the JSON file given with ``--config``,
3. command-line flags.

The output directory is ``--output-dir`` if given, else ``$NVNMR_OUTPUT_DIR``,
else ``paths.output`` from the config, else the working directory. Relative
``--output`` names are placed inside it.

All numbers on the command line and in output files are in lab units
(nm, nT, us, mT, kHz). Exit codes: 0 success, 1 input error, 2 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .core import (
    DEFAULT_REGISTRY,
    InputError,
    NuclearSpecies,
    NumericalError,
    SpeciesRegistry,
    larmor_frequency,
)
from .ddmodel.fitting import fit_trace, initial_model
from .ddmodel.kernel import NoiseModel, Resonance, SequenceSpec, coherence
from .ddmodel.traces import metadata_path_for, read_trace, synthesize_trace, write_metadata, write_trace
from .dipolar import HALF_SPACE, BathGeometry, Thickness, as_thickness, layer_brms
from .inversion import TABLE_DELTAS, depth_from_brms, surface_report
from .montecarlo import MIN_EXTENT_FACTOR, estimate_brms
from .profile import (
    DEFAULT_EXTENT,
    ExtentWarning,
    build_map_2d,
    minimal_region_fraction,
    minimal_volume_fraction,
    write_map_csv,
)
from .provenance import dumps, provenance

log = logging.getLogger("nvnmr")

OUTPUT_ENV = "NVNMR_OUTPUT_DIR"
MC_DEPTHS_NM = (3.0, 5.0, 8.0)
MC_DELTAS_NM = (0.25, 0.5, 1.0, 2.0)
MC_REALIZATIONS = 16
MC_SIGMA_LIMIT = 3.0


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    delta_nm: float = 1.0  # math.inf for a half-space
    rho3d_nm3: float = 60.0
    atoms_per_molecule: int = 3
    species: tuple[str, ...] = ("1H", "19F")
    b0_mT: float | None = None
    assignment_window_pct: float = 5.0
    depth_round_nm: float | None = 0.1
    traces: str | None = None
    output: str | None = None
    seeds: dict[str, int] = field(default_factory=lambda: {"mc": 1, "synth": 0})
    extra_species: tuple[dict[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if not (self.delta_nm > 0):
            raise InputError("delta_nm must be positive (or inf)")
        if not (self.rho3d_nm3 > 0 and math.isfinite(self.rho3d_nm3)):
            raise InputError("rho3d_nm3 must be positive")
        if int(self.atoms_per_molecule) != self.atoms_per_molecule or self.atoms_per_molecule < 1:
            raise InputError("atoms_per_molecule must be a positive integer")
        if self.b0_mT is not None and not self.b0_mT > 0:
            raise InputError("b0_mT must be positive")
        if not 0 <= self.assignment_window_pct <= 20:
            raise InputError("assignment_window_pct must lie in [0, 20]")
        if self.depth_round_nm is not None and not self.depth_round_nm >= 0:
            raise InputError("depth_round_nm must be non-negative")
        if not self.species:
            raise InputError("at least one species is required")
        for k, v in self.seeds.items():
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise InputError(f"seed {k!r} must be a non-negative integer")

    @property
    def delta(self) -> Thickness:
        return HALF_SPACE if math.isinf(self.delta_nm) else self.delta_nm * 1e-9

    def registry(self) -> SpeciesRegistry:
        reg = SpeciesRegistry.from_species(DEFAULT_REGISTRY)
        for entry in self.extra_species:
            try:
                reg.add(NuclearSpecies.from_MHz_per_T(entry["label"], float(entry["gamma_MHz_per_T"]),
                                                      float(entry.get("spin", 0.5))))
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, InputError):
                    raise
                raise InputError(f"bad species entry {entry!r}") from exc
        return reg

    def digest_view(self) -> dict[str, Any]:
        """Settings that affect results; paths are excluded."""
        d = asdict(self)
        d.pop("output")
        d.pop("traces")
        d["delta_nm"] = _delta_json(self.delta_nm)
        d["species"] = list(self.species)
        d["extra_species"] = list(self.extra_species)
        return d


_DEFAULT_KEYS = {"delta_nm", "rho3d_nm3", "atoms_per_molecule", "species", "b0_mT",
                 "assignment_window_pct", "depth_round_nm"}


def _parse_delta(value) -> float:
    """Thickness in nm from a number or the keyword 'inf'."""
    if isinstance(value, str):
        value = math.inf if value.strip().lower() in ("inf", "infinity") else float(value)
    value = float(value)
    if not value > 0:
        raise InputError(f"thickness must be positive or 'inf', got {value!r}")
    return value


def _delta_arg(text: str) -> float:
    try:
        return _parse_delta(text)
    except (ValueError, InputError) as exc:
        raise argparse.ArgumentTypeError(f"invalid thickness {text!r}: expected nm or 'inf'") from exc


def _delta_json(delta_nm: float):
    return "inf" if math.isinf(delta_nm) else delta_nm


def load_config(path: str | Path | None) -> RunConfig:
    """Read a RunConfig JSON document; unknown keys are rejected."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be an object")
    unknown = set(doc) - {"defaults", "paths", "seeds", "species_registry"}
    if unknown:
        raise InputError(f"{path}: unknown sections {sorted(unknown)}")
    kw: dict[str, Any] = {}
    defaults = doc.get("defaults", {})
    bad = set(defaults) - _DEFAULT_KEYS
    if bad:
        raise InputError(f"{path}: unknown defaults {sorted(bad)}")
    try:
        for k, v in defaults.items():
            if k == "delta_nm":
                v = _parse_delta(v)
            elif k == "species":
                v = tuple(str(s) for s in ([v] if isinstance(v, str) else v))
            elif v is not None and k != "atoms_per_molecule":
                v = float(v)
            kw[k] = v
        paths = doc.get("paths", {})
        bad = set(paths) - {"traces", "output"}
        if bad:
            raise InputError(f"{path}: unknown paths {sorted(bad)}")
        kw.update({k: str(v) for k, v in paths.items() if v is not None})
        if "seeds" in doc:
            kw["seeds"] = {**RunConfig().seeds, **dict(doc["seeds"])}
        kw["extra_species"] = tuple(doc.get("species_registry", ()))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{path}: {exc}") from exc
    return RunConfig(**kw)


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    changes = {}
    for name in ("delta_nm", "rho3d_nm3", "atoms_per_molecule", "b0_mT", "assignment_window_pct",
                 "depth_round_nm"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    if getattr(args, "species", None):
        changes["species"] = tuple(args.species)
    seed = getattr(args, "seed", None)
    if seed is not None:
        changes["seeds"] = {**cfg.seeds, args.command: seed}
    return replace(cfg, **changes) if changes else cfg


def output_dir(args: argparse.Namespace, cfg: RunConfig) -> Path:
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    if cfg.output:
        return Path(cfg.output)
    return Path(".")


def _output_path(args: argparse.Namespace, cfg: RunConfig, default: str) -> Path:
    name = Path(args.output or default)
    path = name if name.is_absolute() else output_dir(args, cfg) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _input_path(cfg: RunConfig, name: str | Path) -> Path:
    p = Path(name)
    if not p.is_absolute() and cfg.traces and not p.exists():
        p = Path(cfg.traces) / p
    return p


# ---------------------------------------------------------------- helpers

def _num(x) -> float | None:
    """JSON-safe float: non-finite values become null."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _write_json(path: Path, doc: dict[str, Any]) -> None:
    path.write_text(dumps(doc))
    print(f"wrote {path}")


def _resolve_species(cfg: RunConfig, labels: Sequence[str]) -> list[NuclearSpecies]:
    reg = cfg.registry()
    return [reg.get(label) for label in labels]


def _sequence_json(seq: SequenceSpec) -> dict[str, Any]:
    return {"n_pulses": seq.n_pulses, "phase_cycle": seq.phase_cycle.value,
            "pulse_length_ns": seq.pulse_length * 1e9}


# ---------------------------------------------------------------- synth

def _load_model(path: Path, cfg: RunConfig) -> tuple[NoiseModel, float]:
    """Noise model and bias field (T) from a model JSON document."""
    if not path.exists():
        raise InputError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text())
        b0_mT = cfg.b0_mT if cfg.b0_mT is not None else doc.get("b0_mT")
        if b0_mT is None:
            raise InputError("bias field missing: give --b0-mT, defaults.b0_mT or b0_mT in the model")
        b0 = float(b0_mT) * 1e-3
        reg = cfg.registry()
        resonances = []
        for r in doc.get("resonances", []):
            s = reg.get(r["species"])
            brms = float(r["brms_nT"]) * 1e-9
            lw = r.get("linewidth_kHz")
            res = Resonance.at_field(s, b0, brms, None if lw is None else float(lw) * 1e3)
            if r.get("frequency_kHz") is not None:
                res = replace(res, frequency=float(r["frequency_kHz"]) * 1e3)
            resonances.append(res)
        model = NoiseModel(tuple(resonances), float(doc.get("t2_us", 50.0)) * 1e-6,
                           float(doc.get("stretch_p", 1.0)))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{path}: bad model ({exc!r})") from exc
    return model, b0


def dip_span(n_pulses: int) -> float:
    """Relative half-width of the dense window: five dip half-widths (2/N each)."""
    return 10.0 / n_pulses


def tau_grid(model: NoiseModel, tau_min: float | None, tau_max: float | None, n_points: int,
             dip_points: int, dip_span_pct: float) -> np.ndarray:
    """Geometric background grid plus dense points around each dip (s)."""
    dips = [1 / (2 * r.frequency) for r in model.resonances]
    lo = tau_min if tau_min is not None else (0.5 * min(dips) if dips else 0.1e-6)
    hi = tau_max if tau_max is not None else (2.0 * max(dips) if dips else 10e-6)
    if not 0 < lo < hi:
        raise InputError("tau range must satisfy 0 < tau_min < tau_max")
    if n_points < 2:
        raise InputError("n_points must be at least 2")
    parts = [np.geomspace(lo, hi, n_points)]
    span = dip_span_pct / 100
    for t in dips:
        if dip_points > 0:
            parts.append(np.linspace(t * (1 - span), t * (1 + span), dip_points))
    tau = np.unique(np.concatenate(parts))
    return tau[(tau >= lo) & (tau <= hi)]


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    model_path = _input_path(cfg, args.model)
    model, b0 = _load_model(model_path, cfg)
    seq = SequenceSpec(args.n_pulses, args.phase_cycle, args.pulse_length_ns * 1e-9)
    for msg in seq.advisories():
        log.warning(msg)
    tau = tau_grid(model, None if args.tau_min_us is None else args.tau_min_us * 1e-6,
                   None if args.tau_max_us is None else args.tau_max_us * 1e-6,
                   args.n_points, args.dip_points,
                   args.dip_span_pct if args.dip_span_pct is not None else 100 * dip_span(seq.n_pulses))
    seed = cfg.seeds.get("synth", 0)
    trace = synthesize_trace(model, seq, tau, b0, photon_noise=args.noise, seed=seed)
    out = _output_path(args, cfg, "trace.csv")
    write_trace(out, trace)
    meta = metadata_path_for(out)
    write_metadata(meta, seq, b0)
    # provenance lives next to the sidecar so the sidecar keeps its fixed keys
    doc = json.loads(meta.read_text())
    doc["provenance"] = provenance(
        {**cfg.digest_view(), "noise": args.noise, "n_points": args.n_points,
         "dip_points": args.dip_points, "dip_span_pct": args.dip_span_pct},
        {"model": model_path}, {"synth": seed})
    meta.write_text(dumps(doc))
    print(f"wrote {out} ({len(tau)} points) and {meta}")
    return 0


# ---------------------------------------------------------------- fit

def _trace_species(trace, species: Sequence[NuclearSpecies]) -> list[NuclearSpecies]:
    lo, hi = trace.tau[0], trace.tau[-1]
    inside = [s for s in species
              if lo <= 1 / (2 * larmor_frequency(s, trace.b0)) <= hi]
    if not inside:
        raise InputError("no configured species has its resonance inside the trace's tau range")
    return inside


def cmd_fit(args: argparse.Namespace, cfg: RunConfig) -> int:
    trace_path = _input_path(cfg, args.trace)
    meta_path = Path(args.meta) if args.meta else metadata_path_for(trace_path)
    trace = read_trace(trace_path, meta_path)
    if cfg.b0_mT is not None:
        trace = replace(trace, b0=cfg.b0_mT * 1e-3)
    species = _trace_species(trace, _resolve_species(cfg, cfg.species))
    model0, assignments = initial_model(trace, species, cfg.assignment_window_pct)
    result = fit_trace(trace, model0, args.free, method=args.method)
    sig = result.uncertainties

    def s(name: str, scale: float):
        v = sig.get(name)
        return _num(v / scale) if v is not None else None

    resonances = []
    for i, (r, a) in enumerate(zip(result.model.resonances, assignments)):
        resonances.append({
            "species": r.species.label,
            "brms_nT": r.brms * 1e9,
            "sigma_brms_nT": s(f"brms[{i}]", 1e-9),
            "frequency_kHz": r.frequency * 1e-3,
            "sigma_frequency_kHz": s(f"frequency[{i}]", 1e3),
            "linewidth_kHz": r.linewidth * 1e-3,
            "sigma_linewidth_kHz": s(f"linewidth[{i}]", 1e3),
            "expected_frequency_kHz": a.expected_frequency * 1e-3,
            "assigned_frequency_kHz": a.frequency * 1e-3,
            "deviation_pct": a.deviation_pct,
            "fitted_deviation_pct": 100 * (r.frequency - a.expected_frequency) / a.expected_frequency,
            "dip_found": a.found,
        })
        if not a.found:
            log.warning("no dip found for %s within +-%g%%", r.species.label, cfg.assignment_window_pct)
    doc = {
        "kind": "fit",
        "trace": {"n_points": len(trace), "tau_min_us": trace.tau[0] * 1e6, "tau_max_us": trace.tau[-1] * 1e6},
        "sequence": _sequence_json(trace.sequence),
        "b0_mT": trace.b0 * 1e3,
        "resonances": resonances,
        "background": {
            "t2_us": result.model.t2_background * 1e6,
            "sigma_t2_us": s("t2_background", 1e-6),
            "stretch_p": result.model.stretch_p,
            "sigma_stretch_p": s("stretch_p", 1.0),
        },
        "fit": {
            "converged": result.converged,
            "at_bound": result.at_bound,
            "free_params": result.free_params,
            "residual_rms": _num(result.residual_norm),
            "nfev": result.nfev,
            "method": args.method,
        },
        "advisories": trace.sequence.advisories(),
        "provenance": provenance({**cfg.digest_view(), "free": args.free, "method": args.method},
                                 {"trace": trace_path, "meta": meta_path}),
    }
    out = _output_path(args, cfg, "fit.json")
    _write_json(out, doc)
    for r in resonances:
        print(f"{r['species']}: brms = {r['brms_nT']:.1f} nT, f = {r['frequency_kHz']:.2f} kHz "
              f"({r['fitted_deviation_pct']:+.2f}% from gamma ratio)")
    if not result.converged:
        log.error("fit did not converge: %s", result.message)
        return 2
    return 0


# ---------------------------------------------------------------- depth

def cmd_depth(args: argparse.Namespace, cfg: RunConfig) -> int:
    species = _resolve_species(cfg, [args.species_label])[0]
    sigma = (args.sigma_nT or 0.0) * 1e-9
    est = depth_from_brms(args.brms_nT * 1e-9, cfg.delta, cfg.rho3d_nm3 * 1e27, species, sigma)
    doc = {
        "kind": "depth",
        "inputs": {"brms_nT": args.brms_nT, "sigma_brms_nT": args.sigma_nT, "species": species.label,
                   "assumed": {"delta_nm": _delta_json(cfg.delta_nm), "rho3d_nm3": cfg.rho3d_nm3}},
        "outputs": {"depth_nm": est.depth * 1e9, "sigma_depth_nm": est.uncertainty * 1e9},
        "provenance": provenance({**cfg.digest_view(), "brms_nT": args.brms_nT, "sigma_nT": args.sigma_nT,
                                  "species_label": species.label}),
    }
    if sigma > 0:
        print(f"depth = {est.depth * 1e9:.2f} +- {est.uncertainty * 1e9:.2f} nm")
    else:
        print(f"depth = {est.depth * 1e9:.2f} nm")
    _write_json(_output_path(args, cfg, "depth.json"), doc)
    return 0


# ---------------------------------------------------------------- report

def _fit_resonance(path: Path, label: str) -> tuple[float, float, float | None]:
    """(brms, sigma, b0_mT) in SI/lab units for ``label`` from a fit JSON."""
    if not path.exists():
        raise InputError(f"fit file not found: {path}")
    try:
        doc = json.loads(path.read_text())
        for r in doc["resonances"]:
            if r["species"] == label:
                return r["brms_nT"] * 1e-9, (r.get("sigma_brms_nT") or 0.0) * 1e-9, doc.get("b0_mT")
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a fit result ({exc!r})") from exc
    raise InputError(f"{path}: no {label} resonance in fit result")


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    inputs: dict[str, Path] = {}
    b0_values = []
    brms_h: list[float] = []
    sig_h: list[float] = []
    for k, name in enumerate(args.fit_h or []):
        p = _input_path(cfg, name)
        b, sb, b0 = _fit_resonance(p, args.label_h)
        brms_h.append(b)
        sig_h.append(sb)
        b0_values.append(b0)
        inputs[f"fit_h{k}" if len(args.fit_h) > 1 else "fit_h"] = p
    if args.brms_h_nT:
        brms_h += [b * 1e-9 for b in args.brms_h_nT]
        sig_h += [(args.sigma_h_nT or 0.0) * 1e-9] * len(args.brms_h_nT)
    if args.fit_f:
        p = _input_path(cfg, args.fit_f)
        brms_f, sig_f, b0 = _fit_resonance(p, args.label_f)
        b0_values.append(b0)
        inputs["fit_f"] = p
    elif args.brms_f_nT is not None:
        brms_f, sig_f = args.brms_f_nT * 1e-9, (args.sigma_f_nT or 0.0) * 1e-9
    else:
        raise InputError("a fluorine measurement is required: --fit-f or --brms-f-nT")
    if not brms_h and args.depth_nm is None:
        raise InputError("a proton measurement (--fit-h / --brms-h-nT) or --depth-nm is required")
    # sigma of the mean of independent measurements
    sigma_h = math.sqrt(sum(s * s for s in sig_h)) / len(sig_h) if sig_h else 0.0
    reg = cfg.registry()
    sp_h, sp_f = reg.get(args.label_h), reg.get(args.label_f)
    b0_mT = cfg.b0_mT if cfg.b0_mT is not None else next((b for b in b0_values if b is not None), None)
    depth_round = None if cfg.depth_round_nm in (None, 0) else cfg.depth_round_nm * 1e-9
    rep = surface_report(args.label, brms_h or None, brms_f, cfg.delta, cfg.rho3d_nm3 * 1e27,
                         int(cfg.atoms_per_molecule), sp_h, sp_f,
                         depth=None if args.depth_nm is None else args.depth_nm * 1e-9,
                         brms_h_sigma=sigma_h, brms_f_sigma=sig_f, depth_round=depth_round)
    b_h = rep.depth.brms_in
    doc = {
        "kind": "report",
        "nv_label": rep.nv_label,
        "inputs": {
            "brms_h_nT": _num(b_h * 1e9) if brms_h else None,
            "brms_h_measurements_nT": [b * 1e9 for b in brms_h],
            "brms_f_nT": brms_f * 1e9,
            "b0_mT": b0_mT,
            "depth_override_nm": args.depth_nm,
            "assumed": {"delta_nm": _delta_json(cfg.delta_nm), "rho3d_nm3": cfg.rho3d_nm3,
                        "atoms_per_molecule": int(cfg.atoms_per_molecule)},
        },
        "outputs": {
            "depth_nm": rep.depth.depth * 1e9,
            "depth_used_nm": rep.reported_depth * 1e9,
            "sigma_depth_nm": rep.depth.uncertainty * 1e9,
            "rho2d_f_nm2": rep.rho2d_spins * 1e-18,
            "sigma_rho2d_f_nm2": rep.sigma_rho2d_spins * 1e-18,
            "rho2d_mol_nm2": rep.rho2d_molecules * 1e-18,
            "area_nm2": rep.sensitive_area * 1e18,
            "molecules": rep.molecule_count,
            "sigma_molecules": rep.sigma_molecule_count,
        },
        "thickness_table": [
            {"delta_nm": "inf" if row.delta is HALF_SPACE else row.delta * 1e9,
             "depth_nm": row.depth * 1e9,
             "rho_mol_nm2": row.rho2d_molecules * 1e-18,
             "molecules": row.count}
            for row in rep.thickness_table
        ],
        "provenance": provenance({**cfg.digest_view(), "label_h": args.label_h, "label_f": args.label_f,
                                  "brms_h_nT": args.brms_h_nT, "brms_f_nT": args.brms_f_nT,
                                  "sigma_h_nT": args.sigma_h_nT, "sigma_f_nT": args.sigma_f_nT,
                                  "depth_nm": args.depth_nm}, inputs),
    }
    print(f"{rep.nv_label}: depth {rep.reported_depth * 1e9:.1f} nm, "
          f"rho_F {rep.rho2d_spins * 1e-18:.1f} nm^-2, {rep.rho2d_molecules * 1e-18:.1f} molecules/nm^2, "
          f"{rep.molecules_display} molecules")
    for row in rep.thickness_table:
        dn = "inf" if row.delta is HALF_SPACE else f"{row.delta * 1e9:g}"
        print(f"  delta {dn:>5} nm: depth {row.depth * 1e9:5.1f} nm, "
              f"{row.rho2d_molecules * 1e-18:6.2f} nm^-2, {int(round(row.count)):5d} molecules")
    _write_json(_output_path(args, cfg, "report.json"), doc)
    return 0


# ---------------------------------------------------------------- mc

def mc_table(depths_nm: Sequence[float], deltas_nm: Sequence[float], rho3d_nm3: float, n_realizations: int,
             seed: int, extent_factor: float = MIN_EXTENT_FACTOR,
             species: NuclearSpecies | None = None) -> list[dict[str, Any]]:
    """Analytic vs Monte-Carlo rows, plus one zero-density row."""
    from .core import H1
    sp = species or H1
    rows = []
    cases = [(d, dl, rho3d_nm3) for d in depths_nm for dl in deltas_nm]
    cases.append((depths_nm[0], deltas_nm[0], 0.0))
    for d, dl, rho in cases:
        geom = BathGeometry(d * 1e-9, as_thickness(dl * 1e-9 if math.isfinite(dl) else "inf"),
                            rho3d=rho * 1e27, species=sp)
        analytic = layer_brms(geom)
        est = estimate_brms(geom, extent_factor * d * 1e-9, n_realizations, seed)
        diff = est.brms - analytic
        rel = diff / analytic if analytic > 0 else 0.0
        z = diff / est.std_error if est.std_error > 0 else (0.0 if diff == 0 else math.inf)
        rows.append({
            "depth_nm": d, "delta_nm": _delta_json(dl), "rho3d_nm3": rho,
            "analytic_nT": analytic * 1e9, "mc_nT": est.brms * 1e9, "std_error_nT": est.std_error * 1e9,
            "rel_diff": rel, "rel_std_error": est.std_error / analytic if analytic > 0 else 0.0,
            "z_score": _num(z), "mean_spins": est.mean_count,
            "pass": bool(abs(z) <= MC_SIGMA_LIMIT),
        })
    return rows


def cmd_mc(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seeds.get("mc", 1)
    depths = args.depths_nm or MC_DEPTHS_NM
    deltas = args.deltas_nm or MC_DELTAS_NM
    rows = mc_table(depths, deltas, cfg.rho3d_nm3, args.realizations, seed, args.extent_factor)
    doc = {
        "kind": "mc",
        "seed": seed,
        "n_realizations": args.realizations,
        "extent_factor": args.extent_factor,
        "sigma_limit": MC_SIGMA_LIMIT,
        "rows": rows,
        "all_pass": all(r["pass"] for r in rows),
        "provenance": provenance({**cfg.digest_view(), "depths_nm": list(depths),
                                  "deltas_nm": [_delta_json(x) for x in deltas],
                                  "realizations": args.realizations, "extent_factor": args.extent_factor},
                                 seeds={"mc": seed}),
    }
    print(f"seed {seed}, {args.realizations} realizations")
    for r in rows:
        print(f"  d {r['depth_nm']:4g} nm  delta {r['delta_nm']!s:>5} nm  rho {r['rho3d_nm3']:4g}: "
              f"analytic {r['analytic_nT']:8.2f} nT  mc {r['mc_nT']:8.2f} +- {r['std_error_nT']:.2f} nT  "
              f"{'ok' if r['pass'] else 'FAIL'}")
    _write_json(_output_path(args, cfg, "mc.json"), doc)
    return 0 if doc["all_pass"] else 2


# ---------------------------------------------------------------- profile

def cmd_profile(args: argparse.Namespace, cfg: RunConfig) -> int:
    d = args.depth_nm * 1e-9
    species = _resolve_species(cfg, [args.species_label])[0]
    h = d / args.cells_per_depth
    extent = args.extent * d
    out: dict[str, Any] = {"depth_nm": args.depth_nm, "fraction": args.fraction,
                           "extent_over_depth": args.extent, "cells_per_depth": args.cells_per_depth}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        smap = build_map_2d(d, species, extent, h)
        region = minimal_region_fraction(smap, args.fraction)
        out.update(area_nm2=region.area * 1e18, area_over_d2=region.area / d ** 2,
                   extent_limited=region.extent_limited, grid_cells=int(smap.grid.size))
        if args.volume:
            vol = minimal_volume_fraction(d, species, args.fraction, h, extent)
            out.update(volume_nm3=vol.volume * 1e27, edge_over_d=vol.edge / d,
                       volume_extent_limited=vol.extent_limited)
    for w in caught:
        tag = "extent-limited" if issubclass(w.category, ExtentWarning) else w.category.__name__
        log.warning("%s: %s", tag, w.message)
    if args.map_csv:
        p = Path(args.map_csv)
        if not p.is_absolute():
            p = output_dir(args, cfg) / p
        p.parent.mkdir(parents=True, exist_ok=True)
        n = write_map_csv(smap, p)
        out["map_rows"] = n
        print(f"wrote {p} ({n} rows)")
    print(f"area = {out['area_nm2']:.2f} nm^2 ({out['area_over_d2']:.4f} d^2)"
          + (" [extent-limited]" if region.extent_limited else ""))
    if args.volume:
        print(f"volume = {out['volume_nm3']:.2f} nm^3 (edge {out['edge_over_d']:.4f} d)")
    doc = {"kind": "profile", "species": species.label, "outputs": out,
           "provenance": provenance({**cfg.digest_view(), "depth_nm": args.depth_nm,
                                     "fraction": args.fraction, "extent": args.extent,
                                     "cells_per_depth": args.cells_per_depth, "volume": args.volume,
                                     "species_label": species.label})}
    _write_json(_output_path(args, cfg, "profile.json"), doc)
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors are input errors: exit 1
        self.print_usage(sys.stderr)
        raise InputError(message)


def _common(p: argparse.ArgumentParser, default_name: str) -> None:
    p.add_argument("--config", help="RunConfig JSON file (defaults, paths, seeds, species_registry)")
    p.add_argument("-o", "--output", help=f"output file name (default {default_name}, inside the output dir)")
    p.add_argument("--output-dir", help=f"output directory (overrides ${OUTPUT_ENV} and paths.output)")


def _layer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta-nm", dest="delta_nm", type=_delta_arg,
                   help="assumed proton-layer thickness in nm, or 'inf' for a half-space (default 1)")
    p.add_argument("--rho-nm3", dest="rho3d_nm3", type=float, help="proton density in nm^-3 (default 60)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nvnmr", description="NV-center surface NMR analysis pipeline.",
                     epilog="Exit codes: 0 success, 1 input error, 2 numerical failure.")
    parser.add_argument("--version", action="version", version=f"nvnmr {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize a coherence trace from a model JSON")
    p.add_argument("model", help="model JSON: {b0_mT?, t2_us, stretch_p, resonances: [{species, brms_nT, "
                                 "linewidth_kHz?, frequency_kHz?}]}")
    p.add_argument("--n-pulses", type=int, default=192, help="number of pi pulses (default 192)")
    p.add_argument("--phase-cycle", default="XY8", choices=["XY8", "XY16", "CPMG"], help="phase cycle")
    p.add_argument("--pulse-length-ns", type=float, default=0.0, help="pi-pulse length in ns (default 0)")
    p.add_argument("--b0-mT", dest="b0_mT", type=float, help="bias field in mT")
    p.add_argument("--tau-min-us", type=float, help="shortest delay in us (default half the first dip)")
    p.add_argument("--tau-max-us", type=float, help="longest delay in us (default twice the last dip)")
    p.add_argument("--n-points", type=int, default=40, help="geometric background points (default 40)")
    p.add_argument("--dip-points", type=int, default=60, help="extra linear points per dip (default 60)")
    p.add_argument("--dip-span-pct", type=float,
                   help="half-width of the dense window in %% of tau (default 1000/n_pulses)")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise std on the signal (default 0)")
    p.add_argument("--seed", type=int, help="noise seed (overrides seeds.synth)")
    _common(p, "trace.csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit a coherence trace")
    p.add_argument("trace", help="trace CSV (tau_us,signal or tau_us,counts_signal,counts_bright,counts_dark)")
    p.add_argument("--meta", help="metadata sidecar JSON (default: trace path with .json suffix)")
    p.add_argument("--species", nargs="+", help="species labels to assign (default from config: 1H 19F)")
    p.add_argument("--window-pct", dest="assignment_window_pct", type=float,
                   help="species-to-dip assignment window in %% (default 5)")
    p.add_argument("--b0-mT", dest="b0_mT", type=float, help="override the sidecar bias field, mT")
    p.add_argument("--free", nargs="+", help="free parameters, e.g. brms[0] t2_background (default all)")
    p.add_argument("--method", choices=["exact", "quadrature"], default="exact",
                   help="decoherence evaluation route (default exact)")
    _common(p, "fit.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("depth", help="NV depth from a proton rms field")
    p.add_argument("--brms-nT", dest="brms_nT", type=float, required=True, help="rms field in nT")
    p.add_argument("--sigma-nT", dest="sigma_nT", type=float, help="1-sigma uncertainty of the rms field, nT")
    p.add_argument("--species", dest="species_label", default="1H", help="bath species label (default 1H)")
    _layer_flags(p)
    _common(p, "depth.json")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("report", help="depth, surface density and molecule count for one NV")
    p.add_argument("--label", default="NV", help="NV label (default NV)")
    p.add_argument("--fit-h", nargs="+", help="fit JSON(s) holding the proton resonance; several are averaged")
    p.add_argument("--fit-f", help="fit JSON holding the fluorine resonance")
    p.add_argument("--brms-h-nT", dest="brms_h_nT", type=float, nargs="+", help="proton rms field(s), nT")
    p.add_argument("--sigma-h-nT", dest="sigma_h_nT", type=float, help="uncertainty of each proton field, nT")
    p.add_argument("--brms-f-nT", dest="brms_f_nT", type=float, help="fluorine rms field, nT")
    p.add_argument("--sigma-f-nT", dest="sigma_f_nT", type=float, help="uncertainty of the fluorine field, nT")
    p.add_argument("--depth-nm", dest="depth_nm", type=float, help="known NV depth in nm (skips the proton step)")
    p.add_argument("--atoms", dest="atoms_per_molecule", type=int, help="fluorine atoms per molecule (default 3)")
    p.add_argument("--depth-round-nm", dest="depth_round_nm", type=float,
                   help="round the inferred depth to this step before the density step (default 0.1; 0 = off)")
    p.add_argument("--b0-mT", dest="b0_mT", type=float, help="bias field recorded in the report, mT")
    p.add_argument("--label-h", default="1H", help="proton species label (default 1H)")
    p.add_argument("--label-f", default="19F", help="fluorine species label (default 19F)")
    _layer_flags(p)
    _common(p, "report.json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("mc", help="validate the analytic field against Monte-Carlo baths")
    p.add_argument("--depths-nm", type=float, nargs="+", help="NV depths, nm (default 3 5 8)")
    p.add_argument("--deltas-nm", type=_delta_arg, nargs="+", help="layer thicknesses, nm (default 0.25 0.5 1 2)")
    p.add_argument("--rho-nm3", dest="rho3d_nm3", type=float, help="proton density in nm^-3 (default 60)")
    p.add_argument("--realizations", type=int, default=MC_REALIZATIONS,
                   help=f"baths per grid point (default {MC_REALIZATIONS})")
    p.add_argument("--extent-factor", type=float, default=MIN_EXTENT_FACTOR,
                   help=f"lateral half-width in units of depth (default {MIN_EXTENT_FACTOR:g})")
    p.add_argument("--seed", type=int, help="master seed (overrides seeds.mc)")
    _common(p, "mc.json")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("profile", help="sensitive surface area (and volume) for a signal fraction")
    p.add_argument("--depth-nm", dest="depth_nm", type=float, required=True, help="NV depth in nm")
    p.add_argument("--fraction", type=float, default=0.5, help="fraction of B_rms^2 (default 0.5)")
    p.add_argument("--volume", action="store_true", help="also compute the minimal bath volume")
    p.add_argument("--extent", type=float, default=DEFAULT_EXTENT,
                   help=f"grid half-width in units of depth (default {DEFAULT_EXTENT:g})")
    p.add_argument("--cells-per-depth", type=float, default=40.0, help="grid cells per depth (default 40)")
    p.add_argument("--map-csv", help="write the surface map as x_nm,y_nm,value CSV")
    p.add_argument("--species", dest="species_label", default="1H", help="species label (default 1H)")
    _common(p, "profile.json")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(format="nvnmr: %(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        log.setLevel(logging.ERROR if args.quiet else logging.WARNING)
        cfg = _apply_flags(load_config(args.config), args)
        return args.func(args, cfg)
    except InputError as exc:
        print(f"nvnmr: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, UnicodeDecodeError) as exc:
        print(f"nvnmr: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ArithmeticError) as exc:
        print(f"nvnmr: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
