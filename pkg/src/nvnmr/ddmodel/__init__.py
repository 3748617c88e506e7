"""Dynamical-decoupling coherence model, trace IO and fitting."""
from .fitting import (
    DipAssignment,
    FitResult,
    T2Result,
    assign_dips,
    brms_from_dip_area,
    dip_chi,
    extract_t2,
    fit_trace,
    initial_model,
    parameter_names,
    resonance_windows,
)
from .kernel import (
    DEFAULT_LINEWIDTH_RATIO,
    NoiseModel,
    PhaseCycle,
    Resonance,
    SequenceSpec,
    chi_background,
    chi_resonance,
    coherence,
    cpmg_filter,
    filter_weight,
    line_power,
    lorentzian_psd,
)
from .traces import (
    RAW_HEADER,
    SIGNAL_HEADER,
    CoherenceTrace,
    metadata_path_for,
    normalize_trace,
    read_metadata,
    read_trace,
    synthesize_trace,
    write_metadata,
    write_trace,
)
