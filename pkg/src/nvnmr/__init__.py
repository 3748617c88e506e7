"""NV-center surface NMR analysis: dipolar field models of nuclear spin baths,
dynamical-decoupling trace fitting, depth and density inversion, sensitivity
regions and a reproducible CLI pipeline."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DEFAULT_CONSTANTS,
    DEFAULT_REGISTRY,
    F19,
    H1,
    InputError,
    NuclearSpecies,
    NumericalError,
    NVNMRError,
    PhysicalConstants,
    SpeciesRegistry,
    get_species,
    larmor_frequency,
    register_species,
)
from .dipolar import (  # noqa: E402
    HALF_SPACE,
    BathGeometry,
    SpinPosition,
    layer_brms,
    layer_brms2,
    prefactor_2d,
    prefactor_3d,
    single_spin_brms2,
    surface2d_brms,
    surface2d_brms2,
)
from .inversion import (  # noqa: E402
    SurfaceReport,
    density2d_from_brms,
    depth_error_curve,
    depth_from_brms,
    molecule_count,
    surface_report,
    thickness_sensitivity,
)
from .profile import build_map_2d, minimal_region_fraction, minimal_volume_fraction, sensitive_area  # noqa: E402
