"""Numerical laboratory for Kato curvature bounds and time-changed metrics.

Builds discretized model manifolds, measures Kato constants of the Ricci
negative part, constructs the Dynkin gauge function, performs the
conformal time change, and verifies Bakry-Emery curvature-dimension
certificates and almost-monotone volume ratios.
"""

__version__ = "0.1.0"

from .geometry import (
    GeometrySpec,
    ModelGeometry,
    as_field,
    ball_volume,
    ball_volume_constant,
    build_geometry,
    ricci_minus_field,
    sphere_area,
)
from .profiles import Profile1D, Profile2D
from .spectral import (
    SpectralDecomposition,
    apply_semigroup,
    decompose,
    heat_kernel,
    schrodinger_decompose,
)
from .kato import (
    ConditionReport,
    KatoBoundFn,
    KatoProfile,
    check_conditions,
    kato_of_manifold,
    kato_of_potential,
    kato_profile,
    phi_integral,
)
from .gauge import (
    GaugeResult,
    SpaceTimeField,
    direct_solve_phi,
    duhamel_apply,
    gauge_phi,
    semigroup_Lp_check,
    solve_I,
    spectral_bound_check,
    window_times,
)
