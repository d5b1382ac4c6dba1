"""Vertical martingales on submersions: simulation and numerical checks."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.0.0"

from .geometry import ChartedManifold, SecondOrderVector, euclidean, flat_torus, \
    hyperbolic_half_plane, sphere_chart
from .submersion import AdaptedSubmersion, VerticalForm, vertical_christoffels
from .paths import Ensemble, SamplePath, TimeGrid, simulate_bm_ensemble, simulate_sde_ensemble
from .integrals import RealPath, conversion_residual, vertical_ito_integral, \
    vertical_stratonovich_integral
from .martingale import MartingaleReport, drift_part, martingale_test
from .maps import SmoothMapJet, is_harmonic_section, section, tension_field, vertical_sff
from .bundles import complete_lift_bundle, product_principal_bundle, sasaki_bundle

__all__ = [
    "AdaptedSubmersion", "ChartedManifold", "Ensemble", "MartingaleReport", "RealPath",
    "SamplePath", "SecondOrderVector", "SmoothMapJet", "TimeGrid", "VerticalForm",
    "complete_lift_bundle", "conversion_residual", "drift_part", "euclidean", "flat_torus",
    "hyperbolic_half_plane", "is_harmonic_section", "martingale_test",
    "product_principal_bundle", "sasaki_bundle", "section", "simulate_bm_ensemble",
    "simulate_sde_ensemble", "sphere_chart", "tension_field", "vertical_christoffels",
    "vertical_ito_integral", "vertical_sff", "vertical_stratonovich_integral",
]
