"""Willmore flow of surfaces written as normal graphs over a fixed reference surface."""

from .config import RunConfig, config_from_dict, initial_height, parse_config
from .curvature import analytic_height, curvature_bundle, curvatures, discrete_height, fundamental_forms
from .energy import EnergyReport, energy_report, gauss_bonnet_defect, surface_area, willmore_energy
from .flow import FlowEvent, FlowParams, Trajectory, adapt_dt, detect_equilibrium, run, step_semi_implicit
from .grid import build_grids, differentiate, exchange_and_blend, integrate
from .operators import build_split, euler_lagrange_residual, rhs_direct
from .surfaces import make_sphere, make_surface, make_torus, tubular_radius
from .translation import (
    SampledTrajectory,
    SpaceTimeTransform,
    TimeShift,
    TruncatedTranslation,
    commutator_B,
    smoothness_probe,
    transform_trajectory,
)

__version__ = "0.1.0"
