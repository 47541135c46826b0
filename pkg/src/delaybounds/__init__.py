"""Bilateral norm bounds and domain estimates for nonlinear delay systems."""

from __future__ import annotations

from .bounds import (
    BoundTrace,
    MajorantSpec,
    baseline_bounds,
    bilateral_bounds,
    cubic_residual_majorant,
    integrate_majorant,
    residual_majorant,
)
from .cascade import CascadeResult, DecayReport, check_decay, solve_cascade
from .domain import (
    BoundaryEstimate,
    Prober,
    ProbeResult,
    polar_to_state,
    probe_reference,
    probe_scalar_bound,
    probe_y_threshold,
    radial_search,
    sweep,
)
from .engine import StepperConfig, Trajectory, evaluate, integrate
from .errors import (
    ConfigError,
    DefectiveMatrix,
    DelayBoundsError,
    MeshMismatch,
    MissingIterate,
    NoExceedanceFound,
    NonFiniteState,
    NotHurwitz,
    OutOfDomain,
    SeedExceeded,
    StepExceedsMinDelay,
    UnsupportedNonlinearity,
)
from .models import (
    MODELS,
    DelaySystem,
    OscillatorParams,
    build_duffing_system,
    build_gaussian_variant,
    build_model,
    build_tanh_variant,
    build_vdp_system,
    polynomial_majorant,
)
from .spectral import EigenData, eigen_decompose, g_norm, transformed_norm

__version__ = "0.1.0"
