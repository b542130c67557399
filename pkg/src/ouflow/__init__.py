"""Numerical laboratory for isotropic Ornstein-Uhlenbeck flows.

An isotropic Ornstein-Uhlenbeck flow is the stochastic flow generated by an
isotropic Brownian vector field with an added linear restoring drift ``-c x``.
This package simulates such flows at desk scale and checks every closed-form
quantity attached to them: the isotropic covariance tensor, exact Gaussian
increment sampling, the Lyapunov spectrum and Lyapunov (Kaplan-Yorke)
dimension, the scale-function / speed-measure analysis of the two-point
distance diffusion, correlation-dimension estimates of the statistical
equilibrium, and the quantitative bounds behind the weak-attractor criterion.
"""

from ouflow.correlation import (
    CorrelationModel,
    PairwiseBound,
    gaussian_potential,
    gaussian_solenoidal,
    gaussian_mixture,
    user_supplied,
    build_tensor,
    tensor_derivatives,
    beta_coefficients,
    sup_ratio_constants,
    validate_psd,
)
from ouflow.sampling import (
    IncrementRequest,
    IncrementSample,
    CovarianceFactor,
    assemble_covariance,
    factorize_covariance,
    increment_factor,
    sample_increment,
    replica_stream,
)
from ouflow.flow import FlowState, SimConfig, step, simulate, pullback_cloud
from ouflow.spectrum import (
    LyapunovSpectrum,
    closed_form_spectrum,
    lyapunov_dimension,
    estimate_spectrum_qr,
)
from ouflow.radial import (
    RadialLaw,
    NotNormalizable,
    NOT_NORMALIZABLE,
    simulate_radial,
    scale_function,
    speed_density,
    invariant_density,
    classify,
)
from ouflow.dimension import (
    EmpiricalMeasure,
    DimensionFit,
    RangePolicy,
    correlation_dimension,
    equilibrium_report,
)

__all__ = [
    "CorrelationModel",
    "PairwiseBound",
    "gaussian_potential",
    "gaussian_solenoidal",
    "gaussian_mixture",
    "user_supplied",
    "build_tensor",
    "tensor_derivatives",
    "beta_coefficients",
    "sup_ratio_constants",
    "validate_psd",
    "IncrementRequest",
    "IncrementSample",
    "CovarianceFactor",
    "assemble_covariance",
    "factorize_covariance",
    "increment_factor",
    "sample_increment",
    "replica_stream",
    "FlowState",
    "SimConfig",
    "step",
    "simulate",
    "pullback_cloud",
    "LyapunovSpectrum",
    "closed_form_spectrum",
    "lyapunov_dimension",
    "estimate_spectrum_qr",
    "RadialLaw",
    "NotNormalizable",
    "NOT_NORMALIZABLE",
    "simulate_radial",
    "scale_function",
    "speed_density",
    "invariant_density",
    "classify",
    "EmpiricalMeasure",
    "DimensionFit",
    "RangePolicy",
    "correlation_dimension",
    "equilibrium_report",
]

__version__ = "0.1.0"
