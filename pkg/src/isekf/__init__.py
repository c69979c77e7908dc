"""Outlier-robust extended Kalman filtering via adaptive innovation
saturation, with stability certificates for the linear observer case and
a mobile-robot localization benchmark harness."""

from .errors import (
    CertificationFailure,
    ConfigurationError,
    InputDomainError,
    IsekfError,
    NumericalFailure,
    PropertyFailure,
    UndefinedMetricError,
)
from .filters import (
    FilterState,
    NonlinearModel,
    ct_isekf_derivative,
    ct_isekf_integrate,
    dt_isekf_step,
    dt_predict,
    dt_update,
    ekf_step,
    jacobian_fd,
    sigma_gate_step,
    wrap_angle,
)
from .saturation import (
    BoundParams,
    SaturationState,
    bound_rhs_ct,
    bound_step_dt,
    saturate,
    saturate_innovation,
)
from .stability import (
    CertificateCandidate,
    LinearSystem,
    StabilityCertificate,
    bound_trajectory_check,
    build_S,
    build_Z,
    certify,
    is_psd,
    solve_care,
    solve_dare,
    sweep_candidates,
)

__version__ = "0.1.0"

__all__ = [
    "BoundParams",
    "CertificateCandidate",
    "CertificationFailure",
    "ConfigurationError",
    "FilterState",
    "InputDomainError",
    "IsekfError",
    "LinearSystem",
    "NonlinearModel",
    "NumericalFailure",
    "PropertyFailure",
    "SaturationState",
    "StabilityCertificate",
    "UndefinedMetricError",
    "bound_rhs_ct",
    "bound_step_dt",
    "bound_trajectory_check",
    "build_S",
    "build_Z",
    "certify",
    "ct_isekf_derivative",
    "ct_isekf_integrate",
    "dt_isekf_step",
    "dt_predict",
    "dt_update",
    "ekf_step",
    "is_psd",
    "jacobian_fd",
    "saturate",
    "saturate_innovation",
    "sigma_gate_step",
    "solve_care",
    "solve_dare",
    "sweep_candidates",
    "wrap_angle",
]
