"""edgebo: Bayesian optimization that keeps acquisitions off the box boundary.

A Gaussian-process surrogate accepts virtual derivative-sign observations on
the border of the search space (inference by expectation propagation with a
probit sign likelihood), which suppresses the boundary over-exploration of
confidence-bound acquisitions.  See README.md for usage.
"""
from .acquisition import LcbParams, lcb_value, propose_next
from .bo import (
    ADBO,
    DBO,
    VBO,
    BoConfig,
    BoEvent,
    BoLoop,
    BoTrace,
    adbo_gate,
    near_boundary_dims,
    project_and_signs,
    remove_conflicting_virtual,
    run,
)
from .domain import BoxDomain, Observation, VirtualSignObservation, unit_box
from .ep import (
    ApproxPosterior,
    EpOptions,
    ProbitSite,
    energy,
    ep_fit,
    fit_state,
    probit_likelihood,
    sign_support,
)
from .gp import (
    GpPosterior,
    GpState,
    HyperparamBounds,
    SurrogateStateError,
    FactorizationError,
    fit_hyperparams,
    log_marginal_gaussian,
    predict_df,
    predict_f,
)
from .kernels import (
    KernelHyperparams,
    LatentIndex,
    LatentKind,
    active_backend,
    build_joint_gram,
    cov_dd,
    cov_df,
    cov_ff,
)
from .objectives import (
    NoiseModel,
    ObjectiveSpec,
    add_noise,
    factorial_design,
    library_suite,
    random_mnd,
    two_gaussian_2d,
)

__version__ = "0.1.0"

__all__ = [
    "ADBO",
    "ApproxPosterior",
    "BoConfig",
    "BoEvent",
    "BoLoop",
    "BoTrace",
    "BoxDomain",
    "DBO",
    "EpOptions",
    "FactorizationError",
    "GpPosterior",
    "GpState",
    "HyperparamBounds",
    "KernelHyperparams",
    "LatentIndex",
    "LatentKind",
    "LcbParams",
    "NoiseModel",
    "Observation",
    "ObjectiveSpec",
    "ProbitSite",
    "SurrogateStateError",
    "VBO",
    "VirtualSignObservation",
    "active_backend",
    "adbo_gate",
    "add_noise",
    "build_joint_gram",
    "cov_dd",
    "cov_df",
    "cov_ff",
    "energy",
    "ep_fit",
    "factorial_design",
    "fit_hyperparams",
    "fit_state",
    "lcb_value",
    "library_suite",
    "log_marginal_gaussian",
    "near_boundary_dims",
    "predict_df",
    "predict_f",
    "probit_likelihood",
    "project_and_signs",
    "propose_next",
    "random_mnd",
    "remove_conflicting_virtual",
    "run",
    "sign_support",
    "two_gaussian_2d",
    "unit_box",
    "__version__",
]
