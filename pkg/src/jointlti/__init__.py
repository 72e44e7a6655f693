"""Joint estimation of linear time-invariant systems that share a low-rank basis."""

from .diagnostics import (
    alpha,
    covariance_report,
    estimation_error,
    f_lambda,
    noise_event_check,
    op_norm_inf,
    op_norm_inf_to_2,
)
from .dynamics import NoiseModel, Trajectory, TrajectoryBundle, load_bundle, save_bundle, simulate, simulate_bundle
from .ensemble import (
    CoefficientSet,
    JordanSpec,
    MisspecificationSet,
    SharedBasis,
    SystemEnsemble,
    build_from_jordan,
    compose_systems,
    generate_ensemble,
    load_ensemble,
    save_ensemble,
)
from .errors import (
    ArgumentError,
    DegenerateSystemError,
    DivergenceError,
    DomainError,
    JointLTIError,
    JordanUnavailableError,
    NoiseUnavailableError,
    NumericalError,
    RankDeficiencyError,
    SimulationOverflowError,
)
from .estimators import FitConfig, JointFit, OlsFit, joint_fit, ols_fit, select_k
from .experiments import SweepConfig, SweepResult, run_misspec_grid, run_sweep, state_growth_profile
from .kernels import BACKEND

__version__ = "0.1.0"
