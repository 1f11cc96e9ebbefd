"""Desk-scale laboratory for path-dependent stochastic control on particle
ensembles with common noise: simulation, value search, gauge calculus,
viscosity residuals and the supporting variational machinery."""

from .coeffs import (
    BatchLaw,
    CoefficientSet,
    EnsembleLaw,
    PointwiseProblem,
    make_coefficients,
    registered_names,
)
from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .controls import (
    ControlFamily,
    ControlSpec,
    constant_family,
    deterministic_family,
    explicit_family,
    tree_family,
)
from .core import (
    ContractError,
    ContractWarning,
    PathSample,
    ProcessEnsemble,
    ShapeError,
    SimulationError,
    TimeGrid,
    constant_ensemble,
    ensemble_from_states,
    process_norm,
    random_ensemble,
    stopped_path,
)
from .gauge import (
    DoubledPoint,
    GaugePoint,
    SmoothFunctional,
    cubic_functional,
    gauge_distance,
    gauge_functional,
    ito_residual,
    linear_functional,
    path_gauge,
    path_gauge_derivatives,
    quadratic_functional,
    running_integral_functional,
    smooth_eval,
)
from .hjb import (
    FDTable,
    check_lift,
    classical_residual,
    fd_solve,
    feedback_from_table,
    hamiltonian,
    transform_constant_vol,
)
from .meanfield import (
    CheckCoefficientSet,
    check_decomposition,
    check_law_invariance,
    lift_coefficients,
    lipschitz_probe,
    make_mfc,
    permute_idio,
)
from .metrics import (
    EmpiricalMeasure,
    QuadratureSpec,
    conditional_law,
    fourier_wasserstein,
    wasserstein_p,
)
from .noise import NoiseBundle, gaussian_noise, tree_noise
from .sde import (
    TildeCoefficients,
    check_sde_estimates,
    integrate_lifted,
    simulate_frozen,
    simulate_state,
)
from .singular import SingularFunctional, TestPair, rate_check, viscosity_residual
from .value import ValueEstimate, check_dpp, cost_J, estimate_regularity, value_V
from .variational import FiniteInstance, borwein_preiss, is_gauge

__version__ = "0.1.0"
