"""Event-triggered learning for linear-quadratic control.

Exact statistics of the finite-horizon LQR cost of linear-Gaussian systems,
learning triggers built on them, and a closed-loop harness that detects plant
changes and re-learns the model.
"""

from .config import ScenarioConfig, TriggerSpec, load_config, parse_config
from .cost import (
    CostMoments,
    MgfSpectrum,
    cost_bound,
    empirical_cost,
    expected_cost,
    log_mgf,
    mgf,
    mgf_general,
    mgf_spectrum,
    moments_from_mgf,
    rolling_costs,
    second_moment,
)
from .exceptions import *  # noqa: F401,F403
from .identification import ExcitationSignal, IdentifiedModel, LeastSquaresIdentifier, ols_estimate, oracle_update
from .linalg import lqr_gain, solve_dare, solve_dlyap_controllability, solve_dlyap_observability, spectral_radius
from .metrics import DetectionRecord, gaussian_kde_2d, h2_norm, misfire_rate, system_change_metric
from .scenario import run_etl_scenario, run_montecarlo
from .system import (
    ClosedLoopSystem,
    CostWeights,
    OpenLoopSystem,
    RandomSystemSpec,
    Trajectory,
    apply_controller,
    close_loop,
    perturb_system,
    random_system,
    simulate,
)
from .triggers import ChernoffTrigger, HoeffdingTrigger, chernoff_thresholds, hoeffding_threshold

__version__ = "0.1.0"
