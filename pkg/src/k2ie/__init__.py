"""
Kernel intensity estimation for inhomogeneous Poisson processes.

The main estimator sums an edge-corrected equivalent kernel over the events;
kernel smoothing with edge correction and a squared-RKHS dual estimator are
provided as baselines.
"""

from .domain import Domain, DomainError, HyperRect, load_domain, save_domain
from .equivalent import (
    EquivalentKernel,
    NumericalError,
    build_equivalent_kernel,
    edge_matrix,
    feature_integral,
    h_eval,
)
from .estimators import (
    FittedFIE,
    FittedK2IE,
    FittedKIE,
    OptimizerConfig,
    count_probability,
    fit_fie,
    fit_k2ie,
    fit_kie,
    integral,
    intensity,
    load_model,
    save_model,
)
from .evaluation import (
    EvalGrid,
    MetricsRecord,
    heldout_count_nll,
    heldout_ls_loss,
    l2_error,
    labs_error,
    negativity_ratio,
    rho,
    timed_fit,
)
from .features import FeatureMap, KernelParams, build_feature_map, features, kernel_approx, kernel_exact
from .fileio import load_events, save_events
from .selection import CVPlan, CVResult, SelectionError, grid_search
from .simulation import (
    IntensitySpec,
    analytic_1d,
    drop_subdomains,
    sample_gp_cox_2d,
    scaled,
    simulate_dataset,
    simulate_thinning,
)

__version__ = "0.1.0"
