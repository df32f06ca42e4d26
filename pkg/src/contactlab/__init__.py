"""contactlab: a simulation and verification laboratory for the contact
process with spontaneous infection.

Monte Carlo estimation of the infection probability theta(lam, h) and the
susceptibility chi(lam, h) by backward cluster exploration on a graphical
representation, an event-driven forward simulator, an exact Markov-chain
oracle for small graphs, and experiment-level checks of the differential
inequalities and critical-exponent bounds that govern the lower phase
transition.
"""

__version__ = "0.1.0"

from .errors import (ContactLabError, DomainError, ResourceError,
                     QualityError, NumericalError, FitError)
from .geometry import (GraphSpec, lattice, tree, complete, explicit, cycle,
                       path, origin, neighbors, in_neighbors, total_rate,
                       distance, ball, site_code, materialize)
from .gfield import EventField, SiteTimeline, EVENT_HEAL, EVENT_GREEN, \
    EVENT_ARROW
from .cluster import ClusterResult, MassSample, explore, sample_masses
from .estimators import (Estimate, ThetaMaxResult, theta, theta_indicator,
                         chi, dtheta_dh, dtheta_dlambda, prob_one_green,
                         theta_max)
from .oracle import (GeneratorMatrix, build_generator,
                     stationary_distribution, stationary_theta,
                     transient_distribution, transient_theta,
                     exact_derivatives)
from .forward import (TrajectorySummary, ForwardSample, forward_sample, run,
                      survival_curve, coupled_forward)
from .analysis import (InequalityRow, InequalityReport, FitReport,
                       CriticalScan, pdi_check, chi_ineq_check,
                       chi_growth_ratio, survival_plateau,
                       estimate_lambda_c, fit_delta, fit_beta, decay_fit,
                       eta_sign_scan)

__all__ = [
    "ContactLabError", "DomainError", "ResourceError", "QualityError",
    "NumericalError", "FitError",
    "GraphSpec", "lattice", "tree", "complete", "explicit", "cycle", "path",
    "origin", "neighbors", "in_neighbors", "total_rate", "distance", "ball",
    "site_code", "materialize",
    "EventField", "SiteTimeline", "EVENT_HEAL", "EVENT_GREEN", "EVENT_ARROW",
    "ClusterResult", "MassSample", "explore", "sample_masses",
    "Estimate", "ThetaMaxResult", "theta", "theta_indicator", "chi",
    "dtheta_dh", "dtheta_dlambda", "prob_one_green", "theta_max",
    "GeneratorMatrix", "build_generator", "stationary_distribution",
    "stationary_theta", "transient_distribution", "transient_theta",
    "exact_derivatives",
    "TrajectorySummary", "ForwardSample", "forward_sample", "run",
    "survival_curve", "coupled_forward",
    "InequalityRow", "InequalityReport", "FitReport", "CriticalScan",
    "pdi_check", "chi_ineq_check", "chi_growth_ratio", "survival_plateau",
    "estimate_lambda_c", "fit_delta", "fit_beta", "decay_fit",
    "eta_sign_scan",
    "__version__",
]
