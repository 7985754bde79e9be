"""Monte Carlo persistence probabilities for random walks in random scenery
and partial sums of long-range dependent Gaussian sequences."""

from persistmc.estimation import (ExponentFit, PersistenceEstimate, PhiEstimate, ProcessSpec,
                                  RunPlan, SupExpectationEstimate, estimate_persistence,
                                  estimate_phi, estimate_sup_expectation, estimate_tail_tau_N,
                                  fit_exponent, simulate)
from persistmc.functionals import PathStats, boundary_shift_check, compute_stats
from persistmc.gaussian import CorrelationSpec, fgn_correlation, generate_stationary, partial_sums
from persistmc.rng import StreamKey, derive_stream, sample_standard_gaussian, site_gaussian
from persistmc.scenery import ProcessPath, conditional_covariance, rwrs_path
from persistmc.walks import WalkKind, WalkPath, green_at_origin, mean_self_intersection, simulate_walk

__version__ = "0.1.0"
