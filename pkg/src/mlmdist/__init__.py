"""Joint reliability distributions of m-truncated max-log-map detectors on ISI channels."""
from .channel import (ChannelModel, NoiseModel, SymbolWindows, WindowMatrices, build_window_matrices,
                      sample_noise, sample_symbol_windows, transmit, window_covariance)
from .constraints import (Constraint, ForbiddenPatterns, InfeasibleConstraintError,
                          PredicateConstraint, get_constraint, rll_d1)
from .decomp import QLambda, TrialTerms, compute_q_lambda, compute_trial_terms
from .detector import CandidateSet, compute_xy, delta, detect, simulate_detector, simulate_empirical_cdf
from .dp import DpInstance, dp_max, dp_max_constrained, exhaustive_max
from .estimator import (CdfEstimate, ConditionalEstimate, DetectorConfig, conditional_cdf,
                        estimate_conditional, estimate_f_xmy, estimate_joint_error,
                        estimate_queries, estimate_reliability_cdf, joint_error_prob,
                        reliability_cdf, trials_for_halfwidth)
from .mvncdf import GaussianCdfProblem, mvn_cdf, mvn_cdf_batch, sym_eig
from .selectors import SelectorMatrices, build_g, build_selectors, compute_mu_nu, selector_to_candidate

__all__ = [
    "CandidateSet", "CdfEstimate", "ChannelModel", "ConditionalEstimate", "Constraint",
    "DetectorConfig", "DpInstance", "ForbiddenPatterns", "GaussianCdfProblem",
    "InfeasibleConstraintError", "NoiseModel", "PredicateConstraint", "QLambda",
    "SelectorMatrices", "SymbolWindows", "TrialTerms", "WindowMatrices", "build_g",
    "build_selectors", "build_window_matrices", "compute_mu_nu", "compute_q_lambda",
    "compute_trial_terms", "compute_xy", "conditional_cdf", "delta", "detect", "dp_max",
    "dp_max_constrained", "estimate_conditional", "estimate_f_xmy", "estimate_joint_error",
    "estimate_queries", "estimate_reliability_cdf", "exhaustive_max", "get_constraint",
    "joint_error_prob", "mvn_cdf", "mvn_cdf_batch", "reliability_cdf", "rll_d1",
    "sample_noise", "sample_symbol_windows", "selector_to_candidate", "simulate_detector",
    "simulate_empirical_cdf", "sym_eig", "transmit", "trials_for_halfwidth", "window_covariance",
]
