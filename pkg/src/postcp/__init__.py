"""Posterior conformal prediction: intervals weighted by residual mixture memberships."""

from .core import (PcpConfig, WeightedEmpiricalDist, conformal_pvalue, effective_sample_size,
                   kl_divergence, kl_limit_weights, kl_weights, multinomial_draw, rng_stream,
                   weighted_quantile)
from .classify import conformity_score, isotonic_calibrate, level_adaptive_set
from .evaluation import (calibration_curve, length_summary, local_coverage,
                         marginal_coverage, worst_slice_coverage)
from .fairness import (equalized_pcp_interval, fit_propensity, generalized_covariance,
                       subpopulation_overrepresentation_gap)
from .hyper import select_K, select_m
from .mixture import MembershipModel, cluster_reconstruct, make_grid, smw_update
from .models import TabularDataset, make_regressor, read_csv, write_csv
from .pcp import PcpModel, nonrandomized_kl_interval, oracle_pcp_interval, pcp_interval
from .scp_baselines import (PredictionInterval, rlcp_interval, scp_interval,
                            scp_partition_interval)

__version__ = "0.1.0"

__all__ = [
    "PcpConfig", "WeightedEmpiricalDist", "conformal_pvalue", "effective_sample_size",
    "kl_divergence", "kl_limit_weights", "kl_weights", "multinomial_draw", "rng_stream",
    "weighted_quantile", "conformity_score", "isotonic_calibrate", "level_adaptive_set",
    "calibration_curve", "length_summary", "local_coverage", "marginal_coverage",
    "worst_slice_coverage", "equalized_pcp_interval", "fit_propensity",
    "generalized_covariance", "subpopulation_overrepresentation_gap", "select_K", "select_m",
    "MembershipModel", "cluster_reconstruct", "make_grid", "smw_update", "TabularDataset",
    "make_regressor", "read_csv", "write_csv", "PcpModel", "nonrandomized_kl_interval",
    "oracle_pcp_interval", "pcp_interval", "PredictionInterval", "rlcp_interval",
    "scp_interval", "scp_partition_interval",
]
