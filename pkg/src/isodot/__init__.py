"""Isoform abundance estimation and differential expression/usage testing.

Exon-set fragment counts are modeled as negative-binomial with means linear
in candidate-isoform effective lengths; abundances come from penalized
nonnegative regression with a log penalty, and differential isoform
expression (DIE) or usage (DIU) is tested by bootstrap or permutation
likelihood-ratio tests, down to one case versus one control.
"""

from .annotation import (
    Exon,
    ExonSetKey,
    Isoform,
    TranscriptCluster,
    assemble_clusters,
    canonical_exon_set_key,
    split_overlapping_exons,
)
from .candidates import (
    CandidateParams,
    CovariateDesign,
    DesignMatrix,
    build_covariate_design,
    build_design_matrix,
    detect_break_points,
    encode_categorical,
    enumerate_candidate_isoforms,
    initial_start_end_exons,
    rescale_covariates,
    score_exon_set_expression,
)
from .efflen import (
    EffLenProfile,
    FragmentLengthDist,
    brute_force_eff_len,
    eff_len_adjacent_pair,
    eff_len_profile,
    eff_len_single,
    eff_len_skip_middle,
    eff_len_triple,
    normalize_fraglen_dist,
)
from .simulate import (
    Scenario,
    draw_counts,
    make_case_control_scenario,
    make_eqtl_scenario,
    random_cluster,
)
from .solver import (
    MMResult,
    NBModel,
    PenalizedFit,
    PenaltyParams,
    build_tuning_grid,
    fit_grid,
    fit_penalized_nb,
    ial_solve,
    mm_solve,
    nb_log_likelihood,
    select_model,
    update_dispersion,
)
from .testing import (
    ClusterData,
    TestResult,
    TestSpec,
    bh_adjust,
    bootstrap_pvalue,
    combine_pvalues,
    fit_null_alt,
    lr_statistic,
    permutation_pvalue,
    run_cluster_test,
)

__version__ = "0.1.0"
