"""Cluster-weighted Gaussian mixture imputation for unit non-response.

The package fits a truncated stick-breaking Gaussian mixture to a table of
fully observed input columns and partially missing output columns by blocked
Gibbs sampling, imputes the missing output blocks from the per-component
conditional regressions, and scores completed datasets against a reference
distribution by Monte-Carlo KL divergence. Mean, single-component (norm)
and predictive-mean-matching baselines are included, plus a CLI that runs
the bundled simulation and iris experiments end to end.
"""

from .baselines import BaselineConfig, impute_mean, impute_norm, impute_pmm
from .data import (
    AmputationSpec,
    Dataset,
    amputate_mar,
    amputate_mnar,
    iris_dataset,
    load_csv,
    sim_truth_output_marginal,
    sim_truth_params,
    simulate_fmm,
    write_csv,
)
from .evaluation import (
    KlReport,
    evaluate_imputation,
    fit_gmm_em,
    kl_gaussian_closed,
    kl_mc,
    kl_quantile_interval,
    relative_distance,
)
from .gibbs import (
    GibbsState,
    Hyperparams,
    PosteriorDraws,
    SamplerConfig,
    init_state,
    run_sampler,
)
from .mixture import (
    ColumnRoles,
    FmmParams,
    LcwmParams,
    fmm_logpdf,
    fmm_sample,
    fmm_to_lcwm,
    lcwm_joint_logdensity,
    marginal_params,
    responsibility_mrm,
    responsibility_x,
    responsibility_xy,
)
from .stats import (
    RngStream,
    conditional_gaussian,
    effective_sample_size,
    mvn_logpdf,
    mvn_sample,
    rng_stream,
    sample_beta,
    sample_categorical,
    sample_gamma,
    sample_inverse_wishart,
)

__version__ = "0.1.0"
