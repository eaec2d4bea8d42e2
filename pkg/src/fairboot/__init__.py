"""Confidence intervals for the group unfairness of streaming-trained linear classifiers."""

from .asymptotics import (
    CovarianceReport,
    covariance_report,
    di_covariance,
    di_covariance_direct,
    dm_covariance,
    estimate_hessian,
    estimate_noise_cov,
    fairness_of_draws,
    find_optimum,
    pinv_sym,
    sample_limit_distribution,
    tangent_projector,
)
from .bootstrap import (
    BootstrapEnsemble,
    ConfidenceInterval,
    MultiplierDistribution,
    bootstrap_ci,
    ensemble_step,
    init_ensemble,
    replicate_parameter_samples,
)
from .config import ConfigError, ExperimentConfig, default_checkpoints
from .constraints import (
    MistreatmentPenalty,
    SlabConstraint,
    build_penalty,
    build_slab,
    penalty_grad,
    penalty_hessian,
    penalty_value,
    project_slab,
)
from .data import (
    CsvSchema,
    Dataset,
    PoolStream,
    SplitConfig,
    canonical_schema,
    load_csv,
    save_csv,
    split,
    synthetic_di,
    synthetic_dm,
)
from .losses import (
    LossSpec,
    Sample,
    decision_value,
    loss_grad,
    loss_hessian,
    loss_value,
    predict,
)
from .metrics import (
    GroupCounts,
    disparate_impact,
    disparate_mistreatment,
    fairness_batch,
    mean_interval_score,
    wasserstein2_1d,
)
from .training import (
    DualAveragingState,
    SgdState,
    StepSchedule,
    dual_averaging_step,
    init_dual_averaging,
    init_sgd,
    run_training,
    sgd_step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
