"""Membership-inference laboratory: shadow farms, likelihood-ratio and
adversarial-query attacks, and low-FPR ROC evaluation at desk scale."""

from .attacks import (
    CanaryConfig,
    GaussianStats,
    ScoreRow,
    ScoreTable,
    ensemble_scores,
    fit_gaussian,
    lira_offline_score,
    lira_online_log_ratio,
    lira_online_score,
    optimize_canary,
    random_noise_query,
    run_attack,
    scale_confidence,
)
from .config import DatasetSpec, ExperimentConfig, TargetsSpec, load_config
from .data import Dataset, ingest_dataset, synthetic_mixture
from .farm import (
    ShadowFarm,
    TargetOracle,
    build_farm,
    hold_out_target,
    in_out_partition,
    load_farm,
    model_confidence,
    save_farm,
)
from .metrics import (
    RocSummary,
    aggregate_runs,
    auc,
    roc_auc,
    roc_curve,
    summarize,
    tpr_at_fpr,
)
from .nn import (
    AdamState,
    ArchDescriptor,
    ObjectiveKind,
    Params,
    adam_step,
    cw_margin,
    forward_logits,
    init_adam,
    init_params,
    input_gradient,
    objective_value,
    param_gradient,
    softmax_conf,
)
from .training import (
    DpConfig,
    ModelRecord,
    TrainConfig,
    clip_per_example,
    dp_step,
    make_even_splits,
    train_model,
)

__version__ = "0.1.0"
