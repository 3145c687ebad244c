"""Self-supervised pre-training with frequency-scaling augmentation for
PPG heart-rate estimation."""

__version__ = "0.1.0"

from .augment import AugmentationSpec, Divide, Multiply, divide, expand_dataset, multiply
from .data import (
    NormStats,
    Provenance,
    SignalWindow,
    Source,
    SubjectRecording,
    WindowedDataset,
    apply_zscore,
    compute_norm_stats,
    export_container,
    import_container,
    load_subject,
    resample,
    segment_windows,
)
from .evaluate import HRSeries, MetricsReport, aggregate_report, clip_postprocess, mae
from .finetune import FinetuneConfig, FoldPlan, finetune, make_loso_folds, predict_series
from .model import (
    Checkpoint,
    ModelConfig,
    build_autoencoder,
    build_estimator,
    count_macs,
    count_params,
    mse_multimodal,
    transfer_encoder_weights,
)
from .pretrain import PretrainConfig, pretrain, scheduler_step
