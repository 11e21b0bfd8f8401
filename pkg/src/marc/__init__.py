"""Margin calibration for long-tailed classification.

Two-stage pipeline: standard training of a linear (or one-hidden-layer)
classifier, then learning 2K per-class parameters that rescale and shift
each class margin over the frozen model. Ships with tau-norm, cRT and
LWS baselines, a synthetic long-tailed data generator, the MRCD binary
dump format for externally computed features/logits, and an evaluation
suite (per-class/group accuracy, macro-F1, margin/logit statistics).
"""

from .calibration import (
    CalibConfig,
    apply_calibration,
    class_weights,
    crt_retrain,
    frozen_logits_and_norms,
    init_calibration,
    lws_train,
    run_two_stage,
    tau_norm,
    train_marc,
    trainable_parameter_count,
)
from .core import (
    CalibrationParams,
    LinearClassifierParams,
    calibrated_logits,
    calibration_gradients,
    calibration_loss,
    compute_logits,
    compute_margins,
    cross_entropy,
    softmax,
    weight_norms,
)
from .data import (
    FeatureDataset,
    LongTailSpec,
    class_balanced_batches,
    generate_balanced_test,
    generate_longtail,
    instance_balanced_batches,
    longtail_counts,
)
from .dump import read_dump, write_dump
from .errors import (
    DegenerateClassifierError,
    FormatError,
    InvalidInputError,
    MarcError,
    TrainingDivergedError,
    UndefinedCorrelationError,
)
from .metrics import EvalReport, evaluate, margin_logit_profile, spearman
from .training import (
    BackboneParams,
    TrainConfig,
    cosine_lr,
    sgd_momentum_step,
    train_standard,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
