"""Stage 2: margin calibration over a frozen model, plus the
decision-boundary-adjustment baselines (tau-norm, cRT, LWS).
"""

from dataclasses import dataclass

import numpy as np

from .core import (
    CalibrationParams,
    LinearClassifierParams,
    calibrated_logits,
    compute_logits,
    log_softmax,
    softmax,
    weight_norms,
)
from .data import class_balanced_batches, instance_balanced_batches
from .errors import InvalidInputError, TrainingDivergedError
from .training import (
    DIVERGENCE_LOSS,
    OptimizerState,
    backbone_forward,
    cosine_lr,
    init_model,
    sgd_momentum_step,
    train_standard,
)


@dataclass
class CalibConfig:
    gamma: float = 1.2
    epochs: int = 10
    batch_size: int = 128
    lr_init: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise InvalidInputError("gamma must be >= 0")
        if self.lr_init <= 0:
            raise InvalidInputError("lr_init must be positive")


def class_weights(counts, gamma):
    """Per-class loss weights: K * (1/n_j)^gamma, normalized to sum to K.

    gamma=0 gives exact all-ones (no reweighting); larger gamma shifts
    weight toward rarer classes.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        raise InvalidInputError("all class counts must be >= 1")
    if gamma == 0:
        return np.ones_like(counts)
    inv = counts ** (-gamma)
    return len(counts) * inv / inv.sum()


def init_calibration(k):
    """Fresh calibration state: omega all ones, beta all zeros (the identity)."""
    if k < 2:
        raise InvalidInputError("need at least 2 classes")
    return CalibrationParams.identity(k)


def frozen_logits_and_norms(ds, clf, bb=None):
    """Precompute the stage-1 logits and row norms once; both stay fixed
    throughout stage 2, so there is nothing to recompute per step."""
    feats = ds.features if bb is None else backbone_forward(bb, ds.features)
    return compute_logits(clf, feats), weight_norms(clf)


def train_marc(ds, logits, norms, cfg):
    """Optimize (omega, beta) over the weighted calibration loss.

    `logits` are the frozen stage-1 scores for every sample of `ds`;
    `norms` the frozen classifier row norms. Returns the trained
    CalibrationParams and the per-epoch mean loss. No weight decay: decay
    would pull omega toward 0 rather than its identity value 1.
    """
    logits = np.asarray(logits, dtype=np.float64)
    norms = np.asarray(norms, dtype=np.float64)
    if norms.ndim != 1 or np.any(norms <= 0):
        raise InvalidInputError("norms must be a positive vector")
    if logits.shape != (ds.num_samples, ds.num_classes):
        raise InvalidInputError(
            f"logits shape {logits.shape} does not match dataset "
            f"({ds.num_samples}, {ds.num_classes})"
        )
    calib = init_calibration(ds.num_classes)
    weights = class_weights(ds.class_counts, cfg.gamma)
    sample_w = weights[ds.labels]

    params = [calib.omega, calib.beta]
    state = OptimizerState.for_params(params)
    batches_per_epoch = -(-ds.num_samples // cfg.batch_size)
    total_steps = max(1, cfg.epochs * batches_per_epoch)
    epoch_seeds = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 0xCA1])
    ).integers(0, 2**63 - 1, size=max(cfg.epochs, 1))

    loss_curve = []
    step = 0
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for idx in instance_balanced_batches(ds, cfg.batch_size, int(epoch_seeds[epoch])):
            eta = logits[idx]
            y = ds.labels[idx]
            w = sample_w[idx]
            s = len(idx)
            cal = calib.omega * eta + calib.beta * norms
            logp = log_softmax(cal)
            loss = float(np.mean(-w * logp[np.arange(s), y]))
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                raise TrainingDivergedError(step, loss)
            g = softmax(cal)
            g[np.arange(s), y] -= 1.0
            g *= w[:, None] / s
            grad_omega = (g * eta).sum(axis=0)
            grad_beta = g.sum(axis=0) * norms
            lr = cosine_lr(step, total_steps, cfg.lr_init)
            sgd_momentum_step(params, [grad_omega, grad_beta], state, lr, cfg.momentum)
            epoch_losses.append(loss)
            step += 1
        loss_curve.append(float(np.mean(epoch_losses)))
    return calib, loss_curve


def apply_calibration(calib, logits, norms):
    """Predicted classes from calibrated logits; ties go to the smaller index."""
    return np.argmax(calibrated_logits(calib, logits, norms), axis=-1)


def predict(logits):
    """Argmax predictions; ties go to the smaller class index."""
    return np.argmax(np.asarray(logits), axis=-1)


def tau_norm(clf, tau):
    """Scale each classifier row by ||W_j||^(-tau) and zero the biases."""
    norms = weight_norms(clf)
    return LinearClassifierParams(
        clf.weights / norms[:, None] ** tau, np.zeros(clf.num_classes)
    )


def crt_retrain(ds, bb, clf_shape, cfg):
    """Reinitialize and retrain the full classifier with class-balanced
    sampling and plain cross-entropy; the backbone stays frozen.
    """
    k, p = clf_shape
    _, clf = init_model(p, k, 0, cfg.seed)
    feats = ds.features if bb is None or bb.is_identity else backbone_forward(bb, ds.features)
    params = [clf.weights, clf.biases]
    state = OptimizerState.for_params(params)
    batches_per_epoch = -(-ds.num_samples // cfg.batch_size)
    total_steps = max(1, cfg.epochs * batches_per_epoch)
    epoch_seeds = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 0xC27])
    ).integers(0, 2**63 - 1, size=max(cfg.epochs, 1))

    step = 0
    for epoch in range(cfg.epochs):
        for idx in class_balanced_batches(ds, cfg.batch_size, int(epoch_seeds[epoch])):
            x = feats[idx]
            y = ds.labels[idx]
            s = len(idx)
            logits = x @ clf.weights.T + clf.biases
            logp = log_softmax(logits)
            loss = float(np.mean(-logp[np.arange(s), y]))
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                raise TrainingDivergedError(step, loss)
            g = softmax(logits)
            g[np.arange(s), y] -= 1.0
            g /= s
            lr = cosine_lr(step, total_steps, cfg.lr_init)
            sgd_momentum_step(
                params, [g.T @ x, g.sum(axis=0)], state, lr, cfg.momentum
            )
            step += 1
    return clf


def lws_train(ds, logits, cfg):
    """Learn K positive per-class logit scales f_j (initialized to 1) with
    class-balanced sampling and cross-entropy.

    The scale is parameterized as f_j = exp(s_j) to stay positive.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (ds.num_samples, ds.num_classes):
        raise InvalidInputError("logits do not match the dataset")
    s_param = np.zeros(ds.num_classes)
    params = [s_param]
    state = OptimizerState.for_params(params)
    batches_per_epoch = -(-ds.num_samples // cfg.batch_size)
    total_steps = max(1, cfg.epochs * batches_per_epoch)
    epoch_seeds = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 0x1A5])
    ).integers(0, 2**63 - 1, size=max(cfg.epochs, 1))

    step = 0
    for epoch in range(cfg.epochs):
        for idx in class_balanced_batches(ds, cfg.batch_size, int(epoch_seeds[epoch])):
            eta = logits[idx]
            y = ds.labels[idx]
            n = len(idx)
            f = np.exp(s_param)
            scaled = f * eta
            logp = log_softmax(scaled)
            loss = float(np.mean(-logp[np.arange(n), y]))
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                raise TrainingDivergedError(step, loss)
            g = softmax(scaled)
            g[np.arange(n), y] -= 1.0
            g /= n
            grad_s = (g * scaled).sum(axis=0)  # chain rule through f = exp(s)
            lr = cosine_lr(step, total_steps, cfg.lr_init)
            sgd_momentum_step(params, [grad_s], state, lr, cfg.momentum)
            step += 1
    return np.exp(s_param)


def trainable_parameter_count(method, k, p):
    """Audit of per-method trainable parameter counts."""
    counts = {"marc": 2 * k, "lws": k, "crt": p * k + k}
    if method not in counts:
        raise InvalidInputError(f"unknown method {method!r}")
    return counts[method]


def run_two_stage(ds, train_cfg, calib_cfg, hidden=0):
    """Full pipeline: stage-1 standard training, then margin calibration."""
    bb, clf, stage1_curve = train_standard(ds, train_cfg, hidden=hidden)
    logits, norms = frozen_logits_and_norms(ds, clf, bb)
    calib, stage2_curve = train_marc(ds, logits, norms, calib_cfg)
    return bb, clf, calib, stage1_curve, stage2_curve
