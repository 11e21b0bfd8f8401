"""Stage 1: standard training of an (optional) one-hidden-layer model
with cross-entropy, instance-balanced sampling, SGD momentum and a
cosine learning-rate schedule.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import LinearClassifierParams, log_softmax, softmax
from .data import instance_balanced_batches
from .errors import InvalidInputError, TrainingDivergedError

DIVERGENCE_LOSS = 1e6


@dataclass
class BackboneParams:
    """Feature extractor ahead of the classifier. h=0 rows means identity."""

    hidden_weights: np.ndarray  # (h, p_in)
    hidden_bias: np.ndarray  # (h,)

    def __post_init__(self):
        self.hidden_weights = np.asarray(self.hidden_weights, dtype=np.float64)
        self.hidden_bias = np.asarray(self.hidden_bias, dtype=np.float64)

    @classmethod
    def identity(cls, p_in):
        return cls(np.zeros((0, p_in)), np.zeros(0))

    @property
    def is_identity(self):
        return self.hidden_weights.shape[0] == 0


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    lr_init: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.lr_init <= 0:
            raise InvalidInputError("lr_init must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidInputError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidInputError("weight_decay must be >= 0")


@dataclass
class OptimizerState:
    """Velocity buffers, one per trainable tensor, zero-initialized."""

    velocities: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p) for p in params])


def cosine_lr(step, total_steps, lr_init):
    """Half-cosine decay from lr_init at step 0 to exactly 0 at total_steps."""
    if total_steps < 1:
        raise InvalidInputError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise InvalidInputError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * lr_init * (1.0 + np.cos(np.pi * step / total_steps))


def sgd_momentum_step(params, grads, state, lr, momentum, weight_decay=0.0):
    """In-place update: v <- momentum*v + (grad + wd*param); param <- param - lr*v."""
    if not (len(params) == len(grads) == len(state.velocities)):
        raise InvalidInputError("params, grads and velocities disagree in length")
    for p, g, v in zip(params, grads, state.velocities):
        if p.shape != g.shape or p.shape != v.shape:
            raise InvalidInputError(
                f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}"
            )
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v


def backbone_forward(bb, x):
    """z = relu(H x + c), or z = x for the identity backbone."""
    x = np.asarray(x, dtype=np.float64)
    if bb.is_identity:
        return x
    if x.shape[-1] != bb.hidden_weights.shape[1]:
        raise InvalidInputError(
            f"input dim {x.shape[-1]} does not match backbone "
            f"input dim {bb.hidden_weights.shape[1]}"
        )
    return np.maximum(0.0, x @ bb.hidden_weights.T + bb.hidden_bias)


def model_forward(bb, clf, x):
    z = backbone_forward(bb, x)
    return z, z @ clf.weights.T + clf.biases


def batch_loss_and_grads(bb, clf, x, labels):
    """Mean cross-entropy over the batch plus exact gradients.

    Returns (loss, grad_clf_w, grad_clf_b, grad_hidden_w, grad_hidden_b);
    the backbone gradients are None for the identity backbone.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = len(labels)
    z, logits = model_forward(bb, clf, x)
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    g = softmax(logits)
    g[np.arange(n), labels] -= 1.0
    g /= n
    grad_w = g.T @ z
    grad_b = g.sum(axis=0)
    if bb.is_identity:
        return loss, grad_w, grad_b, None, None
    dz = g @ clf.weights
    dz[z <= 0.0] = 0.0
    grad_h = dz.T @ x
    grad_c = dz.sum(axis=0)
    return loss, grad_w, grad_b, grad_h, grad_c


def init_model(p_in, k, hidden, seed):
    """Seeded uniform(+/- 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11]))
    if hidden > 0:
        bound = 1.0 / np.sqrt(p_in)
        bb = BackboneParams(
            rng.uniform(-bound, bound, size=(hidden, p_in)), np.zeros(hidden)
        )
        fan_in = hidden
    else:
        bb = BackboneParams.identity(p_in)
        fan_in = p_in
    bound = 1.0 / np.sqrt(fan_in)
    clf = LinearClassifierParams(
        rng.uniform(-bound, bound, size=(k, fan_in)), np.zeros(k)
    )
    return bb, clf


def train_standard(ds, cfg, hidden=0):
    """Stage-1 loop; returns (backbone, classifier, per-epoch mean loss)."""
    bb, clf = init_model(ds.feature_dim, ds.num_classes, hidden, cfg.seed)
    params = [clf.weights, clf.biases]
    if not bb.is_identity:
        params += [bb.hidden_weights, bb.hidden_bias]
    state = OptimizerState.for_params(params)

    batches_per_epoch = -(-ds.num_samples // cfg.batch_size)
    total_steps = max(1, cfg.epochs * batches_per_epoch)
    epoch_seeds = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 0xBA7])
    ).integers(0, 2**63 - 1, size=max(cfg.epochs, 1))

    loss_curve = []
    step = 0
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for idx in instance_balanced_batches(ds, cfg.batch_size, int(epoch_seeds[epoch])):
            loss, gw, gb, gh, gc = batch_loss_and_grads(
                bb, clf, ds.features[idx], ds.labels[idx]
            )
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                raise TrainingDivergedError(step, float(loss))
            grads = [gw, gb] if bb.is_identity else [gw, gb, gh, gc]
            lr = cosine_lr(step, total_steps, cfg.lr_init)
            sgd_momentum_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay)
            epoch_losses.append(loss)
            step += 1
        loss_curve.append(float(np.mean(epoch_losses)))
    return bb, clf, loss_curve
