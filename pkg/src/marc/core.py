"""Numeric kernels: logits, margins, softmax, losses and their closed-form gradients.

Everything here is a pure function over float64 numpy arrays. Feature
inputs may be a single vector of shape (p,) or a batch of shape (N, p);
logit-space helpers accept (K,) or (N, K) analogously.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClassifierError, InvalidInputError


@dataclass
class LinearClassifierParams:
    """Linear classifier head: row j of `weights` and entry j of `biases` score class j."""

    weights: np.ndarray  # (K, p)
    biases: np.ndarray  # (K,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise InvalidInputError("weights must be 2-D and biases 1-D")
        if self.weights.shape[0] != self.biases.shape[0]:
            raise InvalidInputError(
                f"weights have {self.weights.shape[0]} rows but biases have "
                f"{self.biases.shape[0]} entries"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise InvalidInputError("classifier parameters must be finite")

    @property
    def num_classes(self):
        return self.weights.shape[0]

    @property
    def feature_dim(self):
        return self.weights.shape[1]


@dataclass
class CalibrationParams:
    """Per-class affine margin transform: scale `omega`, offset `beta`.

    The fresh state (omega all ones, beta all zeros) is the identity on
    logits; see `identity` below.
    """

    omega: np.ndarray  # (K,)
    beta: np.ndarray  # (K,)

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.omega.shape != self.beta.shape or self.omega.ndim != 1:
            raise InvalidInputError("omega and beta must be 1-D vectors of equal length")
        if not (np.isfinite(self.omega).all() and np.isfinite(self.beta).all()):
            raise InvalidInputError("calibration parameters must be finite")

    @classmethod
    def identity(cls, k):
        return cls(omega=np.ones(k), beta=np.zeros(k))

    @property
    def num_classes(self):
        return self.omega.shape[0]


def compute_logits(clf, z):
    """Classification scores W_j . z + b_j for each class j."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != clf.feature_dim:
        raise InvalidInputError(
            f"feature dimension {z.shape[-1]} does not match classifier "
            f"dimension {clf.feature_dim}"
        )
    return z @ clf.weights.T + clf.biases


def weight_norms(clf):
    """L2 norm of each classifier row; errors on a zero row.

    A zero row makes the class margin undefined, and a trained classifier
    never produces one, so occurrence signals an upstream bug.
    """
    norms = np.linalg.norm(clf.weights, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateClassifierError(f"classifier row {bad} has zero norm")
    return norms


def compute_margins(clf, z):
    """Signed distance of z to each class hyperplane: (W_j . z + b_j) / ||W_j||."""
    return compute_logits(clf, z) / weight_norms(clf)


def softmax(logits):
    """Probability vector over classes; max-subtracted for overflow safety."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label):
    """Negative log-probability of `label` under softmax(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1]
    label = int(label)
    if not 0 <= label < k:
        raise InvalidInputError(f"label {label} out of range for {k} classes")
    return -log_softmax(logits)[..., label] + 0.0


def calibrated_logits(calib, logits, norms):
    """Calibrated scores omega_j * eta_j + beta_j * ||W_j||.

    Algebraically equal to ||W_j|| * (omega_j * d_j + beta_j), i.e. the
    margin-space affine transform expressed on logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    norms = np.asarray(norms, dtype=np.float64)
    k = calib.num_classes
    if logits.shape[-1] != k or norms.shape != (k,):
        raise InvalidInputError(
            f"length mismatch: calibration K={k}, logits last dim "
            f"{logits.shape[-1]}, norms shape {norms.shape}"
        )
    return calib.omega * logits + calib.beta * norms


def calibration_loss(calib, logits, norms, label, weight):
    """Class-weighted cross-entropy of the calibrated logits."""
    if weight <= 0:
        raise InvalidInputError("weight must be positive")
    return weight * cross_entropy(calibrated_logits(calib, logits, norms), label)


def calibration_gradients(calib, logits, norms, label, weight):
    """Closed-form gradient of calibration_loss w.r.t. (omega, beta).

    With p = softmax of the calibrated logits and e the one-hot of
    `label`: d/d omega_j = weight * (p_j - e_j) * eta_j and
    d/d beta_j = weight * (p_j - e_j) * ||W_j||.
    """
    logits = np.asarray(logits, dtype=np.float64)
    norms = np.asarray(norms, dtype=np.float64)
    k = calib.num_classes
    label = int(label)
    if not 0 <= label < k:
        raise InvalidInputError(f"label {label} out of range for {k} classes")
    p = softmax(calibrated_logits(calib, logits, norms))
    g = weight * p
    g[label] -= weight
    return g * logits, g * norms
