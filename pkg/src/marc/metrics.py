"""Evaluation: confusion matrix, per-class/group accuracy, macro-F1,
margin/logit statistics and the count-vs-margin rank correlation.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import calibrated_logits, compute_logits, compute_margins, weight_norms
from .errors import InvalidInputError, UndefinedCorrelationError

# Group thresholds on TRAINING counts: many > 100, 20 <= medium <= 100, few < 20.
MANY_MIN_EXCLUSIVE = 100
FEW_MAX_EXCLUSIVE = 20


def group_of(count):
    if count > MANY_MIN_EXCLUSIVE:
        return "many"
    if count >= FEW_MAX_EXCLUSIVE:
        return "medium"
    return "few"


def spearman(x, y):
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise InvalidInputError("need two equal-length vectors of length >= 2")
    rx, ry = rankdata(x), rankdata(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise UndefinedCorrelationError("rank correlation undefined for constant input")
    rx -= rx.mean()
    ry -= ry.mean()
    return float(rx @ ry / np.sqrt((rx @ rx) * (ry @ ry)))


@dataclass
class EvalReport:
    confusion: np.ndarray  # (K, K), rows = true class
    per_class_acc: np.ndarray
    overall_acc: float
    balanced_acc: float
    group_acc: dict  # many/medium/few -> accuracy or None when the group is empty
    macro_f1: float
    margin_mean: np.ndarray  # per class, true-class samples
    margin_std: np.ndarray
    logit_mean: np.ndarray
    logit_std: np.ndarray
    count_margin_spearman: float
    count_logit_spearman: float
    class_counts_train: np.ndarray = field(default=None)

    def to_dict(self):
        def vec(v):
            return [None if x is None or not np.isfinite(x) else float(x) for x in v]

        return {
            "balanced_acc": float(self.balanced_acc),
            "class_counts_train": [int(c) for c in self.class_counts_train],
            "confusion": self.confusion.astype(int).tolist(),
            "count_logit_spearman": (
                None if not np.isfinite(self.count_logit_spearman)
                else float(self.count_logit_spearman)
            ),
            "count_margin_spearman": (
                None if not np.isfinite(self.count_margin_spearman)
                else float(self.count_margin_spearman)
            ),
            "group_acc": {
                g: (None if a is None else float(a))
                for g, a in sorted(self.group_acc.items())
            },
            "logit_mean": vec(self.logit_mean),
            "logit_std": vec(self.logit_std),
            "macro_f1": float(self.macro_f1),
            "margin_mean": vec(self.margin_mean),
            "margin_std": vec(self.margin_std),
            "overall_acc": float(self.overall_acc),
            "per_class_acc": vec(self.per_class_acc),
        }

    def to_json(self):
        """Canonical key order, 9 significant digits, diff-friendly."""
        def fmt(obj):
            if isinstance(obj, float):
                return float(f"{obj:.9g}")
            if isinstance(obj, dict):
                return {k: fmt(v) for k, v in obj.items()}
            if isinstance(obj, list):
                return [fmt(v) for v in obj]
            return obj

        return json.dumps(fmt(self.to_dict()), sort_keys=True, indent=2)

    def to_csv(self):
        """One row per class plus a trailing summary row."""
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow([
            "class", "train_count", "group", "accuracy",
            "margin_mean", "margin_std", "logit_mean", "logit_std",
        ])
        for j in range(len(self.per_class_acc)):
            w.writerow([
                j,
                int(self.class_counts_train[j]),
                group_of(int(self.class_counts_train[j])),
                f"{self.per_class_acc[j]:.9g}",
                f"{self.margin_mean[j]:.9g}",
                f"{self.margin_std[j]:.9g}",
                f"{self.logit_mean[j]:.9g}",
                f"{self.logit_std[j]:.9g}",
            ])
        w.writerow([
            "summary", "", "",
            f"{self.overall_acc:.9g}",
            f"balanced={self.balanced_acc:.9g}",
            f"macro_f1={self.macro_f1:.9g}",
            f"spearman_margin={self.count_margin_spearman:.9g}",
            f"spearman_logit={self.count_logit_spearman:.9g}",
        ])
        return out.getvalue()


def _per_class_stats(values, labels, k):
    """Mean/std of true-class values per class; NaN for absent classes."""
    mean = np.full(k, np.nan)
    std = np.full(k, np.nan)
    for j in range(k):
        mask = labels == j
        if mask.any():
            mean[j] = values[mask, j].mean()
            std[j] = values[mask, j].std()
    return mean, std


def evaluate(predictions, labels, counts_train, margins, logits):
    """Build an EvalReport from predictions and per-sample margin/logit matrices.

    `counts_train` are TRAINING-set class counts; they define the
    many/medium/few groups and the rank correlations. `margins` and
    `logits` are (N, K).
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise InvalidInputError("predictions and labels disagree in length")
    counts_train = np.asarray(counts_train, dtype=np.int64)
    k = len(counts_train)
    margins = np.asarray(margins, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if margins.shape != (len(labels), k) or logits.shape != (len(labels), k):
        raise InvalidInputError("margins/logits must be (N, K)")

    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    rowsum = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class_acc = np.where(rowsum > 0, np.diag(confusion) / np.maximum(rowsum, 1), np.nan)
    present = rowsum > 0
    overall = float(np.trace(confusion) / confusion.sum())
    balanced = float(np.nanmean(per_class_acc[present]))

    group_acc = {}
    for g in ("many", "medium", "few"):
        members = [j for j in range(k) if group_of(int(counts_train[j])) == g and present[j]]
        group_acc[g] = float(np.mean(per_class_acc[members])) if members else None

    f1 = np.zeros(k)
    for j in range(k):
        tp = confusion[j, j]
        predicted = confusion[:, j].sum()
        actual = rowsum[j]
        if tp > 0:
            prec = tp / predicted
            rec = tp / actual
            f1[j] = 2 * prec * rec / (prec + rec)
    macro_f1 = float(f1[present].mean())

    margin_mean, margin_std = _per_class_stats(margins, labels, k)
    logit_mean, logit_std = _per_class_stats(logits, labels, k)
    ok = present & np.isfinite(margin_mean)

    def _safe_spearman(values):
        if ok.sum() < 2:
            return float("nan")
        try:
            return spearman(counts_train[ok], values[ok])
        except UndefinedCorrelationError:
            return float("nan")

    sp_margin = _safe_spearman(margin_mean)
    sp_logit = _safe_spearman(logit_mean)

    return EvalReport(
        confusion=confusion,
        per_class_acc=per_class_acc,
        overall_acc=overall,
        balanced_acc=balanced,
        group_acc=group_acc,
        macro_f1=macro_f1,
        margin_mean=margin_mean,
        margin_std=margin_std,
        logit_mean=logit_mean,
        logit_std=logit_std,
        count_margin_spearman=sp_margin,
        count_logit_spearman=sp_logit,
        class_counts_train=counts_train,
    )


def margin_logit_profile(clf, calib, ds):
    """Per-class mean margin and logit over true-class samples, before and
    (when `calib` is given) after calibration.

    Returns a dict with keys margin_before, logit_before and, with a
    calibration, margin_after, logit_after; absent classes are NaN.
    """
    logits = compute_logits(clf, ds.features)
    norms = weight_norms(clf)
    margins = logits / norms
    k = clf.num_classes
    out = {}
    out["margin_before"], _ = _per_class_stats(margins, ds.labels, k)
    out["logit_before"], _ = _per_class_stats(logits, ds.labels, k)
    if calib is not None:
        cal = calibrated_logits(calib, logits, norms)
        out["logit_after"], _ = _per_class_stats(cal, ds.labels, k)
        out["margin_after"], _ = _per_class_stats(cal / norms, ds.labels, k)
    return out
