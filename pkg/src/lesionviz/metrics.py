"""ROC curve and AUC with half credit for tied scores."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise InvalidArgumentError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise InvalidArgumentError("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise InvalidArgumentError("scores must be finite")
    return s, y.astype(np.int64)


def _counts(s: np.ndarray, y: np.ndarray):
    """Cumulative (fp, tp) integer counts, one entry per distinct threshold, highest first."""
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # keep the last index of every run of equal scores so ties move diagonally
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    return np.r_[0, fp[last]], np.r_[0, tp[last]]


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(false-positive rate, true-positive rate) points from (0, 0) to (1, 1)."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes present")
    fp, tp = _counts(s, y)
    return [(f / n_neg, t / n_pos) for f, t in zip(fp.tolist(), tp.tolist())]


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve.

    Equal to the Mann-Whitney statistic P(pos > neg) + P(pos == neg) / 2. The
    trapezoid sum is accumulated in integers, so the only rounding is the
    final division.
    """
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC is undefined when only one class is present")
    fp, tp = _counts(s, y)
    twice_area = sum(
        (int(f1) - int(f0)) * (int(t1) + int(t0))
        for f0, f1, t0, t1 in zip(fp[:-1], fp[1:], tp[:-1], tp[1:])
    )
    return twice_area / (2 * n_pos * n_neg)


def confusion(scores, labels, threshold: float = 0.5) -> dict[str, int]:
    """Counts with ``score >= threshold`` predicted malignant."""
    s, y = _validate(scores, labels)
    pred = s >= threshold
    return {
        "tp": int(np.sum(pred & (y == 1))),
        "fp": int(np.sum(pred & (y == 0))),
        "tn": int(np.sum(~pred & (y == 0))),
        "fn": int(np.sum(~pred & (y == 1))),
    }
