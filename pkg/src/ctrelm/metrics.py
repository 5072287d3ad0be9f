"""Binary CTR evaluation metrics: AUC, log loss, precision/recall/F1."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError

EPS = 1e-7


def _flat(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    return s, y.astype(bool)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for tied scores."""
    s, y = _flat(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def logloss(scores, labels, eps: float = EPS) -> float:
    """Mean binary cross-entropy of raw scores clipped to ``[eps, 1 - eps]``."""
    s, y = _flat(scores, labels)
    if s.size == 0:
        raise ValueError("logloss of an empty set")
    p = np.clip(s, eps, 1.0 - eps)
    return float(-np.mean(np.where(y, np.log(p), np.log1p(-p))))


def prf1(scores, labels, threshold: float = 0.5) -> tuple[float, float, float]:
    """Precision, recall and F1 of the positive class at ``score >= threshold``."""
    s, y = _flat(scores, labels)
    if s.size == 0:
        raise ValueError("prf1 of an empty set")
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def tune_threshold(scores, labels) -> float:
    """Score value that maximizes F1 when used as the threshold.

    Every distinct score is a candidate; ties go to the larger threshold.
    """
    s, y = _flat(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("cannot tune an F1 threshold without positive labels")
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    # last position of each run of equal scores = everything >= that score predicted positive
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    n_pred = last + 1
    f1 = 2.0 * tp[last] / (n_pred + n_pos)
    return float(s_sorted[last[int(np.argmax(f1))]])


@dataclass
class MetricReport:
    logloss: float
    auc: float
    precision: float
    recall: float
    f1: float
    threshold: float
    positives: int
    negatives: int

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(scores, labels, threshold="fixed:0.5") -> MetricReport:
    """Full report. ``threshold`` is a number, ``"fixed:<x>"`` or ``"tuned"``.

    AUC is reported as NaN when only one class is present.
    """
    s, y = _flat(scores, labels)
    t = resolve_threshold(threshold, s, y)
    try:
        a = auc(s, y)
    except UndefinedMetricError:
        a = math.nan
    p, r, f = prf1(s, y, t)
    n_pos = int(y.sum())
    return MetricReport(logloss(s, y), a, p, r, f, t, n_pos, int(y.size - n_pos))


def resolve_threshold(mode, scores, labels) -> float:
    if isinstance(mode, (int, float)):
        return float(mode)
    if mode == "tuned":
        return tune_threshold(scores, labels)
    if isinstance(mode, str) and mode.startswith("fixed:"):
        return float(mode.split(":", 1)[1])
    raise ValueError(f"bad threshold mode {mode!r}")


REPORT_COLUMNS = ("split", "logloss", "auc", "precision", "recall", "f1", "threshold", "positives", "negatives")


def format_table(rows: dict, delimiter: str = "\t") -> str:
    """Render ``{split_name: MetricReport}`` as a delimited table."""
    lines = [delimiter.join(REPORT_COLUMNS)]
    for name, rep in rows.items():
        d = rep.as_dict()
        cells = [name] + [
            f"{d[c]:.5f}" if isinstance(d[c], float) else str(d[c]) for c in REPORT_COLUMNS[1:]
        ]
        lines.append(delimiter.join(cells))
    return "\n".join(lines)
