"""Classification metrics, threshold tuning, decile calibration and subgroup analysis.

Conventions, fixed so that degenerate operating points are well defined:

* a sample is predicted positive iff ``score >= threshold`` (threshold 0.00
  therefore classifies everything positive),
* any ratio with a zero denominator is reported as 0.0 rather than NaN,
* AUROC uses the rank (Mann-Whitney) formulation with tied scores counted
  as half-wins,
* AUPRC is step-wise average precision; every positive inside a tie group
  receives the precision evaluated at the end of its group, so a fully tied
  score vector scores exactly the prevalence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, InputError

THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class EvalReport:
    auroc: float
    auprc: float
    accuracy: float
    sensitivity: float
    specificity: float
    ppv: float
    npv: float
    f1: float
    threshold: float
    subgroups: dict = field(default_factory=dict)

    CSV_FIELDS = ("auroc", "auprc", "accuracy", "sensitivity", "specificity",
                  "ppv", "npv", "f1", "threshold")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.CSV_FIELDS}
        if self.subgroups:
            out["subgroups"] = self.subgroups
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_row(self) -> str:
        return ",".join(f"{getattr(self, k):.6f}" for k in self.CSV_FIELDS)


@dataclass
class CalibrationBucket:
    index: int
    mean_pred: float
    count: int
    dx_rate: float
    tx_rate: float
    mean_max_iop: float
    iop_n: int
    mean_max_cdr: float
    cdr_n: int


@dataclass
class CalibrationTable:
    buckets: list

    CSV_HEADER = "bucket_index,mean_pred,n,dx_rate,tx_rate,mean_max_iop,iop_n,mean_max_cdr,cdr_n"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for b in self.buckets:
            lines.append(
                f"{b.index},{b.mean_pred:.6f},{b.count},{b.dx_rate:.6f},{b.tx_rate:.6f},"
                f"{b.mean_max_iop:.6f},{b.iop_n},{b.mean_max_cdr:.6f},{b.cdr_n}"
            )
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps([b.__dict__ for b in self.buckets], sort_keys=True, indent=2)

    def channel(self, name: str) -> np.ndarray:
        return np.array([getattr(b, name) for b in self.buckets], dtype=float)


def _validate_binary(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=float)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise InputError("labels must be 0 or 1")
    return y


def _safe_div(num: float, den: float) -> float:
    return float(num) / float(den) if den > 0 else 0.0


def confusion(scores, labels, threshold: float) -> ConfusionCounts:
    """Count tp/fp/tn/fn with predicted positive defined as score >= threshold."""
    s = np.asarray(scores, dtype=float)
    y = _validate_binary(labels)
    if s.shape != y.shape:
        raise InputError("scores and labels must have equal length")
    pred = s >= threshold
    pos = y == 1.0
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def f1_from_rates(ppv: float, sensitivity: float) -> float:
    """Harmonic mean of precision and recall; 0.0 when both are 0."""
    den = ppv + sensitivity
    return _safe_div(2.0 * ppv * sensitivity, den)


def confusion_metrics(counts: ConfusionCounts) -> dict:
    """Accuracy, sensitivity, specificity, ppv, npv and F1 from raw counts.

    Zero-denominator ratios come back as 0.0 (e.g. npv when nothing is
    predicted negative).
    """
    if counts.n <= 0:
        raise EvaluationError("cannot compute metrics on zero samples")
    accuracy = _safe_div(counts.tp + counts.tn, counts.n)
    sensitivity = _safe_div(counts.tp, counts.tp + counts.fn)
    specificity = _safe_div(counts.tn, counts.tn + counts.fp)
    ppv = _safe_div(counts.tp, counts.tp + counts.fp)
    npv = _safe_div(counts.tn, counts.tn + counts.fn)
    return {
        "accuracy": accuracy,
        "sensitivity": sensitivity,
        "specificity": specificity,
        "ppv": ppv,
        "npv": npv,
        "f1": f1_from_rates(ppv, sensitivity),
    }


def auroc(scores, labels) -> float:
    """Area under the ROC curve via average ranks.

    Equals P(score_pos > score_neg) + 0.5 * P(score_pos == score_neg) over
    all positive-negative pairs.
    """
    s = np.asarray(scores, dtype=float)
    y = _validate_binary(labels)
    n_pos = int(np.sum(y == 1.0))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("auroc needs both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=float)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank of the tie group
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[y == 1.0]))
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Step-wise average precision.

    Samples are swept in descending score order; each tie group contributes
    (positives in group) * (precision at the end of the group) and the sum is
    divided by the total number of positives.
    """
    s = np.asarray(scores, dtype=float)
    y = _validate_binary(labels)
    n_pos = int(np.sum(y == 1.0))
    if n_pos == 0:
        raise EvaluationError("auprc needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    total = 0.0
    tp = 0
    seen = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j + 1 < n and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        group_pos = float(np.sum(y_sorted[i:j + 1]))
        tp += group_pos
        seen += j - i + 1
        total += group_pos * (tp / seen)
        i = j + 1
    return total / n_pos


def roc_points(scores, labels):
    """(fpr, tpr) arrays for plotting, one point per distinct score plus endpoints."""
    s = np.asarray(scores, dtype=float)
    y = _validate_binary(labels)
    n_pos = float(np.sum(y == 1.0))
    n_neg = float(y.size - n_pos)
    order = np.argsort(-s, kind="mergesort")
    y_sorted = y[order]
    s_sorted = s[order]
    distinct = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    tps = np.cumsum(y_sorted)[distinct]
    fps = (distinct + 1) - tps
    fpr = np.r_[0.0, fps / max(n_neg, 1.0)]
    tpr = np.r_[0.0, tps / max(n_pos, 1.0)]
    return fpr, tpr


def pr_points(scores, labels):
    """(recall, precision) arrays for plotting, one point per distinct score."""
    s = np.asarray(scores, dtype=float)
    y = _validate_binary(labels)
    n_pos = float(np.sum(y == 1.0))
    order = np.argsort(-s, kind="mergesort")
    y_sorted = y[order]
    s_sorted = s[order]
    distinct = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    tps = np.cumsum(y_sorted)[distinct]
    precision = tps / (distinct + 1)
    recall = tps / max(n_pos, 1.0)
    return np.r_[0.0, recall], np.r_[1.0, precision]


def tune_threshold(scores, labels) -> float:
    """Pick the classification boundary maximizing F1 on a validation set.

    Scans the fixed grid 0.00, 0.05, ..., 1.00 and returns the lowest grid
    value attaining the maximum F1.
    """
    y = _validate_binary(labels)
    if np.all(y == 1.0) or np.all(y == 0.0):
        raise EvaluationError("threshold tuning needs both classes present")
    best_t = THRESHOLD_GRID[0]
    best_f1 = -1.0
    for t in THRESHOLD_GRID:
        f1 = confusion_metrics(confusion(scores, y, t))["f1"]
        if f1 > best_f1:
            best_f1 = f1
            best_t = t
    return best_t


def evaluate_scores(scores, labels, threshold: float, groups=None) -> EvalReport:
    """Full metric suite at a fixed threshold, optionally with per-group ranking metrics."""
    counts = confusion(scores, labels, threshold)
    m = confusion_metrics(counts)
    report = EvalReport(
        auroc=auroc(scores, labels),
        auprc=auprc(scores, labels),
        threshold=float(threshold),
        **m,
    )
    if groups is not None:
        report.subgroups = subgroup_eval(scores, labels, groups)
    return report


def subgroup_eval(scores, labels, groups) -> dict:
    """Per-group AUROC/AUPRC with group sizes.

    Groups missing one of the two classes are reported under
    ``"unevaluable"`` instead of failing the whole evaluation.
    """
    s = np.asarray(scores, dtype=float)
    y = _validate_binary(labels)
    g = np.asarray(groups)
    out = {}
    unevaluable = []
    for name in sorted(set(g.tolist())):
        sel = g == name
        ys = y[sel]
        if ys.min() == ys.max():
            unevaluable.append(str(name))
            continue
        out[str(name)] = {
            "auroc": auroc(s[sel], ys),
            "auprc": auprc(s[sel], ys),
            "n": int(np.sum(sel)),
        }
    if unevaluable:
        out["unevaluable"] = unevaluable
    return out


def decile_bucket_sizes(n: int) -> list:
    """Equal-count decile sizes; the remainder is spread one per bucket from the top."""
    base, rem = divmod(n, 10)
    return [base + (1 if i >= 10 - rem else 0) for i in range(10)]


def decile_calibration(scores, diagnosis, treatment, max_iop, max_cdr) -> CalibrationTable:
    """Bucket patients into risk deciles and summarize four outcome channels.

    Patients are sorted by ascending predicted risk (stable, so input order
    breaks ties) and cut into 10 equal-count buckets. ``max_iop`` / ``max_cdr``
    may contain NaN; missing values are excluded from that channel's mean and
    the per-channel count is reported.
    """
    s = np.asarray(scores, dtype=float)
    n = s.size
    if n < 10:
        raise EvaluationError("decile calibration needs at least 10 samples")
    dx = _validate_binary(diagnosis)
    tx = _validate_binary(treatment)
    iop = np.asarray(max_iop, dtype=float)
    cdr = np.asarray(max_cdr, dtype=float)
    order = np.argsort(s, kind="mergesort")
    sizes = decile_bucket_sizes(n)
    buckets = []
    start = 0
    for i, size in enumerate(sizes):
        idx = order[start:start + size]
        start += size
        iop_vals = iop[idx][np.isfinite(iop[idx])]
        cdr_vals = cdr[idx][np.isfinite(cdr[idx])]
        buckets.append(CalibrationBucket(
            index=i,
            mean_pred=float(np.mean(s[idx])),
            count=size,
            dx_rate=float(np.mean(dx[idx])),
            tx_rate=float(np.mean(tx[idx])),
            mean_max_iop=float(np.mean(iop_vals)) if iop_vals.size else math.nan,
            iop_n=int(iop_vals.size),
            mean_max_cdr=float(np.mean(cdr_vals)) if cdr_vals.size else math.nan,
            cdr_n=int(cdr_vals.size),
        ))
    return CalibrationTable(buckets=buckets)


def spearman_rank_corr(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    def tied_ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="mergesort")
        ranks = np.empty(v.size, dtype=float)
        i = 0
        sv = v[order]
        while i < v.size:
            j = i
            while j + 1 < v.size and sv[j + 1] == sv[i]:
                j += 1
            ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return ranks

    rx, ry = tied_ranks(x), tied_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float(np.sum(rx * rx)) * float(np.sum(ry * ry)))
    return float(np.sum(rx * ry)) / den if den > 0 else 0.0
