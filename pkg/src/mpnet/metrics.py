"""Classification metrics and the Wilcoxon signed-rank test."""
from __future__ import annotations

import math
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .errors import InvalidInput

EXACT_MAX_N = 19


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts with rows indexed by the true label and columns by the prediction."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise InvalidInput("label and prediction vectors differ in length")
    for y in (y_true, y_pred):
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise InvalidInput(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _total(cm: np.ndarray) -> int:
    cm = np.asarray(cm)
    total = int(cm.sum())
    if total <= 0:
        raise InvalidInput("confusion matrix is empty")
    return total


def accuracy(cm: np.ndarray) -> float:
    return float(np.trace(cm)) / _total(cm)


def chance_agreement(cm: np.ndarray) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    total = _total(cm)
    return float(np.dot(cm.sum(axis=1), cm.sum(axis=0))) / total**2


def _int_matrix(cm) -> np.ndarray:
    cm = np.asarray(cm)
    if np.any(cm < 0) or np.any(cm != np.round(cm)):
        raise InvalidInput("confusion matrix must hold non-negative counts")
    return cm.astype(np.int64)


def cohen_kappa(cm: np.ndarray) -> float:
    """``(p_o - p_e) / (1 - p_e)``; defined as 0 when ``p_e == 1``.

    Evaluated in integer arithmetic as
    ``(N tr - sum_k r_k c_k) / (N**2 - sum_k r_k c_k)`` so the result is the
    correctly rounded value of the exact ratio.
    """
    cm = _int_matrix(cm)
    total = _total(cm)
    agree = sum(int(r) * int(c) for r, c in zip(cm.sum(axis=1), cm.sum(axis=0)))
    denom = total * total - agree
    if denom == 0:
        return 0.0
    return float(Fraction(total * int(np.trace(cm)) - agree, denom))


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1 (exact rational arithmetic, rounded once).

    A class with no true and no predicted members contributes 0.
    """
    cm = _int_matrix(cm)
    _total(cm)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1)  # 2TP + FP + FN
    f1 = [Fraction(2 * int(t), int(q)) if q > 0 else Fraction(0) for t, q in zip(tp, denom)]
    return float(sum(f1) / len(f1))


class WilcoxonResult(NamedTuple):
    statistic: float  # min(W+, W-)
    p_value: float
    n: int  # non-zero differences used
    effect: float  # matched-pairs rank-biserial (W+ - W-) / (W+ + W-), sign = direction of a - b
    method: str  # "exact", "normal" or "degenerate"
    all_zero: bool = False


def _signed_ranks(d: np.ndarray) -> np.ndarray:
    """Average ranks of ``|d|`` (ties share the mean rank)."""
    a = np.abs(d)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    sa = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_null_counts(doubled: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each value of ``2 W+`` (integer ranks doubled)."""
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        r = int(r)
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


def wilcoxon_signed_rank(a, b, method: str = "auto") -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test of paired samples.

    Zero differences are dropped. With fewer than 20 remaining pairs the
    p-value is exact: ``P(|W+ - mu| >= |w - mu|)`` under the null of
    independent symmetric signs, computed over all ``2**n`` sign patterns
    (with tied ranks kept as averages). Otherwise a normal approximation
    with tie and continuity corrections is used. ``method`` may force
    ``"exact"`` or ``"normal"``.

    Raises
    ------
    InvalidInput
        Lengths differ, or between 1 and 4 non-zero differences remain.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInput("wilcoxon: samples must have equal length")
    if method not in ("auto", "exact", "normal"):
        raise InvalidInput(f"wilcoxon: unknown method {method!r}")
    d = a - b
    if not np.all(np.isfinite(d)):
        raise InvalidInput("wilcoxon: non-finite values")
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, 0.0, "degenerate", all_zero=True)
    if n < 5:
        raise InvalidInput(f"wilcoxon: need at least 5 non-zero differences, got {n}")
    ranks = _signed_ranks(d)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    total = n * (n + 1) / 2.0
    effect = (w_plus - w_minus) / total
    stat = min(w_plus, w_minus)
    if method == "exact" or (method == "auto" and n <= EXACT_MAX_N):
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        counts = _exact_null_counts(doubled)
        values = np.arange(len(counts))  # 2 W+
        centre = int(doubled.sum())  # 2 * (2 mu)
        obs = int(round(2.0 * w_plus))
        extreme = np.abs(2 * values - centre) >= abs(2 * obs - centre)
        p = float(counts[extreme].sum()) / float(2**n)
        return WilcoxonResult(stat, min(p, 1.0), n, effect, "exact")
    mu = total / 2.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = max(abs(w_plus - mu) - 0.5, 0.0) / math.sqrt(var)
    return WilcoxonResult(stat, min(math.erfc(z / math.sqrt(2.0)), 1.0), n, effect, "normal")
