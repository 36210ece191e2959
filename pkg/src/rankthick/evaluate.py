"""Evaluation metrics: top-k precision, AUC, sensitivity, faithfulness,
manipulation epoch, and correlation analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .explain import top_k


@dataclass
class EvalReport:
    rows: dict = field(default_factory=dict)  # method -> {metric: value}
    correlations: dict = field(default_factory=dict)

    def metric_names(self):
        names = []
        for row in self.rows.values():
            for key in row:
                if key not in names:
                    names.append(key)
        return names


def precision_at_k(a, b, k) -> float:
    """|top_k(a) & top_k(b)| / k over two maps of equal length."""
    sa = a.scores if hasattr(a, "scores") else np.asarray(a, dtype=float)
    sb = b.scores if hasattr(b, "scores") else np.asarray(b, dtype=float)
    if len(sa) != len(sb):
        raise ValueError("saliency maps must have the same length")
    return len(set(top_k(sa, k)) & set(top_k(sb, k))) / k


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    return float(
        (np.sum(ranks[labels == 1]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    )


def model_auc(m, X, labels) -> float:
    return auc(m.prob_matrix(X)[:, 1], labels)


def sensitivity(m, originals, perturbed) -> float:
    """Fraction of pairs whose predicted class changed."""
    originals = np.atleast_2d(originals)
    perturbed = np.atleast_2d(perturbed)
    if len(originals) != len(perturbed):
        raise ValueError("paired lists must have the same length")
    before = m.predicted_classes(originals)
    after = m.predicted_classes(perturbed)
    return float(np.mean(before != after))


def _masked(x, idx, mask_value):
    out = np.array(x, dtype=float)
    out[idx] = mask_value[idx] if mask_value is not None else 0.0
    return out


def dffot(m, x, s, mask_value=None) -> float:
    """Minimum fraction of top features to remove to flip the prediction;
    1.0 if the prediction never flips. Removal zeroes features by default
    (mean-masking via mask_value)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    order = top_k(s, n)
    c0 = m.predicted_class(x)
    for kk in range(1, n + 1):
        xm = _masked(x, order[:kk], mask_value)
        if m.predicted_class(xm) != c0:
            return kk / n
    return 1.0


def comp(m, x, s, mask_value=None) -> float:
    """Comprehensiveness: mean |f_c(x) - f_c(x without top-k)| over k=1..n."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    order = top_k(s, n)
    c0 = m.predicted_class(x)
    base = m.prob_vector(x)[c0]
    vals = []
    for kk in range(1, n + 1):
        xm = _masked(x, order[:kk], mask_value)
        vals.append(abs(base - m.prob_vector(xm)[c0]))
    return float(np.mean(vals))


def suff(m, x, s, mask_value=None) -> float:
    """Sufficiency: mean |f_c(x) - f_c(only top-k kept)| over k=1..n."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    order = top_k(s, n)
    c0 = m.predicted_class(x)
    base = m.prob_vector(x)[c0]
    vals = []
    for kk in range(1, n + 1):
        keep = order[:kk]
        drop = [i for i in range(n) if i not in set(keep)]
        xm = _masked(x, drop, mask_value)
        vals.append(abs(base - m.prob_vector(xm)[c0]))
    return float(np.mean(vals))


def manipulation_epoch(trace, mode="first_flip", theta=0.8):
    """First iteration meeting the criterion, or None.

    first_flip: first recorded iteration with any flipped pair;
    patk_below:  first recorded iteration with P@k < theta.
    """
    if not trace.records:
        raise ValueError("empty trace")
    if mode == "first_flip":
        for rec in trace.records:
            if rec.flipped_pairs > 0:
                return rec.it
        return None
    if mode == "patk_below":
        for rec in trace.records:
            if rec.patk < theta:
                return rec.it
        return None
    raise ValueError(f"unknown mode {mode!r}")


def correlation(xs, ys, method="pearson") -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) != len(ys) or len(xs) < 3:
        raise ValueError("need at least 3 paired points")
    if np.std(xs) == 0.0 or np.std(ys) == 0.0:
        raise ValueError("degenerate variance")
    if method == "spearman":
        xs = rankdata(xs, method="average")
        ys = rankdata(ys, method="average")
    elif method != "pearson":
        raise ValueError(f"unknown method {method!r}")
    xm, ym = xs - xs.mean(), ys - ys.mean()
    return float(np.sum(xm * ym) / np.sqrt(np.sum(xm**2) * np.sum(ym**2)))
