"""Gradient-based explainers and saliency post-processing.

A saliency map scores every input feature for the predicted class; ranking,
thickness, attacks, and training all consume the postprocessed scores so the
quantity being ranked and the quantity being optimized agree. The tabular
profile uses absolute gradient values ("abs"); "abs_normalized" additionally
rescales to sum 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

POSTPROCESS_KINDS = ("raw", "abs", "abs_normalized")


@dataclass
class SaliencyMap:
    scores: np.ndarray
    explainer: str
    postprocess: str
    class_index: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)


def apply_postprocess(raw, kind):
    if kind == "raw":
        return np.asarray(raw, dtype=float)
    if kind == "abs":
        return np.abs(raw)
    if kind == "abs_normalized":
        a = np.abs(raw)
        total = a.sum()
        if total == 0.0:
            # Degenerate all-zero map: fall back to uniform scores.
            return np.full_like(a, 1.0 / len(a))
        return a / total
    raise ValueError(f"unknown postprocess {kind!r}")


def simple_grad(m, x, postprocess="abs", of="prob") -> SaliencyMap:
    """Gradient of the predicted-class output, postprocessed."""
    c = m.predicted_class(x)
    raw = m.grad_input(x, c, of=of)
    return SaliencyMap(apply_postprocess(raw, postprocess), "simple", postprocess, c)


def smooth_grad(m, x, n_samples, sigma, seed, postprocess="abs", of="prob") -> SaliencyMap:
    """Mean of simple-grad maps at Gaussian-perturbed inputs.

    The explained class is fixed to the prediction at the center point.
    sigma=0 returns the simple-grad scores bitwise.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    c = m.predicted_class(x)
    tag = f"smoothgrad(M={n_samples},sigma={sigma})"
    if sigma == 0.0:
        raw = m.grad_input(x, c, of=of)
        return SaliencyMap(apply_postprocess(raw, postprocess), tag, postprocess, c)
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    acc = np.zeros(len(x))
    for _ in range(n_samples):
        xp = x + rng.normal(scale=sigma, size=len(x))
        acc += apply_postprocess(m.grad_input(xp, c, of=of), postprocess)
    return SaliencyMap(acc / n_samples, tag, postprocess, c)


def integrated_grad(m, x, x0=None, steps=100, postprocess="abs", of="prob") -> SaliencyMap:
    """Path-integrated gradients from reference x0 (default: zero vector),
    midpoint rule with `steps` interpolation points."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x, dtype=float)
    if x0 is None:
        x0 = np.zeros_like(x)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != x.shape:
        raise ValueError("reference point dimension mismatch")
    c = m.predicted_class(x)
    diff = x - x0
    acc = np.zeros_like(x)
    for s in range(steps):
        alpha = (s + 0.5) / steps
        acc += m.grad_input(x0 + alpha * diff, c, of=of)
    raw = diff * acc / steps
    tag = f"ig(steps={steps})"
    return SaliencyMap(apply_postprocess(raw, postprocess), tag, postprocess, c)


def top_k(s, k) -> list:
    """Indices of the k largest scores, descending; ties broken by ascending
    feature index."""
    scores = s.scores if isinstance(s, SaliencyMap) else np.asarray(s, dtype=float)
    n = len(scores)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    order = np.lexsort((np.arange(n), -scores))
    return [int(i) for i in order[:k]]


def ranking(s) -> list:
    """All feature indices in descending score order (same tie rule)."""
    scores = s.scores if isinstance(s, SaliencyMap) else np.asarray(s, dtype=float)
    return top_k(scores, len(scores))


def dump_saliency_csv(maps, path):
    """One row per (sample, feature): sample_id, feature_index, score, rank."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "feature_index", "score", "rank"])
        for sid, smap in enumerate(maps):
            order = ranking(smap)
            rank_of = {feat: r + 1 for r, feat in enumerate(order)}
            for j, score in enumerate(smap.scores):
                writer.writerow([sid, j, repr(float(score)), rank_of[j]])
