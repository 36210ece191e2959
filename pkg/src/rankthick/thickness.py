"""Ranking-thickness estimators, surrogate bounds, and empirical ranking risks.

Thickness measures how stably a salient feature outranks a non-salient one
along perturbation paths: the indicator form is the probability the pairwise
gap stays non-negative, the relaxed form is the expected gap itself. Pair
sets are always frozen from the clean input's ranking. The line integral is
discretized with a midpoint rule (M2 points) over M1 neighborhood draws.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .explain import apply_postprocess, top_k

NEIGHBORHOOD_KINDS = ("uniform_ball", "gaussian", "adversarial")


@dataclass
class NeighborhoodSpec:
    kind: str = "gaussian"
    epsilon: float = 0.0
    sigma: float = 0.0
    attack: object = None  # AttackConfig for kind="adversarial"
    m1: int = 20
    m2: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NEIGHBORHOOD_KINDS:
            raise ValueError(f"unknown neighborhood kind {self.kind!r}")
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError("m1 and m2 must be >= 1")
        if self.kind == "uniform_ball" and self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.kind == "gaussian" and self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.kind == "adversarial" and self.attack is None:
            raise ValueError("adversarial neighborhood needs an attack config")


@dataclass
class ThicknessReport:
    values: np.ndarray
    mean: float
    std: float
    estimator: str
    k: int
    pair_policy: str
    hessian_method: str = "closed_form"
    extra: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "thickness"])
            for sid, v in enumerate(self.values):
                writer.writerow([sid, repr(float(v))])

    def to_json_summary(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "mean": self.mean,
                    "std": self.std,
                    "estimator": self.estimator,
                    "k": self.k,
                    "pair_policy": self.pair_policy,
                    "n_samples": int(len(self.values)),
                    "hessian_method": self.hessian_method,
                    **self.extra,
                },
                fh,
                indent=2,
            )


def _draw_neighbors(nb: NeighborhoodSpec, m, x, k, rng):
    x = np.asarray(x, dtype=float)
    n = len(x)
    if nb.kind == "uniform_ball":
        dirs = rng.normal(size=(nb.m1, n))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radii = nb.epsilon * rng.uniform(size=(nb.m1, 1)) ** (1.0 / n)
        return x + dirs / norms * radii
    if nb.kind == "gaussian":
        return x + rng.normal(scale=nb.sigma, size=(nb.m1, n))
    # Adversarial neighbor: the attack itself is deterministic, one endpoint.
    from .attack import er_attack

    trace = er_attack(m, x, k, nb.attack)
    return trace.x_adv[None, :]


def _line_points(x, neighbors, m2):
    """Midpoint-rule interpolation points for every neighbor; (P, n)."""
    ts = (np.arange(m2) + 0.5) / m2
    segs = neighbors[:, None, :] * ts[None, :, None] + x[None, None, :] * (
        1.0 - ts[None, :, None]
    )
    return segs.reshape(-1, neighbors.shape[1])

def _scores_at(m, points, class_index, postprocess):
    out = np.empty((len(points), points.shape[1]))
    for i, p in enumerate(points):
        out[i] = apply_postprocess(m.grad_input(p, class_index), postprocess)
    return out


def gap(s, i, j) -> float:
    """Signed difference of postprocessed scores I_i - I_j."""
    scores = s.scores if hasattr(s, "scores") else np.asarray(s, dtype=float)
    n = len(scores)
    if i == j:
        raise ValueError("gap requires distinct indices")
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError("feature index out of range")
    return float(scores[i] - scores[j])


def _tube_scores(m, x, nb, k, class_index, postprocess):
    rng = np.random.default_rng(nb.seed)
    x = np.asarray(x, dtype=float)
    neighbors = _draw_neighbors(nb, m, x, k, rng)
    points = _line_points(x, neighbors, nb.m2)
    return _scores_at(m, points, class_index, postprocess)


def pairwise_thickness_indicator(
    m, x, i, j, nb, postprocess="abs", class_index=None, k=8
) -> float:
    """Monte-Carlo probability that the (i, j) gap stays >= 0 along the tube."""
    if class_index is None:
        class_index = m.predicted_class(x)
    scores = _tube_scores(m, x, nb, k, class_index, postprocess)
    return float(np.mean(scores[:, i] >= scores[:, j]))


def pairwise_thickness_relaxed(
    m, x, i, j, nb, postprocess="abs", class_index=None, k=8
) -> float:
    """Monte-Carlo expected gap along the tube; unbounded sign."""
    if class_index is None:
        class_index = m.predicted_class(x)
    scores = _tube_scores(m, x, nb, k, class_index, postprocess)
    return float(np.mean(scores[:, i] - scores[:, j]))


def topk_thickness(
    m, x, k, nb, estimator="relaxed", postprocess="abs", class_index=None
) -> float:
    """Mean pairwise thickness over all (top-k, rest) pairs from the clean
    ranking of x; k(n-k) pairs, estimator 'relaxed' or 'indicator'."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if not 1 <= k < n:
        raise ValueError(f"k={k} out of range [1, {n})")
    if class_index is None:
        class_index = m.predicted_class(x)
    clean = apply_postprocess(m.grad_input(x, class_index), postprocess)
    order = top_k(clean, n)
    tops, rest = order[:k], order[k:]
    scores = _tube_scores(m, x, nb, k, class_index, postprocess)
    st = scores[:, tops]  # (P, k)
    sr = scores[:, rest]  # (P, n-k)
    diffs = st[:, :, None] - sr[:, None, :]
    if estimator == "relaxed":
        return float(np.mean(diffs))
    if estimator == "indicator":
        return float(np.mean(diffs >= 0.0))
    raise ValueError(f"unknown estimator {estimator!r}")


def _hessian_rows(m, x, class_index, postprocess):
    """Rows of the derivative of the postprocessed map: H_i with the sign of
    the raw gradient folded in for abs-style postprocessing (valid a.e.)."""
    h = m.hessian_input(x, class_index)
    if postprocess == "raw":
        return h
    raw = m.grad_input(x, class_index)
    return np.sign(raw)[:, None] * h


def thickness_bounds(
    m,
    x,
    i,
    j,
    epsilon,
    l_samples=50,
    postprocess="abs",
    class_index=None,
    seed=0,
) -> tuple:
    """Surrogate (lower, upper) bounds on the relaxed pairwise thickness.

    lower = h - epsilon/2 * ||H_i - H_j||_2;
    upper = h + epsilon * (L_i + L_j) with L_i estimated as the max row norm
    over `l_samples` uniform-ball points (an optimistic stand-in for the
    exact neighborhood maximum, which is not computable).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    x = np.asarray(x, dtype=float)
    if class_index is None:
        class_index = m.predicted_class(x)
    clean = apply_postprocess(m.grad_input(x, class_index), postprocess)
    h = float(clean[i] - clean[j])
    rows = _hessian_rows(m, x, class_index, postprocess)
    lower = h - epsilon * 0.5 * float(np.linalg.norm(rows[i] - rows[j]))
    rng = np.random.default_rng(seed)
    li = lj = 0.0
    nb = NeighborhoodSpec(kind="uniform_ball", epsilon=epsilon, m1=l_samples, seed=seed)
    points = _draw_neighbors(nb, m, x, None, rng)
    for p in points:
        rows_p = _hessian_rows(m, p, class_index, postprocess)
        li = max(li, float(np.linalg.norm(rows_p[i])))
        lj = max(lj, float(np.linalg.norm(rows_p[j])))
    upper = h + epsilon * (li + lj)
    return lower, upper


def model_thickness(
    m, X, k, nb, estimator="relaxed", postprocess="abs"
) -> ThicknessReport:
    """Per-sample top-k thickness over a dataset split, with mean/std."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) == 0:
        raise ValueError("empty split")
    values = np.empty(len(X))
    for idx, x in enumerate(X):
        sample_nb = NeighborhoodSpec(
            kind=nb.kind,
            epsilon=nb.epsilon,
            sigma=nb.sigma,
            attack=nb.attack,
            m1=nb.m1,
            m2=nb.m2,
            seed=nb.seed + idx,
        )
        values[idx] = topk_thickness(
            m, x, k, sample_nb, estimator=estimator, postprocess=postprocess
        )
    method = "closed_form" if getattr(m, "has_exact_hessian", True) else "fd_columns"
    return ThicknessReport(
        values=values,
        mean=float(np.mean(values)),
        std=float(np.std(values)),
        estimator=estimator,
        k=k,
        pair_policy="all_topk",
        hessian_method=method,
        extra={"neighborhood": nb.kind},
    )


def phi_u(z, u):
    """Hinge-style surrogate ranking loss: 1 below 0, linear ramp on [0, u),
    0 at or above u. 1/u-Lipschitz."""
    if u <= 0:
        raise ValueError("u must be > 0")
    z = np.asarray(z, dtype=float)
    return np.clip(1.0 - z / u, 0.0, 1.0)


def empirical_risks(s, k, u) -> tuple:
    """(r01, r_phi_u, r01_u) over all k(n-k) index pairs, treating feature
    index as rank position (index i is the i-th most salient feature).

    Callers comparing against a clean ranking should reorder scores by the
    clean permutation first. Always r01 <= r_phi_u <= r01_u.
    """
    if u <= 0:
        raise ValueError("u must be > 0")
    scores = s.scores if hasattr(s, "scores") else np.asarray(s, dtype=float)
    n = len(scores)
    if not 1 <= k < n:
        raise ValueError(f"k={k} out of range [1, {n})")
    diffs = scores[:k, None] - scores[None, k:]
    r01 = float(np.mean(diffs < 0.0))
    r_phi = float(np.mean(phi_u(diffs, u)))
    r01_u = float(np.mean(diffs < u))
    return r01, r_phi, r01_u
