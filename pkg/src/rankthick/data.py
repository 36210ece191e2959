"""Dataset ingestion, splitting, standardization, and synthetic generation.

The synthetic generator is the desk-scale stand-in for the binarized tabular
benchmarks: two Gaussian clusters separated along a seeded unit direction
supported on a designated subset of "signal" features, so the top-k ground
truth is known. Standardization is fit on the train split only and applied
everywhere; attack budgets are expressed in standardized units.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list
    split_indices: dict = field(default_factory=dict)
    provenance: str = ""
    signal_features: list = None
    standardization: dict = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if np.any(np.isnan(self.features)):
            raise ValueError("NaN features are not allowed")
        if not set(np.unique(self.labels)) <= {0, 1}:
            raise ValueError("labels must be binary 0/1")

    @property
    def n_features(self):
        return self.features.shape[1]

    def split_data(self, name):
        idx = self.split_indices[name]
        return self.features[idx], self.labels[idx]


def load_csv(path, label_column) -> Dataset:
    """Parse a headered numeric CSV; the label column must be binary."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"empty file: {path}")
        if label_column not in header:
            raise ValueError(f"missing label column {label_column!r} in {path}")
        label_idx = header.index(label_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            vals = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(
                        f"non-numeric value {cell!r} in column {col!r} "
                        f"(line {lineno}); binarize categorical features upstream"
                    )
                if math.isnan(v):
                    raise ValueError(f"NaN cell in column {col!r} (line {lineno})")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ValueError(f"no data rows in {path}")
    arr = np.asarray(rows, dtype=float)
    labels = arr[:, label_idx]
    if not set(np.unique(labels)) <= {0.0, 1.0}:
        raise ValueError("label column must contain only 0/1")
    feats = np.delete(arr, label_idx, axis=1)
    names = [h for i, h in enumerate(header) if i != label_idx]
    return Dataset(feats, labels.astype(int), names, provenance=str(path))


def save_csv(ds: Dataset, path, label_column="label"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.feature_names) + [label_column])
        for x, y in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def split(ds: Dataset, ratios=(0.7, 0.15, 0.15), seed=0) -> Dataset:
    """Deterministic shuffled train/val/test split; sizes within +-1 of the
    exact ratios (cumulative rounding)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(ds.labels)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    bounds = [int(round(n * c)) for c in np.cumsum(ratios)]
    names = ["train", "val", "test"][: len(ratios)]
    splits = {}
    start = 0
    for name, stop in zip(names, bounds):
        splits[name] = np.sort(perm[start:stop])
        start = stop
    ds.split_indices = splits
    return ds


def synth_gaussian(
    n_features,
    n_samples,
    separation,
    seed=0,
    n_signal=8,
    noise_std=1.0,
) -> Dataset:
    """Two Gaussian clusters at +-(separation/2) u along a seeded unit
    direction u supported on `n_signal` randomly chosen features."""
    if n_features < 2:
        raise ValueError("need at least 2 features")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    n_signal = min(n_signal, n_features)
    rng = np.random.default_rng(seed)
    signal = np.sort(rng.choice(n_features, size=n_signal, replace=False))
    u = np.zeros(n_features)
    # Keep every signal coordinate material: magnitudes in [0.5, 1].
    mags = rng.uniform(0.5, 1.0, size=n_signal)
    signs = rng.choice([-1.0, 1.0], size=n_signal)
    u[signal] = mags * signs
    u /= np.linalg.norm(u)
    labels = rng.integers(0, 2, size=n_samples)
    centers = (2.0 * labels - 1.0)[:, None] * (separation / 2.0) * u[None, :]
    feats = centers + rng.normal(scale=noise_std, size=(n_samples, n_features))
    names = [f"f{i}" for i in range(n_features)]
    return Dataset(
        feats,
        labels,
        names,
        provenance=f"synth_gaussian(seed={seed},separation={separation})",
        signal_features=[int(i) for i in signal],
    )


def standardize(ds: Dataset) -> Dataset:
    """Zero-mean/unit-variance using train-split statistics, applied to all
    splits in place; parameters recorded on the dataset."""
    if "train" not in ds.split_indices:
        raise ValueError("standardize requires split indices")
    Xtr = ds.features[ds.split_indices["train"]]
    mean = Xtr.mean(axis=0)
    std = Xtr.std(axis=0)
    std[std == 0.0] = 1.0
    ds.features = (ds.features - mean) / std
    ds.standardization = {"mean": mean.tolist(), "std": std.tolist()}
    return ds


def save_sidecar(ds: Dataset, path):
    """JSON sidecar: split indices plus standardization parameters."""
    with open(path, "w") as fh:
        json.dump(
            {
                "splits": {k: v.tolist() for k, v in ds.split_indices.items()},
                "standardization": ds.standardization,
                "signal_features": ds.signal_features,
                "provenance": ds.provenance,
            },
            fh,
            indent=2,
        )
