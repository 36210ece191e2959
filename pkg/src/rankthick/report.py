"""Report rendering: method-by-metric tables (markdown + CSV) and the
matplotlib figures saved next to them.

Winner bolding follows a literal per-column max rule; columns where lower is
better are annotated in the caption rather than re-ranked.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

PERCENT_METRICS = ("patk_er", "patk_mse")

LOWER_IS_BETTER = ("sensitivity", "dffot", "suff")


class MissingArtifactError(FileNotFoundError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing artifacts: " + ", ".join(self.missing))


def _fmt(metric, value):
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return "-"
    if metric in PERCENT_METRICS:
        return f"{100.0 * value:.1f}"
    return f"{value:.4f}"


def render_table_markdown(rows, metrics=None):
    """rows: {method: {metric: value}}; bolds the per-column maximum."""
    methods = list(rows)
    if metrics is None:
        metrics = []
        for row in rows.values():
            for key in row:
                if key not in metrics:
                    metrics.append(key)
    winners = {}
    for metric in metrics:
        vals = {
            meth: rows[meth].get(metric)
            for meth in methods
            if rows[meth].get(metric) is not None
            and np.isfinite(rows[meth].get(metric))
        }
        if vals:
            best = max(vals.values())
            winners[metric] = {m for m, v in vals.items() if v == best}
    lines = ["| method | " + " | ".join(metrics) + " |"]
    lines.append("|" + "---|" * (len(metrics) + 1))
    for meth in methods:
        cells = []
        for metric in metrics:
            text = _fmt(metric, rows[meth].get(metric))
            if meth in winners.get(metric, ()):
                text = f"**{text}**"
            cells.append(text)
        lines.append(f"| {meth} | " + " | ".join(cells) + " |")
    lines.append("")
    lines.append(
        "P@k columns in percent; winner per column bolded by the max rule "
        f"(lower is better for: {', '.join(LOWER_IS_BETTER)})."
    )
    return "\n".join(lines) + "\n"


def write_table_csv(path, rows, metrics=None):
    methods = list(rows)
    if metrics is None:
        metrics = []
        for row in rows.values():
            for key in row:
                if key not in metrics:
                    metrics.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method"] + metrics)
        for meth in methods:
            writer.writerow(
                [meth]
                + [
                    ""
                    if rows[meth].get(metric) is None
                    or not np.isfinite(rows[meth].get(metric))
                    else repr(float(rows[meth][metric]))
                    for metric in metrics
                ]
            )


def fig_correlation_scatter(path, first_flip, thickness, hessian_norms, method_name):
    """Fig-3 style pair of scatters: first-flip iteration against thickness
    and against Hessian norm, Pearson r in the titles."""
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.4))
    for ax, ys, label in (
        (axes[0], thickness, "top-k thickness"),
        (axes[1], hessian_norms, "Hessian norm"),
    ):
        ax.scatter(ys, first_flip, s=14, alpha=0.7, edgecolors="none")
        r = _safe_pearson(first_flip, ys)
        ax.set_xlabel(label)
        ax.set_ylabel("iterations to first flip")
        ax.set_title(f"{method_name}: r = {r:.3f}" if r is not None else method_name)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def fig_patk_bars(path, methods, patk_er, patk_mse):
    x = np.arange(len(methods))
    width = 0.38
    fig, ax = plt.subplots(figsize=(1.2 * len(methods) + 2.5, 3.4))
    ax.bar(x - width / 2, 100 * np.asarray(patk_er), width, label="ERAttack")
    ax.bar(x + width / 2, 100 * np.asarray(patk_mse), width, label="MSE attack")
    ax.set_xticks(x)
    ax.set_xticklabels(methods, rotation=30, ha="right")
    ax.set_ylabel("P@k (%)")
    ax.set_ylim(0, 105)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def fig_training_curves(path, logs_by_method):
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    for method, log in logs_by_method.items():
        epochs = [row["epoch"] for row in log]
        ax.plot(epochs, [row["val_auc"] for row in log], label=method)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation AUC")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _safe_pearson(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 3 or np.std(xs) == 0 or np.std(ys) == 0:
        return None
    xm, ym = xs - xs.mean(), ys - ys.mean()
    return float(np.sum(xm * ym) / np.sqrt(np.sum(xm**2) * np.sum(ym**2)))


def require_artifacts(run_dir, names):
    missing = [n for n in names if not os.path.exists(os.path.join(run_dir, n))]
    if missing:
        raise MissingArtifactError(missing)
