"""Command-line pipeline: train, attack, thickness, eval, report, sweep.

One JSON config drives every stage; all hyperparameter defaults (attack step
1e-3 for 1000 iterations inside an l2 ball of radius 1, k = 8, SmoothGrad
M = 50 with sigma^2 = 0.5, 100 integration steps) are baked in and
overridable. Every emitted file lives under the configured output directory
(or under $RANKTHICK_OUTPUT_ROOT when set), and a full rerun from the same
config reproduces all summary CSVs byte-identically.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 missing
artifact.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data as data_mod
from .attack import AttackConfig, er_attack, mse_attack, write_attack_summary
from .evaluate import comp, correlation, dffot, model_auc, precision_at_k, suff
from .explain import apply_postprocess, dump_saliency_csv, integrated_grad, simple_grad, smooth_grad
from .net import load_checkpoint, save_checkpoint
from .report import (
    MissingArtifactError,
    fig_correlation_scatter,
    fig_patk_bars,
    fig_training_curves,
    render_table_markdown,
    require_artifacts,
    write_table_csv,
)
from .thickness import NeighborhoodSpec, model_thickness
from .train import TrainSpec, TrainingDivergedError, train

OUTPUT_ROOT_ENV = "RANKTHICK_OUTPUT_ROOT"

CONFIG_SCHEMA = {
    "seed": 0,
    "output_dir": "runs/experiment",
    "k": 8,
    "jobs": 1,
    "dataset": {
        "kind": "synthetic (or csv)",
        "n_features": 28,
        "n_samples": 1000,
        "separation": 6.0,
        "n_signal": 8,
        "noise_std": 1.0,
        "path": "required for kind=csv",
        "label_column": "label",
        "standardize": True,
        "split": [0.7, 0.15, 0.15],
    },
    "train": {
        "lr": 0.01,
        "max_epochs": 300,
        "early_stop_patience": 30,
        "hidden": 32,
        "activation": "leaky_relu",
        "patk_every": 10,
        "patk_iters": 50,
        "patk_samples": 64,
    },
    "methods": [
        {"method": "vanilla"},
        {"method": "r2et", "lambda1": 1.0, "lambda2": 1.0, "kappa": 1e-4},
    ],
    "attacks": [
        {"attack": "er", "step_size": 1e-3, "max_iters": 1000, "epsilon": 1.0,
         "scheme": "none"},
        {"attack": "mse", "step_size": 1e-3, "max_iters": 1000, "epsilon": 1.0},
    ],
    "attack_samples": None,
    "trace_every": 1,
    "thickness": {
        "kind": "gaussian",
        "sigma": 0.1,
        "epsilon": 0.1,
        "m1": 20,
        "m2": 10,
        "estimator": "indicator",
    },
    "explainer": {"kind": "simple", "smoothgrad_samples": 50,
                  "smoothgrad_sigma2": 0.5, "ig_steps": 100},
    "sweep": {"method": "r2et",
              "lambda_grid": [0.01, 0.1, 1.0, 5.0, 10.0, 100.0],
              "kappa_grid": [1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
              "wd_grid": [5e-5, 5e-4, 5e-3, 1e-2, 5e-2]},
}

_DEFAULTS = {
    "seed": 0,
    "k": 8,
    "jobs": 1,
    "attack_samples": None,
    "trace_every": 1,
}


class ConfigError(ValueError):
    pass


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for key, default in _DEFAULTS.items():
        cfg.setdefault(key, default)
    if "output_dir" not in cfg:
        raise ConfigError("missing field: output_dir")
    if "dataset" not in cfg or "kind" not in cfg["dataset"]:
        raise ConfigError("missing field: dataset.kind")
    if not cfg.get("methods"):
        raise ConfigError("missing or empty field: methods")
    for i, m in enumerate(cfg["methods"]):
        if "method" not in m:
            raise ConfigError(f"missing field: methods[{i}].method")
    cfg.setdefault("train", {})
    cfg.setdefault(
        "attacks",
        [
            {"attack": "er", "step_size": 1e-3, "max_iters": 1000, "epsilon": 1.0},
            {"attack": "mse", "step_size": 1e-3, "max_iters": 1000, "epsilon": 1.0},
        ],
    )
    for i, a in enumerate(cfg["attacks"]):
        if a.get("attack") not in ("er", "mse"):
            raise ConfigError(f"attacks[{i}].attack must be 'er' or 'mse'")
    cfg.setdefault("thickness", dict(CONFIG_SCHEMA["thickness"]))
    cfg.setdefault("explainer", dict(CONFIG_SCHEMA["explainer"]))
    return cfg


def output_dir(cfg):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = cfg["output_dir"]
    if root:
        out = os.path.join(root, out)
    os.makedirs(out, exist_ok=True)
    return out


def build_dataset(cfg):
    dcfg = cfg["dataset"]
    kind = dcfg["kind"]
    if kind == "synthetic":
        ds = data_mod.synth_gaussian(
            dcfg.get("n_features", 28),
            dcfg.get("n_samples", 1000),
            dcfg.get("separation", 6.0),
            seed=dcfg.get("seed", cfg["seed"]),
            n_signal=dcfg.get("n_signal", 8),
            noise_std=dcfg.get("noise_std", 1.0),
        )
    elif kind == "csv":
        if "path" not in dcfg:
            raise ConfigError("missing field: dataset.path")
        ds = data_mod.load_csv(dcfg["path"], dcfg.get("label_column", "label"))
    else:
        raise ConfigError(f"dataset.kind must be 'synthetic' or 'csv', got {kind!r}")
    data_mod.split(ds, tuple(dcfg.get("split", (0.7, 0.15, 0.15))),
                   seed=dcfg.get("split_seed", cfg["seed"]))
    if dcfg.get("standardize", True):
        data_mod.standardize(ds)
    return ds


def _train_spec(cfg, mcfg, auc_threshold=None):
    base = {
        "k": cfg["k"],
        "seed": cfg["seed"],
        "auc_threshold": auc_threshold,
    }
    base.update(cfg.get("train", {}))
    base.update(mcfg)
    try:
        return TrainSpec(**base)
    except TypeError as exc:
        raise ConfigError(f"bad method entry {mcfg}: {exc}")
    except ValueError as exc:
        raise ConfigError(f"bad method entry {mcfg}: {exc}")


def _attack_config(acfg, seed):
    kwargs = {k: v for k, v in acfg.items() if k != "attack"}
    kwargs.setdefault("seed", seed)
    try:
        return AttackConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad attack entry {acfg}: {exc}")
    except ValueError as exc:
        raise ConfigError(f"bad attack entry {acfg}: {exc}")


def _method_names(cfg):
    names = [m["method"] for m in cfg["methods"]]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate method names; use distinct methods")
    return names


def _manifest(out, entries):
    payload = {}
    for name in sorted(entries):
        path = os.path.join(out, name)
        with open(path, "rb") as fh:
            payload[name] = hashlib.sha256(fh.read()).hexdigest()
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump({"artifacts": payload}, fh, indent=2, sort_keys=True)


def _parallel_map(fn, items, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _attack_subset(cfg, ds):
    X, y = ds.split_data("test")
    cap = cfg.get("attack_samples")
    if cap is not None:
        X, y = X[:cap], y[:cap]
    return X, y


def cmd_train(cfg):
    out = output_dir(cfg)
    ds = build_dataset(cfg)
    data_mod.save_csv(ds, os.path.join(out, "dataset.csv"))
    data_mod.save_sidecar(ds, os.path.join(out, "dataset_sidecar.json"))
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(out, "logs"), exist_ok=True)

    entries = ["dataset.csv", "dataset_sidecar.json"]
    mcfgs = list(cfg["methods"])
    names = _method_names(cfg)
    # Vanilla first so its validation AUC can seed the selection threshold.
    order = sorted(range(len(mcfgs)), key=lambda i: names[i] != "vanilla")
    vanilla_auc = None
    for i in order:
        mcfg = dict(mcfgs[i])
        threshold = mcfg.pop("auc_threshold", None)
        if threshold is None and vanilla_auc is not None and names[i] != "vanilla":
            threshold = vanilla_auc - 0.01
        spec = _train_spec(cfg, mcfg, auc_threshold=threshold)
        result = train(spec, ds)
        if names[i] == "vanilla":
            vanilla_auc = result.val_auc
        ck = os.path.join("checkpoints", f"{names[i]}.json")
        save_checkpoint(result.model, os.path.join(out, ck))
        log_name = os.path.join("logs", f"train_log_{names[i]}.csv")
        with open(os.path.join(out, log_name), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "reg_value", "val_auc", "val_patk"])
            for row in result.log:
                writer.writerow(
                    [
                        row["epoch"],
                        repr(row["train_loss"]),
                        repr(row["reg_value"]),
                        repr(row["val_auc"]),
                        repr(row["val_patk"]),
                    ]
                )
        entries += [ck, log_name]
        print(f"trained {names[i]}: best epoch {result.best_epoch}, "
              f"val AUC {result.val_auc:.4f}, val P@k {result.val_patk:.3f}")
    _manifest(out, entries)
    return 0


def _load_models(cfg, out):
    models = {}
    for name in _method_names(cfg):
        path = os.path.join(out, "checkpoints", f"{name}.json")
        if not os.path.exists(path):
            raise MissingArtifactError([path])
        models[name] = load_checkpoint(path)
    return models


def cmd_attack(cfg):
    out = output_dir(cfg)
    ds = build_dataset(cfg)
    models = _load_models(cfg, out)
    X, _ = _attack_subset(cfg, ds)
    os.makedirs(os.path.join(out, "traces"), exist_ok=True)
    os.makedirs(os.path.join(out, "adv"), exist_ok=True)

    rows = []
    for name, model in models.items():
        for acfg in cfg["attacks"]:
            attack_name = acfg["attack"]
            acfg_obj = _attack_config(acfg, cfg["seed"])

            def run(item):
                sid, x = item
                if attack_name == "er":
                    return sid, er_attack(model, x, cfg["k"], acfg_obj)
                return sid, mse_attack(model, x, acfg_obj, k=cfg["k"])

            results = _parallel_map(run, list(enumerate(X)), cfg.get("jobs", 1))
            trace_path = os.path.join(out, "traces", f"{name}_{attack_name}.jsonl")
            if os.path.exists(trace_path):
                os.remove(trace_path)
            adv_rows = []
            for sid, trace in results:
                trace.to_jsonl(trace_path, sample_id=sid,
                               every=cfg.get("trace_every", 1))
                final = trace.records[-1]
                flag = int(final.prediction != trace.records[0].prediction)
                rows.append(
                    [
                        sid,
                        f"{name}_{attack_name}",
                        repr(final.patk),
                        "" if trace.first_flip_iter is None else trace.first_flip_iter,
                        repr(trace.budget_used),
                        flag,
                    ]
                )
                adv_rows.append(trace.x_adv)
            with open(
                os.path.join(out, "adv", f"{name}_{attack_name}.csv"), "w", newline=""
            ) as fh:
                writer = csv.writer(fh)
                writer.writerow([f"f{i}" for i in range(X.shape[1])])
                for x_adv in adv_rows:
                    writer.writerow([repr(float(v)) for v in x_adv])
            patks = [float(r[2]) for r in rows if r[1] == f"{name}_{attack_name}"]
            print(f"attacked {name} with {attack_name}: mean P@k "
                  f"{np.mean(patks):.3f} over {len(patks)} samples")
    write_attack_summary(os.path.join(out, "attack_summary.csv"), rows)
    return 0


def _neighborhood(cfg, offset=0):
    tcfg = cfg["thickness"]
    try:
        return NeighborhoodSpec(
            kind=tcfg.get("kind", "gaussian"),
            epsilon=tcfg.get("epsilon", 0.0),
            sigma=tcfg.get("sigma", 0.0),
            m1=tcfg.get("m1", 20),
            m2=tcfg.get("m2", 10),
            seed=tcfg.get("seed", cfg["seed"]) + offset,
        )
    except ValueError as exc:
        raise ConfigError(f"bad thickness entry: {exc}")


def cmd_thickness(cfg):
    out = output_dir(cfg)
    ds = build_dataset(cfg)
    models = _load_models(cfg, out)
    X, _ = _attack_subset(cfg, ds)
    estimator = cfg["thickness"].get("estimator", "indicator")
    summary = {}
    for name, model in models.items():
        nb = _neighborhood(cfg)
        report = model_thickness(model, X, cfg["k"], nb, estimator=estimator)
        report.to_csv(os.path.join(out, f"thickness_{name}.csv"))
        summary[name] = {
            "mean": report.mean,
            "std": report.std,
            "estimator": report.estimator,
            "k": report.k,
            "neighborhood": nb.kind,
        }
        print(f"thickness {name}: mean {report.mean:.4f} ({estimator})")
    with open(os.path.join(out, "thickness_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return 0


def _explainer_map(cfg, model, x):
    ecfg = cfg["explainer"]
    kind = ecfg.get("kind", "simple")
    if kind == "simple":
        return simple_grad(model, x)
    if kind == "smoothgrad":
        return smooth_grad(
            model,
            x,
            ecfg.get("smoothgrad_samples", 50),
            float(np.sqrt(ecfg.get("smoothgrad_sigma2", 0.5))),
            seed=cfg["seed"],
        )
    if kind == "ig":
        return integrated_grad(model, x, steps=ecfg.get("ig_steps", 100))
    raise ConfigError(f"unknown explainer kind {kind!r}")


def _read_attack_summary(out):
    path = os.path.join(out, "attack_summary.csv")
    if not os.path.exists(path):
        raise MissingArtifactError([path])
    per_run = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            per_run.setdefault(row["attack"], []).append(row)
    return per_run


def _read_adv(out, name, attack):
    path = os.path.join(out, "adv", f"{name}_{attack}.csv")
    if not os.path.exists(path):
        raise MissingArtifactError([path])
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return np.array([[float(v) for v in row] for row in reader])


def cmd_eval(cfg):
    out = output_dir(cfg)
    ds = build_dataset(cfg)
    models = _load_models(cfg, out)
    X, y = _attack_subset(cfg, ds)
    Xtest, ytest = ds.split_data("test")
    summary = _read_attack_summary(out)
    max_iters = max(a.get("max_iters", 1000) for a in cfg["attacks"])

    rows = {}
    correlations = {}
    for name, model in models.items():
        adv_er = _read_adv(out, name, "er")
        adv_mse = _read_adv(out, name, "mse") if any(
            a["attack"] == "mse" for a in cfg["attacks"]
        ) else None
        clean_maps = [simple_grad(model, x) for x in X]
        dump_saliency_csv(clean_maps, os.path.join(out, f"saliency_{name}.csv"))

        patk_er = float(
            np.mean(
                [
                    precision_at_k(cm, simple_grad(model, xa), cfg["k"])
                    for cm, xa in zip(clean_maps, adv_er)
                ]
            )
        )
        patk_mse = float("nan")
        if adv_mse is not None:
            patk_mse = float(
                np.mean(
                    [
                        precision_at_k(cm, simple_grad(model, xa), cfg["k"])
                        for cm, xa in zip(clean_maps, adv_mse)
                    ]
                )
            )
        preds_before = model.predicted_classes(X)
        preds_after = model.predicted_classes(adv_er)
        caught = preds_before != preds_after
        sens = float(np.mean(caught))
        cauc = model_auc(model, Xtest, ytest)
        keep = ~caught
        if keep.sum() >= 2 and len(set(y[keep].tolist())) == 2:
            aauc = model_auc(model, adv_er[keep], y[keep])
        else:
            aauc = float("nan")
        dffot_m = float(np.mean([dffot(model, x, cm) for x, cm in zip(X, clean_maps)]))
        comp_m = float(np.mean([comp(model, x, cm) for x, cm in zip(X, clean_maps)]))
        suff_m = float(np.mean([suff(model, x, cm) for x, cm in zip(X, clean_maps)]))

        hessians = []
        for x, cm in zip(X, clean_maps):
            h = model.hessian_input(x, cm.class_index)
            hessians.append(float(np.linalg.norm(h)))
        hnorm_path = os.path.join(out, f"hessian_norms_{name}.csv")
        with open(hnorm_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "hessian_norm"])
            for sid, v in enumerate(hessians):
                writer.writerow([sid, repr(v)])

        thick_path = os.path.join(out, f"thickness_{name}.csv")
        thickness_vals = None
        if os.path.exists(thick_path):
            with open(thick_path, newline="") as fh:
                reader = csv.DictReader(fh)
                thickness_vals = np.array(
                    [float(r["thickness"]) for r in reader]
                )
        first_flips = np.array(
            [
                float(r["first_flip_iter"]) if r["first_flip_iter"] != "" else float(max_iters)
                for r in summary.get(f"{name}_er", [])
            ]
        )
        corr_thick = float("nan")
        corr_hess = float("nan")
        if thickness_vals is not None and len(first_flips) == len(thickness_vals):
            try:
                corr_thick = correlation(first_flips, thickness_vals)
            except ValueError:
                pass
        if len(first_flips) == len(hessians):
            try:
                corr_hess = correlation(first_flips, np.array(hessians))
            except ValueError:
                pass
        correlations[name] = {
            "pearson_flip_thickness": corr_thick,
            "pearson_flip_hessian": corr_hess,
        }
        rows[name] = {
            "patk_er": patk_er,
            "patk_mse": patk_mse,
            "cauc": cauc,
            "aauc": aauc,
            "sensitivity": sens,
            "dffot": dffot_m,
            "comp": comp_m,
            "suff": suff_m,
            "model_thickness": float(np.mean(thickness_vals))
            if thickness_vals is not None
            else float("nan"),
            "hessian_norm_mean": float(np.mean(hessians)),
            "corr_flip_thickness": corr_thick,
            "corr_flip_hessian": corr_hess,
        }
        print(f"eval {name}: P@k ER {patk_er:.3f} / MSE {patk_mse:.3f}, "
              f"cAUC {cauc:.4f}")
    write_table_csv(os.path.join(out, "eval_report.csv"), rows)
    with open(os.path.join(out, "correlations.json"), "w") as fh:
        json.dump(correlations, fh, indent=2, sort_keys=True)
    return 0


def cmd_report(run_dir):
    require_artifacts(run_dir, ["eval_report.csv", "attack_summary.csv"])
    rows = {}
    with open(os.path.join(run_dir, "eval_report.csv"), newline="") as fh:
        reader = csv.DictReader(fh)
        metrics = [c for c in reader.fieldnames if c != "method"]
        for row in reader:
            rows[row["method"]] = {
                m: (float(row[m]) if row[m] != "" else float("nan")) for m in metrics
            }
    md = render_table_markdown(rows, metrics)
    fig_dir = os.path.join(run_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)

    methods = list(rows)
    fig_patk_bars(
        os.path.join(fig_dir, "patk_by_method.png"),
        methods,
        [rows[m].get("patk_er", float("nan")) for m in methods],
        [rows[m].get("patk_mse", float("nan")) for m in methods],
    )
    figures = ["figures/patk_by_method.png"]

    summary = {}
    with open(os.path.join(run_dir, "attack_summary.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            summary.setdefault(row["attack"], []).append(row)
    for method in methods:
        thick_path = os.path.join(run_dir, f"thickness_{method}.csv")
        hess_path = os.path.join(run_dir, f"hessian_norms_{method}.csv")
        run_rows = summary.get(f"{method}_er")
        if not (os.path.exists(thick_path) and os.path.exists(hess_path) and run_rows):
            continue
        with open(thick_path, newline="") as fh:
            thick = [float(r["thickness"]) for r in csv.DictReader(fh)]
        with open(hess_path, newline="") as fh:
            hess = [float(r["hessian_norm"]) for r in csv.DictReader(fh)]
        cap = max(
            (float(r["first_flip_iter"]) for r in run_rows if r["first_flip_iter"]),
            default=1000.0,
        )
        flips = [
            float(r["first_flip_iter"]) if r["first_flip_iter"] != "" else cap
            for r in run_rows
        ]
        if len(flips) == len(thick) == len(hess):
            fig_name = f"figures/correlation_{method}.png"
            fig_correlation_scatter(
                os.path.join(run_dir, fig_name), flips, thick, hess, method
            )
            figures.append(fig_name)

    logs = {}
    for method in methods:
        log_path = os.path.join(run_dir, "logs", f"train_log_{method}.csv")
        if os.path.exists(log_path):
            with open(log_path, newline="") as fh:
                logs[method] = [
                    {"epoch": int(r["epoch"]), "val_auc": float(r["val_auc"])}
                    for r in csv.DictReader(fh)
                ]
    if logs:
        fig_training_curves(os.path.join(run_dir, "figures", "val_auc.png"), logs)
        figures.append("figures/val_auc.png")

    lines = ["# Experiment report", "", md, "", "## Figures", ""]
    lines += [f"![{os.path.basename(f)}]({f})" for f in figures]
    corr_path = os.path.join(run_dir, "correlations.json")
    if os.path.exists(corr_path):
        with open(corr_path) as fh:
            corr = json.load(fh)
        lines += ["", "## Correlation of first-flip iteration with", ""]
        lines.append("| method | thickness | Hessian norm |")
        lines.append("|---|---|---|")
        for method, vals in corr.items():
            lines.append(
                f"| {method} | {vals['pearson_flip_thickness']:.4f} | "
                f"{vals['pearson_flip_hessian']:.4f} |"
            )
    with open(os.path.join(run_dir, "report.md"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    write_table_csv(os.path.join(run_dir, "report.csv"), rows, metrics)
    print(f"report written to {os.path.join(run_dir, 'report.md')}")
    return 0


def cmd_sweep(cfg):
    out = output_dir(cfg)
    ds = build_dataset(cfg)
    scfg = cfg.get("sweep", dict(CONFIG_SCHEMA["sweep"]))
    method = scfg.get("method", "r2et")
    rows = []
    X, _ = _attack_subset(cfg, ds)
    quick = _attack_config(
        {"step_size": 0.02, "max_iters": 50, "epsilon": 1.0}, cfg["seed"]
    )
    if method == "wd":
        grid = [{"weight_decay": v} for v in scfg.get("wd_grid", [5e-4])]
    elif method in ("est_h", "exact_h", "ssr"):
        grid = [
            {"lambda2": lam, "kappa": kap}
            for lam in scfg.get("lambda_grid", [1.0])
            for kap in scfg.get("kappa_grid", [1e-4])
        ]
    else:
        grid = [
            {"lambda1": lam, "lambda2": lam} for lam in scfg.get("lambda_grid", [1.0])
        ]
    for params in grid:
        spec = _train_spec(cfg, {"method": method, **params})
        result = train(spec, ds)
        patks = []
        for x in X[: min(len(X), 32)]:
            trace = er_attack(result.model, x, cfg["k"], quick)
            patks.append(trace.records[-1].patk)
        rows.append(
            {
                **{k: repr(v) for k, v in params.items()},
                "val_auc": repr(result.val_auc),
                "patk_quick_er": repr(float(np.mean(patks))),
            }
        )
        print(f"sweep {method} {params}: val AUC {result.val_auc:.4f}, "
              f"quick P@k {float(np.mean(patks)):.3f}")
    fields = sorted({k for row in rows for k in row})
    with open(os.path.join(out, f"sweep_{method}.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="rankthick",
        description="Train explanation-ranking-robust classifiers, attack "
        "their saliency rankings, and report thickness/robustness metrics.",
    )
    parser.add_argument(
        "--print-schema", action="store_true",
        help="print the config schema with defaults and exit",
    )
    sub = parser.add_subparsers(dest="command")
    for name in ("train", "attack", "thickness", "eval", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--jobs", type=int, default=None)
    p = sub.add_parser("report")
    p.add_argument("run_dir")
    args = parser.parse_args(argv)

    if args.print_schema:
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        if args.command == "report":
            return cmd_report(args.run_dir)
        cfg = load_config(args.config)
        if getattr(args, "jobs", None):
            cfg["jobs"] = args.jobs
        handler = {
            "train": cmd_train,
            "attack": cmd_attack,
            "thickness": cmd_thickness,
            "eval": cmd_eval,
            "sweep": cmd_sweep,
        }[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
