"""Command-line entry points: synth, train, eval, ablate, diagnose.

Every command is deterministic given its inputs and seeds and exits with
0 on success, 1 on runtime failure, 2 on usage/configuration errors.
Run configuration is JSON with full defaulting; each training run writes
back its fully-resolved config for provenance.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .data import (
    OpenSetTask,
    SynthSpec,
    load_csv_domain,
    load_feature_selection,
    load_schema,
    make_openset_task,
    preprocess_task,
    synth_category_names,
    synth_domains,
    synth_task,
)
from .errors import ConfigError, DandelionError
from .evaluation import compute_metrics, openness, predict_labels
from .geometry import assign_membership, average_compactness, fit_dandelion, separability_sp
from .model import project
from .training import HyperParams, load_checkpoint, save_checkpoint, train

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

ABLATION_GROUPS = ("A", "B1", "B2", "B3", "C", "D", "E1", "E2", "F", "full")


# ------------------------------------------------------------------- config

def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def resolve_config(raw: dict) -> dict:
    """Fill defaults; the task source is the only field without one."""
    if "task" not in raw or not isinstance(raw["task"], dict):
        raise ConfigError("config needs a 'task' object with 'synth' or 'csv'")
    task = raw["task"]
    if ("synth" in task) == ("csv" in task):
        raise ConfigError("task must contain exactly one of 'synth' or 'csv'")
    try:
        hp = HyperParams.from_dict(raw.get("hyperparams", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad hyperparams: {exc}") from None
    resolved = {
        "task": task,
        "hyperparams": hp.as_dict(),
        "output_dir": raw.get("output_dir", "runs/latest"),
        "normal_category": raw.get("normal_category", "normal"),
        "seeds": list(raw.get("seeds", [hp.seed])),
        "ablation": raw.get("ablation"),
    }
    known = set(resolved)
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config fields: {sorted(extra)}")
    return resolved


def _synth_spec_from(cfg: dict) -> SynthSpec:
    fields = {"k", "unknown_count", "n_per_category", "d_s", "d_t", "separation", "seed"}
    extra = set(cfg) - fields
    if extra:
        raise ConfigError(f"unknown synth fields: {sorted(extra)}")
    missing = fields - set(cfg)
    if missing:
        raise ConfigError(f"synth task missing fields: {sorted(missing)}")
    try:
        return SynthSpec(**cfg)
    except ValueError as exc:
        raise ConfigError(f"bad synth spec: {exc}") from None


def build_task(task_cfg: dict) -> OpenSetTask:
    """Construct and preprocess the task named by a config 'task' object."""
    if "synth" in task_cfg:
        return preprocess_task(synth_task(_synth_spec_from(task_cfg["synth"])))
    cfg = dict(task_cfg["csv"])
    if "manifest" in cfg:
        manifest_path = Path(cfg.pop("manifest"))
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        base = manifest_path.parent
        cfg.setdefault("source", str(base / manifest["source_csv"]))
        cfg.setdefault("target", str(base / manifest["target_csv"]))
        cfg.setdefault("schema", str(base / manifest["schema"]))
        cfg.setdefault("shared", manifest["shared"])
    for key in ("source", "target", "schema", "shared"):
        if key not in cfg:
            raise ConfigError(f"csv task missing {key!r}")
    schema = load_schema(cfg["schema"])
    source = load_csv_domain(cfg["source"], schema, tag="source", labels_required=True)
    target = load_csv_domain(cfg["target"], schema, tag="target", labels_required=False)
    task = make_openset_task(source, target, cfg["shared"])
    sel_s = load_feature_selection(cfg["source_features"]) if cfg.get("source_features") else None
    sel_t = load_feature_selection(cfg["target_features"]) if cfg.get("target_features") else None
    return preprocess_task(task, selected_source=sel_s, selected_target=sel_t)


def _normal_label(task: OpenSetTask, normal_category: str) -> int | None:
    return task.shared_map.get(normal_category)


# ----------------------------------------------------------------- commands

def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(k=args.k, unknown_count=args.unknown, n_per_category=args.n,
                         d_s=args.d_s, d_t=args.d_t, separation=args.separation,
                         seed=args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shared, _ = synth_category_names(spec)
    source, target = synth_domains(spec)

    def write_domain(path: Path, domain) -> None:
        d = domain.features.shape[1]
        header = [f"f{i:03d}" for i in range(d)] + ["label"]
        lines = [",".join(header)]
        for row, lbl in zip(domain.features, domain.labels):
            lines.append(",".join([repr(v) for v in row] + [domain.category_names[lbl]]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    write_domain(out / "source.csv", source)
    write_domain(out / "target.csv", target)
    # One schema covers both widths; the loader tolerates declared columns
    # that a particular CSV does not carry.
    schema = {f"f{i:03d}": "numeric" for i in range(max(spec.d_s, spec.d_t))}
    schema["label"] = "label"
    _write_json(out / "schema.json", schema)
    _write_json(out / "manifest.json", {
        "source_csv": "source.csv",
        "target_csv": "target.csv",
        "schema": "schema.json",
        "shared": shared,
        "normal_category": "normal",
        "k": spec.k,
        "k_prime": spec.k + spec.unknown_count,
        "openness": openness(spec.k, spec.k + spec.unknown_count),
        "spec": dict(spec.__dict__),
    })
    print(f"wrote 4 files to {out}")
    return EXIT_OK


def _train_once(resolved: dict, out_dir: Path) -> tuple:
    task = build_task(resolved["task"])
    hp = HyperParams.from_dict(resolved["hyperparams"])
    t0 = time.perf_counter()
    model, history = train(task, hp)
    seconds = time.perf_counter() - t0
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, hp, out_dir / "checkpoint.json")
    history.write_csv(out_dir / "history.csv")
    metrics = _evaluate(model, task, resolved["normal_category"])
    _write_json(out_dir / "metrics.json", metrics)
    _write_json(out_dir / "resolved-config.json", resolved)
    _write_json(out_dir / "metadata.json", {
        "train_seconds": seconds,
        "epochs": hp.epochs,
        "seed": hp.seed,
        "n_source": task.source.n,
        "n_target": task.target.n,
    })
    return model, task, history, metrics, seconds


def _evaluate(model, task: OpenSetTask, normal_category: str) -> dict:
    out: dict = {
        "k": task.k,
        "k_prime": task.k_prime,
        "openness": openness(task.k, task.k_prime),
    }
    if task.target_eval_labels is None:
        out["acc"] = None
        out["ind"] = None
        out["reason"] = "target ground-truth labels unavailable"
        return out
    f_t = project(model, task.target.features, "target").data
    preds = predict_labels(model, f_t)
    out["acc"] = compute_metrics(preds, task.target_eval_labels, task.k, "acc").as_dict()
    normal = _normal_label(task, normal_category)
    if normal is None:
        out["ind"] = None
        out["reason"] = f"normal category {normal_category!r} not in shared map"
    else:
        out["ind"] = compute_metrics(
            preds, task.target_eval_labels, task.k, "ind", normal_label=normal).as_dict()
    return out


def cmd_train(args) -> int:
    resolved = resolve_config(load_config(args.config))
    out_dir = Path(args.out) if args.out else Path(resolved["output_dir"])
    resolved["output_dir"] = str(out_dir)
    _train_once(resolved, out_dir)
    print(f"training outputs in {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    resolved = resolve_config(load_config(args.config))
    model, hp = load_checkpoint(args.checkpoint)
    task = build_task(resolved["task"])
    if model.dims.d_s != task.d_s or model.dims.d_t != task.d_t:
        print(
            f"error: checkpoint dims (d_s={model.dims.d_s}, d_t={model.dims.d_t}) "
            f"do not match task (d_s={task.d_s}, d_t={task.d_t})",
            file=sys.stderr,
        )
        return EXIT_RUNTIME
    out_dir = Path(args.out) if args.out else Path(resolved["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    f_t = project(model, task.target.features, "target").data
    preds = predict_labels(model, f_t)
    per_instance_ms = 1000.0 * (time.perf_counter() - t0) / task.target.n

    metrics = _evaluate(model, task, resolved["normal_category"])
    if args.mode != "both":
        metrics = {key: metrics.get(key) for key in ("k", "k_prime", "openness", args.mode)}
    metrics["mean_inference_ms_per_instance"] = per_instance_ms
    _write_json(out_dir / "eval-metrics.json", metrics)

    lines = ["index,predicted_label"]
    if task.target_eval_labels is not None:
        lines = ["index,predicted_label,eval_label"]
        lines += [f"{i},{p},{t}" for i, (p, t) in enumerate(zip(preds, task.target_eval_labels))]
    else:
        lines += [f"{i},{p}" for i, p in enumerate(preds)]
    (out_dir / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"evaluation outputs in {out_dir}")
    return EXIT_OK


def apply_ablation(hp: HyperParams, group: str) -> HyperParams:
    """Return a copy of hp with one ablation group's toggles applied."""
    if group not in ABLATION_GROUPS:
        raise ConfigError(f"unknown ablation group {group!r}; choose from {ABLATION_GROUPS}")
    changes: dict = {}
    if group == "A":
        changes["alpha_u"] = 0.0
    elif group == "B1":
        changes["beta_s"] = 0.0
    elif group == "B2":
        changes["beta_t"] = 0.0
    elif group == "B3":
        changes.update(beta_s=0.0, beta_t=0.0)
    elif group == "C":
        changes["delta"] = 0.0
    elif group == "D":
        changes["theta"] = 0.0
    elif group == "E1":
        changes["gamma"] = 0.0
    elif group == "E2":
        changes["dsdm_mode"] = "instance"
    elif group == "F":
        changes.update(beta_s=0.0, beta_t=0.0, delta=0.0, theta=0.0, gamma=0.0)
    out = hp.as_dict()
    out.update(changes)
    return HyperParams.from_dict(out)


def cmd_ablate(args) -> int:
    resolved = resolve_config(load_config(args.config))
    groups = [g.strip() for g in args.groups.split(",") if g.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not groups or not seeds:
        raise ConfigError("need at least one group and one seed")
    for g in groups:
        if g not in ABLATION_GROUPS:
            raise ConfigError(f"unknown ablation group {g!r}; choose from {ABLATION_GROUPS}")
    out_dir = Path(args.out) if args.out else Path(resolved["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    base_hp = HyperParams.from_dict(resolved["hyperparams"])

    rows = []
    for group in groups:
        accs, inds = [], []
        for seed in seeds:
            hp = apply_ablation(base_hp, group)
            hp = HyperParams.from_dict({**hp.as_dict(), "seed": seed})
            run_cfg = dict(resolved)
            run_cfg["hyperparams"] = hp.as_dict()
            run_dir = out_dir / f"{group}_seed{seed}"
            _, _, _, metrics, _ = _train_once(run_cfg, run_dir)
            if metrics["acc"] is None:
                raise ConfigError("ablation requires target ground-truth labels")
            accs.append(metrics["acc"]["accuracy"])
            inds.append(metrics["ind"]["accuracy"] if metrics["ind"] else float("nan"))
        rows.append([
            group, str(len(seeds)),
            repr(float(np.mean(accs))), repr(float(np.std(accs))),
            repr(float(np.mean(inds))), repr(float(np.std(inds))),
        ])
    header = "group,n_seeds,acc_accuracy_mean,acc_accuracy_std,ind_accuracy_mean,ind_accuracy_std"
    table = "\n".join([header] + [",".join(r) for r in rows]) + "\n"
    (out_dir / "ablation.csv").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    resolved = resolve_config(load_config(args.config))
    model, hp = load_checkpoint(args.checkpoint)
    task = build_task(resolved["task"])
    if task.k < 2:
        raise ConfigError("diagnostics need K >= 2")
    if model.dims.d_s != task.d_s or model.dims.d_t != task.d_t:
        print(
            f"error: checkpoint dims (d_s={model.dims.d_s}, d_t={model.dims.d_t}) "
            f"do not match task (d_s={task.d_s}, d_t={task.d_t})",
            file=sys.stderr,
        )
        return EXIT_RUNTIME
    f_s = project(model, task.source.features, "source").data
    f_t = project(model, task.target.features, "target").data
    dd = fit_dandelion(f_s, task.source_labels, task.k)
    membership = assign_membership(f_t, dd)
    assigned = membership.assignments <= task.k
    combined = np.vstack([f_s, f_t[assigned]])
    combined_labels = np.concatenate([task.source_labels, membership.assignments[assigned]])
    payload = {
        "sp": separability_sp(f_s, f_t, task.source_labels, membership, task.k),
        "avg_dmax": average_compactness(combined, combined_labels, task.k),
        "unknown_fraction": membership.unknown_fraction(task.k),
    }
    if args.out:
        _write_json(Path(args.out), payload)
    print(json.dumps(payload, indent=1, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dandelion",
        description="Open-set heterogeneous domain adaptation for intrusion detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic open-set task to disk")
    p.add_argument("--k", type=int, required=True, help="shared category count (>= 2)")
    p.add_argument("--unknown", type=int, default=2, help="target-only category count")
    p.add_argument("--n", type=int, default=100, help="instances per category")
    p.add_argument("--d-s", dest="d_s", type=int, default=20)
    p.add_argument("--d-t", dest="d_t", type=int, default=16)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override config output_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("acc", "ind", "both"), default="both")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run ablation groups x seeds, emit a table")
    p.add_argument("--config", required=True)
    p.add_argument("--groups", required=True, help="comma-separated ids, e.g. full,D,F")
    p.add_argument("--seeds", required=True, help="comma-separated integers")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("diagnose", help="SP and compactness of a checkpoint on a task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DandelionError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
