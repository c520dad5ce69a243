"""Command-line entry point.

Verbs: ``synth``, ``train``, ``eval``, ``gradcheck``, ``ablate``, ``report``.
All configs are flat JSON objects checked against one shared schema;
unknown keys are rejected so a misspelled hyperparameter never goes
unnoticed.

Exit codes: 0 success, 2 config, 3 divergence, 4 data or solver, 5 gradcheck.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import asdict, fields, replace
from pathlib import Path

import jsonschema
import numpy as np

from . import experiments
from .datamodel import SynthConfig, build_similarity, generate_synthetic, load_dataset, save_dataset
from .errors import ContractError, DivergenceError, FormatError, NumericalError, TrainingError
from .fusionclassify import METRICS_SCHEMA, evaluate, fuse, train_classifier
from .objective import (Hyperparams, Similarities, grad_F_batch, grad_G_batch, grad_H_batch,
                        total_objective)
from .saesolver import SaeWeights
from .trainer import ABLATIONS, TrainConfig, checkpoint, restore

log = logging.getLogger("divafn")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_DATA, EXIT_GRADCHECK = 0, 2, 3, 4, 5

GRADCHECK_TOL = 1e-4
GRADCHECK_STEP = 1e-5


class ConfigError(ContractError):
    pass


class GradcheckFailure(Exception):
    pass


_int = {"type": "integer", "minimum": 1}
_nonneg = {"type": "number", "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        # data generation
        "classes": {"type": "integer", "minimum": 2},
        "per_class": _int,
        "image_dim": _int,
        "keyframe_dim": _int,
        "video_dim": _int,
        "semantic_dim": _int,
        "latent_dim": _int,
        "noise": _nonneg,
        # training
        "a": _nonneg, "b": _nonneg, "c": _nonneg,
        "beta": _nonneg,
        "lambda": _nonneg,
        "d": _int,
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "batch": _int,
        "iters": {"type": "integer", "minimum": 0},
        "hidden": _int,
        "ablation": {"enum": list(ABLATIONS)},
        "ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "strict_paper_gradients": {"type": "boolean"},
        # classification
        "reg": {"type": "number", "exclusiveMinimum": 0},
        "classifier_iters": _int,
        # shared
        "seed": {"type": "integer", "minimum": 0},
    },
}

SYNTH_REQUIRED = ("classes", "per_class")
HP_KEYS = {"a": "a", "b": "b", "c": "c", "beta": "beta", "lambda": "lam", "d": "d",
           "lr": "lr", "batch": "batch", "iters": "iters"}


# ------------------------------------------------------------------ configs

def validate_config(cfg):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.path)
        raise ConfigError(f"config field {where}: {exc.message}" if where else
                          f"config: {exc.message}") from exc
    return cfg


def load_config(path, required=()):
    """Parse and validate a JSON config file (``None`` gives an empty config)."""
    if path is None:
        cfg = {}
    else:
        try:
            cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validate_config(cfg)
    missing = [k for k in required if k not in cfg]
    if missing:
        raise ConfigError(f"config is missing required field(s): {', '.join(missing)}")
    return cfg


def apply_flags(cfg, args):
    cfg = dict(cfg)
    for key in ("seed", "ablation", "iters"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    ratios = getattr(args, "ratio", None)
    if ratios:
        cfg["ratio"] = ratios[0]
    if getattr(args, "strict_paper_gradients", False):
        cfg["strict_paper_gradients"] = True
    return validate_config(cfg)


def synth_config(cfg):
    known = {f.name for f in fields(SynthConfig)}
    sc = SynthConfig(**{k: v for k, v in cfg.items() if k in known})
    try:
        sc.validate()
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    return sc


def train_config(cfg):
    hp = Hyperparams(**{attr: cfg[key] for key, attr in HP_KEYS.items() if key in cfg})
    tc = TrainConfig(hp=hp, ablation=cfg.get("ablation", "full"), seed=cfg.get("seed", 0),
                     hidden=cfg.get("hidden", 128),
                     checkpoint_every=cfg.get("checkpoint_every", 0),
                     strict_paper_gradients=cfg.get("strict_paper_gradients", False))
    try:
        tc.validate()
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    return tc


def _write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ----------------------------------------------------------------- commands

def cmd_synth(config, out, seed=None):
    cfg = load_config(config, SYNTH_REQUIRED)
    if seed is not None:
        cfg["seed"] = seed
    sc = synth_config(cfg)
    ds, table = generate_synthetic(sc, cfg.get("seed", 0))
    paths = save_dataset(ds, table, out)
    print(f"wrote {len(paths)} files to {out}: {ds.n} samples, {ds.num_classes} classes, "
          f"dims image={sc.image_dim} keyframe={sc.keyframe_dim} video={sc.video_dim}, "
          f"semantics={sc.semantic_dim}, noise={sc.noise:g}")
    return paths


def _check_dims(model, ds, table):
    pairs = (("image", model.theta_x.input_dim, ds.images.shape[0]),
             ("keyframe", model.theta_y.input_dim, ds.keyframes.shape[0]),
             ("video", model.theta_z.input_dim, ds.videos.shape[0]),
             ("semantic", model.k, table.dim))
    for name, want, got in pairs:
        if want != got:
            raise ContractError(
                f"checkpoint expects {name} dimension {want}, data has {got}")
    if model.mode == "DIVF":
        for name, W, rows in (("image", model.sae.W_F, ds.images.shape[0]),
                              ("keyframe", model.sae.W_H, ds.keyframes.shape[0]),
                              ("video", model.sae.W_G, ds.videos.shape[0])):
            if W.shape[1] != rows:
                raise ContractError(
                    f"checkpoint encoder expects {name} dimension {W.shape[1]}, data has {rows}")


def cmd_train(data, config, out, overrides=None):
    """Train on a stratified training split; write checkpoint.dvfn and report.json."""
    t0 = time.perf_counter()
    cfg = load_config(config)
    cfg = validate_config({**cfg, **(overrides or {})})
    tc = train_config(cfg)
    ratio = cfg.get("ratio", 1.0)
    reg = cfg.get("reg", 1.0)
    clf_iters = cfg.get("classifier_iters", 500)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if tc.checkpoint_every:
        tc = replace(tc, checkpoint_path=str(out / "checkpoint.dvfn"))

    t_load = time.perf_counter()
    ds, table = load_dataset(data)
    train_idx, held_idx = experiments.split(ds.labels, ratio, tc.seed)
    timings = {"load": time.perf_counter() - t_load}

    t_train = time.perf_counter()
    model, on_train, on_held = experiments.mode_run(ds, table, tc, train_idx, held_idx,
                                                    reg, clf_iters)
    timings["train_and_classify"] = time.perf_counter() - t_train
    model.meta.update({"train_idx": [int(i) for i in train_idx], "ratio": ratio,
                       "reg": reg, "classifier_iters": clf_iters})
    checkpoint(model, out / "checkpoint.dvfn")
    timings["total"] = time.perf_counter() - t0

    report = {
        "seed": tc.seed,
        "ablation": tc.ablation,
        "config": {**cfg, "ratio": ratio, "reg": reg, "classifier_iters": clf_iters,
                   "hp": asdict(tc.hp), "hidden": tc.hidden,
                   "strict_paper_gradients": tc.strict_paper_gradients},
        "initial_objective": model.initial_objective,
        "trace": [float(v) for v in model.trace],
        "splits": [{
            "ratio": ratio,
            "train_size": int(train_idx.size),
            "heldout_size": int(held_idx.size),
            "train_accuracy": on_train.accuracy,
            "heldout_accuracy": on_held.accuracy if on_held else None,
        }],
        "sae_solves": model.stats["sae_solves"],
        "ridge_fallbacks": model.stats["ridge"],
        "timings": timings,
    }
    _write_json(report, out / "report.json")
    held = f"{on_held.accuracy:.4f}" if on_held else "n/a"
    if model.trace:
        progress = f"objective {model.initial_objective:.6g} -> {model.trace[-1]:.6g}"
    else:
        progress = "no training"
    print(f"{tc.ablation}: {len(model.trace)} iterations, {progress}, held-out accuracy {held}")
    return report


def cmd_eval(ckpt, data, out, split="heldout", config=None):
    """Classifier on the checkpoint's training columns, scored on ``split``."""
    cfg = load_config(config)
    model = restore(ckpt)
    ds, table = load_dataset(data)
    _check_dims(model, ds, table)
    train_idx = np.asarray(model.meta.get("train_idx", np.arange(ds.n)), dtype=np.int64)
    if train_idx.size and train_idx.max() >= ds.n:
        raise ContractError(
            f"checkpoint training split references column {train_idx.max()}, data has {ds.n}")
    held_idx = np.setdiff1d(np.arange(ds.n), train_idx)
    eval_idx = {"heldout": held_idx, "train": train_idx, "all": np.arange(ds.n)}[split]
    if eval_idx.size == 0:
        raise ContractError(f"evaluation split {split!r} is empty")
    reg = cfg.get("reg", model.meta.get("reg", 1.0))
    iters = cfg.get("classifier_iters", model.meta.get("classifier_iters", 500))
    tr, te = ds.subset(train_idx), ds.subset(eval_idx)
    clf = train_classifier(fuse(model, tr.keyframes, tr.videos), tr.labels, reg=reg,
                           seed=model.seed, iters=iters, num_classes=ds.num_classes)
    metrics = evaluate(clf, fuse(model, te.keyframes, te.videos), te.labels)
    unseen = sorted(set(te.labels.tolist()) - set(tr.labels.tolist()))
    warnings = [f"class {c} ({ds.class_names[c]}) has no training samples; scored as-is"
                for c in unseen]
    for w in warnings:
        log.warning(w)
    result = {**metrics.to_json(), "split": split, "seed": model.seed,
              "ablation": model.mode, "warnings": warnings}
    jsonschema.validate(result, METRICS_SCHEMA)
    _write_json(result, out)
    print(f"{model.mode} on {split} split ({te.n} samples): accuracy {metrics.accuracy:.4f}")
    return result


def gradcheck_instance(cfg, seed=0, n=8, d=6, k=4, classes=3):
    """Random representations, encoders and labels for a finite-difference check."""
    rng = np.random.default_rng(seed)
    hp = Hyperparams(**{attr: cfg[key] for key, attr in HP_KEYS.items() if key in cfg}, d=d)
    labels = rng.integers(0, classes, n)
    M = build_similarity(labels, labels)
    sims = Similarities(M, M.copy(), M.copy())
    F, H, G = (rng.standard_normal((d, n)) for _ in range(3))
    table = rng.standard_normal((k, classes))
    S = table[:, labels] / np.linalg.norm(table[:, labels], axis=0)
    sae = SaeWeights(*(0.5 * rng.standard_normal((k, w)) for w in (d, d, d, 2 * d)))
    return F, H, G, sims, sae, S, hp


def _central_difference(fn, X, h):
    out = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        keep = X[idx]
        X[idx] = keep + h
        up = fn()
        X[idx] = keep - h
        down = fn()
        X[idx] = keep
        out[idx] = (up - down) / (2 * h)
    return out


def relative_errors(analytic, numeric):
    """Per-coordinate ``|a - f| / max(|a|, |f|, 1e-3 max|f|)``.

    The floor keeps coordinates whose true gradient is near zero from
    turning round-off into a large ratio.
    """
    floor = max(1e-3 * np.max(np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def cmd_gradcheck(config=None, seed=None, corrupt=False):
    """Finite-difference check of the column gradients in both gradient modes.

    Returns a list of result rows; raises :class:`GradcheckFailure` if any
    relative error exceeds the tolerance. ``corrupt`` adds 1e-2 to one
    coordinate of the keyframe gradient (used to test the harness).
    """
    cfg = load_config(config)
    seed = cfg.get("seed", 0) if seed is None else seed
    F, H, G, sims, sae, S, hp = gradcheck_instance(cfg, seed)
    n = F.shape[1]
    cols = np.arange(n)
    rows, worst = [], None
    for strict in (False, True):
        def objective():
            return total_objective(F, H, G, sae, S, sims, hp, strict=strict)

        analytic = {
            "grad_F": grad_F_batch(cols, F, H, G, sims, sae, S, hp),
            "grad_H": grad_H_batch(cols, F, H, G, sims, sae, S, hp, strict),
            "grad_G": grad_G_batch(cols, F, H, G, sims, sae, S, hp, strict),
        }
        if corrupt:
            analytic["grad_H"][0, 0] += 1e-2
        for name, X in (("grad_F", F), ("grad_H", H), ("grad_G", G)):
            numeric = _central_difference(objective, X, GRADCHECK_STEP)
            err = relative_errors(analytic[name], numeric)
            idx = np.unravel_index(np.argmax(err), err.shape)
            mode = "strict" if strict else "default"
            row = {"mode": mode, "gradient": name, "max_rel_error": float(err[idx]),
                   "worst": [int(i) for i in idx]}
            rows.append(row)
            print(f"{mode:8s} {name}: max relative error {err[idx]:.3e} at (row {idx[0]}, col {idx[1]})")
            if worst is None or row["max_rel_error"] > worst["max_rel_error"]:
                worst = row
    if worst["max_rel_error"] > GRADCHECK_TOL:
        raise GradcheckFailure(
            f"gradcheck failed: {worst['mode']} {worst['gradient']} coordinate "
            f"(row {worst['worst'][0]}, col {worst['worst'][1]}) has relative error "
            f"{worst['max_rel_error']:.3e} > {GRADCHECK_TOL:g}")
    print(f"gradcheck passed (tolerance {GRADCHECK_TOL:g})")
    return rows


def cmd_ablate(data, config, out, ratios=None, seeds=5, first_seed=0, overrides=None):
    cfg = validate_config({**load_config(config), **(overrides or {})})
    tc = train_config(cfg)
    reg = cfg.get("reg", 1.0)
    iters = cfg.get("classifier_iters", 500)
    ratios = ratios or [cfg.get("ratio", 0.1)]
    ds, table = load_dataset(data)
    seed_list = list(range(first_seed, first_seed + seeds))
    results = {}
    for r in ratios:
        results[r] = experiments.ablation(ds, table, tc, r, seed_list, reg, iters,
                                          log=lambda msg: log.info(msg))
    table_txt = experiments.format_table(results)
    print(table_txt)
    out = Path(out)
    _write_json({"seeds": seed_list, "config": cfg,
                 "results": {f"{r:g}": v for r, v in results.items()},
                 "mean": {f"{r:g}": {k: float(np.mean(v)) for k, v in res.items()}
                          for r, res in results.items()}},
                out / "ablation.json")
    (out / "ablation.txt").write_text(table_txt + "\n", encoding="utf-8")
    return results


def cmd_report(path):
    rep = json.loads(Path(path).read_text(encoding="utf-8"))
    print(f"ablation        {rep['ablation']}")
    print(f"seed            {rep['seed']}")
    trace = rep["trace"]
    print(f"iterations      {len(trace)}")
    if rep["initial_objective"] is not None:
        print(f"objective       {rep['initial_objective']:.6g} (init)"
              + (f" -> {trace[-1]:.6g} (final)" if trace else ""))
    for i in sorted(set(range(min(3, len(trace)))) | set(range(max(0, len(trace) - 3), len(trace)))):
        print(f"  iter {i:4d}    {trace[i]:.6g}")
    for s in rep["splits"]:
        held = s["heldout_accuracy"]
        print(f"ratio {s['ratio']:<8g}  train {s['train_size']:4d} acc {s['train_accuracy']:.4f}  "
              f"held-out {s['heldout_size']:4d} acc " + (f"{held:.4f}" if held is not None else "n/a"))
    print(f"sae solves      {rep['sae_solves']}")
    print(f"ridge fallbacks {rep['ridge_fallbacks']}")
    for k, v in sorted(rep.get("timings", {}).items()):
        print(f"time {k:<11s}{v:.2f}s")
    return rep


# --------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="divafn", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("synth", help="generate a synthetic tri-modal dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train one mode and write checkpoint + report")
    t.add_argument("data")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--ratio", type=float, nargs=1)
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--iters", type=int)
    t.add_argument("--strict-paper-gradients", action="store_true")

    e = sub.add_parser("eval", help="fuse, classify and score a trained checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("data")
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.add_argument("--split", choices=("heldout", "train", "all"), default="heldout")

    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    a = sub.add_parser("ablate", help="compare video-only, KVC, DIVA, DIVF and full")
    a.add_argument("data")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--ratio", type=float, nargs="+")
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--seed", type=int, default=0, help="first seed")
    a.add_argument("--iters", type=int)
    a.add_argument("--strict-paper-gradients", action="store_true")

    r = sub.add_parser("report", help="pretty-print a report.json")
    r.add_argument("path")
    return p


def _thread_limit():
    value = os.environ.get("DVFN_THREADS")
    if not value:
        return nullcontext()
    try:
        count = int(value)
    except ValueError:
        raise ConfigError(f"DVFN_THREADS must be a positive integer, got {value!r}") from None
    if count < 1:
        raise ConfigError(f"DVFN_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=count)


def _dispatch(args):
    if args.verb == "synth":
        cmd_synth(args.config, args.out, args.seed)
    elif args.verb == "train":
        overrides = apply_flags({}, args)
        cmd_train(args.data, args.config, args.out, overrides)
    elif args.verb == "eval":
        cmd_eval(args.checkpoint, args.data, args.out, args.split, args.config)
    elif args.verb == "gradcheck":
        cmd_gradcheck(args.config, args.seed, args.corrupt_gradient)
    elif args.verb == "ablate":
        overrides = apply_flags({}, argparse.Namespace(
            iters=args.iters, strict_paper_gradients=args.strict_paper_gradients))
        cmd_ablate(args.data, args.config, args.out, args.ratio, args.seeds, args.seed, overrides)
    elif args.verb == "report":
        cmd_report(args.path)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except GradcheckFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_GRADCHECK
    except (TrainingError, NumericalError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ContractError, FormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
