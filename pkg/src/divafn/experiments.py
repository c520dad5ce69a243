"""Train/held-out splits and the mode comparison used by ``ablate``."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .datamodel import stratified_subset
from .fusionclassify import evaluate, fuse, train_classifier
from .trainer import ABLATIONS, train

# Small-sample regime for the 10% comparisons: with ~4 training columns per
# class the default step size barely moves the networks in 100 iterations.
SMALL_SAMPLE_LR = 1e-3
SMALL_SAMPLE_ITERS = 300

COLUMNS = ("video", "KVC", "DIVA", "DIVF", "full")


def split(labels, ratio, seed):
    """Seeded stratified training indices and their complement."""
    train_idx = stratified_subset(labels, ratio, seed)
    held_idx = np.setdiff1d(np.arange(len(labels)), train_idx)
    return train_idx, held_idx


def classify(B_train, y_train, B_test, y_test, reg=1.0, iters=500, seed=0, num_classes=None):
    clf = train_classifier(B_train, y_train, reg=reg, seed=seed, iters=iters,
                           num_classes=num_classes)
    return clf, evaluate(clf, B_test, y_test)


def video_baseline(dataset, train_idx, held_idx, reg=1.0, iters=500):
    """Held-out accuracy of the linear classifier on raw video features alone."""
    tr, te = dataset.subset(train_idx), dataset.subset(held_idx)
    _, m = classify(tr.videos, tr.labels, te.videos, te.labels, reg, iters,
                    num_classes=dataset.num_classes)
    return m.accuracy


def mode_run(dataset, table, cfg, train_idx, held_idx, reg=1.0, iters=500):
    """Train ``cfg.ablation`` on the training columns; returns (model, train metrics, held-out metrics)."""
    tr, te = dataset.subset(train_idx), dataset.subset(held_idx)
    model = train(tr, table, cfg)
    B_tr = fuse(model, tr.keyframes, tr.videos)
    clf = train_classifier(B_tr, tr.labels, reg=reg, seed=cfg.seed, iters=iters,
                           num_classes=dataset.num_classes)
    on_train = evaluate(clf, B_tr, tr.labels)
    on_held = evaluate(clf, fuse(model, te.keyframes, te.videos), te.labels) if te.n else None
    return model, on_train, on_held


def ablation(dataset, table, cfg, ratio, seeds, reg=1.0, iters=500, modes=ABLATIONS, log=None):
    """Held-out accuracy per seed for the video baseline and every mode.

    Seed ``s`` fixes both the split and the training run. Returns
    ``{column: [accuracy per seed]}``.
    """
    out = {c: [] for c in ("video",) + tuple(modes)}
    for s in seeds:
        train_idx, held_idx = split(dataset.labels, ratio, s)
        out["video"].append(video_baseline(dataset, train_idx, held_idx, reg, iters))
        for mode in modes:
            run_cfg = replace(cfg, ablation=mode, seed=int(s))
            _, _, held = mode_run(dataset, table, run_cfg, train_idx, held_idx, reg, iters)
            out[mode].append(held.accuracy)
            if log is not None:
                log(f"ratio {ratio:g} seed {s} {mode}: {held.accuracy:.4f}")
    return out


def format_table(results):
    """Mean accuracy (percent) per ratio; ``results`` maps ratio -> ablation output."""
    cols = [c for c in COLUMNS if any(c in r for r in results.values())]
    head = "ratio  " + "  ".join(f"{c:>6}" for c in cols)
    lines = [head, "-" * len(head)]
    for ratio in sorted(results):
        r = results[ratio]
        cells = [f"{100 * np.mean(r[c]):6.1f}" if c in r else f"{'-':>6}" for c in cols]
        lines.append(f"{ratio:<5g}  " + "  ".join(cells))
    return "\n".join(lines)
