"""Fused semantic features, a linear one-vs-rest hinge classifier, and metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import featnets
from .errors import ContractError


def fuse(model, keyframes, videos):
    """Per-sample features for classification.

    ``full`` models stack the three encoder outputs ``[W_H h; W_G g; W_E [h; g]]``
    (``3k x n``) over the network representations; ``DIVF`` does the same
    over the raw inputs. ``DIVA`` models have no trained encoders and return
    the learned ``[h; g]``; ``KVC`` returns the raw ``[keyframes; videos]``.
    """
    Y = np.asarray(keyframes, dtype=np.float64)
    Z = np.asarray(videos, dtype=np.float64)
    if Y.ndim != 2 or Z.ndim != 2 or Y.shape[1] != Z.shape[1]:
        raise ContractError(f"keyframes {Y.shape} and videos {Z.shape} must be aligned")
    if model.mode == "KVC":
        return np.vstack([Y, Z])
    if model.mode == "DIVF":
        H, G = Y, Z
    else:
        H = featnets.forward(model.theta_y, Y)
        G = featnets.forward(model.theta_z, Z)
    if model.mode == "DIVA":
        return np.vstack([H, G])
    sae = model.sae
    return np.vstack([sae.W_H @ H, sae.W_G @ G, sae.W_E @ np.vstack([H, G])])


@dataclass(frozen=True)
class LinearClassifier:
    weight: np.ndarray  # classes x features
    bias: np.ndarray    # classes
    reg: float
    seed: int = 0

    def scores(self, B):
        B = np.asarray(B, dtype=np.float64)
        if B.shape[0] != self.weight.shape[1]:
            raise ContractError(f"classifier expects {self.weight.shape[1]} features, got {B.shape[0]}")
        return self.weight @ B + self.bias[:, None]

    def predict(self, B):
        return np.argmax(self.scores(B), axis=0)

    @property
    def num_classes(self):
        return self.weight.shape[0]


def _standardize(B):
    mu = B.mean(axis=1)
    sd = B.std(axis=1)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return mu, sd


def hinge_objective(W, b, Xs, Y, reg):
    """Per-class ``reg/2 ||w||^2 + mean(max(0, 1 - y (w.x + b)))`` on standardized ``Xs``."""
    margins = Y * (W @ Xs + b[:, None])
    return 0.5 * reg * np.sum(W * W, axis=1) + np.maximum(0.0, 1.0 - margins).mean(axis=1)


def train_classifier(B, labels, reg=1.0, seed=0, iters=500, num_classes=None):
    """One-vs-rest linear SVMs by full-batch subgradient descent.

    Features are standardized with training statistics (folded back into the
    returned weights). Each class minimizes ``reg/2 ||w||^2 + mean hinge``
    with step ``1 / (reg (t + 1))`` for ``iters`` steps; the returned
    weights average the second half of the iterates. The procedure has no
    random component, ``seed`` is only recorded.
    """
    B = np.asarray(B, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if B.ndim != 2 or labels.shape != (B.shape[1],):
        raise ContractError(f"features {B.shape} and labels {labels.shape} are not aligned")
    if np.unique(labels).size < 2:
        raise ContractError("train_classifier needs at least two classes")
    if not reg > 0:
        raise ContractError(f"reg must be positive, got {reg}")
    C = int(num_classes if num_classes is not None else labels.max() + 1)
    mu, sd = _standardize(B)
    Xs = (B - mu[:, None]) / sd[:, None]
    n = Xs.shape[1]
    Y = np.where(labels[None, :] == np.arange(C)[:, None], 1.0, -1.0)
    W = np.zeros((C, Xs.shape[0]))
    b = np.zeros(C)
    W_avg, b_avg, count = np.zeros_like(W), np.zeros_like(b), 0
    for t in range(iters):
        active = (Y * (W @ Xs + b[:, None]) < 1.0) * Y     # C x n
        gW = reg * W - (active @ Xs.T) / n
        gb = -active.sum(axis=1) / n
        step = 1.0 / (reg * (t + 1))
        W = W - step * gW
        b = b - step * gb
        if t >= iters // 2:
            W_avg += W
            b_avg += b
            count += 1
    W_avg /= count
    b_avg /= count
    weight = W_avg / sd[None, :]
    bias = b_avg - weight @ mu
    return LinearClassifier(weight, bias, float(reg), int(seed))


@dataclass
class Metrics:
    accuracy: float
    per_class: list
    confusion: list

    def to_json(self):
        return {"accuracy": self.accuracy, "per_class": self.per_class, "confusion": self.confusion}


METRICS_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "per_class", "confusion"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "per_class": {"type": "array", "items": {"type": ["number", "null"]}},
        "confusion": {"type": "array",
                      "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
    },
}


def confusion_matrix(true, pred, C):
    cm = np.zeros((C, C), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def evaluate(clf, B, labels):
    """Accuracy, per-class recall (``None`` for absent classes), confusion[true][pred]."""
    labels = np.asarray(labels, dtype=np.int64)
    pred = clf.predict(B)
    C = max(clf.num_classes, int(labels.max()) + 1 if labels.size else 0)
    cm = confusion_matrix(labels, pred, C)
    support = cm.sum(axis=1)
    per_class = [float(cm[c, c] / support[c]) if support[c] else None for c in range(C)]
    acc = float(np.trace(cm) / labels.size) if labels.size else 0.0
    return Metrics(acc, per_class, cm.tolist())
