"""Alternating optimization of the three feature networks and four encoders.

One outer iteration runs seven steps: an SGD epoch on each of the image,
keyframe and video networks (in that order), then the closed-form solves for
``W_F``, ``W_H``, ``W_G`` and ``W_E``.

DIVF skips the networks and fits the encoders on the raw input features,
so its trace holds only the autoencoder terms.

Minibatches pick which columns receive gradient updates; the pairwise sums
always run over the full cached representations of the other modalities,
which are recomputed once after each network's epoch. The shuffle for outer
iteration ``t`` is drawn from ``default_rng([seed, t])`` so a run restored
from a checkpoint continues exactly like an uninterrupted one.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import featnets
from .datamodel import build_similarity, decode_feature_matrix, encode_feature_matrix, expand_semantics
from .errors import ContractError, DivergenceError, FormatError, NumericalError, TrainingError
from .objective import (Hyperparams, Similarities, grad_F_batch, grad_G_batch, grad_H_batch,
                        objective_terms, sae_penalty, total_objective)
from .saesolver import SaeWeights, solve_w

log = logging.getLogger(__name__)

ABLATIONS = ("full", "DIVA", "DIVF", "KVC")
THETA_STEPS = ("theta_x", "theta_y", "theta_z")
SAE_STEPS = ("W_F", "W_H", "W_G", "W_E")


@dataclass
class TrainConfig:
    hp: Hyperparams = field(default_factory=Hyperparams)
    ablation: str = "full"
    seed: int = 0
    hidden: int = 128
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    strict_paper_gradients: bool = False

    def validate(self):
        if self.ablation not in ABLATIONS:
            raise ContractError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.hidden < 1:
            raise ContractError("hidden must be >= 1")
        self.hp.validate(autoencoders=self.ablation in ("full", "DIVF"))

    def effective_hp(self):
        if self.ablation == "DIVA":
            return replace(self.hp, beta=0.0, lam=0.0)
        return self.hp


@dataclass
class Model:
    theta_x: featnets.NetworkParams
    theta_y: featnets.NetworkParams
    theta_z: featnets.NetworkParams
    sae: SaeWeights
    hp: Hyperparams
    mode: str = "full"
    seed: int = 0
    trace: list = field(default_factory=list)
    initial_objective: float | None = None
    stats: dict = field(default_factory=lambda: {"sae_solves": 0, "ridge": 0})
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.theta_x.output_dim

    @property
    def k(self):
        return self.sae.W_F.shape[0]


def init_model(dataset, table, cfg):
    cfg.validate()
    d, h = int(cfg.hp.d), int(cfg.hidden)
    acts = ["relu", "identity"]
    nets = [featnets.init_params([X.shape[0], h, d], acts, [cfg.seed, idx])
            for idx, X in enumerate((dataset.images, dataset.keyframes, dataset.videos))]
    widths = None
    if cfg.ablation == "DIVF":
        widths = (dataset.images.shape[0], dataset.keyframes.shape[0], dataset.videos.shape[0])
    return Model(*nets, sae=SaeWeights.zeros(table.dim, d, widths), hp=cfg.hp,
                 mode=cfg.ablation, seed=cfg.seed)


def similarities_for(labels):
    M = build_similarity(labels, labels)
    return Similarities(M, M.copy(), M.copy())


def representations(model, dataset):
    """``(F, H, G)`` the encoders see: network outputs, or raw inputs for DIVF."""
    if model.mode == "DIVF":
        return (np.array(dataset.images), np.array(dataset.keyframes), np.array(dataset.videos))
    return (featnets.forward(model.theta_x, dataset.images),
            featnets.forward(model.theta_y, dataset.keyframes),
            featnets.forward(model.theta_z, dataset.videos))


def _check_finite(iteration, step, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(
                f"non-finite values after {step} at iteration {iteration}; "
                "try a smaller learning rate", iteration, step)


def train(dataset, table, cfg, model=None, on_step=None):
    """Run ``cfg.hp.iters`` outer iterations and return the trained :class:`Model`.

    Passing ``model`` resumes from its ``len(trace)``-th iteration. ``on_step``
    is called as ``on_step(iteration, step_name, objective)`` after every step
    and once with step ``"init"`` before the first iteration.
    """
    cfg.validate()
    if dataset.n == 0:
        raise ContractError("dataset is empty")
    if table.num_classes < dataset.num_classes:
        raise ContractError(
            f"semantic table covers {table.num_classes} classes, dataset has {dataset.num_classes}")
    if model is None:
        model = init_model(dataset, table, cfg)
    elif model.mode != cfg.ablation:
        raise ContractError(f"checkpoint was trained as {model.mode}, config asks {cfg.ablation}")
    if cfg.ablation == "KVC":
        return model

    hp = cfg.effective_hp()
    strict = cfg.strict_paper_gradients
    S = expand_semantics(table, dataset.labels)
    sims = similarities_for(dataset.labels)
    F, H, G = representations(model, dataset)
    n = dataset.n
    batch = int(hp.batch)

    def objective():
        if cfg.ablation == "DIVF":
            return sae_objective(F, H, G, model.sae, S, hp)
        return total_objective(F, H, G, model.sae, S, sims, hp)

    if model.initial_objective is None:
        model.initial_objective = objective()
    if on_step is not None:
        on_step(len(model.trace), "init", objective())

    inputs = {"theta_x": dataset.images, "theta_y": dataset.keyframes, "theta_z": dataset.videos}
    for t in range(len(model.trace), int(hp.iters)):
        rng = np.random.default_rng([model.seed, t])
        if cfg.ablation in ("full", "DIVA"):
            for step in THETA_STEPS:
                X = inputs[step]
                params = getattr(model, step)
                perm = rng.permutation(n)
                for start in range(0, n, batch):
                    cols = perm[start:start + batch]
                    Xb = X[:, cols]
                    out = featnets.forward(params, Xb)
                    if step == "theta_x":
                        F[:, cols] = out
                        g = grad_F_batch(cols, F, H, G, sims, model.sae, S, hp)
                    elif step == "theta_y":
                        H[:, cols] = out
                        g = grad_H_batch(cols, F, H, G, sims, model.sae, S, hp, strict)
                    else:
                        G[:, cols] = out
                        g = grad_G_batch(cols, F, H, G, sims, model.sae, S, hp, strict)
                    params = featnets.backward_update(params, Xb, g, hp.lr)
                setattr(model, step, params)
                rep = featnets.forward(params, X)
                if step == "theta_x":
                    F = rep
                elif step == "theta_y":
                    H = rep
                else:
                    G = rep
                _check_finite(t, step, rep)
                if on_step is not None:
                    on_step(t, step, objective())
        if cfg.ablation in ("full", "DIVF"):
            sources = {"W_F": F, "W_H": H, "W_G": G, "W_E": np.vstack([H, G])}
            for step in SAE_STEPS:
                try:
                    W = solve_w(sources[step], S, hp.beta, hp.lam, model.stats)
                except NumericalError as exc:
                    raise TrainingError(
                        f"{step} solve failed at iteration {t} after ridge fallback: {exc}", t) from exc
                model.stats["sae_solves"] += 1
                model.sae = replace(model.sae, **{step: W})
                if on_step is not None:
                    on_step(t, step, objective())
        value = objective()
        if not np.isfinite(value):
            raise DivergenceError(f"objective is not finite at iteration {t}", t, "objective")
        model.trace.append(value)
        log.debug("iteration %d objective %.6g", t, value)
        if cfg.checkpoint_every and cfg.checkpoint_path and (t + 1) % cfg.checkpoint_every == 0:
            checkpoint(model, cfg.checkpoint_path)
    return model


def sae_objective(F, H, G, sae, S, hp):
    """Autoencoder part of the objective alone (what DIVF optimizes)."""
    E = np.vstack([H, G])
    return float(sum(sae_penalty(R, W, S, hp.beta, hp.lam)
                     for R, W in ((E, sae.W_E), (F, sae.W_F), (G, sae.W_G), (H, sae.W_H))))


def objective_breakdown(model, dataset, table, hp=None):
    hp = hp or model.hp
    F, H, G = representations(model, dataset)
    S = expand_semantics(table, dataset.labels)
    if model.mode == "DIVF":
        E = np.vstack([H, G])
        return {name: sae_penalty(R, W, S, hp.beta, hp.lam)
                for name, R, W in (("sae_F", F, model.sae.W_F), ("sae_H", H, model.sae.W_H),
                                   ("sae_G", G, model.sae.W_G), ("sae_E", E, model.sae.W_E))}
    return objective_terms(F, H, G, model.sae, S, similarities_for(dataset.labels), hp)


# ------------------------------------------------------------ DVFN1 checkpoints

DVFN_MAGIC = b"DVFN1"
DVFN_VERSION = 1
_LEN = struct.Struct("<Q")


def _blocks(model):
    for name in THETA_STEPS:
        for i, layer in enumerate(getattr(model, name).layers):
            yield f"{name}/{i}/weight", layer.weight
            yield f"{name}/{i}/bias", layer.bias.reshape(-1, 1)
    for name, W in model.sae.as_dict().items():
        yield f"sae/{name}", W


def encode_checkpoint(model):
    names, payload = [], []
    for name, m in _blocks(model):
        names.append(name)
        payload.append(encode_feature_matrix(m))
    manifest = {
        "version": DVFN_VERSION,
        "mode": model.mode,
        "seed": model.seed,
        "hp": model.hp.to_dict(),
        "trace": [float(v) for v in model.trace],
        "initial_objective": model.initial_objective,
        "stats": model.stats,
        "meta": model.meta,
        "networks": {n: {"dims": getattr(model, n).dims,
                         "activations": getattr(model, n).activations} for n in THETA_STEPS},
        "blocks": names,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return DVFN_MAGIC + _LEN.pack(len(head)) + head + b"".join(payload)


def decode_checkpoint(buf):
    if bytes(buf[:5]) != DVFN_MAGIC:
        raise FormatError("bad DVFN1 magic", 0)
    if len(buf) < 13:
        raise FormatError("truncated DVFN1 header", 5)
    (size,) = _LEN.unpack_from(buf, 5)
    if 13 + size > len(buf):
        raise FormatError("truncated DVFN1 manifest", 13)
    try:
        manifest = json.loads(bytes(buf[13:13 + size]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable DVFN1 manifest ({exc})", 13) from exc
    if manifest.get("version") != DVFN_VERSION:
        raise FormatError(f"unsupported DVFN1 version {manifest.get('version')!r}", 13)
    pos = 13 + size
    blocks = {}
    for name in manifest["blocks"]:
        blocks[name], pos = decode_feature_matrix(buf, pos)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after DVFN1 blocks", pos)
    nets = {}
    for net in THETA_STEPS:
        acts = manifest["networks"][net]["activations"]
        layers = tuple(
            featnets.Layer(blocks[f"{net}/{i}/weight"], blocks[f"{net}/{i}/bias"][:, 0], act)
            for i, act in enumerate(acts))
        nets[net] = featnets.NetworkParams(layers)
        if nets[net].dims != manifest["networks"][net]["dims"]:
            raise FormatError(f"{net} dims disagree with manifest", 13)
    sae = SaeWeights(*(blocks[f"sae/{n}"] for n in SAE_STEPS))
    return Model(nets["theta_x"], nets["theta_y"], nets["theta_z"], sae,
                 hp=Hyperparams(**manifest["hp"]), mode=manifest["mode"], seed=manifest["seed"],
                 trace=list(manifest["trace"]), initial_objective=manifest["initial_objective"],
                 stats=dict(manifest["stats"]), meta=dict(manifest["meta"]))


def checkpoint(model, path):
    Path(path).write_bytes(encode_checkpoint(model))


def restore(path):
    return decode_checkpoint(Path(path).read_bytes())
