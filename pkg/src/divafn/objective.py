"""Unified training objective and its analytic representation gradients.

Notation: ``F``, ``H``, ``G`` are the ``d x n`` image, keyframe and video
representations, ``E = [H; G]``. ``M1`` pairs images with videos, ``M2``
images with keyframes, ``M3`` keyframes with videos. ``S`` is the ``k x n``
per-sample semantic matrix.

The pairwise loss is the negative log-likelihood of a Bernoulli model with
success probability ``sigmoid(theta)``, ``theta = 0.5 * <a, b>``::

    nll = sum softplus(theta) - M * theta

and every gradient below is the exact derivative of that form.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError
from .matrixcore import sigmoid, stable_softplus


@dataclass
class Hyperparams:
    a: float = 0.1      # image-video similarity weight
    b: float = 0.1      # image-keyframe similarity weight
    c: float = 1.0      # keyframe-video similarity weight
    beta: float = 0.1   # decoder weight
    lam: float = 0.01   # encoder weight
    d: int = 64
    lr: float = 1e-4
    batch: int = 64
    iters: int = 100

    def validate(self, autoencoders=True):
        for name in ("a", "b", "c", "beta", "lam"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ContractError(f"{name} must be finite and >= 0, got {v!r}")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ContractError(f"lr must be positive, got {self.lr!r}")
        for name in ("d", "batch"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be >= 1")
        if int(self.iters) < 0:
            raise ContractError("iters must be >= 0")
        if autoencoders and self.beta == 0 and self.lam == 0:
            raise ContractError("beta and lam cannot both be zero with autoencoders enabled")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Similarities:
    M1: np.ndarray  # images x videos
    M2: np.ndarray  # images x keyframes
    M3: np.ndarray  # keyframes x videos


def pair_scores(A, B):
    """``0.5 * A^T B``: entry (i, k) is half the inner product of columns."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise ContractError(f"representation dims differ: {A.shape} vs {B.shape}")
    return 0.5 * (A.T @ B)


def nll_pair_loss(scores, M, weight=1.0):
    scores = np.asarray(scores, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if scores.shape != M.shape:
        raise ContractError(f"scores {scores.shape} and similarity {M.shape} differ")
    return float(weight * np.sum(stable_softplus(scores) - M * scores))


def sae_penalty(R, W, S, beta, lam):
    """``beta ||R - W^T S||^2 + lam ||W R - S||^2`` (Frobenius)."""
    R, W, S = (np.asarray(x, dtype=np.float64) for x in (R, W, S))
    if W.shape != (S.shape[0], R.shape[0]) or R.shape[1] != S.shape[1]:
        raise ContractError(
            f"sae shapes do not conform: R {R.shape}, W {W.shape}, S {S.shape}")
    dec = R - W.T @ S
    enc = W @ R - S
    return float(beta * np.sum(dec * dec) + lam * np.sum(enc * enc))


def objective_terms(F, H, G, sae, S, sims, hp, E=None):
    """Each summand of the unified objective, keyed by name."""
    stacked = np.vstack([H, G])
    if E is None:
        E = stacked
    elif np.shape(E) != stacked.shape or not np.array_equal(E, stacked):
        raise ContractError("E must equal the vertical stack [H; G]")
    terms = {
        "nll_FG": nll_pair_loss(pair_scores(F, G), sims.M1, hp.a),
        "nll_FH": nll_pair_loss(pair_scores(F, H), sims.M2, hp.b),
        "nll_HG": nll_pair_loss(pair_scores(H, G), sims.M3, hp.c),
    }
    for key, R, W in (("sae_F", F, sae.W_F), ("sae_H", H, sae.W_H),
                      ("sae_G", G, sae.W_G), ("sae_E", E, sae.W_E)):
        terms[key] = sae_penalty(R, W, S, hp.beta, hp.lam)
    return terms


def total_objective(F, H, G, sae, S, sims, hp, E=None, strict=False):
    """Value of the unified objective.

    With ``strict=True`` the joint-autoencoder penalty is left out; that is
    the function whose gradients are the ``strict`` gradients below.
    """
    terms = objective_terms(F, H, G, sae, S, sims, hp, E)
    if strict:
        terms.pop("sae_E")
    # fixed summation order
    return float(sum(terms[k] for k in sorted(terms)))


def _sae_grad(R, W, S, beta, lam):
    return 2.0 * beta * (R - W.T @ S) + 2.0 * lam * (W.T @ (W @ R - S))


def _cols(cols, n):
    cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
    if cols.size and (cols.min() < 0 or cols.max() >= n):
        raise ContractError(f"column index out of range [0, {n})")
    return cols


def grad_F_batch(cols, F, H, G, sims, sae, S, hp):
    """``dJ/dF[:, cols]`` as a ``d x len(cols)`` matrix."""
    cols = _cols(cols, F.shape[1])
    Fi = F[:, cols]
    r1 = sigmoid(pair_scores(Fi, G)) - sims.M1[cols]      # b x n
    r2 = sigmoid(pair_scores(Fi, H)) - sims.M2[cols]
    g = 0.5 * hp.a * (G @ r1.T) + 0.5 * hp.b * (H @ r2.T)
    return g + _sae_grad(Fi, sae.W_F, S[:, cols], hp.beta, hp.lam)


def grad_H_batch(cols, F, H, G, sims, sae, S, hp, strict=False):
    cols = _cols(cols, H.shape[1])
    Hj = H[:, cols]
    r2 = sigmoid(pair_scores(F, Hj)) - sims.M2[:, cols]   # n x b
    r3 = sigmoid(pair_scores(Hj, G)) - sims.M3[cols]      # b x n
    g = 0.5 * hp.b * (F @ r2) + 0.5 * hp.c * (G @ r3.T)
    g += _sae_grad(Hj, sae.W_H, S[:, cols], hp.beta, hp.lam)
    if not strict:
        d = H.shape[0]
        Ej = np.vstack([Hj, G[:, cols]])
        g += _sae_grad(Ej, sae.W_E, S[:, cols], hp.beta, hp.lam)[:d]
    return g


def grad_G_batch(cols, F, H, G, sims, sae, S, hp, strict=False):
    cols = _cols(cols, G.shape[1])
    Gk = G[:, cols]
    r1 = sigmoid(pair_scores(F, Gk)) - sims.M1[:, cols]   # n x b
    r3 = sigmoid(pair_scores(H, Gk)) - sims.M3[:, cols]
    g = 0.5 * hp.a * (F @ r1) + 0.5 * hp.c * (H @ r3)
    g += _sae_grad(Gk, sae.W_G, S[:, cols], hp.beta, hp.lam)
    if not strict:
        d = G.shape[0]
        Ek = np.vstack([H[:, cols], Gk])
        g += _sae_grad(Ek, sae.W_E, S[:, cols], hp.beta, hp.lam)[d:]
    return g


def grad_F(i, F, H, G, sims, sae, S, hp):
    """Gradient of the objective with respect to image representation column ``i``."""
    return grad_F_batch([i], F, H, G, sims, sae, S, hp)[:, 0]


def grad_H(j, F, H, G, sims, sae, S, hp, strict=False):
    return grad_H_batch([j], F, H, G, sims, sae, S, hp, strict)[:, 0]


def grad_G(k, F, H, G, sims, sae, S, hp, strict=False):
    return grad_G_batch([k], F, H, G, sims, sae, S, hp, strict)[:, 0]
