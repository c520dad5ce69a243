"""Closed-form updates for the four tied-weight semantic autoencoders.

Each encoder ``W`` (``k x m``) minimizes ``beta ||R - W^T S||^2 + lam ||W R - S||^2``
for fixed inputs ``R`` (``m x n``). Setting the gradient to zero gives the
Sylvester equation ``(beta S S^T) W + W (lam R R^T) = (beta + lam) S R^T``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericalError
from .matrixcore import solve_sylvester

log = logging.getLogger(__name__)

RIDGE_SCALE = 1e-10


@dataclass(frozen=True)
class SaeWeights:
    """Encoders ``W_F, W_H, W_G`` (``k x d`` each) and ``W_E`` (``k x 2d``).

    DIVF models encode raw input features instead, so widths may differ per
    modality; ``W_E`` always spans ``W_H`` and ``W_G`` side by side.
    """

    W_F: np.ndarray
    W_H: np.ndarray
    W_G: np.ndarray
    W_E: np.ndarray

    def __post_init__(self):
        k = self.W_F.shape[0]
        for name in ("W_H", "W_G", "W_E"):
            if getattr(self, name).ndim != 2 or getattr(self, name).shape[0] != k:
                raise ContractError(f"{name} must have {k} rows, got {getattr(self, name).shape}")
        width = self.W_H.shape[1] + self.W_G.shape[1]
        if self.W_E.shape[1] != width:
            raise ContractError(f"W_E must be {k}x{width}, got {self.W_E.shape}")

    @classmethod
    def zeros(cls, k, d, widths=None):
        """All-zero encoders; ``widths`` overrides the (F, H, G) input widths."""
        wf, wh, wg = widths or (d, d, d)
        return cls(np.zeros((k, wf)), np.zeros((k, wh)), np.zeros((k, wg)), np.zeros((k, wh + wg)))

    def as_dict(self):
        return {"W_F": self.W_F, "W_H": self.W_H, "W_G": self.W_G, "W_E": self.W_E}


def sylvester_terms(R, S, beta, lam):
    """Coefficients ``(A, B, C)`` of the stationarity equation ``A W + W B = C``."""
    return beta * (S @ S.T), lam * (R @ R.T), (beta + lam) * (S @ R.T)


def stationarity_residual(W, R, S, beta, lam):
    """``beta S S^T W + lam W R R^T - (beta + lam) S R^T``; zero at the optimum."""
    A, B, C = sylvester_terms(R, S, beta, lam)
    return A @ W + W @ B - C


def solve_w(R, S, beta, lam, stats=None):
    """Optimal encoder for inputs ``R`` and semantic targets ``S``.

    When the Sylvester operator is singular (``S S^T`` and ``R R^T`` share a
    null direction) a ridge ``eps * I`` with ``eps = 1e-10 * trace scale`` is
    added to ``A`` and the solve retried once. ``stats``, if given, is a dict
    whose ``"ridge"`` count is incremented when that happens.
    """
    R = np.asarray(R, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if R.ndim != 2 or S.ndim != 2 or R.shape[1] != S.shape[1] or R.shape[1] < 1:
        raise ContractError(f"R {R.shape} and S {S.shape} need the same positive column count")
    if beta < 0 or lam < 0 or beta == lam == 0:
        raise ContractError("beta, lam must be >= 0 and not both zero")
    A, B, C = sylvester_terms(R, S, beta, lam)
    try:
        return solve_sylvester(A, B, C)
    except NumericalError as first:
        k, m = C.shape
        eps = RIDGE_SCALE * max(np.trace(A) / k, np.trace(B) / m, 1.0)
        log.info("sylvester solve failed (%s); retrying with ridge %.3e", first, eps)
        if stats is not None:
            stats["ridge"] = stats.get("ridge", 0) + 1
        return solve_sylvester(A + eps * np.eye(k), B, C)


def update_all(F, H, G, S, beta, lam, stats=None):
    """Solve all four encoders; ``E = [H; G]`` is formed here."""
    E = np.vstack([H, G])
    return SaeWeights(
        solve_w(F, S, beta, lam, stats),
        solve_w(H, S, beta, lam, stats),
        solve_w(G, S, beta, lam, stats),
        solve_w(E, S, beta, lam, stats),
    )
