"""Dense matrix primitives: Sylvester solvers and stable scalar functions.

Matrices are plain float64 ``numpy.ndarray`` values. Every routine here is
pure and returns fresh arrays.
"""
import numpy as np
from scipy.linalg import schur, solve_triangular

from .errors import ContractError, NumericalError

RESIDUAL_TOL = 1e-8
ORACLE_MAX_UNKNOWNS = 4096
# separations |t_ii + r_jj| below this fraction of the operator scale count as singular
_SINGULAR_RTOL = 1e-14


def as_matrix(x, name="matrix"):
    """Coerce ``x`` to a finite 2-D float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractError(f"{name} contains NaN or infinity")
    return m


def _check_sylvester_args(A, B, C):
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    C = as_matrix(C, "C")
    if A.shape[0] != A.shape[1]:
        raise ContractError(f"A must be square, got {A.shape}")
    if B.shape[0] != B.shape[1]:
        raise ContractError(f"B must be square, got {B.shape}")
    if C.shape != (A.shape[0], B.shape[0]):
        raise ContractError(
            f"C must be {A.shape[0]}x{B.shape[0]} to match A and B, got {C.shape}")
    return A, B, C


def sylvester_residual(A, B, C, W):
    """Relative residual ``||AW + WB - C||_F / max(1, ||C||_F)``."""
    r = A @ W + W @ B - C
    return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(C)))


def _finish(A, B, C, W, method):
    if not np.all(np.isfinite(W)):
        raise NumericalError(f"{method}: solution is not finite", residual=np.inf)
    res = sylvester_residual(A, B, C, W)
    if res > RESIDUAL_TOL:
        raise NumericalError(
            f"{method}: relative residual {res:.3e} exceeds {RESIDUAL_TOL:.0e}",
            residual=res)
    return W


def solve_sylvester(A, B, C):
    """Solve ``A W + W B = C`` by the Bartels-Stewart method.

    Both coefficient matrices are reduced to complex Schur form,
    ``A = U T U^H`` and ``B = V R V^H``, which turns the equation into
    ``T Y + Y R = U^H C V``. Since ``R`` is upper triangular, column ``j`` of
    ``Y`` solves the triangular system ``(T + r_jj I) y_j = c_j - sum_{i<j} r_ij y_i``.

    Raises
    ------
    ContractError
        Shapes do not conform.
    NumericalError
        The operator is (numerically) singular or the residual contract
        ``||AW + WB - C||_F <= 1e-8 max(1, ||C||_F)`` is not met.
    """
    A, B, C = _check_sylvester_args(A, B, C)
    k, d = C.shape
    T, U = schur(A, output="complex")
    R, V = schur(B, output="complex")

    scale = max(np.abs(np.diag(T)).max(initial=0.0), np.abs(np.diag(R)).max(initial=0.0), 1e-300)
    gaps = np.abs(np.diag(T)[:, None] + np.diag(R)[None, :])
    worst = float(gaps.min())
    if worst <= _SINGULAR_RTOL * scale:
        raise NumericalError(
            f"bartels-stewart: spectra of A and -B overlap (min separation {worst:.3e})",
            residual=np.inf)

    F = U.conj().T @ C @ V
    Y = np.empty((k, d), dtype=np.complex128)
    eye = np.eye(k)
    for j in range(d):
        rhs = F[:, j] - Y[:, :j] @ R[:j, j]
        Y[:, j] = solve_triangular(T + R[j, j] * eye, rhs)
    W = (U @ Y @ V.conj().T).real
    return _finish(A, B, C, np.ascontiguousarray(W), "bartels-stewart")


def sylvester_oracle(A, B, C):
    """Solve ``A W + W B = C`` through the vectorized Kronecker system.

    ``(I_d kron A + B^T kron I_k) vec(W) = vec(C)`` with column-major ``vec``,
    solved densely. Independent of :func:`solve_sylvester`; limited to
    ``k*d <= 4096`` unknowns.
    """
    A, B, C = _check_sylvester_args(A, B, C)
    k, d = C.shape
    if k * d > ORACLE_MAX_UNKNOWNS:
        raise ContractError(
            f"oracle limited to {ORACLE_MAX_UNKNOWNS} unknowns, got {k}*{d}={k * d}")
    K = np.kron(np.eye(d), A) + np.kron(B.T, np.eye(k))
    try:
        w = np.linalg.solve(K, C.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"kronecker: singular system ({exc})", residual=np.inf) from exc
    W = w.reshape((k, d), order="F")
    return _finish(A, B, C, W, "kronecker")


def stable_softplus(x):
    """``log(1 + exp(x))`` without overflow; works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    """Logistic function evaluated without overflow for either sign."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out
