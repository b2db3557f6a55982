"""Hermitian positive definite matrix algebra, batched over leading axes."""
from __future__ import annotations

import numpy as np

HERMITIAN_RTOL = 1e-10
EIG_FLOOR = 1e-12


class NotPositiveDefinite(ValueError):
    pass


def symmetrize(A: np.ndarray) -> np.ndarray:
    """Return ``(A + A*) / 2`` after checking that ``A`` is Hermitian to tolerance."""
    A = np.asarray(A)
    if A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got trailing shape {A.shape[-2:]}")
    AH = np.conj(np.swapaxes(A, -1, -2))
    scale = np.linalg.norm(A, axis=(-2, -1))
    drift = np.linalg.norm(A - AH, axis=(-2, -1))
    if np.any(drift > HERMITIAN_RTOL * np.maximum(scale, 1e-300)):
        raise ValueError("matrix is not Hermitian")
    return 0.5 * (A + AH)


def hermitian_eig(A: np.ndarray):
    """Eigendecomposition of Hermitian PD matrices; rejects small eigenvalues.

    Eigenvalues below ``1e-12 * lambda_max`` are an error, never clamped.
    """
    H = symmetrize(A)
    if not np.all(np.isfinite(H)):
        raise NotPositiveDefinite("not positive definite: non-finite entries")
    lam, P = np.linalg.eigh(H)
    top = lam[..., -1:]
    if np.any(lam[..., :1] <= EIG_FLOOR * np.maximum(top, 0)) or np.any(top <= 0):
        raise NotPositiveDefinite("not positive definite")
    return lam, P


def matrix_power(A: np.ndarray, alpha: float) -> np.ndarray:
    """Spectral power ``P diag(lambda**alpha) P*`` of Hermitian PD matrices.

    Works on a single ``(m, m)`` matrix or any stack ``(..., m, m)``.

    >>> matrix_power(np.diag([4.0, 9.0]), 0.5).real
    array([[2., 0.],
           [0., 3.]])
    """
    lam, P = hermitian_eig(A)
    out = (P * lam[..., None, :] ** alpha) @ np.conj(np.swapaxes(P, -1, -2))
    if np.isrealobj(A):
        out = out.real
    return out


def matrix_powers(A: np.ndarray, alphas) -> list[np.ndarray]:
    """Several powers from one decomposition."""
    lam, P = hermitian_eig(A)
    PH = np.conj(np.swapaxes(P, -1, -2))
    out = []
    for a in alphas:
        M = (P * lam[..., None, :] ** a) @ PH
        out.append(M.real if np.isrealobj(A) else M)
    return out


def operator_norm(A: np.ndarray) -> np.ndarray | float:
    """Largest singular value, batched over leading axes."""
    A = np.asarray(A)
    if A.shape[-2:] == (1, 1):
        out = np.abs(A[..., 0, 0])
    elif A.shape[-1] == 2 and A.shape[-2] == 2:
        out = _norm_2x2(A)
    else:
        G = np.conj(np.swapaxes(A, -1, -2)) @ A
        out = np.sqrt(np.maximum(np.linalg.eigvalsh(G)[..., -1], 0.0))
    return float(out) if np.ndim(out) == 0 else out


def _norm_2x2(A: np.ndarray) -> np.ndarray:
    # top eigenvalue of the Gram matrix A*A, written without cancellation
    a, b = A[..., 0, 0], A[..., 0, 1]
    c, d = A[..., 1, 0], A[..., 1, 1]
    g11 = np.abs(a) ** 2 + np.abs(c) ** 2
    g22 = np.abs(b) ** 2 + np.abs(d) ** 2
    g12 = np.conj(a) * b + np.conj(c) * d
    disc = np.hypot(g11 - g22, 2 * np.abs(g12))
    return np.sqrt(0.5 * (g11 + g22 + disc))


def is_positive_definite(A: np.ndarray) -> bool:
    try:
        hermitian_eig(A)
    except ValueError:
        return False
    return True
