"""Symmetric eigendecomposition and spectral matrix functions with exact differentials.

All routines accept a single matrix ``(n, n)`` or a stack ``(..., n, n)`` and
work in float64. Eigenvalues are returned in ascending order; eigenvector
signs are whatever the Jacobi solver produces and callers must not rely on
them.
"""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from . import _kernels
from .errors import DomainError, InvalidInput, NumericalFailure

MAX_SWEEPS = 30

ScalarFn = Callable[[np.ndarray], np.ndarray]


class EigenPair(NamedTuple):
    """Eigenvalues (ascending, shape ``(..., n)``) and eigenvectors as columns."""

    eigvals: np.ndarray
    eigvecs: np.ndarray

    def reconstruct(self, values: np.ndarray | None = None) -> np.ndarray:
        """Return ``U diag(values) U^T`` (defaults to the stored eigenvalues)."""
        lam = self.eigvals if values is None else values
        u = self.eigvecs
        return symmetrize((u * lam[..., None, :]) @ np.swapaxes(u, -1, -2))


def symmetrize(m: np.ndarray) -> np.ndarray:
    """(M + M^T) / 2 over the last two axes; the result is exactly symmetric."""
    m = np.asarray(m, dtype=np.float64)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _check_square(m: np.ndarray) -> None:
    if m.ndim < 2 or m.shape[-1] != m.shape[-2] or m.shape[-1] < 1:
        raise InvalidInput(f"expected square matrices, got shape {m.shape}")


def eigh_sym(m: np.ndarray) -> EigenPair:
    """Deterministic symmetric eigendecomposition by cyclic Jacobi rotations.

    Parameters
    ----------
    m : ndarray, shape (..., n, n)
        Symmetric matrices. The input is symmetrized before decomposition.

    Returns
    -------
    EigenPair
        Ascending eigenvalues and orthonormal eigenvector columns. Ties keep
        the solver's column order.

    Raises
    ------
    InvalidInput
        Non-finite entries or non-square input.
    NumericalFailure
        The sweep cap was reached without annihilating the off-diagonal.
    """
    m = np.asarray(m, dtype=np.float64)
    _check_square(m)
    if not np.all(np.isfinite(m)):
        raise InvalidInput("eigh_sym: non-finite entries")
    n = m.shape[-1]
    batch = m.shape[:-2]
    flat = np.ascontiguousarray(symmetrize(m).reshape(-1, n, n))
    w, v, sweeps = _kernels.jacobi_eigh(flat, MAX_SWEEPS)
    if np.any(sweeps < 0):
        raise NumericalFailure(f"Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)
    return EigenPair(w.reshape(*batch, n), v.reshape(*batch, n, n))


def _apply(f: ScalarFn, lam: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        out = np.asarray(f(lam), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise DomainError("scalar function undefined on part of the spectrum")
    return out


def spd_fun(s: np.ndarray, f: ScalarFn, eig: EigenPair | None = None) -> np.ndarray:
    """Spectral function ``U diag(f(lambda)) U^T``.

    ``eig`` may carry a cached decomposition of ``s``; when given, ``s`` is
    not decomposed again.
    """
    if eig is None:
        eig = eigh_sym(s)
    return eig.reconstruct(_apply(f, eig.eigvals))


def loewner_matrix(lam: np.ndarray, f: ScalarFn, fprime: ScalarFn) -> np.ndarray:
    """Divided differences of ``f`` on the spectrum ``lam`` (shape ``(..., n)``).

    Pairs closer than ``1e-10 * max|lambda|`` use ``fprime`` at the midpoint.
    """
    fl = _apply(f, lam)
    li = lam[..., :, None]
    lj = lam[..., None, :]
    diff = li - lj
    tau = 1e-10 * np.max(np.abs(lam), axis=-1)[..., None, None]
    close = np.abs(diff) <= tau
    with np.errstate(divide="ignore", invalid="ignore"):
        quot = (fl[..., :, None] - fl[..., None, :]) / np.where(close, 1.0, diff)
    mid = _apply(fprime, 0.5 * (li + lj))
    return np.where(close, mid, quot)


def loewner_backward(
    s: np.ndarray,
    f: ScalarFn,
    fprime: ScalarFn,
    grad: np.ndarray,
    eig: EigenPair | None = None,
) -> np.ndarray:
    """Pull an upstream gradient back through ``spd_fun(s, f)``.

    Computes ``U (L * (U^T G U)) U^T`` with ``L`` the Loewner matrix of ``f``.
    ``s`` only needs to be symmetric; it is not decomposed when ``eig`` is
    supplied.
    """
    if eig is None:
        eig = eigh_sym(s)
    u = eig.eigvecs
    ut = np.swapaxes(u, -1, -2)
    inner = ut @ symmetrize(grad) @ u
    inner *= loewner_matrix(eig.eigvals, f, fprime)
    return symmetrize(u @ inner @ ut)


def validate_spd(m: np.ndarray, tol: float = 0.0) -> bool:
    """True iff every matrix is symmetric within ``tol`` and has min eigenvalue > ``tol``.

    Positive definiteness of ``M - tol*I`` is tested with a Cholesky
    factorization, which succeeds exactly when the smallest eigenvalue
    exceeds ``tol``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2] or not np.all(np.isfinite(m)):
        return False
    if np.max(np.abs(m - np.swapaxes(m, -1, -2)), initial=0.0) > tol:
        return False
    shifted = symmetrize(m) - tol * np.eye(m.shape[-1])
    try:
        np.linalg.cholesky(shifted)
    except np.linalg.LinAlgError:
        return False
    return True


# Scalar functions used throughout the network, paired with their derivatives.

def log_pair() -> tuple[ScalarFn, ScalarFn]:
    def f(x):
        return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), np.nan)

    def df(x):
        return np.where(x > 0, 1.0 / np.where(x > 0, x, 1.0), np.nan)

    return f, df


def exp_pair() -> tuple[ScalarFn, ScalarFn]:
    return np.exp, np.exp


def clamp_pair(eps: float) -> tuple[ScalarFn, ScalarFn]:
    def f(x):
        return np.maximum(x, eps)

    def df(x):
        return (x > eps).astype(np.float64)

    return f, df


def sym_log(s: np.ndarray, eig: EigenPair | None = None) -> np.ndarray:
    return spd_fun(s, log_pair()[0], eig)


def sym_exp(s: np.ndarray, eig: EigenPair | None = None) -> np.ndarray:
    return spd_fun(s, np.exp, eig)
