"""Adam in Euclidean space and on the Stiefel manifold of row-orthonormal matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure


@dataclass
class AdamState:
    """Moment buffers and hyperparameters for one parameter array."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64), **hyper)

    def _moments(self, grad: np.ndarray) -> np.ndarray:
        """Advance the moments with ``grad`` and return the bias-corrected step direction."""
        self.step += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1**self.step)
        v_hat = self.v / (1.0 - self.beta2**self.step)
        return m_hat / (np.sqrt(v_hat) + self.eps_adam)


def _check_finite(grad: np.ndarray) -> None:
    if not np.all(np.isfinite(grad)):
        raise NumericalFailure("non-finite gradient; update skipped")


def euclidean_adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """Bias-corrected Adam update. Returns the new parameter array.

    A non-finite gradient raises :class:`NumericalFailure` before any state
    is touched, so the caller can skip the update and carry on.
    """
    _check_finite(grad)
    return param - state.lr * state._moments(grad)


def stiefel_project_tangent(w: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Project ``g`` onto the tangent space at row-orthonormal ``w``: ``g - sym(g w^T) w``."""
    a = g @ w.T
    return g - 0.5 * (a + a.T) @ w


def stiefel_retract_qr(w: np.ndarray, xi: np.ndarray, step: float) -> np.ndarray:
    """Row-orthonormal factor of ``w + step * xi``.

    This is the unique ``Q`` with ``w + step * xi = L Q``, ``L`` lower
    triangular with positive diagonal (Gram-Schmidt on the rows).
    """
    y = w + step * xi
    q, r = np.linalg.qr(y.T)
    diag = np.diag(r)
    if np.any(np.abs(diag) <= 1e-12 * max(np.linalg.norm(y), 1e-300)) or not np.all(np.isfinite(diag)):
        raise NumericalFailure("QR retraction: rank-deficient update")
    return np.ascontiguousarray((q * np.sign(diag)).T)


@dataclass
class StiefelParam:
    w: np.ndarray
    adam: AdamState


def riemannian_adam_step(sp: StiefelParam, euclidean_grad: np.ndarray) -> StiefelParam:
    """One Riemannian Adam step on the Stiefel manifold.

    The Euclidean gradient is projected to the tangent space; moments are
    kept in ambient coordinates and the first moment is re-projected onto the
    tangent space at the new point after the QR retraction.
    """
    _check_finite(euclidean_grad)
    st = sp.adam
    xi = stiefel_project_tangent(sp.w, euclidean_grad)
    direction = stiefel_project_tangent(sp.w, st._moments(xi))
    w_new = stiefel_retract_qr(sp.w, direction, -st.lr)
    st.m = stiefel_project_tangent(w_new, st.m)
    sp.w = w_new
    return sp
