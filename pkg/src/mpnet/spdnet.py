"""BiMap / ReEig / LogEig stack, tangent-space classifier and cross-entropy.

Every layer takes stacks of matrices ``(..., d, d)``. Forward functions
return whatever the matching backward needs; nothing is stored globally.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, InvalidInput
from .spd import EigenPair, clamp_pair, eigh_sym, log_pair, loewner_backward, symmetrize

DEFAULT_DIMS = (60, 30, 15)
DEFAULT_REEIG_EPS = 1e-4
_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SpdNetConfig:
    dims: tuple[int, ...] = DEFAULT_DIMS
    reeig_eps: float = DEFAULT_REEIG_EPS
    n_classes: int = 4

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 2 or any(a <= b for a, b in zip(dims, dims[1:])) or dims[-1] < 1:
            raise InvalidInput(f"spdnet dims must be strictly decreasing, got {dims}")
        if not self.reeig_eps > 0:
            raise InvalidInput("reeig_eps must be positive")
        if self.n_classes < 2:
            raise InvalidInput("need at least two classes")

    @property
    def n_features(self) -> int:
        d = self.dims[-1]
        return d * (d + 1) // 2


def init_bimap(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    """First ``d_out`` rows of a random orthogonal matrix (QR of a Gaussian, sign-fixed)."""
    q, r = np.linalg.qr(rng.standard_normal((d_in, d_in)))
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q.T[:d_out])


def bimap_forward(s: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``W S W^T`` for ``W`` of shape (d', d)."""
    if s.shape[-1] != w.shape[1]:
        raise InvalidInput(f"bimap: input dim {s.shape[-1]} does not match weight {w.shape}")
    return symmetrize(w @ s @ w.T)


def bimap_backward(s: np.ndarray, w: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dS, dW)``; ``dW`` keeps leading batch axes."""
    g = symmetrize(grad)
    return symmetrize(w.T @ g @ w), 2.0 * (g @ w) @ s


def reeig_forward(s: np.ndarray, eps: float, eig: EigenPair | None = None) -> tuple[np.ndarray, EigenPair]:
    """Clamp eigenvalues from below at ``eps``; returns the output and the input eigenpair."""
    if eig is None:
        eig = eigh_sym(s)
    return eig.reconstruct(np.maximum(eig.eigvals, eps)), eig


def reeig_backward(eig: EigenPair, eps: float, grad: np.ndarray) -> np.ndarray:
    return loewner_backward(None, *clamp_pair(eps), grad, eig=eig)


def logeig_forward(s: np.ndarray, eig: EigenPair | None = None) -> tuple[np.ndarray, EigenPair]:
    if eig is None:
        eig = eigh_sym(s)
    if np.any(eig.eigvals <= 0):
        raise DomainError("logeig: input is not positive definite")
    return eig.reconstruct(np.log(eig.eigvals)), eig


def logeig_backward(eig: EigenPair, grad: np.ndarray) -> np.ndarray:
    return loewner_backward(None, *log_pair(), grad, eig=eig)


def _triu(d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(d)
    scale = np.where(rows == cols, 1.0, _SQRT2)
    return rows, cols, scale


def vec_symmetric(m: np.ndarray) -> np.ndarray:
    """Row-major upper triangle with off-diagonals scaled by sqrt(2).

    The map is an isometry: ``||vec(M)||_2 == ||M||_F``.
    """
    rows, cols, scale = _triu(m.shape[-1])
    return m[..., rows, cols] * scale


def unvec_symmetric(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec_symmetric`. Also its adjoint, since the map is isometric."""
    v = np.asarray(v, dtype=np.float64)
    m = v.shape[-1]
    d = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if d * (d + 1) // 2 != m:
        raise InvalidInput(f"length {m} is not a triangular number")
    rows, cols, scale = _triu(d)
    out = np.zeros((*v.shape[:-1], d, d))
    vals = v / scale
    out[..., rows, cols] = vals
    out[..., cols, rows] = vals
    return out


def classify(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine classifier ``W x + b`` over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[1]:
        raise InvalidInput(f"classify: feature length {x.shape[-1]} does not match weight {weight.shape}")
    return (x[..., None, :] @ weight.T)[..., 0, :] + bias


def classify_backward(x: np.ndarray, weight: np.ndarray, dlogits: np.ndarray):
    """Return ``(dx, dW, db)`` with per-sample ``dW`` and ``db``."""
    dx = (dlogits[..., None, :] @ weight)[..., 0, :]
    return dx, dlogits[..., :, None] * x[..., None, :], dlogits.copy()


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    shift = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=-1, keepdims=True))
    logp = shift - lse
    loss = -np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, labels[..., None], np.take_along_axis(dlogits, labels[..., None], axis=-1) - 1.0, axis=-1)
    return loss, dlogits


class StackTape(NamedTuple):
    """Forward quantities of one BiMap-ReEig-...-LogEig pass."""

    inputs: list  # input to each BiMap
    eigs: list  # eigenpair of each BiMap output (before clamping)
    log_eig: EigenPair


def stack_forward(s: np.ndarray, bimaps: list[np.ndarray], eps: float) -> tuple[np.ndarray, StackTape]:
    """BiMap-ReEig blocks followed by LogEig and vectorization.

    The eigenpair of the last clamped matrix is the clamped eigenpair of the
    last BiMap output, so LogEig reuses it instead of decomposing again.
    """
    inputs, eigs = [], []
    x = s
    for w in bimaps:
        inputs.append(x)
        y = bimap_forward(x, w)
        x, eig = reeig_forward(y, eps)
        eigs.append(eig)
    last = eigs[-1]
    log_eig = EigenPair(np.maximum(last.eigvals, eps), last.eigvecs)
    logm, _ = logeig_forward(x, log_eig)
    return vec_symmetric(logm), StackTape(inputs, eigs, log_eig)


def stack_backward(tape: StackTape, bimaps: list[np.ndarray], eps: float, dfeat: np.ndarray):
    """Return ``(dS_in, [dW per BiMap])``; weight gradients keep batch axes."""
    g = logeig_backward(tape.log_eig, unvec_symmetric(dfeat))
    dws = [None] * len(bimaps)
    for k in reversed(range(len(bimaps))):
        g = reeig_backward(tape.eigs[k], eps, g)
        g, dws[k] = bimap_backward(tape.inputs[k], bimaps[k], g)
    return g, dws


@dataclass
class SpdNetParams:
    bimaps: list[np.ndarray]
    fc_weight: np.ndarray
    fc_bias: np.ndarray

    @classmethod
    def init(cls, cfg: SpdNetConfig, rng: np.random.Generator, n_branches: int = 1) -> "SpdNetParams":
        bimaps = [init_bimap(rng, a, b) for a, b in zip(cfg.dims, cfg.dims[1:])]
        n_in = cfg.n_features * n_branches
        bound = 1.0 / np.sqrt(n_in)
        return cls(bimaps, rng.uniform(-bound, bound, size=(cfg.n_classes, n_in)), np.zeros(cfg.n_classes))


@dataclass
class NetworkGrads:
    loss: np.ndarray
    logits: np.ndarray
    d_input: np.ndarray
    d_bimaps: list[np.ndarray] = field(default_factory=list)
    d_fc_weight: np.ndarray | None = None
    d_fc_bias: np.ndarray | None = None


def network_forward_backward(
    s_pooled: np.ndarray, params: SpdNetParams, labels: np.ndarray, eps: float = DEFAULT_REEIG_EPS
) -> NetworkGrads:
    """Forward and exact reverse pass from the pooled node to the loss.

    Gradients are per sample (leading batch axes of ``s_pooled``).
    """
    if s_pooled.shape[-1] != params.bimaps[0].shape[1]:
        raise InvalidInput(f"network: input dim {s_pooled.shape[-1]} != {params.bimaps[0].shape[1]}")
    feat, tape = stack_forward(s_pooled, params.bimaps, eps)
    logits = classify(feat, params.fc_weight, params.fc_bias)
    loss, dlogits = cross_entropy(logits, labels)
    dfeat, dw_fc, db_fc = classify_backward(feat, params.fc_weight, dlogits)
    ds, dws = stack_backward(tape, params.bimaps, eps, dfeat)
    return NetworkGrads(loss, logits, ds, dws, dw_fc, db_fc)
