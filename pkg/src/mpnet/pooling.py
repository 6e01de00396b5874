"""Manifold node pooling: fuse N SPD nodes into one node of the same size.

Nodes are stacked on axis ``-3``: shape ``(..., N, D, D)``. The unweighted
strategies go through the same code path as the weighted ones with uniform
weights, so ``WEM(w=0)`` and ``EM`` (and ``WRM(w=0)`` and ``RM``) agree bit
for bit.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DomainError, InvalidInput
from .spd import EigenPair, eigh_sym, exp_pair, log_pair, loewner_backward, symmetrize

STRATEGIES = ("em", "wem", "rm", "wrm")
WEIGHTED = ("wem", "wrm")
LOG_EUCLIDEAN = ("rm", "wrm")


def softmax(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    e = np.exp(w - np.max(w))
    return e / e.sum()


def _weighted_sum(mats: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    # fixed accumulation order over nodes
    out = alpha[0] * mats[..., 0, :, :]
    for i in range(1, alpha.shape[0]):
        out = out + alpha[i] * mats[..., i, :, :]
    return out


class PoolCache(NamedTuple):
    strategy: str
    alpha: np.ndarray
    mixed: np.ndarray  # matrices that were averaged: nodes, or their logarithms
    node_eigs: EigenPair | None = None
    mean_log: np.ndarray | None = None
    mean_eig: EigenPair | None = None


def pool(nodes: np.ndarray, strategy: str = "em", w: np.ndarray | None = None) -> tuple[np.ndarray, PoolCache]:
    """Pool nodes with one of ``em``, ``wem``, ``rm``, ``wrm``.

    Parameters
    ----------
    nodes : ndarray, shape (..., N, D, D)
    strategy : str
    w : ndarray, shape (N,), optional
        Weight logits for the weighted strategies; zeros when omitted and
        ignored by the unweighted ones.

    Returns
    -------
    pooled : ndarray, shape (..., D, D)
    cache : PoolCache
    """
    strategy = strategy.lower()
    if strategy not in STRATEGIES:
        raise InvalidInput(f"unknown pooling strategy {strategy!r}")
    nodes = np.asarray(nodes, dtype=np.float64)
    if nodes.ndim < 3 or nodes.shape[-3] == 0 or nodes.shape[-1] != nodes.shape[-2]:
        raise InvalidInput(f"pooling needs a non-empty node stack (..., N, D, D), got {nodes.shape}")
    n = nodes.shape[-3]
    if strategy in WEIGHTED and w is not None:
        if np.shape(w) != (n,):
            raise InvalidInput(f"pooling: weight vector has shape {np.shape(w)}, expected ({n},)")
        alpha = softmax(w)
    else:
        alpha = softmax(np.zeros(n))

    if strategy not in LOG_EUCLIDEAN:
        return symmetrize(_weighted_sum(nodes, alpha)), PoolCache(strategy, alpha, nodes)

    node_eigs = eigh_sym(nodes)
    if np.any(node_eigs.eigvals <= 0):
        raise DomainError("log-Euclidean pooling requires SPD nodes")
    logs = node_eigs.reconstruct(np.log(node_eigs.eigvals))
    mean_log = symmetrize(_weighted_sum(logs, alpha))
    mean_eig = eigh_sym(mean_log)
    pooled = mean_eig.reconstruct(np.exp(mean_eig.eigvals))
    return pooled, PoolCache(strategy, alpha, logs, node_eigs, mean_log, mean_eig)


def pool_backward(cache: PoolCache, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Gradients w.r.t. the nodes and, for weighted strategies, the logits ``w``.

    Returns
    -------
    node_grads : ndarray, shape (..., N, D, D)
    w_grad : ndarray, shape (..., N), or None for unweighted strategies
        Kept per sample; the caller reduces over the batch.
    """
    alpha = cache.alpha
    g = symmetrize(grad)
    if cache.strategy in LOG_EUCLIDEAN:
        g = loewner_backward(cache.mean_log, *exp_pair(), g, eig=cache.mean_eig)
        routed = alpha[:, None, None] * g[..., None, :, :]
        node_grads = loewner_backward(None, *log_pair(), routed, eig=cache.node_eigs)
    else:
        node_grads = alpha[:, None, None] * g[..., None, :, :]
    if cache.strategy not in WEIGHTED:
        return node_grads, None
    # <X_i, G> for each mixed matrix, then through the softmax Jacobian
    d_alpha = np.einsum("...nij,...ij->...n", cache.mixed, g)
    w_grad = alpha * (d_alpha - (d_alpha * alpha).sum(axis=-1, keepdims=True))
    return node_grads, w_grad


def pool_em(nodes: np.ndarray) -> np.ndarray:
    return pool(nodes, "em")[0]


def pool_wem(nodes: np.ndarray, w: np.ndarray) -> np.ndarray:
    return pool(nodes, "wem", w)[0]


def pool_rm(nodes: np.ndarray) -> np.ndarray:
    return pool(nodes, "rm")[0]


def pool_wrm(nodes: np.ndarray, w: np.ndarray) -> np.ndarray:
    return pool(nodes, "wrm", w)[0]
