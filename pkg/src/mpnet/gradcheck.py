"""Finite-difference verification of every hand-written backward pass.

Each check draws a random linear functional ``L(y) = <G, y>`` of a layer
output (or the cross-entropy loss for the classifier and the full model),
compares the analytic gradient with central differences and reports the
relative error ``max|g_analytic - g_fd| / max|g_fd|`` per layer. Symmetric
inputs are perturbed along symmetric directions ``E_ij + E_ji``.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import frontend as fe
from . import pooling as pl
from . import spdnet as sn
from .model import MPNet, ModelConfig

TOLERANCE = 1e-4
STEP = 1e-5


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` over every entry of ``x``."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


def fd_symmetric(f: Callable[[np.ndarray], float], s: np.ndarray, step: float = STEP) -> np.ndarray:
    """Derivatives of ``f`` along ``E_ij + E_ji`` (``E_ii`` on the diagonal) for a stack ``(..., d, d)``.

    Returns a symmetric array whose ``(i, j)`` entry should match
    ``G_ij + G_ji`` (off-diagonal) or ``G_ii`` (diagonal) of the analytic
    gradient ``G``.
    """
    d = s.shape[-1]
    out = np.zeros_like(s)
    lead = np.ndindex(*s.shape[:-2])
    for idx in lead:
        for i in range(d):
            for j in range(i, d):
                def shifted(h):
                    t = s.copy()
                    t[idx + (i, j)] += h
                    if i != j:
                        t[idx + (j, i)] += h
                    return f(t)

                val = (shifted(step) - shifted(-step)) / (2 * step)
                out[idx + (i, j)] = out[idx + (j, i)] = val
    return out


def _sym_directional(g: np.ndarray) -> np.ndarray:
    """Analytic counterpart of :func:`fd_symmetric`."""
    out = g + np.swapaxes(g, -1, -2)
    d = g.shape[-1]
    idx = np.arange(d)
    out[..., idx, idx] = g[..., idx, idx]
    return out


def _random_spd(rng: np.random.Generator, shape: tuple, d: int, floor: float = 0.5) -> np.ndarray:
    a = rng.standard_normal((*shape, d, 2 * d)) / np.sqrt(2 * d)
    return a @ np.swapaxes(a, -1, -2) + floor * np.eye(d)


def _toy_config(pooling: str = "em") -> ModelConfig:
    return ModelConfig(n_channels=4, n_classes=3, features=6, dims=(6, 4, 2), pooling=pooling, precision="float64")


def check_stream_conv(rng: np.random.Generator) -> dict:
    x = rng.standard_normal((2, 4, 200))
    k = fe.init_stream_kernels(rng, 4, 6)
    k = fe.StreamKernels(k.spatial, rng.standard_normal(6) * 0.1, k.temporal, rng.standard_normal(6) * 0.1)
    h, cache = fe.stream_conv(x, k)
    g = rng.standard_normal(h.shape)
    grads = fe.stream_conv_backward(cache, g)
    errs = {}
    for layer, names in (("spatial_conv", ("spatial", "spatial_bias")), ("temporal_conv", ("temporal", "temporal_bias"))):
        worst = 0.0
        for name in names:
            p = getattr(k, name).copy()

            def loss(v, name=name):
                kk = k._replace(**{name: v})
                return float(np.sum(g * fe.stream_conv(x, kk)[0]))

            worst = max(worst, _rel_error(getattr(grads, name).sum(axis=0), fd_gradient(loss, p)))
        errs[layer] = worst
    return errs


def check_covariance(rng: np.random.Generator) -> dict:
    h = rng.standard_normal((6, 42))
    g = rng.standard_normal((6, 6))
    analytic = fe.covariance_backward(h, g, fe.DEFAULT_RIDGE_SCALE)
    numeric = fd_gradient(lambda v: float(np.sum(g * fe.covariance(v, fe.DEFAULT_RIDGE_SCALE))), h.copy())
    return {"covariance": _rel_error(analytic, numeric)}


def check_pooling(rng: np.random.Generator) -> dict:
    nodes = _random_spd(rng, (12,), 6)
    w = rng.standard_normal(12) * 0.5
    g = rng.standard_normal((6, 6))
    errs = {}
    for strategy in pl.STRATEGIES:
        weights = w if strategy in pl.WEIGHTED else None
        _, cache = pl.pool(nodes, strategy, weights)
        dnodes, dw = pl.pool_backward(cache, g)
        f = lambda n: float(np.sum(g * pl.pool(n, strategy, weights)[0]))  # noqa: E731
        err = _rel_error(_sym_directional(dnodes), fd_symmetric(f, nodes.copy()))
        if dw is not None:
            fw = lambda v: float(np.sum(g * pl.pool(nodes, strategy, v)[0]))  # noqa: E731
            err = max(err, _rel_error(dw, fd_gradient(fw, w.copy())))
        errs[f"pool_{strategy}"] = err
    return errs


def check_spdnet_layers(rng: np.random.Generator) -> dict:
    errs = {}
    s = _random_spd(rng, (2,), 6)
    w = sn.init_bimap(rng, 6, 4)
    g = rng.standard_normal((2, 4, 4))
    ds, dw = sn.bimap_backward(s, w, g)
    e_s = _rel_error(_sym_directional(ds), fd_symmetric(lambda v: float(np.sum(g * sn.bimap_forward(v, w))), s.copy()))
    e_w = _rel_error(dw.sum(axis=0), fd_gradient(lambda v: float(np.sum(g * sn.bimap_forward(s, v))), w.copy()))
    errs["bimap"] = max(e_s, e_w)

    # ReEig away from the clamp boundary: put eps in a wide spectral gap
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    lam = np.array([0.05, 0.1, 1.0, 2.0, 3.0])
    s = (q * lam) @ q.T
    eps = 0.4
    g = rng.standard_normal((5, 5))
    _, eig = sn.reeig_forward(s, eps)
    analytic = sn.reeig_backward(eig, eps, g)
    numeric = fd_symmetric(lambda v: float(np.sum(g * sn.reeig_forward(v, eps)[0])), s.copy())
    errs["reeig"] = _rel_error(_sym_directional(analytic), numeric)

    s = _random_spd(rng, (), 5)
    _, eig = sn.logeig_forward(s)
    analytic = sn.logeig_backward(eig, g)
    numeric = fd_symmetric(lambda v: float(np.sum(g * sn.logeig_forward(v)[0])), s.copy())
    errs["logeig"] = _rel_error(_sym_directional(analytic), numeric)

    x = rng.standard_normal((3, 6))
    weight = rng.standard_normal((4, 6)) * 0.3
    bias = rng.standard_normal(4) * 0.1
    labels = np.array([0, 3, 1])
    loss = lambda xx, ww, bb: float(sn.cross_entropy(sn.classify(xx, ww, bb), labels)[0].sum())  # noqa: E731
    _, dlogits = sn.cross_entropy(sn.classify(x, weight, bias), labels)
    dx, dw, db = sn.classify_backward(x, weight, dlogits)
    errs["fc"] = max(
        _rel_error(dx, fd_gradient(lambda v: loss(v, weight, bias), x.copy())),
        _rel_error(dw.sum(axis=0), fd_gradient(lambda v: loss(x, v, bias), weight.copy())),
        _rel_error(db.sum(axis=0), fd_gradient(lambda v: loss(x, weight, v), bias.copy())),
    )
    return errs


def check_model(rng: np.random.Generator, pooling: str) -> float:
    """End-to-end check of every parameter of the toy model through the loss."""
    model = MPNet.init(_toy_config(pooling), seed=int(rng.integers(2**31)))
    if "pool.w" in model.params:
        model.params["pool.w"] = rng.standard_normal(model.params["pool.w"].shape) * 0.5
    for name in ("low.spatial_bias", "high.spatial_bias", "low.temporal_bias", "high.temporal_bias", "fc.bias"):
        model.params[name] = rng.standard_normal(model.params[name].shape) * 0.1
    x = rng.standard_normal((2, 4, 200))
    labels = np.array([0, 2])
    xl, xh = model.split_bands(x)
    grads = model.forward_backward(xl, xh, labels).grads
    worst = 0.0
    for name, p in model.params.items():
        def loss(v, name=name):
            old = model.params[name]
            model.params[name] = v
            try:
                return float(model.forward_backward(xl, xh, labels, backward=False).loss.sum())
            finally:
                model.params[name] = old

        worst = max(worst, _rel_error(grads[name].sum(axis=0), fd_gradient(loss, p.copy())))
    return worst


def run_gradcheck(seed: int = 0) -> dict:
    """Max relative error per layer (and per end-to-end pooling variant)."""
    rng = np.random.default_rng(seed)
    errs = {}
    errs.update(check_stream_conv(rng))
    errs.update(check_covariance(rng))
    errs.update(check_pooling(rng))
    errs.update(check_spdnet_layers(rng))
    for pooling in ("em", "wem", "rm", "wrm", "none"):
        errs[f"model_{pooling}"] = check_model(rng, pooling)
    return errs
