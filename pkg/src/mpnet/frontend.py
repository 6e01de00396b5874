"""Rhythm-adaptive convolutional frontend and covariance node generation.

Shapes follow the ``(..., channels, time)`` convention. Every forward op has
a matching ``*_backward`` that takes the upstream gradient and returns
per-sample parameter gradients (leading batch axes preserved), so batch
reductions can be done by the caller in a fixed order.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import InvalidInput, NumericalFailure
from .filters import HIGH_BAND, LOW_BAND, band_split
from .spd import validate_spd

STREAMS = ("low", "high", "coup")
KERNEL_LEN = 32
DEFAULT_RIDGE_SCALE = 1e-5
DEFAULT_RIDGE_FLOOR = 1e-10


class StreamKernels(NamedTuple):
    """Learnable tensors of one convolutional branch."""

    spatial: np.ndarray  # (D, C)
    spatial_bias: np.ndarray  # (D,)
    temporal: np.ndarray  # (D, L), one kernel per feature row
    temporal_bias: np.ndarray  # (D,)


class ConvCache(NamedTuple):
    x: np.ndarray
    a: np.ndarray
    kernels: StreamKernels


def init_stream_kernels(
    rng: np.random.Generator, n_channels: int, n_features: int, kernel_len: int = KERNEL_LEN
) -> StreamKernels:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels and zero biases."""
    bs = 1.0 / np.sqrt(n_channels)
    bt = 1.0 / np.sqrt(kernel_len)
    return StreamKernels(
        rng.uniform(-bs, bs, size=(n_features, n_channels)),
        np.zeros(n_features),
        rng.uniform(-bt, bt, size=(n_features, kernel_len)),
        np.zeros(n_features),
    )


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    lead = x.shape[:-2]
    return x.reshape(-1, *x.shape[-2:]), lead


def stream_conv(
    x: np.ndarray, kernels: StreamKernels, dtype: np.dtype | type = np.float64
) -> tuple[np.ndarray, ConvCache]:
    """Spatial projection followed by depthwise valid temporal correlation.

    Parameters
    ----------
    x : ndarray, shape (..., C, T)
        One band-limited stream.
    kernels : StreamKernels
    dtype : numpy dtype
        Working precision of the activations. Parameter gradients are
        always returned in float64.

    Returns
    -------
    h : ndarray, shape (..., D, T - L + 1), in ``dtype``
    cache : ConvCache
        Forward quantities needed by :func:`stream_conv_backward`.
    """
    d, c = kernels.spatial.shape
    taps = kernels.temporal.shape[1]
    if x.ndim < 2 or x.shape[-2] != c:
        raise InvalidInput(f"stream_conv: expected {c} channels, got shape {x.shape}")
    if kernels.temporal.shape[0] != d:
        raise InvalidInput("stream_conv: spatial and temporal feature counts differ")
    if x.shape[-1] < taps:
        raise InvalidInput(f"stream_conv: need at least {taps} samples, got {x.shape[-1]}")
    xb, lead = _as_batch(np.ascontiguousarray(x, dtype=dtype))
    a = kernels.spatial.astype(dtype) @ xb
    a += kernels.spatial_bias.astype(dtype)[:, None]
    h = _kernels.depthwise_corr(
        a, np.ascontiguousarray(kernels.temporal, dtype=dtype), kernels.temporal_bias.astype(dtype)
    )
    return h.reshape(*lead, *h.shape[1:]), ConvCache(xb, a, kernels)


def stream_conv_backward(cache: ConvCache, dh: np.ndarray) -> StreamKernels:
    """Per-sample gradients of :func:`stream_conv` parameters, shape ``(B, ...)``."""
    dtype = cache.a.dtype
    g = np.ascontiguousarray(dh.reshape(cache.a.shape[0], *dh.shape[-2:]), dtype=dtype)
    k = np.ascontiguousarray(cache.kernels.temporal, dtype=dtype)
    da, dk = _kernels.depthwise_corr_backward(cache.a, k, g)
    f64 = np.float64
    return StreamKernels(
        (da @ np.swapaxes(cache.x, -1, -2)).astype(f64, copy=False),
        da.sum(axis=-1).astype(f64, copy=False),
        dk.astype(f64, copy=False),
        g.sum(axis=-1).astype(f64, copy=False),
    )


def coupling(h_low: np.ndarray, h_high: np.ndarray) -> np.ndarray:
    """Coupling stream: elementwise sum of the two rhythm feature maps."""
    if h_low.shape != h_high.shape:
        raise InvalidInput(f"coupling: shape mismatch {h_low.shape} vs {h_high.shape}")
    return h_low + h_high


def window_split(h: np.ndarray, n_windows: int) -> np.ndarray:
    """Cut ``(..., D, T')`` into ``n_windows`` consecutive blocks ``(..., W, D, T_w)``.

    ``T_w = T' // W``; trailing samples that do not fill a window are dropped.
    """
    t = h.shape[-1]
    if n_windows < 1 or t < n_windows:
        raise InvalidInput(f"window_split: cannot cut {t} samples into {n_windows} windows")
    tw = t // n_windows
    blocks = h[..., : n_windows * tw].reshape(*h.shape[:-1], n_windows, tw)
    return np.moveaxis(blocks, -2, -3)


def window_merge_grad(dwin: np.ndarray, t: int) -> np.ndarray:
    """Adjoint of :func:`window_split`: scatter window gradients into ``(..., D, t)``."""
    n_windows, d, tw = dwin.shape[-3:]
    out = np.zeros((*dwin.shape[:-3], d, t), dtype=dwin.dtype)
    out[..., : n_windows * tw] = np.moveaxis(dwin, -3, -2).reshape(*dwin.shape[:-3], d, n_windows * tw)
    return out


def _certified_pd(ridge: np.ndarray, trace: np.ndarray, d: int, tw: int) -> bool:
    """Cheap sufficient condition for positive definiteness of ``H H^T/(T_w-1) + ridge I``.

    The rounding error of the computed Gram matrix is bounded in norm by
    about ``(T_w + D) * u * trace``; if the ridge dominates that bound (with a
    safety factor) every eigenvalue is positive by Weyl's inequality.
    """
    bound = 4.0 * (tw + d) * np.finfo(np.float64).eps * trace
    return bool(np.all(ridge > bound))


def covariance(
    h: np.ndarray,
    ridge_scale: float = DEFAULT_RIDGE_SCALE,
    floor: float = 0.0,
) -> np.ndarray:
    """Uncentred window covariance ``H H^T / (T_w - 1)`` plus a trace-relative ridge.

    The ridge is ``ridge_scale * trace(S) / D + floor``. Rows are not
    mean-centred.

    Raises
    ------
    InvalidInput
        Fewer than two samples per window.
    NumericalFailure
        The regularized result is not positive definite (e.g. an all-zero
        window with ``floor=0``).
    """
    h = np.asarray(h, dtype=np.float64)
    d, tw = h.shape[-2:]
    if tw < 2:
        raise InvalidInput(f"covariance: need T_w >= 2, got {tw}")
    s = h @ np.swapaxes(h, -1, -2)
    s += np.swapaxes(s, -1, -2)  # overlap is buffered by numpy
    s *= 0.5 / (tw - 1)
    trace = np.trace(s, axis1=-2, axis2=-1)
    ridge = ridge_scale * trace / d + floor
    idx = np.arange(d)
    s[..., idx, idx] += ridge[..., None]
    if not np.all(np.isfinite(trace)):
        raise NumericalFailure("covariance: non-finite window")
    if not _certified_pd(ridge, trace, d, tw) and not validate_spd(s, 0.0):
        raise NumericalFailure("covariance: regularized window covariance is not positive definite")
    return s


def covariance_backward(
    h: np.ndarray, grad: np.ndarray, ridge_scale: float = DEFAULT_RIDGE_SCALE, out: np.ndarray | None = None
) -> np.ndarray:
    """Gradient of a loss w.r.t. the window ``h`` given ``grad`` w.r.t. :func:`covariance`.

    Computed in the dtype of ``h``. ``out`` may be a strided view, e.g. the
    windows of a preallocated feature-map gradient.
    """
    d, tw = h.shape[-2:]
    g = grad + np.swapaxes(grad, -1, -2)
    idx = np.arange(d)
    g[..., idx, idx] += (2.0 * ridge_scale / d) * np.trace(grad, axis1=-2, axis2=-1)[..., None]
    scaled = np.empty(g.shape, dtype=h.dtype)
    np.multiply(g, 1.0 / (tw - 1), out=scaled, casting="same_kind")
    return np.matmul(scaled, h, out=out)


def window_views(h: np.ndarray, n_windows: int) -> tuple[np.ndarray, np.ndarray]:
    """Zeroed gradient buffer shaped like ``h`` plus its window view (see :func:`window_split`)."""
    buf = np.zeros_like(h)
    return buf, window_split(buf, n_windows)


def build_nodeset(
    x: np.ndarray,
    fs: float,
    low: StreamKernels,
    high: StreamKernels,
    n_windows: int = 4,
    ridge_scale: float = DEFAULT_RIDGE_SCALE,
    floor: float = DEFAULT_RIDGE_FLOOR,
    order: int = 5,
    low_band: tuple[float, float] = LOW_BAND,
    high_band: tuple[float, float] = HIGH_BAND,
) -> np.ndarray:
    """Full frontend for preprocessed trials ``(..., C, T)``.

    Returns nodes of shape ``(..., 3 * n_windows, D, D)`` ordered
    ``low w1..wW, high w1..wW, coup w1..wW``.
    """
    x_low, x_high = band_split(x, fs, order, low_band, high_band)
    h_low, _ = stream_conv(x_low, low)
    h_high, _ = stream_conv(x_high, high)
    return nodes_from_streams(h_low, h_high, n_windows, ridge_scale, floor)


def nodes_from_streams(
    h_low: np.ndarray,
    h_high: np.ndarray,
    n_windows: int,
    ridge_scale: float = DEFAULT_RIDGE_SCALE,
    floor: float = DEFAULT_RIDGE_FLOOR,
) -> np.ndarray:
    """Covariance nodes ``(..., 3 * W, D, D)`` of the low, high and coupling streams.

    Feature maps are promoted to float64 before the covariance step.
    """
    h_low = np.asarray(h_low, dtype=np.float64)
    h_high = np.asarray(h_high, dtype=np.float64)
    streams = (h_low, h_high, coupling(h_low, h_high))
    d = h_low.shape[-2]
    nodes = np.empty((*h_low.shape[:-2], 3, n_windows, d, d))
    for k, h in enumerate(streams):
        nodes[..., k, :, :, :] = covariance(window_split(h, n_windows), ridge_scale, floor)
    return nodes.reshape(*h_low.shape[:-2], 3 * n_windows, d, d)
