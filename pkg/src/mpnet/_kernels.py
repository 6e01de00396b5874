"""Compiled inner loops: cyclic Jacobi eigensolver and depthwise temporal convolution.

Everything here is plain scalar code so results are bit-reproducible for a
given input. The public wrappers live in :mod:`mpnet.spd` and
:mod:`mpnet.frontend`.
"""
import math

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _rotate(a, i, j, k, l, tau, s):
    g = a[i, j]
    h = a[k, l]
    a[i, j] = g - s * (h + g * tau)
    a[k, l] = h + s * (g - h * tau)


@numba.njit(cache=True, nogil=True)
def _jacobi_one(a, d, v, max_sweeps):
    """Cyclic threshold Jacobi on the upper triangle of ``a`` (destroyed).

    Returns the number of sweeps used, or -1 if not converged.
    """
    n = a.shape[0]
    b = np.empty(n)
    z = np.zeros(n)
    for p in range(n):
        for q in range(n):
            v[p, q] = 0.0
        v[p, p] = 1.0
        b[p] = a[p, p]
        d[p] = a[p, p]
    for sweep in range(1, max_sweeps + 1):
        sm = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                sm += abs(a[p, q])
        if sm == 0.0:
            return sweep - 1
        tresh = 0.2 * sm / (n * n) if sweep < 4 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                g = 100.0 * abs(a[p, q])
                if sweep > 4 and abs(d[p]) + g == abs(d[p]) and abs(d[q]) + g == abs(d[q]):
                    a[p, q] = 0.0
                elif abs(a[p, q]) > tresh:
                    h = d[q] - d[p]
                    if abs(h) + g == abs(h):
                        t = a[p, q] / h
                    else:
                        theta = 0.5 * h / a[p, q]
                        t = 1.0 / (abs(theta) + math.sqrt(1.0 + theta * theta))
                        if theta < 0.0:
                            t = -t
                    c = 1.0 / math.sqrt(1.0 + t * t)
                    s = t * c
                    tau = s / (1.0 + c)
                    h = t * a[p, q]
                    z[p] -= h
                    z[q] += h
                    d[p] -= h
                    d[q] += h
                    a[p, q] = 0.0
                    for j in range(p):
                        _rotate(a, j, p, j, q, tau, s)
                    for j in range(p + 1, q):
                        _rotate(a, p, j, j, q, tau, s)
                    for j in range(q + 1, n):
                        _rotate(a, p, j, q, j, tau, s)
                    for j in range(n):
                        _rotate(v, j, p, j, q, tau, s)
        for p in range(n):
            b[p] += z[p]
            d[p] = b[p]
            z[p] = 0.0
    sm = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            sm += abs(a[p, q])
    if sm == 0.0:
        return max_sweeps
    return -1


@numba.njit(cache=True, nogil=True)
def jacobi_eigh(mats, max_sweeps):
    """Eigen-decompose a stack of symmetric matrices of shape (m, n, n).

    Returns unsorted eigenvalues (m, n), eigenvectors as columns (m, n, n) and
    the sweep count per matrix (-1 marks non-convergence).
    """
    m, n, _ = mats.shape
    w = np.empty((m, n))
    vecs = np.empty((m, n, n))
    sweeps = np.empty(m, dtype=np.int64)
    work = np.empty((n, n))
    for k in range(m):
        for i in range(n):
            for j in range(n):
                work[i, j] = mats[k, i, j]
        sweeps[k] = _jacobi_one(work, w[k], vecs[k], max_sweeps)
    return w, vecs, sweeps


@numba.njit(cache=True, nogil=True, fastmath=True)
def _corr_accumulate(src, k, row, nout):
    """``row[t] += sum_j k[j] * src[t + j]`` for ``t < nout``, four taps per pass."""
    nk = k.shape[0]
    j = 0
    while j + 4 <= nk:
        k0 = k[j]
        k1 = k[j + 1]
        k2 = k[j + 2]
        k3 = k[j + 3]
        for t in range(nout):
            row[t] += k0 * src[t + j] + k1 * src[t + j + 1] + k2 * src[t + j + 2] + k3 * src[t + j + 3]
        j += 4
    while j < nk:
        kj = k[j]
        for t in range(nout):
            row[t] += kj * src[t + j]
        j += 1


@numba.njit(cache=True, nogil=True)
def depthwise_corr(a, k, bias):
    """Valid cross-correlation of each row of ``a`` (b, d, t) with ``k[d]``, plus ``bias[d]``."""
    nb, nd, nt = a.shape
    nk = k.shape[1]
    nout = nt - nk + 1
    out = np.empty((nb, nd, nout), dtype=a.dtype)
    for b in range(nb):
        for d in range(nd):
            out[b, d, :] = bias[d]
            _corr_accumulate(a[b, d], k[d], out[b, d], nout)
    return out


@numba.njit(cache=True, nogil=True)
def depthwise_corr_backward(a, k, g):
    """Gradients of :func:`depthwise_corr` w.r.t. ``a`` and per-sample ``k``.

    Returns ``da`` with the shape of ``a`` and ``dk`` of shape (b, d, taps).
    ``da`` is the full convolution of ``g`` with ``k`` (correlation of the
    zero-padded ``g`` with the flipped kernel); ``dk`` is the valid
    correlation of ``a`` with ``g``.
    """
    nb, nd, nt = a.shape
    nk = k.shape[1]
    nout = nt - nk + 1
    da = np.zeros_like(a)
    dk = np.zeros((nb, nd, nk), dtype=a.dtype)
    padded = np.zeros(nout + 2 * (nk - 1), dtype=a.dtype)
    flipped = np.empty(nk, dtype=a.dtype)
    for b in range(nb):
        for d in range(nd):
            for j in range(nk):
                flipped[j] = k[d, nk - 1 - j]
            padded[nk - 1 : nk - 1 + nout] = g[b, d]
            _corr_accumulate(padded, flipped, da[b, d], nt)
            _corr_accumulate(a[b, d], g[b, d], dk[b, d], nk)
    return da, dk
