"""Butterworth band-pass design and zero-phase filtering of multichannel trials."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import InvalidInput

LOW_BAND = (4.0, 17.0)
HIGH_BAND = (13.0, 40.0)


@dataclass(frozen=True)
class BandFilter:
    """Band-pass filter stored as second-order sections.

    ``sections`` has one row ``(b0, b1, b2, 1, a1, a2)`` per section, the
    layout used by :func:`scipy.signal.sosfilt`.
    """

    order: int
    low_hz: float
    high_hz: float
    fs: float
    sections: np.ndarray

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(sec[3:]) for sec in self.sections])

    def response(self, freqs_hz: np.ndarray) -> np.ndarray:
        """Complex frequency response evaluated on the unit circle."""
        z = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=np.float64) / self.fs)
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sections:
            h *= (b0 + b1 * z + b2 * z * z) / (a0 + a1 * z + a2 * z * z)
        return h


@lru_cache(maxsize=64)
def _design(order: int, low_hz: float, high_hz: float, fs: float) -> np.ndarray:
    return signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")


def design_butterworth_bandpass(order: int, low_hz: float, high_hz: float, fs: float) -> BandFilter:
    """Digital Butterworth band-pass of the given prototype order.

    The analog prototype is band-transformed and mapped with the bilinear
    transform using pre-warped edges, then factored into second-order
    sections. The cascade therefore has ``order`` sections.
    """
    if order < 1:
        raise InvalidInput(f"filter order must be >= 1, got {order}")
    if not (0.0 < low_hz < high_hz < fs / 2.0):
        raise InvalidInput(
            f"band edges must satisfy 0 < low < high < fs/2; got {low_hz}, {high_hz} at fs={fs}"
        )
    sos = _design(int(order), float(low_hz), float(high_hz), float(fs)).copy()
    return BandFilter(int(order), float(low_hz), float(high_hz), float(fs), sos)


def filter_zero_phase(x: np.ndarray, band: BandFilter, causal: bool = False) -> np.ndarray:
    """Forward-backward application of ``band`` along the last axis.

    Edges are extended by odd reflection of length ``3 * (2 * order)``.
    With ``causal=True`` only the forward pass runs (phase is not
    compensated); this mode exists for online use.
    """
    x = np.asarray(x, dtype=np.float64)
    padlen = 3 * (2 * band.order)
    if x.shape[-1] <= padlen:
        raise InvalidInput(
            f"signal has {x.shape[-1]} samples; zero-phase filtering needs more than {padlen}"
        )
    if causal:
        return signal.sosfilt(band.sections, x, axis=-1)
    return signal.sosfiltfilt(band.sections, x, axis=-1, padtype="odd", padlen=padlen)


def band_split(
    x: np.ndarray,
    fs: float,
    order: int = 5,
    low_band: tuple[float, float] = LOW_BAND,
    high_band: tuple[float, float] = HIGH_BAND,
    causal: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Split trials ``(..., C, T)`` into the low (4-17 Hz) and high (13-40 Hz) streams."""
    lo = design_butterworth_bandpass(order, *low_band, fs)
    hi = design_butterworth_bandpass(order, *high_band, fs)
    return filter_zero_phase(x, lo, causal), filter_zero_phase(x, hi, causal)
