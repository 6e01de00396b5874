"""Trial container I/O, synthetic EEG generation and preprocessing.

Container layout (all little-endian)::

    magic       8s   b"MPNETEEG"
    version     u16  1
    n_trials    u32
    n_channels  u32
    n_samples   u32
    fs_hz       f32
    n_classes   u16
    labels      n_trials x u16
    payload     n_trials x C x T f32, trial-major then row-major

Any converter that writes this layout can feed the CLI.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from . import rng as srng
from .errors import FormatError, InvalidInput
from .filters import design_butterworth_bandpass, filter_zero_phase

MAGIC = b"MPNETEEG"
VERSION = 1
_HEADER = struct.Struct("<8sHIIIfH")


@dataclass
class Dataset:
    """Epoched trials with integer labels.

    ``x`` is stored as float32 so that container round trips are exact.
    """

    x: np.ndarray  # (n, C, T) float32
    labels: np.ndarray  # (n,) int64
    fs: float
    n_classes: int

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.x.ndim != 3:
            raise InvalidInput(f"trials must have shape (n, C, T), got {self.x.shape}")
        if self.labels.shape != (self.x.shape[0],):
            raise InvalidInput(f"{self.labels.shape[0]} labels for {self.x.shape[0]} trials")
        if self.n_classes < 1 or self.n_classes > 0xFFFF:
            raise InvalidInput(f"n_classes out of range: {self.n_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidInput(f"labels must lie in [0, {self.n_classes})")
        self.fs = float(np.float32(self.fs))

    @property
    def n_trials(self) -> int:
        return self.x.shape[0]

    @property
    def n_channels(self) -> int:
        return self.x.shape[1]

    @property
    def n_samples(self) -> int:
        return self.x.shape[2]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.labels[idx], self.fs, self.n_classes)


def to_bytes(ds: Dataset) -> bytes:
    n, c, t = ds.x.shape
    head = _HEADER.pack(MAGIC, VERSION, n, c, t, ds.fs, ds.n_classes)
    return head + ds.labels.astype("<u2").tobytes() + ds.x.astype("<f4").tobytes()


def from_bytes(blob: bytes) -> Dataset:
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise FormatError("not a trial container (bad magic)")
    if len(blob) < _HEADER.size:
        raise FormatError(f"truncated header: expected {_HEADER.size} bytes, got {len(blob)}")
    _, version, n, c, t, fs, k = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    expected = _HEADER.size + 2 * n + 4 * n * c * t
    if len(blob) != expected:
        raise FormatError(f"container size mismatch: header implies {expected} bytes, file has {len(blob)}")
    labels = np.frombuffer(blob, dtype="<u2", count=n, offset=_HEADER.size).astype(np.int64)
    if n and labels.max() >= k:
        raise FormatError(f"label {labels.max()} out of range for {k} classes")
    x = np.frombuffer(blob, dtype="<f4", count=n * c * t, offset=_HEADER.size + 2 * n)
    return Dataset(x.reshape(n, c, t).astype(np.float32), labels, fs, k)


def write_container(ds: Dataset, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ds))


def read_container(path: str | Path) -> Dataset:
    return from_bytes(Path(path).read_bytes())


# synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings for class-dependent oscillations in coloured noise.

    Class ``k`` carries one sinusoid per entry of ``rhythms[k]``; each source
    is projected through its own column of a random orthogonal matrix drawn
    from ``mixing_seed`` (so the spatial patterns of all sources are mutually
    orthogonal). ``mixing`` overrides this with explicit ``(C, m_k)``
    matrices. Noise has power spectrum ``1 / f**noise_slope``.
    """

    n_classes: int = 2
    trials_per_class: int = 100
    n_channels: int = 22
    n_samples: int = 1000
    fs: float = 250.0
    rhythms: tuple[tuple[float, ...], ...] = ((10.0,), (24.0,))
    noise_slope: float = 1.0
    snr_db: float = 40.0
    seed: int = 0
    mixing_seed: int = 1
    first_trial: int = 0
    mixing: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rhythms", tuple(tuple(float(f) for f in r) for r in self.rhythms))
        if self.n_classes < 1 or self.trials_per_class < 1:
            raise InvalidInput("need at least one class and one trial per class")
        if len(self.rhythms) != self.n_classes:
            raise InvalidInput(f"{len(self.rhythms)} rhythm groups for {self.n_classes} classes")
        for r in self.rhythms:
            if not r or not all(4.0 < f < 40.0 for f in r):
                raise InvalidInput(f"rhythm frequencies must lie in (4, 40) Hz, got {r}")
            if max(r) >= self.fs / 2:
                raise InvalidInput(f"rhythm {max(r)} Hz is above Nyquist for fs={self.fs}")
        if not np.isfinite(self.snr_db):
            raise InvalidInput("snr_db must be finite")
        if sum(len(r) for r in self.rhythms) > self.n_channels and self.mixing is None:
            raise InvalidInput("more sources than channels; orthogonal mixing impossible")

    @property
    def n_trials(self) -> int:
        return self.n_classes * self.trials_per_class


def mixing_matrices(spec: SyntheticSpec) -> list[np.ndarray]:
    if spec.mixing is not None:
        mats = [np.asarray(m, dtype=np.float64) for m in spec.mixing]
        for k, m in enumerate(mats):
            if m.shape != (spec.n_channels, len(spec.rhythms[k])):
                raise InvalidInput(f"mixing matrix {k} has shape {m.shape}")
        return mats
    c = spec.n_channels
    g = srng.SplitMix64(srng.derive(spec.mixing_seed, 0)).normal(c * c).reshape(c, c)
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    mats, col = [], 0
    for r_k in spec.rhythms:
        mats.append(q[:, col : col + len(r_k)])
        col += len(r_k)
    return mats


def coloured_noise(gen: srng.SplitMix64, n_channels: int, n_samples: int, fs: float, slope: float) -> np.ndarray:
    """Gaussian noise shaped to power ``1/f**slope`` (zero mean, DC removed)."""
    white = gen.normal(n_channels * n_samples).reshape(n_channels, n_samples)
    spec = np.fft.rfft(white, axis=-1)
    freqs = np.fft.rfftfreq(n_samples, 1.0 / fs)
    shape = np.zeros_like(freqs)
    shape[1:] = freqs[1:] ** (-slope / 2.0)
    return np.fft.irfft(spec * shape, n=n_samples, axis=-1)


def _synth_trial(spec: SyntheticSpec, mats: list[np.ndarray], index: int) -> np.ndarray:
    gen = srng.SplitMix64(srng.derive(spec.seed, index))
    k = index % spec.n_classes
    freqs = np.asarray(spec.rhythms[k])
    phases = 2.0 * np.pi * gen.uniform(len(freqs))
    t = np.arange(spec.n_samples) / spec.fs
    sources = np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])
    clean = mats[k] @ sources
    noise = coloured_noise(gen, spec.n_channels, spec.n_samples, spec.fs, spec.noise_slope)
    p_sig = np.mean(clean**2)
    p_noise = np.mean(noise**2)
    noise *= np.sqrt(p_sig / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    return clean + noise


def generate_synthetic(spec: SyntheticSpec, workers: int = 1) -> Dataset:
    """Balanced synthetic dataset; trial ``i`` has label ``i mod n_classes``.

    Trial ``i`` draws only from the stream ``derive(seed, first_trial + i)``,
    so the output does not depend on ``workers`` and a held-out set is just
    a later block of trial indices of the same process.
    """
    mats = mixing_matrices(spec)
    idx = range(spec.first_trial, spec.first_trial + spec.n_trials)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            trials = list(ex.map(lambda i: _synth_trial(spec, mats, i), idx))
    else:
        trials = [_synth_trial(spec, mats, i) for i in idx]
    labels = np.array([i % spec.n_classes for i in idx], dtype=np.int64)
    return Dataset(np.stack(trials).astype(np.float32), labels, spec.fs, spec.n_classes)


# preprocessing ------------------------------------------------------------


def preprocess(
    ds: Dataset,
    fs_target: float = 250.0,
    band: tuple[float, float] = (4.0, 40.0),
    order: int = 5,
    normalize: bool = False,
) -> Dataset:
    """Integer decimation to ``fs_target`` then zero-phase band-pass.

    Decimation uses :func:`scipy.signal.decimate` (order-8 Chebyshev I
    anti-alias filter, zero-phase). With ``normalize`` each channel of each
    trial is z-scored after filtering.

    Raises
    ------
    InvalidInput
        ``fs`` is not an integer multiple of ``fs_target`` (or is lower).
    """
    x = ds.x.astype(np.float64)
    fs = ds.fs
    ratio = fs / fs_target
    q = int(round(ratio))
    if q < 1 or abs(ratio - q) > 1e-9 * ratio:
        raise InvalidInput(f"cannot decimate {fs} Hz to {fs_target} Hz by an integer factor")
    if q > 1:
        x = signal.decimate(x, q, axis=-1, zero_phase=True)
        fs = fs / q
    x = filter_zero_phase(x, design_butterworth_bandpass(order, band[0], band[1], fs))
    if normalize:
        sd = x.std(axis=-1, keepdims=True)
        x = (x - x.mean(axis=-1, keepdims=True)) / np.where(sd > 0, sd, 1.0)
    return Dataset(x, ds.labels, fs, ds.n_classes)
