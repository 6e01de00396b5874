"""The full decoder: frontend, node pooling (or the unpooled ablation), SPD network.

Parameters live in one flat ``dict`` keyed by dotted names. Gradients from
:meth:`MPNet.forward_backward` are *per sample* (leading batch axis) so that
callers can reduce them in a fixed order regardless of how the batch was
split across workers.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import frontend as fe
from . import pooling as pl
from . import spdnet as sn
from .errors import FormatError, InvalidInput
from .filters import HIGH_BAND, LOW_BAND, band_split

POOLINGS = pl.STRATEGIES + ("none",)
MODEL_MAGIC = b"MPNETMDL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int
    n_classes: int
    fs: float = 250.0
    features: int = 60
    kernel: int = fe.KERNEL_LEN
    windows: int = 4
    dims: tuple[int, ...] = sn.DEFAULT_DIMS
    reeig_eps: float = sn.DEFAULT_REEIG_EPS
    pooling: str = "em"
    ridge_scale: float = fe.DEFAULT_RIDGE_SCALE
    ridge_floor: float = fe.DEFAULT_RIDGE_FLOOR
    order: int = 5
    low_band: tuple[float, float] = LOW_BAND
    high_band: tuple[float, float] = HIGH_BAND
    causal: bool = False
    precision: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "low_band", tuple(float(b) for b in self.low_band))
        object.__setattr__(self, "high_band", tuple(float(b) for b in self.high_band))
        object.__setattr__(self, "pooling", self.pooling.lower())
        if self.pooling not in POOLINGS:
            raise InvalidInput(f"unknown pooling strategy {self.pooling!r}")
        if self.dims[0] != self.features:
            raise InvalidInput(f"first spdnet dim {self.dims[0]} must equal frontend features {self.features}")
        if self.n_channels < 1 or self.features < 1 or self.windows < 1:
            raise InvalidInput("channels, features and windows must be positive")
        if self.precision not in ("float32", "float64"):
            raise InvalidInput(f"frontend precision must be float32 or float64, got {self.precision!r}")
        self.spdnet  # validates dims / eps / classes

    @property
    def dtype(self) -> type:
        return np.float32 if self.precision == "float32" else np.float64

    @property
    def n_nodes(self) -> int:
        return 3 * self.windows

    @property
    def spdnet(self) -> sn.SpdNetConfig:
        return sn.SpdNetConfig(self.dims, self.reeig_eps, self.n_classes)

    @property
    def branches(self) -> int:
        return self.n_nodes if self.pooling == "none" else 1


class BatchResult(NamedTuple):
    loss: np.ndarray  # (B,)
    logits: np.ndarray  # (B, K)
    grads: dict | None  # name -> per-sample gradient (B, ...)


@dataclass
class MPNet:
    config: ModelConfig
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)  # JSON-serializable extras, e.g. preprocessing settings

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "MPNet":
        rng = np.random.default_rng(seed)
        params = {}
        for stream in ("low", "high"):
            k = fe.init_stream_kernels(rng, config.n_channels, config.features, config.kernel)
            params.update({f"{stream}.{name}": arr for name, arr in zip(k._fields, k)})
        if config.pooling in pl.WEIGHTED:
            params["pool.w"] = np.zeros(config.n_nodes)
        net = sn.SpdNetParams.init(config.spdnet, rng, config.branches)
        for i, w in enumerate(net.bimaps):
            params[f"bimap.{i}"] = w
        params["fc.weight"] = net.fc_weight
        params["fc.bias"] = net.fc_bias
        return cls(config, params)

    # parameter groups ---------------------------------------------------
    @property
    def stiefel_names(self) -> list[str]:
        return [k for k in self.params if k.startswith("bimap.")]

    @property
    def euclidean_names(self) -> list[str]:
        return [k for k in self.params if not k.startswith("bimap.")]

    def kernels(self, stream: str) -> fe.StreamKernels:
        return fe.StreamKernels(*(self.params[f"{stream}.{f}"] for f in fe.StreamKernels._fields))

    def spdnet_params(self) -> sn.SpdNetParams:
        n = len(self.config.dims) - 1
        return sn.SpdNetParams(
            [self.params[f"bimap.{i}"] for i in range(n)], self.params["fc.weight"], self.params["fc.bias"]
        )

    # data path ----------------------------------------------------------
    def split_bands(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Parameter-free band split; callers may cache its output across epochs."""
        c = self.config
        low, high = band_split(x, c.fs, c.order, c.low_band, c.high_band, c.causal)
        return np.ascontiguousarray(low, dtype=c.dtype), np.ascontiguousarray(high, dtype=c.dtype)

    def nodes(self, x_low: np.ndarray, x_high: np.ndarray) -> np.ndarray:
        """The ``3 * W`` covariance nodes per trial, shape ``(B, N, D, D)``."""
        c = self.config
        h_low, _ = fe.stream_conv(x_low, self.kernels("low"), c.dtype)
        h_high, _ = fe.stream_conv(x_high, self.kernels("high"), c.dtype)
        return fe.nodes_from_streams(h_low, h_high, c.windows, c.ridge_scale, c.ridge_floor)

    def forward_backward(
        self, x_low: np.ndarray, x_high: np.ndarray, labels: np.ndarray | None = None, backward: bool = True
    ) -> BatchResult:
        """Run a batch ``(B, C, T)`` of band-split trials.

        With ``labels=None`` only logits are produced.
        """
        c = self.config
        h_low, low_cache = fe.stream_conv(x_low, self.kernels("low"), c.dtype)
        h_high, high_cache = fe.stream_conv(x_high, self.kernels("high"), c.dtype)
        b = h_low.shape[0]
        # windows stay in the working precision; covariances are formed in float64
        windows = [fe.window_split(h, c.windows) for h in (h_low, h_high, fe.coupling(h_low, h_high))]
        nodes = np.empty((b, 3, c.windows, c.features, c.features))
        for k, win in enumerate(windows):
            nodes[:, k] = fe.covariance(win, c.ridge_scale, c.ridge_floor)
        nodes = nodes.reshape(b, c.n_nodes, c.features, c.features)

        net = self.spdnet_params()
        if c.pooling == "none":
            feat, tape = sn.stack_forward(nodes, net.bimaps, c.reeig_eps)
            feat = feat.reshape(b, -1)
        else:
            pooled, pcache = pl.pool(nodes, c.pooling, self.params.get("pool.w"))
            feat, tape = sn.stack_forward(pooled, net.bimaps, c.reeig_eps)
        logits = sn.classify(feat, net.fc_weight, net.fc_bias)
        if labels is None:
            return BatchResult(np.full(b, np.nan), logits, None)
        loss, dlogits = sn.cross_entropy(logits, labels)
        if not backward:
            return BatchResult(loss, logits, None)

        grads = {}
        dfeat, grads["fc.weight"], grads["fc.bias"] = sn.classify_backward(feat, net.fc_weight, dlogits)
        if c.pooling == "none":
            dnodes, dws = sn.stack_backward(tape, net.bimaps, c.reeig_eps, dfeat.reshape(b, c.n_nodes, -1))
            dws = [dw.sum(axis=1) for dw in dws]
        else:
            dpooled, dws = sn.stack_backward(tape, net.bimaps, c.reeig_eps, dfeat)
            dnodes, dw_pool = pl.pool_backward(pcache, dpooled)
            if dw_pool is not None:
                grads["pool.w"] = dw_pool
        for i, dw in enumerate(dws):
            grads[f"bimap.{i}"] = dw

        dnodes = dnodes.reshape(b, 3, c.windows, c.features, c.features)
        d_coup = fe.covariance_backward(windows[2], dnodes[:, 2], c.ridge_scale)
        d_low, d_low_win = fe.window_views(h_low, c.windows)
        d_high, d_high_win = fe.window_views(h_high, c.windows)
        fe.covariance_backward(windows[0], dnodes[:, 0], c.ridge_scale, out=d_low_win)
        fe.covariance_backward(windows[1], dnodes[:, 1], c.ridge_scale, out=d_high_win)
        d_low_win += d_coup
        d_high_win += d_coup
        for stream, cache, dh in (("low", low_cache, d_low), ("high", high_cache, d_high)):
            for name, g in zip(fe.StreamKernels._fields, fe.stream_conv_backward(cache, dh)):
                grads[f"{stream}.{name}"] = g
        return BatchResult(loss, logits, grads)

    def predict(self, x_low: np.ndarray, x_high: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward_backward(x_low, x_high).logits, axis=-1)

    def copy(self) -> "MPNet":
        return MPNet(self.config, {k: v.copy() for k, v in self.params.items()}, dict(self.meta))

    def to_bytes(self) -> bytes:
        """Deterministic binary serialization (JSON header + little-endian float64 arrays)."""
        manifest = [[k, list(v.shape)] for k, v in self.params.items()]
        cfg = asdict(self.config)
        header = json.dumps({"config": cfg, "arrays": manifest, "meta": self.meta}, sort_keys=True).encode()
        parts = [MODEL_MAGIC, struct.pack("<HI", MODEL_VERSION, len(header)), header]
        parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in self.params.values()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MPNet":
        if len(blob) < 14 or blob[:8] != MODEL_MAGIC:
            raise FormatError("not a model file (bad magic)")
        version, hlen = struct.unpack_from("<HI", blob, 8)
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported model version {version}")
        if len(blob) < 14 + hlen:
            raise FormatError("model file truncated in header")
        try:
            head = json.loads(blob[14 : 14 + hlen])
            cfg = head["config"]
            for key in ("dims", "low_band", "high_band"):
                cfg[key] = tuple(cfg[key])
            config = ModelConfig(**cfg)
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"corrupt model header: {exc}") from None
        params, off = {}, 14 + hlen
        for name, shape in head["arrays"]:
            n = int(np.prod(shape)) if shape else 1
            if off + 8 * n > len(blob):
                raise FormatError(f"model file truncated at array {name!r}")
            params[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
            off += 8 * n
        if off != len(blob):
            raise FormatError(f"model file has {len(blob) - off} trailing bytes")
        return cls(config, params, head.get("meta", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "MPNet":
        return cls.from_bytes(Path(path).read_bytes())
