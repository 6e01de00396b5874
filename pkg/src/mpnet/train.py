"""Training loop, evaluation, the unpooled ablation, timing bench and footprint census."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import metrics as mx
from .data import Dataset
from .errors import DomainError, InvalidInput, NumericalFailure
from .model import MPNet, ModelConfig
from .optim import AdamState, StiefelParam, euclidean_adam_step, riemannian_adam_step

MAX_CONSECUTIVE_SKIPS = 3


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1500
    patience: int = 150
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    workers: int = 1
    early_stop: str = "train_loss"

    def __post_init__(self):
        if self.max_epochs < 1:
            raise InvalidInput("max_epochs must be >= 1")
        if not 0 <= self.patience < self.max_epochs:
            raise InvalidInput(f"need 0 <= patience < max_epochs, got {self.patience} and {self.max_epochs}")
        if self.batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")
        if self.workers < 1:
            raise InvalidInput("workers must be >= 1")
        if self.early_stop != "train_loss":
            raise InvalidInput(f"unsupported early-stop source {self.early_stop!r} (only train_loss)")
        if not self.lr > 0:
            raise InvalidInput("learning rate must be positive")


@dataclass
class MetricsReport:
    acc: float
    kappa: float
    f1: float
    confusion: np.ndarray
    loss: float = float("nan")
    loss_history: list = field(default_factory=list)
    acc_history: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @classmethod
    def from_predictions(cls, labels, preds, n_classes: int, **extra) -> "MetricsReport":
        cm = mx.confusion_matrix(labels, preds, n_classes)
        return cls(mx.accuracy(cm), mx.cohen_kappa(cm), mx.macro_f1(cm), cm, **extra)


@dataclass
class EarlyStopState:
    best_loss: float = math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    snapshot: dict | None = None

    def update(self, epoch: int, loss: float, params: dict) -> None:
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
            self.snapshot = {k: v.copy() for k, v in params.items()}
        else:
            self.epochs_since_improvement += 1

    def should_stop(self, patience: int) -> bool:
        # patience=0 stops after the first non-improving epoch
        return self.epochs_since_improvement >= max(patience, 1)


class Optimizer:
    """Adam for Euclidean parameters and Riemannian Adam for BiMap weights."""

    def __init__(self, model: MPNet, cfg: TrainConfig):
        hyper = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps_adam=cfg.eps_adam)
        self.model = model
        self.states = {k: AdamState.like(model.params[k], **hyper) for k in model.euclidean_names}
        self.stiefel = {k: StiefelParam(model.params[k], AdamState.like(model.params[k], **hyper))
                        for k in model.stiefel_names}

    def step(self, grads: dict) -> None:
        """Apply one update. Raises NumericalFailure (state untouched) on non-finite gradients."""
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalFailure(f"non-finite gradient for {k}")
        p = self.model.params
        for k, st in self.states.items():
            p[k] = euclidean_adam_step(p[k], grads[k], st)
        for k, sp in self.stiefel.items():
            p[k] = riemannian_adam_step(sp, grads[k]).w


def _chunks(n: int, workers: int) -> list[np.ndarray]:
    return [c for c in np.array_split(np.arange(n), min(workers, n)) if len(c)]


def batch_forward_backward(model: MPNet, x_low, x_high, labels, pool: ThreadPoolExecutor | None = None, workers: int = 1):
    """Per-sample losses, logits and gradients for one batch.

    The batch is cut into ``workers`` contiguous chunks; results are
    concatenated in trial order, so the output is identical for any worker
    count.
    """
    chunks = _chunks(len(labels), workers)
    run = lambda idx: model.forward_backward(x_low[idx], x_high[idx], labels[idx])  # noqa: E731
    results = list(pool.map(run, chunks)) if pool is not None and len(chunks) > 1 else [run(c) for c in chunks]
    loss = np.concatenate([r.loss for r in results])
    logits = np.concatenate([r.logits for r in results])
    grads = {k: np.concatenate([r.grads[k] for r in results]) for k in results[0].grads}
    return loss, logits, grads


def _run_epoch(model, opt, x_low, x_high, labels, order, batch_size, pool, workers, skips):
    """One pass over ``order``. Returns (mean loss, accuracy, consecutive skips)."""
    loss_sum, correct, seen = 0.0, 0, 0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        try:
            loss, logits, per_sample = batch_forward_backward(model, x_low[idx], x_high[idx], labels[idx], pool, workers)
            # fixed-order reduction over the batch axis
            grads = {k: g.sum(axis=0) / len(idx) for k, g in per_sample.items()}
            opt.step(grads)
        except (NumericalFailure, DomainError) as exc:
            skips += 1
            if skips >= MAX_CONSECUTIVE_SKIPS:
                raise NumericalFailure(f"{skips} consecutive updates skipped; last error: {exc}") from exc
            continue
        skips = 0
        loss_sum += float(loss.sum())
        correct += int(np.sum(np.argmax(logits, axis=-1) == labels[idx]))
        seen += len(idx)
    if seen == 0:
        return math.nan, math.nan, skips
    return loss_sum / seen, correct / seen, skips


def _check_dataset(ds: Dataset, model: MPNet) -> None:
    c = model.config
    if ds.n_trials == 0:
        raise InvalidInput("dataset is empty")
    if ds.n_channels != c.n_channels:
        raise InvalidInput(f"dataset has {ds.n_channels} channels, model expects {c.n_channels}")
    if ds.n_classes > c.n_classes:
        raise InvalidInput(f"dataset has {ds.n_classes} classes, model has {c.n_classes}")
    if abs(ds.fs - c.fs) > 1e-6 * c.fs:
        raise InvalidInput(f"dataset sampled at {ds.fs} Hz, model built for {c.fs} Hz")


def train(
    dataset: Dataset,
    model: MPNet,
    cfg: TrainConfig,
    log: Callable[[str], None] | None = None,
) -> tuple[MPNet, MetricsReport]:
    """Mini-batch training with early stopping on the epoch training loss.

    ``model`` is updated in place and returned. At exit the parameters of
    the epoch with the lowest recorded loss are restored. The returned
    report holds training-set metrics of the restored model plus the
    per-epoch histories. ``log`` receives one line per epoch:
    ``epoch=<n> loss=<f> acc=<f> sec=<f>``.
    """
    _check_dataset(dataset, model)
    x_low, x_high = model.split_bands(dataset.x)
    labels = dataset.labels
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Optimizer(model, cfg)
    stop = EarlyStopState()
    history = dict(loss_history=[], acc_history=[], epoch_seconds=[])
    skips = 0
    stopped = False
    with ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else _null_pool() as pool:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(dataset.n_trials)
            loss, acc, skips = _run_epoch(model, opt, x_low, x_high, labels, order, cfg.batch_size, pool, cfg.workers, skips)
            sec = time.perf_counter() - t0
            history["loss_history"].append(loss)
            history["acc_history"].append(acc)
            history["epoch_seconds"].append(sec)
            if log is not None:
                log(f"epoch={epoch} loss={loss:.6f} acc={acc:.4f} sec={sec:.3f}")
            if not math.isnan(loss):
                stop.update(epoch, loss, model.params)
            if stop.should_stop(cfg.patience):
                stopped = True
                break
    if stop.snapshot is not None:
        model.params = stop.snapshot
    report = evaluate(dataset, model, workers=cfg.workers, x_bands=(x_low, x_high))
    report.loss_history = history["loss_history"]
    report.acc_history = history["acc_history"]
    report.epoch_seconds = history["epoch_seconds"]
    report.best_epoch = stop.best_epoch
    report.stopped_early = stopped
    return model, report


class _null_pool:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def evaluate(
    dataset: Dataset, model: MPNet, batch_size: int = 64, workers: int = 1, x_bands=None
) -> MetricsReport:
    """Single deterministic pass; parameters are not touched."""
    _check_dataset(dataset, model)
    x_low, x_high = x_bands if x_bands is not None else model.split_bands(dataset.x)
    preds, losses = [], []
    for start in range(0, dataset.n_trials, batch_size):
        sl = slice(start, start + batch_size)
        r = model.forward_backward(x_low[sl], x_high[sl], dataset.labels[sl], backward=False)
        preds.append(np.argmax(r.logits, axis=-1))
        losses.append(r.loss)
    preds = np.concatenate(preds)
    return MetricsReport.from_predictions(
        dataset.labels, preds, model.config.n_classes, loss=float(np.concatenate(losses).mean())
    )


def no_pooling_baseline(
    train_set: Dataset, test_set: Dataset, config: ModelConfig, cfg: TrainConfig, seed: int | None = None
) -> MetricsReport:
    """Train and evaluate the unpooled ablation (all nodes through a shared stack, features concatenated)."""
    model = MPNet.init(replace(config, pooling="none"), cfg.seed if seed is None else seed)
    train(train_set, model, cfg)
    return evaluate(test_set, model, workers=cfg.workers)


# timing -------------------------------------------------------------------


@dataclass(frozen=True)
class BenchResult:
    pooled_seconds: float
    unpooled_seconds: float
    pooling: str

    @property
    def ratio(self) -> float:
        return self.unpooled_seconds / self.pooled_seconds


def time_epochs(dataset: Dataset, model: MPNet, cfg: TrainConfig, epochs: int = 5, warmup: int = 1, bands=None) -> float:
    """Fastest wall time over ``epochs`` full training epochs (forward, backward and update).

    The minimum is the estimate least affected by other load on the machine.
    """
    x_low, x_high = bands if bands is not None else model.split_bands(dataset.x)
    opt = Optimizer(model, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    times = []
    with ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else _null_pool() as pool:
        for i in range(warmup + epochs):
            order = rng.permutation(dataset.n_trials)
            t0 = time.perf_counter()
            _run_epoch(model, opt, x_low, x_high, dataset.labels, order, cfg.batch_size, pool, cfg.workers, 0)
            if i >= warmup:
                times.append(time.perf_counter() - t0)
    return float(min(times))


def bench(dataset: Dataset, config: ModelConfig, cfg: TrainConfig, epochs: int = 5, warmup: int = 1) -> BenchResult:
    """Per-epoch time of the configured pooled model against the unpooled ablation.

    Both variants see the same band-split arrays, so they consume identical
    frontend inputs.
    """
    pooling = config.pooling if config.pooling != "none" else "em"
    pooled = MPNet.init(replace(config, pooling=pooling), cfg.seed)
    unpooled = MPNet.init(replace(config, pooling="none"), cfg.seed)
    _check_dataset(dataset, pooled)
    bands = pooled.split_bands(dataset.x)
    t_pooled = time_epochs(dataset, pooled, cfg, epochs, warmup, bands)
    t_unpooled = time_epochs(dataset, unpooled, cfg, epochs, warmup, bands)
    return BenchResult(t_pooled, t_unpooled, pooling)


# footprint ----------------------------------------------------------------


def jacobi_sweeps_estimate(n: int) -> int:
    """Typical sweep count of the cyclic Jacobi solver (observed: 8, 9, 10 sweeps at n = 15, 30, 60)."""
    return math.ceil(math.log2(max(n, 2))) + 4


def jacobi_flops(n: int, sweeps: int | None = None) -> int:
    """Estimated FLOPs of one ``n x n`` Jacobi eigendecomposition.

    A sweep applies ``n(n-1)/2`` rotations; each rotation updates about
    ``n`` entries of the matrix and ``n`` of the eigenvector matrix at
    8 FLOPs per pair, i.e. ``16 n`` FLOPs.
    """
    sweeps = jacobi_sweeps_estimate(n) if sweeps is None else sweeps
    return sweeps * (n * (n - 1) // 2) * 16 * n


@dataclass
class Footprint:
    params: int
    flops: int
    eig_flops: int
    groups: dict  # name -> (params, flops)

    def __iter__(self):
        return iter((self.params, self.flops))

    def census(self) -> str:
        rows = [f"{'group':<18}{'params':>10}{'flops':>14}"]
        rows += [f"{k:<18}{p:>10}{f:>14}" for k, (p, f) in self.groups.items()]
        rows.append(f"{'total':<18}{self.params:>10}{self.flops:>14}")
        rows.append(f"{'eig (separate)':<18}{'':>10}{self.eig_flops:>14}")
        return "\n".join(rows)


def count_params_flops(model: MPNet, n_samples: int = 1000) -> Footprint:
    """Exact parameter census and per-trial FLOP estimate for trials of ``n_samples``.

    A multiply-add counts as 2 FLOPs and bias additions as 1. Eigen
    decompositions are excluded from ``flops`` and reported as
    ``eig_flops`` (Jacobi sweep estimate).
    """
    c = model.config
    p = model.params
    size = lambda prefix: int(sum(v.size for k, v in p.items() if k.startswith(prefix)))  # noqa: E731
    d, ch, taps = c.features, c.n_channels, c.kernel
    t_out = n_samples - taps + 1
    tw = t_out // c.windows
    n = c.n_nodes
    groups = {}
    conv = 2 * d * ch * n_samples + d * n_samples + 2 * d * taps * t_out + d * t_out
    groups["frontend.low"] = (size("low."), conv)
    groups["frontend.high"] = (size("high."), conv)
    groups["coupling"] = (0, d * t_out)
    groups["covariance"] = (0, n * (2 * d * d * tw + d))
    recon = lambda m: 2 * m**3 + m * m  # noqa: E731  U diag(f) U^T
    eig = 0
    if c.pooling in ("em", "wem"):
        groups["pooling"] = (size("pool."), 2 * n * d * d)
    elif c.pooling in ("rm", "wrm"):
        groups["pooling"] = (size("pool."), n * recon(d) + 2 * n * d * d + recon(d))
        eig += (n + 1) * jacobi_flops(d)
    branch = 0
    for w in (p[f"bimap.{i}"] for i in range(len(c.dims) - 1)):
        do, di = w.shape
        branch += 2 * do * di * di + 2 * do * do * di + recon(do)
        eig += c.branches * jacobi_flops(do)
    branch += recon(c.dims[-1])  # LogEig
    groups["spdnet"] = (size("bimap."), c.branches * branch)
    k, f = p["fc.weight"].shape
    groups["fc"] = (size("fc."), 2 * k * f + k)
    total_p = sum(g[0] for g in groups.values())
    if total_p != sum(v.size for v in p.values()):
        raise AssertionError("parameter census does not cover every tensor")
    return Footprint(total_p, sum(g[1] for g in groups.values()), eig, groups)
