"""Command-line interface.

Exit status: 0 on success, 1 on invalid input (bad flags, config, files),
2 on numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cf
from .data import SyntheticSpec, generate_synthetic, preprocess, read_container, write_container
from .errors import DomainError, MPNetError, NumericalFailure
from .gradcheck import TOLERANCE, run_gradcheck
from .model import MPNet, ModelConfig
from .train import TrainConfig, bench, count_params_flops, evaluate, train

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def model_config(run: cf.RunConfig, n_channels: int, n_classes: int, fs: float) -> ModelConfig:
    f = run.frontend
    return ModelConfig(
        n_channels=n_channels,
        n_classes=n_classes,
        fs=fs,
        features=f.features,
        kernel=f.kernel,
        windows=f.windows,
        dims=run.spdnet.dims,
        reeig_eps=run.spdnet.reeig_eps,
        pooling=run.pooling.strategy,
        ridge_scale=f.ridge_scale,
        ridge_floor=f.ridge_floor,
        order=f.order,
        low_band=f.low_band,
        high_band=f.high_band,
        causal=f.causal,
        precision=f.precision,
    )


def train_config(run: cf.RunConfig, workers: int | None = None) -> TrainConfig:
    t, o = run.train, run.optim
    return TrainConfig(
        max_epochs=t.max_epochs,
        patience=t.patience,
        batch_size=t.batch_size,
        seed=t.seed,
        lr=o.lr,
        beta1=o.beta1,
        beta2=o.beta2,
        eps_adam=o.eps,
        workers=t.workers if workers is None else workers,
        early_stop=t.early_stop,
    )


def synthetic_spec(run: cf.RunConfig, test: bool = False) -> SyntheticSpec:
    s = run.synth
    spec = SyntheticSpec(
        n_classes=s.n_classes,
        trials_per_class=s.trials_per_class,
        n_channels=s.channels,
        n_samples=s.samples,
        fs=s.fs,
        rhythms=s.rhythms,
        noise_slope=s.noise_slope,
        snr_db=s.snr_db,
        seed=s.seed,
        mixing_seed=s.mixing_seed,
    )
    if test:
        # held-out trials continue the same trial-index sequence
        spec = replace(spec, trials_per_class=s.test_trials_per_class, first_trial=spec.n_trials)
    return spec


def _preprocessed(ds, prep: dict):
    return preprocess(ds, prep["fs_target"], tuple(prep["band"]), prep["order"], prep["normalize"])


def _prep_settings(run: cf.RunConfig) -> dict:
    d = run.data
    return {"fs_target": d.fs_target, "band": list(d.band), "order": d.order, "normalize": d.normalize}


def cmd_synth(args) -> int:
    run = cf.load(args.spec)
    write_container(generate_synthetic(synthetic_spec(run), args.workers), args.out)
    if args.test_out:
        write_container(generate_synthetic(synthetic_spec(run, test=True), args.workers), args.test_out)
    return EXIT_OK


def cmd_train(args) -> int:
    run = cf.load(args.config)
    prep = _prep_settings(run)
    ds = _preprocessed(read_container(args.data), prep)
    cfg = train_config(run, args.workers)
    model = MPNet.init(model_config(run, ds.n_channels, ds.n_classes, ds.fs), cfg.seed)
    model.meta = {"preprocess": prep, "n_samples": ds.n_samples}
    sink = open(args.log, "w") if args.log else sys.stdout
    try:
        model, report = train(ds, model, cfg, log=lambda line: print(line, file=sink, flush=True))
    finally:
        if sink is not sys.stdout:
            sink.close()
    model.save(args.model_out)
    print(f"trained epochs={len(report.loss_history)} best_epoch={report.best_epoch} train_acc={report.acc:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = MPNet.load(args.model)
    prep = model.meta.get("preprocess")
    raw = read_container(args.data)
    ds = _preprocessed(raw, prep) if prep else raw
    report = evaluate(ds, model, workers=args.workers)
    fp = count_params_flops(model, ds.n_samples)
    lines = [
        f"acc={report.acc!r}",
        f"kappa={report.kappa!r}",
        f"f1={report.f1!r}",
        f"params={fp.params}",
        f"flops={fp.flops}",
    ]
    Path(args.report).write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_bench(args) -> int:
    run = cf.load(args.config)
    ds = _preprocessed(read_container(args.data), _prep_settings(run))
    mc = model_config(run, ds.n_channels, ds.n_classes, ds.fs)
    r = bench(ds, mc, train_config(run, args.workers), epochs=args.epochs, warmup=args.warmup)
    print(f"pooling={r.pooling} pooled_sec={r.pooled_seconds:.4f} unpooled_sec={r.unpooled_seconds:.4f} ratio={r.ratio:.3f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errs = run_gradcheck(args.seed)
    for name, err in errs.items():
        print(f"{name:<16} max_rel_err={err:.3e} {'ok' if err < TOLERANCE else 'FAIL'}")
    worst = max(errs.values())
    print(f"worst={worst:.3e} tolerance={TOLERANCE:g}")
    return EXIT_OK if worst < TOLERANCE else EXIT_NUMERICAL


def cmd_footprint(args) -> int:
    run = cf.load(args.config) if args.config else cf.RunConfig()
    fs = run.data.fs_target
    model = MPNet.init(model_config(run, args.channels, args.classes, fs), 0)
    fp = count_params_flops(model, args.samples)
    print(fp.census())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mpnet", description="Manifold-pooling SPD network for EEG decoding.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic trial container")
    s.add_argument("--spec", required=True, help="config file (synth.* keys)")
    s.add_argument("--out", required=True)
    s.add_argument("--test-out", help="also write held-out trials here")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--model-out", required=True)
    t.add_argument("--log", help="metrics log path (default: stdout)")
    t.add_argument("--workers", type=int, help="override train.workers")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model and write a report")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="per-epoch time of pooled vs unpooled models")
    b.add_argument("--config", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--epochs", type=int, default=5)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--workers", type=int, help="override train.workers")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("footprint", help="parameter and FLOP census")
    f.add_argument("--config")
    f.add_argument("--channels", type=int, default=22)
    f.add_argument("--classes", type=int, default=4)
    f.add_argument("--samples", type=int, default=1000)
    f.set_defaults(func=cmd_footprint)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (NumericalFailure, DomainError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MPNetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
