import math

import numpy as np
import pytest

from mpnet import metrics as mx
from mpnet.data import SyntheticSpec, generate_synthetic, preprocess
from mpnet.errors import InvalidInput, NumericalFailure
from mpnet.model import MPNet, ModelConfig
from mpnet.train import (
    BenchResult,
    EarlyStopState,
    MetricsReport,
    TrainConfig,
    bench,
    count_params_flops,
    evaluate,
    jacobi_flops,
    no_pooling_baseline,
    train,
)

CFG = ModelConfig(n_channels=8, n_classes=2, features=8, dims=(8, 6, 4))


@pytest.fixture(scope="module")
def small():
    spec = SyntheticSpec(trials_per_class=12, n_channels=8, n_samples=400, snr_db=20.0, seed=5)
    return preprocess(generate_synthetic(spec))


def fit(ds, cfg, seed=0, config=CFG):
    model = MPNet.init(config, seed)
    return train(ds, model, cfg)


def test_train_config_validation():
    with pytest.raises(InvalidInput):
        TrainConfig(max_epochs=10, patience=10)
    with pytest.raises(InvalidInput):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidInput):
        TrainConfig(early_stop="val_loss")


def test_early_stop_state():
    st = EarlyStopState()
    st.update(1, 1.0, {"a": np.zeros(1)})
    st.update(2, 1.0, {"a": np.ones(1)})  # ties do not count as improvement
    assert st.best_epoch == 1 and st.epochs_since_improvement == 1
    assert st.should_stop(0) and st.should_stop(1) and not st.should_stop(2)
    assert st.snapshot["a"][0] == 0.0


def test_patience_zero_stops_after_first_non_improving_epoch(small):
    _, rep = fit(small, TrainConfig(max_epochs=60, patience=0, batch_size=8, lr=0.2))
    hist = rep.loss_history
    first_bad = next(i for i in range(1, len(hist)) if hist[i] >= min(hist[:i]))
    assert len(hist) == first_bad + 1
    assert rep.stopped_early


def test_restores_best_snapshot(small):
    cfg = TrainConfig(max_epochs=25, patience=3, batch_size=8, lr=0.05)
    model, rep = fit(small, cfg)
    assert rep.loss_history[rep.best_epoch - 1] == min(rep.loss_history)
    rerun, _ = fit(small, TrainConfig(max_epochs=rep.best_epoch, patience=0, batch_size=8, lr=0.05))
    for k, v in model.params.items():
        assert np.array_equal(v, rerun.params[k]), k


def test_seed_and_worker_determinism(small):
    cfg = TrainConfig(max_epochs=4, patience=2, batch_size=7, seed=3)
    a, _ = fit(small, cfg)
    b, _ = fit(small, cfg)
    c, _ = fit(small, TrainConfig(max_epochs=4, patience=2, batch_size=7, seed=3, workers=3))
    assert a.to_bytes() == b.to_bytes() == c.to_bytes()
    d, _ = fit(small, TrainConfig(max_epochs=4, patience=2, batch_size=7, seed=4))
    assert d.to_bytes() != a.to_bytes()


def test_log_lines(small):
    lines = []
    train(small, MPNet.init(CFG), TrainConfig(max_epochs=2, patience=1), log=lines.append)
    assert len(lines) == 2 and lines[0].startswith("epoch=1 loss=") and " acc=" in lines[0] and " sec=" in lines[0]


def test_evaluate_does_not_mutate(small):
    model = MPNet.init(CFG, 1)
    before = model.to_bytes()
    rep = evaluate(small, model, batch_size=5)
    assert model.to_bytes() == before
    cm = rep.confusion
    assert rep.acc == mx.accuracy(cm) and rep.kappa == mx.cohen_kappa(cm) and rep.f1 == mx.macro_f1(cm)
    assert cm.sum() == small.n_trials


def test_consecutive_skips_raise(small):
    model = MPNet.init(CFG)
    model.params["fc.weight"][:] = np.nan
    with pytest.raises(NumericalFailure, match="3 consecutive"):
        train(small, model, TrainConfig(max_epochs=2, patience=1, batch_size=4))


def test_dataset_mismatch_rejected(small):
    with pytest.raises(InvalidInput):
        evaluate(small, MPNet.init(ModelConfig(n_channels=9, n_classes=2, features=8, dims=(8, 4))))


def test_high_snr_reaches_95_percent():
    spec = SyntheticSpec(trials_per_class=20, n_channels=8, n_samples=500, snr_db=40.0, seed=9)
    ds = preprocess(generate_synthetic(spec))
    _, rep = fit(ds, TrainConfig(max_epochs=200, patience=20, batch_size=8, lr=0.01))
    assert max(rep.acc_history) >= 0.95
    assert rep.acc >= 0.95


def test_metrics_report_examples():
    perfect = MetricsReport.from_predictions([0, 1, 2, 3], [0, 1, 2, 3], 4)
    assert (perfect.acc, perfect.kappa, perfect.f1) == (1.0, 1.0, 1.0)
    const = MetricsReport.from_predictions(np.repeat(np.arange(4), 5), np.zeros(20, int), 4)
    assert const.acc == 0.25 and const.kappa == 0.0


def test_no_pooling_baseline_runs(small):
    rep = no_pooling_baseline(small, small, CFG, TrainConfig(max_epochs=2, patience=1, batch_size=12))
    assert rep.confusion.sum() == small.n_trials
    assert 0.0 <= rep.acc <= 1.0


def test_bench_smoke(small):
    r = bench(small, CFG, TrainConfig(batch_size=12), epochs=1, warmup=0)
    assert isinstance(r, BenchResult) and r.pooling == "em"
    assert r.pooled_seconds > 0 and r.ratio == r.unpooled_seconds / r.pooled_seconds


def test_footprint_default_census():
    fp = count_params_flops(MPNet.init(ModelConfig(n_channels=22, n_classes=4)), 1000)
    params, flops = fp
    assert params == 9454
    assert fp.groups["frontend.low"][0] == fp.groups["frontend.high"][0] == 22 * 60 + 60 + 60 * 32 + 60
    assert fp.groups["spdnet"][0] == 2250 and fp.groups["fc"][0] == 4 * 120 + 4
    assert flops == sum(f for _, f in fp.groups.values())
    assert "total" in fp.census()


def test_footprint_unpooled_differs_only_in_fc():
    pooled = count_params_flops(MPNet.init(ModelConfig(n_channels=22, n_classes=4)))
    unpooled = count_params_flops(MPNet.init(ModelConfig(n_channels=22, n_classes=4, pooling="none")))
    assert unpooled.params - pooled.params == (1440 - 120) * 4
    assert unpooled.groups["spdnet"][1] == 12 * pooled.groups["spdnet"][1]


def test_jacobi_flops():
    assert jacobi_flops(15, sweeps=1) == 105 * 16 * 15
    assert jacobi_flops(60) == (math.ceil(math.log2(60)) + 4) * 1770 * 16 * 60
