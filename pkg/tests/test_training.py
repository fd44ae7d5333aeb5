import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmsdnet import data as D
from mmsdnet.attention import ConfigError
from mmsdnet.model import TOY_CONFIG, ModelConfig, ParameterStore, init_params, random_sample
from mmsdnet.training import (
    REPORTED_PEAK_LR,
    PRESETS,
    AdamState,
    MetricsReport,
    TrainConfig,
    TrainingDiverged,
    accumulate_gradients,
    batch_gradients,
    evaluate,
    f1_score,
    lr_at,
    metrics_from_predictions,
    optimizer_step,
    steps_per_epoch,
    train,
    zero_modalities,
)

# (precision, recall, printed F1) for the five rows of the reported comparison table
TABLE_ROWS = [
    (85.73, 81.82, 83.72),
    (75.28, 72.73, 73.98),
    (89.41, 87.10, 88.23),
    (82.63, 78.32, 80.41),
    (92.58, 87.93, 90.19),
]


@pytest.fixture(scope="module")
def overfit_set():
    return D.generate(D.SynthSpec(n_samples=16, cue_mode="both", seed=0))


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "changes", [{"warmup_ratio": 0.0}, {"warmup_ratio": 1.0}, {"grad_accum_steps": 0}, {"batch_size": 0}, {"peak_lr": 0.0}]
)
def test_train_config_rejects_invalid(changes):
    with pytest.raises(ConfigError):
        replace(TrainConfig(), **changes)


def test_presets():
    assert PRESETS["default"] == TrainConfig()
    assert PRESETS["reported"].peak_lr == REPORTED_PEAK_LR == 5e-10
    d = TrainConfig()
    assert (d.warmup_ratio, d.epochs, d.batch_size, d.grad_accum_steps) == (0.02, 10, 4, 5)


# ---------------------------------------------------------------------------
# learning-rate schedule
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("total", [1, 2, 10, 100, 101, 1000, 4321])
def test_lr_landmarks(total):
    cfg = TrainConfig(peak_lr=3e-4)
    w = max(1, math.ceil(0.02 * total))
    assert lr_at(w, total, cfg) == cfg.peak_lr
    assert abs(lr_at(total, total, cfg)) < 1e-12 or total == w
    assert lr_at(0, total, cfg) == 0.0
    if (total - w) % 2 == 0 and total > w:
        assert abs(lr_at(w + (total - w) // 2, total, cfg) - cfg.peak_lr / 2) < 1e-12


def test_lr_warmup_is_linear():
    cfg = TrainConfig(peak_lr=1.0, warmup_ratio=0.1)
    assert [lr_at(s, 100, cfg) for s in range(11)] == pytest.approx([s / 10 for s in range(11)], abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5000), st.floats(0.001, 0.5))
def test_lr_continuous_and_nonincreasing_after_warmup(total, ratio):
    cfg = TrainConfig(peak_lr=1e-3, warmup_ratio=ratio)
    w = max(1, math.ceil(ratio * total))
    if w >= total:
        return
    lrs = [lr_at(s, total, cfg) for s in range(w, total + 1)]
    assert all(b <= a + 1e-18 for a, b in zip(lrs, lrs[1:]))
    # one step either side of the boundary moves by at most one ramp increment
    assert abs(lr_at(w + 1, total, cfg) - lr_at(w, total, cfg)) <= cfg.peak_lr / w + 1e-15
    assert all(0.0 <= x <= cfg.peak_lr for x in lrs)


def test_lr_errors():
    with pytest.raises(ConfigError):
        lr_at(0, 0, TrainConfig())
    with pytest.raises(ValueError):
        lr_at(11, 10, TrainConfig())


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def test_zero_gradient_is_fixed_point():
    p = init_params(TOY_CONFIG, 0)
    new, state = optimizer_step(p, {k: np.zeros_like(v) for k, v in p.items()}, AdamState(), 1e-2)
    for k in p:
        assert new[k].tobytes() == p[k].tobytes()
    assert state.t == 1


@pytest.mark.parametrize("g", [1.0, 0.001, -7.5])
def test_first_adam_step_moves_by_lr(g):
    p = ParameterStore({"w": np.array([2.0])})
    new, _ = optimizer_step(p, {"w": np.array([g])}, AdamState(), 0.01)
    assert new["w"][0] - 2.0 == pytest.approx(-0.01 * np.sign(g), rel=1e-5)


def test_adam_minimizes_square():
    p, state = ParameterStore({"p": np.array([1.0])}), AdamState()
    for _ in range(50):
        p, state = optimizer_step(p, {"p": 2 * p["p"]}, state, 0.1)
    assert abs(p["p"][0]) < 1e-2


def test_adam_does_not_mutate_inputs():
    p = ParameterStore({"w": np.ones(3)})
    before = p["w"].copy()
    optimizer_step(p, {"w": np.ones(3)}, AdamState(), 0.1)
    assert np.array_equal(p["w"], before)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        optimizer_step(ParameterStore({"w": np.ones(3)}), {"w": np.ones(2)}, AdamState(), 0.1)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("p,r,f1", TABLE_ROWS)
def test_f1_reproduces_reported_table(p, r, f1):
    assert abs(100 * f1_score(p / 100, r / 100) - f1) <= 0.01


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0))
def test_equal_precision_recall_is_fixed_point(x):
    assert f1_score(x, x) == pytest.approx(x, abs=1e-15)


def test_zero_denominators():
    r = MetricsReport(0, 0, 0, 5)
    assert (r.precision, r.recall, r.f1, r.accuracy) == (0.0, 0.0, 0.0, 1.0)
    assert MetricsReport(0, 0, 0, 0).accuracy == 0.0
    assert MetricsReport(0, 3, 2, 0).f1 == 0.0


def test_counts_and_table_row():
    r = metrics_from_predictions([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
    assert (r.tp, r.fp, r.fn, r.tn) == (2, 1, 1, 1)
    assert r.table_row() == "P 66.67  R 66.67  F1 66.67"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40), st.randoms())
def test_metrics_order_invariant(pairs, rnd):
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    a = metrics_from_predictions(*zip(*pairs))
    b = metrics_from_predictions(*zip(*shuffled))
    assert a == b


def test_evaluate_order_invariant():
    cfg = TOY_CONFIG
    rng = np.random.default_rng(0)
    ds = [random_sample(cfg, rng, label=i % 2) for i in range(12)]
    p = init_params(cfg, 1)
    assert evaluate(p, ds, cfg) == evaluate(p, ds[::-1], cfg)
    with pytest.raises(ValueError):
        evaluate(p, [], cfg)


# ---------------------------------------------------------------------------
# gradient accumulation
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("g,b", [(2, 2), (3, 1), (5, 2)])
def test_accumulation_equals_single_batch(g, b):
    cfg = TOY_CONFIG
    rng = np.random.default_rng(g * 10 + b)
    samples = [random_sample(cfg, rng, label=int(rng.integers(0, 2))) for _ in range(g * b)]
    params = init_params(cfg, 4)
    loss_acc, g_acc = accumulate_gradients(params, [samples[i * b : (i + 1) * b] for i in range(g)], cfg)
    loss_one, g_one = batch_gradients(params, samples, cfg)
    assert abs(loss_acc - loss_one) < 1e-10
    for k in params:
        assert np.abs(g_acc[k] - g_one[k]).max() < 1e-10, k
    p_acc, _ = optimizer_step(params, g_acc, AdamState(), 1e-3)
    p_one, _ = optimizer_step(params, g_one, AdamState(), 1e-3)
    for k in params:
        assert np.abs(p_acc[k] - p_one[k]).max() < 1e-10


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def test_steps_per_epoch():
    assert steps_per_epoch(200, TrainConfig()) == 10
    assert steps_per_epoch(16, PRESETS["overfit"]) == 4
    assert steps_per_epoch(21, TrainConfig()) == 2


def test_log_accounting_and_determinism():
    cfg = TOY_CONFIG
    rng = np.random.default_rng(3)
    ds = [random_sample(cfg, rng, label=i % 2) for i in range(10)]
    tcfg = TrainConfig(peak_lr=1e-3, epochs=2, batch_size=2, grad_accum_steps=2)
    seen = []
    p1, log1 = train(init_params(cfg, 0), ds, cfg, tcfg, on_log=seen.append)
    p2, log2 = train(init_params(cfg, 0), ds, cfg, tcfg)
    per = steps_per_epoch(10, tcfg)
    assert len(log1) == tcfg.epochs * per + tcfg.epochs
    assert seen == log1 == log2
    assert p1.to_bytes() == p2.to_bytes()
    ends = [r for r in log1 if "f1" in r]
    assert [r["epoch"] for r in ends] == [1, 2]
    assert [r["step"] for r in log1 if "f1" not in r] == list(range(1, 2 * per + 1))


def test_overfit_reaches_perfect_training_f1(overfit_set):
    cfg = ModelConfig()
    _, log = train(init_params(cfg, 0), overfit_set, cfg, PRESETS["overfit"])
    ends = [r for r in log if "f1" in r]
    assert ends[-1]["step"] <= 300
    assert ends[-1]["f1"] == 1.0
    assert ends[1]["loss"] < ends[0]["loss"]


def test_nan_loss_aborts_with_step():
    cfg = TOY_CONFIG
    rng = np.random.default_rng(0)
    ds = [random_sample(cfg, rng, label=i % 2) for i in range(4)]
    params = init_params(cfg, 0)
    params["head.w"] = np.full_like(params["head.w"], 1e308)
    with pytest.raises(TrainingDiverged, match="step 1") as e:
        with np.errstate(all="ignore"):
            train(params, ds, cfg, TrainConfig(epochs=1, batch_size=2, grad_accum_steps=1))
    assert e.value.step == 1


def test_train_empty_dataset():
    with pytest.raises(ValueError):
        train(init_params(TOY_CONFIG, 0), [], TOY_CONFIG)


def test_zero_modalities_keeps_shapes():
    ds = D.generate(D.SynthSpec(n_samples=4, seed=1))
    out = zero_modalities(ds, ("audio",))
    for a, b in zip(ds, out):
        assert b.audio.tobytes() == a.audio.tobytes()
        assert b.video.shape == a.video.shape and not b.video.any()
        assert b.tokens.shape == a.tokens.shape and not b.tokens.any()
        assert b.label == a.label
