import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from averagetime.data import SeriesMatrix, make_windows
from averagetime.model import ModelConfig, init_params
from averagetime.synth import SynthSpec, generate
from averagetime.train import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    TrainingError,
    adam_step,
    evaluate,
    train,
)


def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([1.5, -2.0])}
    out, _ = adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(out["w"], p["w"])


def test_adam_first_step():
    out, state = adam_step({"w": np.array(2.0)}, {"w": np.array(1.0)}, AdamState(), 0.1)
    assert out["w"] == pytest.approx(2.0 - 0.1 / (1 + 1e-8), abs=1e-15)
    assert state.step == 1


def test_adam_descends_on_quadratic():
    p = {"w": np.array([3.0, -1.0])}
    state = AdamState()
    losses = [float(np.sum(p["w"] ** 2))]
    for _ in range(2):
        p, state = adam_step(p, {"w": 2 * p["w"]}, state, 0.05)
        losses.append(float(np.sum(p["w"] ** 2)))
    assert losses[2] < losses[1] < losses[0]


def test_adam_rejects_non_finite():
    with pytest.raises(TrainingError, match="'w'"):
        adam_step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])}, AdamState(), 0.1)


def test_adam_skips_params_without_grad():
    p = {"a": np.ones(2), "b": np.ones(2)}
    out, _ = adam_step(p, {"a": np.ones(2)}, AdamState(), 0.1)
    assert out["b"] is p["b"]


def test_early_stopping_trace():
    stop = EarlyStopping(patience=5)
    stopped_at = None
    for epoch, loss in enumerate([1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95, 0.5], start=1):
        stop.update(loss, epoch)
        if stop.should_stop:
            stopped_at = epoch
            break
    assert stopped_at == 7 and stop.best_epoch == 2


def test_equal_loss_is_not_improvement():
    stop = EarlyStopping(patience=1)
    stop.update(1.0, 1)
    assert not stop.update(1.0, 2)
    assert stop.should_stop


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def _windows(values, L=4, H=2):
    return make_windows(SeriesMatrix(np.asarray(values, dtype=float), ("a",)), L, H)


def _tiny(L=4, H=2, **kw):
    return ModelConfig(n_channels=1, lookback=L, horizon=H, d_model=4, n_heads=1, **kw)


def test_evaluate_single_point():
    cfg = ModelConfig(n_channels=1, lookback=2, horizon=1, d_model=4, n_heads=1, revin_affine=False)
    p = init_params(cfg)
    for k in ("heads_raw.w", "heads_raw.b", "heads_emb.w", "heads_emb.b"):
        p[k].data[...] = 0.0
    # constant lookback 0 -> prediction 0
    r = evaluate(p, cfg, _windows([[0.0, 0.0, 3.0]], 2, 1))
    assert (r.mse, r.mae) == (9.0, 3.0)
    assert r.per_horizon_mse == [9.0]


def test_evaluate_perfect_fit():
    cfg = ModelConfig(n_channels=1, lookback=2, horizon=1, d_model=4, n_heads=1, revin_affine=False)
    p = init_params(cfg)
    for k in ("heads_raw.w", "heads_raw.b", "heads_emb.w", "heads_emb.b"):
        p[k].data[...] = 0.0
    r = evaluate(p, cfg, _windows([[5.0, 5.0, 5.0, 5.0]], 2, 1))
    assert (r.mse, r.mae) == (0.0, 0.0)


def test_evaluate_empty_split():
    cfg = _tiny()
    with pytest.raises(ValueError, match="empty"):
        evaluate(init_params(cfg), cfg, _windows([[1.0, 2.0, 3.0]]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_mae_bounded_by_root_mse(seed):
    rng = np.random.default_rng(seed)
    cfg = _tiny(n_transformer_layers=1)
    r = evaluate(init_params(cfg, seed), cfg, _windows(rng.normal(size=(1, 30)) * rng.uniform(0.1, 10)))
    assert r.mae <= np.sqrt(r.mse) + 1e-12


def _sine_splits(length=400):
    s = generate(SynthSpec("sinusoids", 2, length, 0.1, 0))
    tr = SeriesMatrix(s.values[:, :300], s.channel_names)
    va = SeriesMatrix(s.values[:, 300:], s.channel_names)
    return make_windows(tr, 24, 12), make_windows(va, 24, 12)


def test_lr_to_zero_keeps_initial_loss():
    tr, va = _sine_splits()
    cfg = ModelConfig(n_channels=2, lookback=24, horizon=12, d_model=8, n_heads=2, n_mlp_layers=1)
    p = init_params(cfg, seed=1)
    before = evaluate(p, cfg, tr).mse
    _, rep = train(p, cfg, tr, va, TrainConfig(learning_rate=1e-12, max_epochs=1, batch_size=32))
    assert abs(rep.history[0][0] - before) < 1e-6


def test_training_reduces_validation_loss_and_is_deterministic():
    tr, va = _sine_splits()
    cfg = ModelConfig(n_channels=2, lookback=24, horizon=12, d_model=8, n_heads=2,
                      n_transformer_layers=1, dropout=0.1)
    p = init_params(cfg, seed=2)
    tc = TrainConfig(learning_rate=1e-2, max_epochs=6, batch_size=32, seed=5)
    best, rep = train(p, cfg, tr, va, tc)
    best2, rep2 = train(p, cfg, tr, va, tc)
    assert rep.mse < evaluate(p, cfg, va).mse
    assert rep.mse == evaluate(best, cfg, va).mse
    assert rep.to_dict(timing=False) == rep2.to_dict(timing=False)
    for k in best:
        np.testing.assert_array_equal(best[k].data, best2[k].data)
    # returned parameters are the best recorded epoch
    assert rep.mse == min(v for _, v in rep.history)
    assert 1 <= rep.best_epoch <= rep.epochs_run
    assert "epoch_seconds" not in rep.to_dict(timing=False)


def test_max_epochs_one():
    tr, va = _sine_splits()
    cfg = ModelConfig(n_channels=2, lookback=24, horizon=12, d_model=8, n_heads=2)
    _, rep = train(init_params(cfg), cfg, tr, va, TrainConfig(max_epochs=1, patience=50))
    assert rep.epochs_run == 1 and rep.best_epoch == 1


def test_train_does_not_mutate_input_params():
    tr, va = _sine_splits()
    cfg = ModelConfig(n_channels=2, lookback=24, horizon=12, d_model=8, n_heads=2)
    p = init_params(cfg)
    snapshot = {k: v.copy() for k, v in p.arrays().items()}
    train(p, cfg, tr, va, TrainConfig(max_epochs=2))
    for k, v in p.arrays().items():
        np.testing.assert_array_equal(v, snapshot[k])


def test_train_needs_windows():
    cfg = _tiny()
    w = _windows(np.arange(20.0)[None])
    with pytest.raises(ValueError, match="at least one window"):
        train(init_params(cfg), cfg, w, _windows([[1.0, 2.0]]), TrainConfig())
