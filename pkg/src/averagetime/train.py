"""Mini-batch Adam training with early stopping, and MSE/MAE evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import backward, make_rng, mse, no_grad
from .data import WindowSet
from .model import ModelConfig, ModelParams, forward

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")


@dataclass
class MetricsReport:
    mse: float
    mae: float
    per_horizon_mse: list[float]
    epochs_run: int = 0
    best_epoch: int = 0
    train_seconds_per_epoch: float = 0.0
    # (train_loss, val_loss) per epoch
    history: list[tuple[float, float]] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        d["history"] = [list(h) for h in self.history]
        if not timing:
            d.pop("train_seconds_per_epoch")
            d.pop("epoch_seconds")
        return d


# ---------------------------------------------------------------------- Adam

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(new_params, state)``.

    Parameters without a gradient entry are left unchanged.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = BETA1 * state.m.get(name, 0.0) + (1.0 - BETA1) * g
        v = BETA2 * state.v.get(name, 0.0) + (1.0 - BETA2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return out, state


class EarlyStopping:
    """Stop once the monitored loss has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience: int = 5):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.counter = 0

    def update(self, loss: float, epoch: int) -> bool:
        """Record ``loss`` for ``epoch`` (1-based); True when it is a new best."""
        if loss < self.best:
            self.best, self.best_epoch, self.counter = loss, epoch, 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience


# ---------------------------------------------------------------- evaluation


def predict(params: ModelParams, config: ModelConfig, windows: WindowSet, batch_size: int = 256):
    with no_grad():
        for batch in windows.batches(batch_size):
            yield batch, forward(batch.inputs, params, config, training=False).data


def evaluate(params: ModelParams, config: ModelConfig, windows: WindowSet, batch_size: int = 256) -> MetricsReport:
    """MSE and MAE over every (window, channel, step) triple."""
    if len(windows) == 0:
        raise ValueError("cannot evaluate on an empty split")
    sq = np.zeros(config.horizon)
    ab = 0.0
    count = 0
    for batch, pred in predict(params, config, windows, batch_size):
        err = pred - batch.targets
        sq += (err * err).sum(axis=(0, 1))
        ab += np.abs(err).sum()
        count += err.shape[0] * err.shape[1]
    per_h = sq / count
    return MetricsReport(
        mse=float(sq.sum() / (count * config.horizon)),
        mae=float(ab / (count * config.horizon)),
        per_horizon_mse=[float(v) for v in per_h],
    )


# ------------------------------------------------------------------ training


def train(
    params: ModelParams,
    config: ModelConfig,
    train_windows: WindowSet,
    val_windows: WindowSet,
    cfg: TrainConfig,
) -> tuple[ModelParams, MetricsReport]:
    """Fit ``params`` and return the best-validation copy plus its report.

    The report's ``mse``/``mae`` are the best epoch's validation metrics.
    """
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise ValueError("train and validation splits need at least one window each")
    shuffle_seed, dropout_seed = np.random.SeedSequence(cfg.seed).generate_state(2)
    order_rng = make_rng(int(shuffle_seed))
    drop_rng = make_rng(int(dropout_seed))
    params = params.copy()
    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    best_params = params.copy()
    best_val: MetricsReport | None = None
    history, seconds = [], []
    n_train = len(train_windows)

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = order_rng.permutation(n_train) if cfg.shuffle else np.arange(n_train)
        total = 0.0
        for k, batch in enumerate(train_windows.batches(cfg.batch_size, order)):
            params.zero_grad()
            pred = forward(batch.inputs, params, config, drop_rng, training=True)
            loss = mse(pred, batch.targets)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {k}")
            backward(loss)
            grads = {n: t.grad for n, t in params.items() if t.grad is not None}
            new, state = adam_step(params.arrays(), grads, state, cfg.learning_rate)
            for n, arr in new.items():
                params[n].data = arr
            total += value * len(batch.inputs)
        train_loss = total / n_train
        seconds.append(time.perf_counter() - t0)
        val = evaluate(params, config, val_windows)
        history.append((train_loss, val.mse))
        log.info("epoch %d: train %.6f val %.6f (%.2fs)", epoch, train_loss, val.mse, seconds[-1])
        if stopper.update(val.mse, epoch):
            best_params = params.copy()
            best_val = val
        if stopper.should_stop:
            log.info("early stop at epoch %d, best epoch %d", epoch, stopper.best_epoch)
            break

    if best_val is None:
        raise TrainingError("validation loss never became finite")
    report = MetricsReport(
        mse=best_val.mse,
        mae=best_val.mae,
        per_horizon_mse=best_val.per_horizon_mse,
        epochs_run=len(history),
        best_epoch=stopper.best_epoch,
        train_seconds_per_epoch=float(np.mean(seconds)),
        history=history,
        epoch_seconds=seconds,
    )
    return best_params, report
