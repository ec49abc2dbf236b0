"""Mini-batch training under the peak-biased loss, with early stopping and seeded ensembles."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, NumericError, ShapeError
from ..ingest import WindowSet, normalize
from .layers import ModelParams, backward, forward, init_params, inverse_activation
from .loss import peak_biased_grad, peak_biased_terms
from .optim import AdamConfig, AdamState, adam_step


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 300
    early_stop_patience: int = 20
    adam: AdamConfig = field(default_factory=AdamConfig)
    loss_exponent_under: float = 1.5
    loss_exponent_over: float = 1.0
    validation_fraction: float = 0.1
    # network outputs are multiplied by this before the loss (the mm cap for sigmoid heads)
    output_scale: float = 1.0
    # start the output layer at the per-unit training mean
    init_output_bias: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")
        if not 0 <= self.early_stop_patience < self.max_epochs:
            raise ConfigError("early_stop_patience must be in [0, max_epochs)")
        if self.loss_exponent_under <= 0 or self.loss_exponent_over <= 0:
            raise ConfigError("loss exponents must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in (0, 1)")
        if not self.output_scale > 0:
            raise ConfigError("output_scale must be positive")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def as_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "best_epoch": self.best_epoch, "stopped_early": self.stopped_early}

    @classmethod
    def from_dict(cls, d: dict) -> "History":
        return cls(list(d["train_loss"]), list(d["val_loss"]), d["best_epoch"], d["stopped_early"])


def _group_loss(pred, y, cfg: TrainConfig, groups: int) -> np.ndarray:
    terms = peak_biased_terms(pred, y, cfg.loss_exponent_under, cfg.loss_exponent_over)
    if groups == 1:
        return np.array([terms.mean()])
    return terms.mean(axis=tuple(a for a in range(terms.ndim) if a != 1))


def predict(params: ModelParams, x, output_scale: float = 1.0, batch_size: int = 2048) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    outs = [forward(params, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(outs) * output_scale


def _set_output_bias(params: ModelParams, y: np.ndarray, scale: float) -> ModelParams:
    last = params.specs[-1]
    target = y.mean(axis=0) / scale
    weights = [dict(w) for w in params.weights]
    weights[-1]["b"] = inverse_activation(last.activation, target).reshape(weights[-1]["b"].shape)
    return params.replace(weights)


def fit(x, y, specs, config: TrainConfig, seed: int) -> tuple[ModelParams, History]:
    """Train a fresh network on ``(x, y)``.

    The last ``validation_fraction`` of the rows (they are expected in
    chronological order) is held out for early stopping. Networks built
    from grouped layers stop per group, and each group keeps its own best
    weights, so the result matches training every group on its own.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n == 0:
        raise ConfigError("no training samples")
    if len(y) != n:
        raise ShapeError(f"{n} inputs but {len(y)} targets")
    n_val = min(max(1, int(round(n * config.validation_fraction))), n - 1) if n > 1 else 0
    x_tr, y_tr = x[:n - n_val], y[:n - n_val]
    x_va, y_va = (x[n - n_val:], y[n - n_val:]) if n_val else (x_tr, y_tr)

    params = init_params(specs, seed)
    if config.init_output_bias:
        params = _set_output_bias(params, y_tr, config.output_scale)
    groups = params.groups
    state = AdamState.zeros(params)
    rng = np.random.default_rng([seed, 7919])
    scale = config.output_scale
    under, over = config.loss_exponent_under, config.loss_exponent_over

    best_val = np.full(groups, np.inf)
    wait = np.zeros(groups, dtype=int)
    active = np.ones(groups, dtype=bool)
    best_w = [{k: a.copy() for k, a in w.items()} for w in params.weights]
    hist = History()

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(x_tr))
        total = 0.0
        try:
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                out, trace = forward(params, x_tr[idx])
                pred = out * scale
                total += peak_biased_terms(pred, y_tr[idx], under, over).sum()
                grad = peak_biased_grad(pred, y_tr[idx], under, over) * scale
                params, state = adam_step(params, backward(params, trace, grad), state, config.adam)
            val = _group_loss(predict(params, x_va, scale), y_va, config, groups)
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
        train_loss = total / y_tr.size
        if not np.isfinite(train_loss) or not np.all(np.isfinite(val)):
            raise NumericError(f"training diverged at epoch {epoch}: loss is not finite")
        # saturated activations can keep the loss finite while weights overflow
        if not all(np.isfinite(a).all() for w in params.weights for a in w.values()):
            raise NumericError(f"training diverged at epoch {epoch}: parameters are not finite")
        hist.train_loss.append(float(train_loss))
        hist.val_loss.append(float(val.mean()))

        improved = active & (val < best_val)
        if improved.any():
            best_val[improved] = val[improved]
            for bw, w in zip(best_w, params.weights):
                for k in w:
                    if groups == 1:
                        bw[k] = w[k].copy()
                    else:
                        bw[k][improved] = w[k][improved]
            hist.best_epoch = epoch
        wait[improved] = 0
        wait[active & ~improved] += 1
        active &= wait < config.early_stop_patience
        if not active.any():
            hist.stopped_early = epoch < config.max_epochs
            break
    return params.replace(best_w), hist


def ensemble_average(predictions: Sequence) -> np.ndarray:
    """Elementwise mean of k equally shaped predictions."""
    if len(predictions) == 0:
        raise ShapeError("ensemble needs at least one prediction")
    arrays = [np.asarray(p, dtype=float) for p in predictions]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeError(f"ensemble member shape {a.shape} != {shape}")
    return np.mean(arrays, axis=0)


def worker_count() -> int:
    """Worker cap from ``MONSOON_BENCH_THREADS`` (default 1)."""
    raw = os.environ.get("MONSOON_BENCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"MONSOON_BENCH_THREADS must be an integer, got {raw!r}") from None


def _fit_job(args):
    return fit(*args)


def fit_ensemble(x, y, specs, config: TrainConfig, seeds: Sequence[int],
                 workers: int | None = None) -> list[tuple[ModelParams, History]]:
    """One :func:`fit` per seed; runs are independent and may use a process pool."""
    workers = worker_count() if workers is None else workers
    jobs = [(x, y, specs, config, s) for s in seeds]
    if workers <= 1 or len(jobs) <= 1:
        return [_fit_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_fit_job, jobs))


def windows_to_xy(samples: WindowSet, cap: float) -> tuple[np.ndarray, np.ndarray]:
    """LSTM inputs ``(n, d, cells)`` on the unit scale and mm targets ``(n, 2*cells)``.

    The target holds the next-day amount followed by the 3-day mean.
    """
    x = normalize(samples.context, cap).transpose(0, 2, 1)
    y = np.concatenate([samples.target1, samples.target3], axis=1)
    return x, y


def train(samples: WindowSet, specs, config: TrainConfig, seed: int) -> tuple[ModelParams, History]:
    """Fit a window model whose head emits both leads (see :func:`windows_to_xy`)."""
    if len(samples) == 0:
        raise ConfigError("no training windows")
    x, y = windows_to_xy(samples, config.output_scale)
    return fit(x, y, specs, config, seed)
