"""Poisson likelihood training: loss, AdamW, the loop, and error metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from . import autodiff as ad
from .autodiff import Tensor
from .hazards import HAZARDS
from .models import ModelCheckpoint, ModelConfig, build_model
from .windowing import WindowSample, batch

_EVAL_CHUNK = 256


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the history up to the last finite epoch."""

    def __init__(self, last_finite_epoch: int, history: list["EpochRecord"]):
        super().__init__(f"training diverged; last finite epoch was {last_finite_epoch}")
        self.last_finite_epoch = last_finite_epoch
        self.history = history


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    include_stirling: bool = False

    def __post_init__(self):
        for name in ("learning_rate", "beta1", "beta2", "eps", "batch_size",
                     "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) cannot exceed max_epochs "
                             f"({self.max_epochs})")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


def poisson_nll(eta: Tensor, counts: np.ndarray, include_stirling: bool = False) -> Tensor:
    """Mean over samples of sum_h [exp(eta_h) - y_h * eta_h].

    The log(y!) term is parameter-independent; it is added as a constant only
    when ``include_stirling`` so reported losses are true negative
    log-likelihoods.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if (counts < 0).any():
        raise ValueError("counts must be nonnegative")
    if eta.ndim == 1:
        eta = ad.reshape(eta, (1, eta.shape[0]))
        counts = counts.reshape(1, -1)
    if counts.shape != eta.shape:
        raise ad.ShapeError(f"counts shape {counts.shape} does not match log-rates {eta.shape}")
    n = eta.shape[0]
    loss = (ad.exp(eta) - eta * counts).sum() * (1.0 / n)
    if include_stirling:
        loss = loss + float(gammaln(counts + 1.0).sum() / n)
    return loss


def poisson_nll_value(eta: np.ndarray, counts: np.ndarray,
                      include_stirling: bool = False) -> float:
    """Same loss on plain arrays, for evaluation passes."""
    eta = np.atleast_2d(np.asarray(eta, dtype=np.float64))
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    if (counts < 0).any():
        raise ValueError("counts must be nonnegative")
    total = (np.exp(np.minimum(eta, ad.EXP_CLAMP)) - eta * counts).sum()
    if include_stirling:
        total += gammaln(counts + 1.0).sum()
    return float(total / eta.shape[0])


class AdamW:
    """Adam with weight decay applied directly to the parameters.

    Decay touches weight matrices only (ndim >= 2); biases and norm gains
    shrink through gradients alone.
    """

    def __init__(self, params: dict[str, Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}

    @classmethod
    def from_config(cls, params: dict[str, Tensor], config: TrainConfig) -> "AdamW":
        return cls(params, config.learning_rate, config.beta1, config.beta2,
                   config.eps, config.weight_decay)

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p._grad
            if g is None:
                g = 0.0
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.lr * self.weight_decay * p.value
            p.value[...] -= update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _forward_rates(model, samples: list[WindowSample]) -> np.ndarray:
    chunks = []
    for lo in range(0, len(samples), _EVAL_CHUNK):
        inputs = np.stack([s.inputs for s in samples[lo:lo + _EVAL_CHUNK]])
        chunks.append(model.predict_rates(inputs))
    return np.concatenate(chunks, axis=0)


def _dataset_nll(model, samples: list[WindowSample], include_stirling: bool) -> float:
    total = 0.0
    for lo in range(0, len(samples), _EVAL_CHUNK):
        chunk = samples[lo:lo + _EVAL_CHUNK]
        inputs = np.stack([s.inputs for s in chunk])
        targets = np.stack([s.target for s in chunk])
        with ad.no_grad():
            eta = model.forward(inputs).log_rates.value
        total += poisson_nll_value(eta, targets, include_stirling) * len(chunk)
    return total / len(samples)


def train(model_config: ModelConfig, train_config: TrainConfig,
          splits: tuple[list[WindowSample], ...], feature_names: list[str],
          standardizer: dict | None = None,
          ) -> tuple[ModelCheckpoint, list[EpochRecord]]:
    """Fit a model with per-epoch seeded shuffling and early stopping.

    Stops after ``patience`` epochs without a validation improvement and
    restores the best-validation parameters. Fully deterministic for a given
    pair of seeds (model init and shuffling).
    """
    if len(splits) < 2 or not splits[0] or not splits[1]:
        raise ValueError("train and validation splits must both be non-empty")
    train_samples, val_samples = splits[0], splits[1]

    model = build_model(model_config)
    optimizer = AdamW.from_config(model.parameters(), train_config)

    history: list[EpochRecord] = []
    best_val = math.inf
    best_params = {name: p.value.copy() for name, p in model.parameters().items()}
    epochs_since_best = 0

    for epoch in range(1, train_config.max_epochs + 1):
        batches = batch(train_samples, train_config.batch_size, shuffle=True,
                        seed=_epoch_seed(train_config.seed, epoch))
        total, count = 0.0, 0
        for inputs, targets in batches:
            model.zero_grad()
            out = model.forward(inputs)
            loss = poisson_nll(out.log_rates, targets, train_config.include_stirling)
            loss_value = float(loss.value)
            if not math.isfinite(loss_value):
                raise TrainingDiverged(epoch - 1, history)
            ad.backward(loss)
            optimizer.step()
            total += loss_value * len(inputs)
            count += len(inputs)
        train_loss = total / count
        val_loss = _dataset_nll(model, val_samples, train_config.include_stirling)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch - 1, history)
        history.append(EpochRecord(epoch, train_loss, val_loss))

        if val_loss < best_val:
            best_val = val_loss
            best_params = {name: p.value.copy() for name, p in model.parameters().items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= train_config.patience:
                break

    for name, p in model.parameters().items():
        p.value[...] = best_params[name]
    checkpoint = ModelCheckpoint.from_model(model, feature_names, standardizer)
    return checkpoint, history


@dataclass
class EvalMetrics:
    hazard_names: list[str]
    mae_per_hazard: np.ndarray
    rmse_per_hazard: np.ndarray

    @property
    def mae(self) -> float:
        return float(self.mae_per_hazard.mean())

    @property
    def rmse(self) -> float:
        return float(self.rmse_per_hazard.mean())


def _metrics_from_predictions(rates: np.ndarray, targets: np.ndarray) -> EvalMetrics:
    err = rates - targets
    mae = np.abs(err).mean(axis=0)
    rmse = np.sqrt(np.square(err).mean(axis=0))
    names = list(HAZARDS) if rates.shape[1] == len(HAZARDS) else [
        f"type_{i}" for i in range(rates.shape[1])]
    return EvalMetrics(names, mae, rmse)


def evaluate(model_or_checkpoint, samples: list[WindowSample]) -> EvalMetrics:
    """Per-hazard MAE and RMSE of raw (unrounded) expected counts, with the
    headline numbers averaged over the six hazards."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    model = (model_or_checkpoint.build_model()
             if isinstance(model_or_checkpoint, ModelCheckpoint) else model_or_checkpoint)
    rates = _forward_rates(model, samples)
    targets = np.stack([s.target for s in samples]).astype(np.float64)
    return _metrics_from_predictions(rates, targets)


def mean_target(samples: list[WindowSample]) -> np.ndarray:
    """Per-hazard mean count; the climatological forecaster's prediction."""
    return np.stack([s.target for s in samples]).astype(np.float64).mean(axis=0)


def constant_prediction_metrics(rates: np.ndarray,
                                samples: list[WindowSample]) -> EvalMetrics:
    """Metrics for a fixed per-hazard rate vector (e.g. the climatology)."""
    targets = np.stack([s.target for s in samples]).astype(np.float64)
    predictions = np.broadcast_to(np.asarray(rates, dtype=np.float64), targets.shape)
    return _metrics_from_predictions(predictions, targets)


def save_history(history: list[EpochRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss)])


def save_metrics(metrics: EvalMetrics, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["hazard", "MAE", "RMSE"])
        for name, mae, rmse in zip(metrics.hazard_names, metrics.mae_per_hazard,
                                   metrics.rmse_per_hazard):
            writer.writerow([name, f"{mae:.4f}", f"{rmse:.4f}"])
        writer.writerow(["average", f"{metrics.mae:.4f}", f"{metrics.rmse:.4f}"])
