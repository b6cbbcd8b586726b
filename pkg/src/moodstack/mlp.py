"""Self-contained multi-layer perceptron for multi-label tag prediction.

Forward pass, backpropagation, the optimizer, and the learning-rate
schedule are all implemented here on plain numpy arrays. Hidden layers are
affine -> rectifier -> dropout (inverted scaling, train time only); the
output layer is affine -> sigmoid, one unit per tag.

Parameters train in single precision by default; gradient checks pass
``dtype=np.float64`` at init time instead.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .errors import DataError
from .evaluation import RankedPredictions, macro_ap

_logger = logging.getLogger(__name__)

BCE_EPS = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpConfig:
    """Architecture and training hyperparameters.

    ``n_layers`` counts hidden layers; every hidden layer is ``n_units``
    wide. Structural validity is enforced here; containment in the
    hyperparameter search domains is a separate, optional check
    (:meth:`in_search_domains`) so that small models remain expressible
    for tests and experiments.
    """

    input_dim: int
    output_dim: int
    n_layers: int = 2
    n_units: int = 2000
    learning_rate: float = 1e-3
    dropout: float = 0.0
    weight_decay: float = 0.0
    epochs: int = 100
    warmup_epochs: int = 1

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise DataError("input_dim and output_dim must be positive")
        if self.n_layers < 1:
            raise DataError("need at least one hidden layer")
        if self.n_units < 1:
            raise DataError("n_units must be positive")
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError("dropout must lie in [0, 1)")
        if self.weight_decay < 0:
            raise DataError("weight_decay must be nonnegative")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise DataError("epochs and warmup_epochs must be nonnegative")
        if self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise DataError("warmup_epochs must be smaller than epochs")

    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [self.n_units] * self.n_layers + [self.output_dim]

    def in_search_domains(self) -> bool:
        """Whether every hyperparameter sits inside the search-space domains."""
        return (
            2 <= self.n_layers <= 4
            and 1500 <= self.n_units <= 4000
            and 1e-4 <= self.learning_rate <= 5e-3
            and 0.0 <= self.dropout <= 0.5
            and abs(self.dropout / 0.125 - round(self.dropout / 0.125)) < 1e-9
            and 0.0 <= self.weight_decay <= 1e-4
            and abs(self.weight_decay / 1e-6 - round(self.weight_decay / 1e-6)) < 1e-6
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(**d)


@dataclass
class Standardizer:
    """Per-dimension mean and standard deviation from the training split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(self.std <= 0):
            raise DataError("standardizer std entries must be positive")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def standardize_fit(train_embeddings: np.ndarray, floor: float = 1e-8) -> Standardizer:
    """Mean/std over training rows; constant dimensions get the floor, with a warning."""
    x = np.asarray(train_embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("standardization needs a 2-d array with at least 2 rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    constant = std < floor
    if constant.any():
        _logger.warning(
            "%d constant embedding dimensions; std floored at %g",
            int(constant.sum()),
            floor,
        )
        std = np.where(constant, floor, std)
    return Standardizer(mean, std)


def standardize_apply(standardizer: Standardizer, embeddings: np.ndarray) -> np.ndarray:
    return standardizer.apply(embeddings)


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to base_lr, then cosine annealing to zero, per step."""

    base_lr: float
    total_steps: int
    warmup_steps: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise DataError("total_steps must be positive")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise DataError("warmup_steps must lie in [0, total_steps)")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate at a step in [0, total_steps]."""
    if not 0 <= step <= schedule.total_steps:
        raise DataError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class MlpModel:
    """Weight matrices, bias vectors, and the input standardizer."""

    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    standardizer: Standardizer | None = None

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    @property
    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def parameters(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        """Probabilities for raw (unstandardized) embedding rows."""
        if self.standardizer is None:
            raise DataError("model has no standardizer; train it or load a checkpoint")
        return forward(self, self.standardizer.apply(embeddings))


def kaiming_init(config: MlpConfig, seed: int = 0, dtype=np.float32) -> MlpModel:
    """Zero-mean Gaussian weights with variance 2 / fan_in; zero biases."""
    rng = np.random.default_rng(seed)
    dims = config.layer_dims()
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        std = math.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(config=config, weights=weights, biases=biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cached(model: MlpModel, x: np.ndarray, training: bool, rng):
    cfg = model.config
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise DataError(f"expected input of shape (batch, {cfg.input_dim})")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite values in the input batch")
    activations = [x]
    pre_acts = []
    masks = []
    a = x
    n_hidden = len(model.weights) - 1
    for layer in range(n_hidden):
        z = a @ model.weights[layer] + model.biases[layer]
        pre_acts.append(z)
        a = np.maximum(z, 0)
        if training and cfg.dropout > 0:
            keep = (rng.random(a.shape) >= cfg.dropout).astype(model.dtype)
            a = a * keep / (1.0 - cfg.dropout)
            masks.append(keep)
        else:
            masks.append(None)
        activations.append(a)
    z_out = a @ model.weights[-1] + model.biases[-1]
    probs = _sigmoid(z_out)
    return probs, (activations, pre_acts, masks)


def forward(
    model: MlpModel, x: np.ndarray, training: bool = False, seed: int | np.random.Generator = 0
) -> np.ndarray:
    """Probability matrix in (0,1)^{batch x output_dim}; inference is deterministic."""
    rng = np.random.default_rng(seed) if training else None
    probs, _ = _forward_cached(model, x, training, rng)
    return probs


def bce_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy over batch and tags, with probability clamping."""
    y_hat = np.asarray(y_hat)
    y = np.asarray(y)
    if y_hat.shape != y.shape:
        raise DataError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    clamped = np.clip(y_hat.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    ll = y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped)
    return float(-np.mean(ll))


def backward(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
    training: bool = False,
    seed: int | np.random.Generator = 0,
) -> tuple[float, dict[str, list[np.ndarray]]]:
    """Loss and exact gradients of bce_loss for every weight and bias.

    With ``weight_decay`` > 0 each parameter's gradient gains the term
    ``weight_decay * parameter`` (the gradient of the L2 penalty
    ``weight_decay/2 * |theta|^2``); the returned loss stays the data term.
    """
    rng = np.random.default_rng(seed) if training else None
    probs, (activations, pre_acts, masks) = _forward_cached(model, x, training, rng)
    y = np.asarray(y, dtype=model.dtype)
    if y.shape != probs.shape:
        raise DataError(f"targets of shape {y.shape} do not match outputs {probs.shape}")
    loss = bce_loss(probs, y)
    n = probs.size
    # d(loss)/d(logit) = (p - y)/n inside the clamp window, 0 where clamped
    inside = (probs > BCE_EPS) & (probs < 1.0 - BCE_EPS)
    delta = np.where(inside, probs - y, 0.0).astype(model.dtype) / n
    grad_w = [np.empty(0)] * len(model.weights)
    grad_b = [np.empty(0)] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        grad_w[layer] = activations[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ model.weights[layer].T
            mask = masks[layer - 1]
            if mask is not None:
                delta = delta * mask / (1.0 - model.config.dropout)
            delta = delta * (pre_acts[layer - 1] > 0)
    if weight_decay > 0:
        grad_w = [g + weight_decay * w for g, w in zip(grad_w, model.weights)]
        grad_b = [g + weight_decay * b for g, b in zip(grad_b, model.biases)]
    return loss, {"weights": grad_w, "biases": grad_b}


@dataclass
class TrainingLog:
    """Per-epoch train loss and validation macro-AP, plus the chosen epoch."""

    train_loss: list[float] = field(default_factory=list)
    val_macro_ap: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_macro_ap: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_macro_ap": self.val_macro_ap,
            "best_epoch": self.best_epoch,
            "best_val_macro_ap": self.best_val_macro_ap,
        }


def fit(
    model: MlpModel,
    train_embeddings: np.ndarray,
    train_tags: np.ndarray,
    val_embeddings: np.ndarray,
    val_tags: np.ndarray,
    seed: int = 0,
    batch_size: int = 256,
) -> tuple[MlpModel, TrainingLog]:
    """Train with decoupled weight decay and keep the best-validation snapshot.

    The standardizer is fitted on the training embeddings only and applied
    to both splits. After every epoch the validation macro-AP is logged;
    the returned model carries the parameters of the best epoch (earliest
    on ties). ``epochs == 0`` returns the model untouched.
    """
    cfg = model.config
    train_x = np.asarray(train_embeddings)
    val_x = np.asarray(val_embeddings)
    train_y = np.asarray(train_tags)
    val_y = np.asarray(val_tags)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise DataError("training and validation splits must be nonempty")
    if train_x.shape[0] != train_y.shape[0] or val_x.shape[0] != val_y.shape[0]:
        raise DataError("embeddings and tag matrices disagree on row counts")
    if val_y.sum() == 0:
        raise DataError("validation split has no positive labels")
    log = TrainingLog()
    if cfg.epochs == 0:
        return model, log

    model.standardizer = standardize_fit(train_x)
    xt = model.standardizer.apply(train_x).astype(model.dtype)
    xv = model.standardizer.apply(val_x).astype(model.dtype)
    yt = train_y.astype(model.dtype)

    n_train = xt.shape[0]
    steps_per_epoch = max(1, math.ceil(n_train / batch_size))
    schedule = LrSchedule(
        base_lr=cfg.learning_rate,
        total_steps=cfg.epochs * steps_per_epoch,
        warmup_steps=cfg.warmup_epochs * steps_per_epoch,
    )
    rng = np.random.default_rng(seed)
    params = model.parameters()
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step = 0
    best_snapshot = None
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        epoch_losses = []
        for start in range(0, n_train, batch_size):
            batch = order[start : start + batch_size]
            loss, grads = backward(
                model, xt[batch], yt[batch], weight_decay=0.0, training=True, seed=rng
            )
            epoch_losses.append(loss)
            lr = lr_at(schedule, step)
            step += 1
            t = step
            all_grads = grads["weights"] + grads["biases"]
            for p, g, m, v in zip(params, all_grads, m_state, v_state):
                m *= ADAM_BETA1
                m += (1 - ADAM_BETA1) * g
                v *= ADAM_BETA2
                v += (1 - ADAM_BETA2) * g * g
                m_hat = m / (1 - ADAM_BETA1**t)
                v_hat = v / (1 - ADAM_BETA2**t)
                # decoupled decay: applied in the update, never fed to the moments
                p -= lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + cfg.weight_decay * p)
        val_probs = forward(model, xv)
        report = macro_ap(RankedPredictions(val_probs.astype(np.float64), val_y))
        log.train_loss.append(float(np.mean(epoch_losses)))
        log.val_macro_ap.append(report.macro_ap)
        if best_snapshot is None or report.macro_ap > log.best_val_macro_ap:
            log.best_epoch = epoch
            log.best_val_macro_ap = report.macro_ap
            best_snapshot = (
                [w.copy() for w in model.weights],
                [b.copy() for b in model.biases],
            )
    model.weights = [w.copy() for w in best_snapshot[0]]
    model.biases = [b.copy() for b in best_snapshot[1]]
    return model, log


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: MlpModel, path: str | os.PathLike) -> None:
    """Write config, standardizer, and parameters; the round trip is exact."""
    arrays = {
        "config_json": np.array(json.dumps(model.config.to_dict(), sort_keys=True)),
        "n_weight_layers": np.array(len(model.weights)),
    }
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    if model.standardizer is not None:
        arrays["std_mean"] = model.standardizer.mean
        arrays["std_std"] = model.standardizer.std
    np.savez(path, **arrays)


def load_model(path: str | os.PathLike) -> MlpModel:
    with np.load(path, allow_pickle=False) as data:
        config = MlpConfig.from_dict(json.loads(str(data["config_json"])))
        n = int(data["n_weight_layers"])
        weights = [data[f"w{i}"] for i in range(n)]
        biases = [data[f"b{i}"] for i in range(n)]
        standardizer = None
        if "std_mean" in data:
            standardizer = Standardizer(data["std_mean"], data["std_std"])
    expected = config.layer_dims()
    for i, w in enumerate(weights):
        if w.shape != (expected[i], expected[i + 1]):
            raise DataError(f"checkpoint layer {i} has shape {w.shape}, expected "
                            f"({expected[i]}, {expected[i + 1]})")
    return MlpModel(config=config, weights=weights, biases=biases, standardizer=standardizer)


def clone_model(model: MlpModel) -> MlpModel:
    """Deep copy; training one copy never touches the other."""
    return MlpModel(
        config=model.config,
        weights=[w.copy() for w in model.weights],
        biases=[b.copy() for b in model.biases],
        standardizer=copy.deepcopy(model.standardizer),
    )


def config_with(config: MlpConfig, **changes) -> MlpConfig:
    return replace(config, **changes)
