"""Seeded random search over the classifier's hyperparameter domains.

Trials are logged to a JSON-lines file as they finish, so an interrupted
search resumes from where it stopped: trial seeds are derived from the base
seed and the trial index, making the full log independent of interruptions.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .mlp import MlpConfig, fit, kaiming_init


@dataclass(frozen=True)
class SearchSpace:
    """Hyperparameter domains: discrete ranges, a dropout grid, and a
    quantized weight-decay interval; the learning rate is log-uniform."""

    layers_min: int = 2
    layers_max: int = 4
    units_min: int = 1500
    units_max: int = 4000
    lr_min: float = 1e-4
    lr_max: float = 5e-3
    dropout_grid: tuple[float, ...] = (0.0, 0.125, 0.25, 0.375, 0.5)
    weight_decay_max: float = 1e-4
    weight_decay_step: float = 1e-6

    def __post_init__(self):
        if self.layers_min < 1 or self.layers_min > self.layers_max:
            raise DataError("invalid layer range")
        if self.units_min < 1 or self.units_min > self.units_max:
            raise DataError("invalid unit range")
        if not 0 < self.lr_min <= self.lr_max:
            raise DataError("invalid learning-rate range")
        if not self.dropout_grid or any(not 0 <= d < 1 for d in self.dropout_grid):
            raise DataError("invalid dropout grid")
        if self.weight_decay_max < 0 or self.weight_decay_step <= 0:
            raise DataError("invalid weight-decay domain")


def sample_config(
    space: SearchSpace,
    seed: int,
    input_dim: int,
    output_dim: int,
    epochs: int = 30,
    warmup_epochs: int = 1,
) -> MlpConfig:
    """One draw: uniform over the discrete fields, log-uniform learning rate.

    Warmup is capped below the epoch budget so tiny budgets stay valid.
    """
    rng = np.random.default_rng(seed)
    if epochs > 0:
        warmup_epochs = min(warmup_epochs, epochs - 1)
    n_layers = int(rng.integers(space.layers_min, space.layers_max + 1))
    n_units = int(rng.integers(space.units_min, space.units_max + 1))
    lr = float(np.exp(rng.uniform(math.log(space.lr_min), math.log(space.lr_max))))
    dropout = float(rng.choice(space.dropout_grid))
    n_steps = int(round(space.weight_decay_max / space.weight_decay_step))
    weight_decay = float(rng.integers(0, n_steps + 1)) * space.weight_decay_step
    return MlpConfig(
        input_dim=input_dim,
        output_dim=output_dim,
        n_layers=n_layers,
        n_units=n_units,
        learning_rate=lr,
        dropout=dropout,
        weight_decay=weight_decay,
        epochs=epochs,
        warmup_epochs=warmup_epochs,
    )


@dataclass(frozen=True)
class Trial:
    """One completed search trial."""

    config: MlpConfig
    val_macro_ap: float
    seconds: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "val_macro_ap": self.val_macro_ap,
            "seconds": self.seconds,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trial":
        return cls(
            config=MlpConfig.from_dict(d["config"]),
            val_macro_ap=float(d["val_macro_ap"]),
            seconds=float(d["seconds"]),
            seed=int(d["seed"]),
        )


def load_trials(path: str | os.PathLike) -> list[Trial]:
    """Read a JSON-lines trial log; a missing file is an empty log."""
    if not os.path.exists(path):
        return []
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                trials.append(Trial.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"bad trial log line {lineno}: {exc}") from None
    return trials


def run_search(
    space: SearchSpace,
    train_embeddings: np.ndarray,
    train_tags: np.ndarray,
    val_embeddings: np.ndarray,
    val_tags: np.ndarray,
    log_path: str | os.PathLike,
    budget_trials: int | None = None,
    budget_seconds: float | None = None,
    seed: int = 0,
    trial_epochs: int = 30,
    batch_size: int = 256,
) -> tuple[Trial, list[Trial]]:
    """Random-search trials until the budget runs out; returns the best.

    Trial i draws its config and its training randomness from ``seed + i``,
    so re-running with the same seed reproduces the log, and a resumed
    search (an existing log at ``log_path``) continues at trial
    ``len(log)`` as if it had never stopped. The best trial is the argmax
    of validation macro-AP over the whole log.
    """
    if budget_trials is None and budget_seconds is None:
        raise DataError("a trial or time budget is required")
    if budget_trials is not None and budget_trials < 1:
        raise DataError("budget_trials must be positive")
    input_dim = np.asarray(train_embeddings).shape[1]
    output_dim = np.asarray(train_tags).shape[1]
    trials = load_trials(log_path)
    start = time.perf_counter()
    while True:
        if budget_trials is not None and len(trials) >= budget_trials:
            break
        if budget_seconds is not None and time.perf_counter() - start >= budget_seconds:
            break
        trial_seed = seed + len(trials)
        config = sample_config(
            space, trial_seed, input_dim, output_dim, epochs=trial_epochs
        )
        t0 = time.perf_counter()
        model = kaiming_init(config, seed=trial_seed)
        _, log = fit(
            model,
            train_embeddings,
            train_tags,
            val_embeddings,
            val_tags,
            seed=trial_seed,
            batch_size=batch_size,
        )
        trial = Trial(
            config=config,
            val_macro_ap=log.best_val_macro_ap,
            seconds=time.perf_counter() - t0,
            seed=trial_seed,
        )
        trials.append(trial)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(trial.to_dict(), sort_keys=True) + "\n")
    if not trials:
        raise DataError("no trials completed within the budget")
    best = max(trials, key=lambda t: t.val_macro_ap)
    return best, trials
