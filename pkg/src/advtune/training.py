"""Min-max adversarial training.

Per batch: pick a seeded random subset of k = round(ratio * B) positions,
regenerate those examples with PGD against the current parameters (labels
kept), compute the loss on the mixed batch and take one SGD step. ratio = 0
reduces bit-exactly to the plain trainer, which is also provided standalone.

All randomness flows from the config seed through named derivation streams
(init / epoch shuffle / subset selection / attack start), so a trajectory is
reproducible and the clean reduction never consumes attack randomness.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .attack import AttackConfig, pgd_perturb
from .data import LabeledSet, batches
from .errors import InputError, SpecError, TrainingError
from .nn import NetworkSpec, Params, init_network, loss_forward_backward, sgd_update
from .seeding import derive_seed

TRAIN_ATTACK_ITERATIONS = 7


def training_attack(epsilon: float, iterations: int = TRAIN_ATTACK_ITERATIONS) -> AttackConfig:
    """Training-time PGD: cheaper than the evaluation attack, step tied to epsilon."""
    return AttackConfig(
        epsilon=epsilon,
        step_size=max(epsilon / 4.0, 0.01),
        max_iterations=iterations,
        random_start=True,
    )


@dataclass(frozen=True)
class AdvTrainConfig:
    ratio: float
    train_epsilon: float
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int
    attack: AttackConfig | None = None

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise InputError(f"ratio must lie in [0,1], got {self.ratio}")
        if self.train_epsilon < 0:
            raise InputError(f"train_epsilon must be >= 0, got {self.train_epsilon}")
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise InputError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.attack is None:
            object.__setattr__(self, "attack", training_attack(self.train_epsilon))
        elif self.attack.epsilon != self.train_epsilon:
            raise SpecError(
                f"attack epsilon {self.attack.epsilon} disagrees with "
                f"train_epsilon {self.train_epsilon}"
            )


@dataclass(frozen=True)
class TrainReport:
    params: Params
    epoch_losses: tuple[float, ...]
    duration: float
    config: AdvTrainConfig
    seed: int


BatchHook = Callable[[int, int, Params, Params], None]


def select_replacement_indices(
    batch_size: int, ratio: float, rng: np.random.Generator
) -> np.ndarray:
    """k = round(ratio * B) distinct positions, half rounded away from zero."""
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    k = int(np.floor(ratio * batch_size + 0.5))
    k = min(max(k, 0), batch_size)
    return np.sort(rng.choice(batch_size, size=k, replace=False))


def derive_cell_config(base: AdvTrainConfig, ratio: float, epsilon: float) -> AdvTrainConfig:
    """Base config repositioned at (ratio, epsilon), attack step retied to epsilon."""
    attack = replace(
        base.attack, epsilon=epsilon, step_size=max(epsilon / 4.0, 0.01)
    )
    return replace(base, ratio=ratio, train_epsilon=epsilon, attack=attack)


def adversarial_train(
    train: LabeledSet,
    cfg: AdvTrainConfig,
    spec: NetworkSpec,
    on_batch: BatchHook | None = None,
) -> TrainReport:
    """Full min-max loop; adversarial examples are always fresh against current params."""
    start = time.perf_counter()
    params = init_network(spec, derive_seed(cfg.seed, "init"))
    epoch_losses = []
    for epoch in range(cfg.epochs):
        idx_batches = batches(train.size, cfg.batch_size, derive_seed(cfg.seed, "epoch", epoch))
        losses = []
        for b, idx in enumerate(idx_batches):
            xb = train.features[idx]
            yb = train.labels[idx]
            if cfg.ratio > 0:
                sel_rng = np.random.default_rng(derive_seed(cfg.seed, "select", epoch, b))
                sel = select_replacement_indices(len(idx), cfg.ratio, sel_rng)
                if sel.size:
                    atk = replace(cfg.attack, seed=derive_seed(cfg.seed, "attack", epoch, b))
                    xb[sel] = pgd_perturb(params, spec, xb[sel], yb[sel], atk)
            bundle = loss_forward_backward(params, spec, xb, yb)
            if not np.isfinite(bundle.loss):
                raise TrainingError("loss diverged", epoch=epoch, batch=b)
            updated = sgd_update(params, bundle, cfg.learning_rate)
            if on_batch is not None:
                on_batch(epoch, b, params, updated)
            params = updated
            losses.append(bundle.loss)
        epoch_losses.append(float(np.mean(losses)))
    return TrainReport(
        params, tuple(epoch_losses), time.perf_counter() - start, cfg, cfg.seed
    )


def train_clean(
    train: LabeledSet,
    cfg: AdvTrainConfig,
    spec: NetworkSpec,
    on_batch: BatchHook | None = None,
) -> TrainReport:
    """Plain trainer, written independently of the adversarial loop.

    Shares only the seed streams (init and epoch shuffle), so the ratio = 0
    reduction of adversarial_train can be checked bitwise against genuinely
    separate code rather than against a shared branch.
    """
    start = time.perf_counter()
    params = init_network(spec, derive_seed(cfg.seed, "init"))
    epoch_losses = []
    for epoch in range(cfg.epochs):
        losses = []
        for b, idx in enumerate(
            batches(train.size, cfg.batch_size, derive_seed(cfg.seed, "epoch", epoch))
        ):
            bundle = loss_forward_backward(params, spec, train.features[idx], train.labels[idx])
            if not np.isfinite(bundle.loss):
                raise TrainingError("loss diverged", epoch=epoch, batch=b)
            updated = sgd_update(params, bundle, cfg.learning_rate)
            if on_batch is not None:
                on_batch(epoch, b, params, updated)
            params = updated
            losses.append(bundle.loss)
        epoch_losses.append(float(np.mean(losses)))
    return TrainReport(
        params, tuple(epoch_losses), time.perf_counter() - start, cfg, cfg.seed
    )
