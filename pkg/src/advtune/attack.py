"""Projected gradient descent attack under an l-infinity perturbation bound.

The iterate is x <- project(x + alpha * sign(grad_x L)), where the projection
first pulls the point back into the epsilon ball around the original input
and then clips to the valid input range. Both steps are elementwise, so their
order commutes; ball-then-range is used throughout. sign(0) is 0, so a dead
gradient never perturbs. One iteration without random start is FGSM.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledSet
from .errors import InputError, NumericError
from .nn import NetworkSpec, Params, loss_forward_backward
from .seeding import derive_seed

EVAL_CHUNK = 512


@dataclass(frozen=True)
class AttackConfig:
    """PGD knobs; defaults follow the evaluation attack used throughout."""

    epsilon: float
    step_size: float = 0.01
    max_iterations: int = 40
    random_start: bool = True
    clip_min: float = 0.0
    clip_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise InputError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.step_size <= 0:
            raise InputError(f"step_size must be > 0, got {self.step_size}")
        if self.max_iterations < 1:
            raise InputError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.clip_min < self.clip_max:
            raise InputError(
                f"clip range [{self.clip_min}, {self.clip_max}] is empty"
            )


def _project(x: np.ndarray, origin: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    x = np.clip(x, origin - cfg.epsilon, origin + cfg.epsilon)
    return np.clip(x, cfg.clip_min, cfg.clip_max)


def pgd_perturb(
    params: Params,
    spec: NetworkSpec,
    batch: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
) -> np.ndarray:
    """Adversarial counterparts of a batch, within epsilon and the clip range."""
    origin = np.asarray(batch, dtype=np.float64)
    if origin.size and (origin.min() < cfg.clip_min or origin.max() > cfg.clip_max):
        raise InputError(
            f"batch values outside the clip range [{cfg.clip_min}, {cfg.clip_max}]"
        )
    if cfg.epsilon == 0:
        return origin.copy()
    x = origin
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        x = _project(origin + rng.uniform(-cfg.epsilon, cfg.epsilon, size=origin.shape), origin, cfg)
    for _ in range(cfg.max_iterations):
        bundle = loss_forward_backward(params, spec, x, labels)
        grad = bundle.input_grads
        if not np.isfinite(grad).all():
            raise NumericError("non-finite input gradient during PGD", where="pgd_perturb")
        x = _project(x + cfg.step_size * np.sign(grad), origin, cfg)
    return x


def attack_accuracy_inputs(
    data: LabeledSet, params: Params, spec: NetworkSpec, cfg: AttackConfig
) -> LabeledSet:
    """Replace every example with its PGD counterpart; labels unchanged.

    Work proceeds in fixed-size chunks to bound memory; each chunk attacks
    under a seed derived from (cfg.seed, chunk index), so results do not
    depend on the chunk size interacting with sample count.
    """
    out = np.empty_like(data.features)
    for ci, start in enumerate(range(0, data.size, EVAL_CHUNK)):
        stop = min(start + EVAL_CHUNK, data.size)
        chunk_cfg = replace(cfg, seed=derive_seed(cfg.seed, "chunk", ci))
        out[start:stop] = pgd_perturb(
            params, spec, data.features[start:stop], data.labels[start:stop], chunk_cfg
        )
    return LabeledSet(out, data.labels, data.class_count)
