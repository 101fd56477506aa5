"""Clean and adversarial accuracy measurement.

Robustness is the accuracy on PGD-perturbed inputs, with the evaluation
epsilon fixed independently of whatever epsilon training used. Evaluation
never mutates parameters or data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import EVAL_CHUNK, AttackConfig, attack_accuracy_inputs
from .data import LabeledSet
from .nn import NetworkSpec, Params, forward


@dataclass(frozen=True)
class EvalResult:
    acc_test: float
    acc_adv: float
    eval_epsilon: float
    sample_count: int

    def __post_init__(self):
        if not (0.0 <= self.acc_test <= 1.0 and 0.0 <= self.acc_adv <= 1.0):
            raise ValueError("accuracies must lie in [0,1]")


def predictions(params: Params, spec: NetworkSpec, data: LabeledSet) -> np.ndarray:
    """Argmax class per sample; ties resolve to the lowest class index."""
    out = np.empty(data.size, dtype=np.int64)
    for start in range(0, data.size, EVAL_CHUNK):
        stop = min(start + EVAL_CHUNK, data.size)
        logits = forward(params, spec, data.features[start:stop])
        out[start:stop] = logits.argmax(axis=1)
    return out


def clean_accuracy(params: Params, spec: NetworkSpec, data: LabeledSet) -> float:
    return float(np.mean(predictions(params, spec, data) == data.labels))


def adversarial_accuracy(
    params: Params, spec: NetworkSpec, data: LabeledSet, attack_cfg: AttackConfig
) -> float:
    """Clean accuracy measured on the PGD-attacked version of the data."""
    return clean_accuracy(params, spec, attack_accuracy_inputs(data, params, spec, attack_cfg))


def evaluate(
    params: Params, spec: NetworkSpec, data: LabeledSet, attack_cfg: AttackConfig
) -> EvalResult:
    return EvalResult(
        acc_test=clean_accuracy(params, spec, data),
        acc_adv=adversarial_accuracy(params, spec, data, attack_cfg),
        eval_epsilon=attack_cfg.epsilon,
        sample_count=data.size,
    )
