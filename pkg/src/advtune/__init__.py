"""Adversarial training of small networks, robustness surface sweeps, and
budget-constrained hyperparameter tuning over (ratio, epsilon)."""

from .attack import EVAL_CHUNK, AttackConfig, attack_accuracy_inputs, pgd_perturb
from .data import LabeledSet, SplitSpec, batches, load_idx, split, synth_blobs, synth_digits
from .errors import (
    ConfigError,
    DimensionError,
    IdxFormatError,
    InputError,
    NumericError,
    SearchSpaceExhausted,
    SpecError,
    TrainingError,
)
from .evaluation import (
    EvalResult,
    adversarial_accuracy,
    clean_accuracy,
    evaluate,
    predictions,
)
from .nn import (
    Conv2D,
    Dense,
    Flatten,
    GradientBundle,
    MaxPool,
    NetworkSpec,
    Params,
    ReLU,
    forward,
    init_network,
    loss_forward_backward,
    params_equal,
    sgd_update,
    shape_plan,
)
from .persist import load_params, save_params
from .seeding import derive_seed
from .sweep import CellResult, SurfaceGrid, SweepSpec, export_surface, run_sweep
from .training import (
    TRAIN_ATTACK_ITERATIONS,
    AdvTrainConfig,
    TrainReport,
    adversarial_train,
    derive_cell_config,
    select_replacement_indices,
    train_clean,
    training_attack,
)
from .tuner import (
    STRATEGIES,
    Budget,
    SearchSpace,
    TPEParams,
    Trial,
    TuneResult,
    TunerOutcome,
    budget_filter,
    grid_schedule,
    measure_baseline,
    random_schedule,
    timing_rows,
    tpe_propose,
    training_evaluator,
    trial_rows,
    tune,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
