"""Sensitivity sweep over the (ratio, epsilon) grid with repetitions.

Each cell trains `repetitions` models and reports mean/std of clean and
adversarial accuracy. Per-repetition seeds derive from (root seed, cell
index, repetition), never from execution order, so cells are independent
and a permuted or parallel execution produces bit-identical results. Raw
per-repetition values ride along with the aggregates.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .attack import AttackConfig
from .data import LabeledSet
from .errors import NumericError, SpecError, TrainingError
from .evaluation import evaluate
from .nn import NetworkSpec
from .seeding import derive_seed
from .training import AdvTrainConfig, adversarial_train, derive_cell_config


@dataclass(frozen=True)
class SweepSpec:
    ratio_values: tuple[float, ...]
    epsilon_values: tuple[float, ...]
    repetitions: int
    base: AdvTrainConfig
    eval_attack: AttackConfig
    root_seed: int

    def __post_init__(self):
        if not self.ratio_values or not self.epsilon_values:
            raise SpecError("sweep grid must be non-empty on both axes")
        for name, values in (("ratio", self.ratio_values), ("epsilon", self.epsilon_values)):
            if list(values) != sorted(set(values)):
                raise SpecError(f"{name} values must be ascending and distinct: {values}")
        if min(self.ratio_values) < 0 or max(self.ratio_values) > 1:
            raise SpecError(f"ratio values must lie in [0,1]: {self.ratio_values}")
        if min(self.epsilon_values) <= 0:
            raise SpecError(f"epsilon values must be positive: {self.epsilon_values}")
        if self.repetitions < 1:
            raise SpecError(f"repetitions must be >= 1, got {self.repetitions}")


@dataclass(frozen=True)
class CellResult:
    """One grid cell: raw per-repetition metrics plus any recorded failures."""

    ratio: float
    epsilon: float
    acc_test_values: tuple[float, ...]
    acc_adv_values: tuple[float, ...]
    seeds: tuple[int, ...]
    errors: tuple[str, ...] = ()

    @property
    def reps(self) -> int:
        return len(self.acc_test_values)

    @property
    def acc_test_mean(self) -> float:
        return float(np.mean(self.acc_test_values)) if self.acc_test_values else float("nan")

    @property
    def acc_test_std(self) -> float:
        return float(np.std(self.acc_test_values)) if self.acc_test_values else float("nan")

    @property
    def acc_adv_mean(self) -> float:
        return float(np.mean(self.acc_adv_values)) if self.acc_adv_values else float("nan")

    @property
    def acc_adv_std(self) -> float:
        return float(np.std(self.acc_adv_values)) if self.acc_adv_values else float("nan")


@dataclass(frozen=True)
class SurfaceGrid:
    spec: SweepSpec
    cells: tuple[CellResult, ...]

    def cell(self, ratio_index: int, epsilon_index: int) -> CellResult:
        return self.cells[ratio_index * len(self.spec.epsilon_values) + epsilon_index]

    def to_dict(self) -> dict:
        """JSON-ready dump of the grid, raw values included."""
        return {
            "ratio_values": list(self.spec.ratio_values),
            "epsilon_values": list(self.spec.epsilon_values),
            "repetitions": self.spec.repetitions,
            "root_seed": self.spec.root_seed,
            "cells": [
                {
                    "ratio": c.ratio,
                    "epsilon": c.epsilon,
                    "acc_test_values": list(c.acc_test_values),
                    "acc_adv_values": list(c.acc_adv_values),
                    "seeds": list(c.seeds),
                    "errors": list(c.errors),
                }
                for c in self.cells
            ],
        }


def _run_rep(args):
    """One (cell, repetition) training job; must stay picklable for the pool."""
    spec, net, train, eval_data, cell_index, rep = args
    ratio = spec.ratio_values[cell_index // len(spec.epsilon_values)]
    epsilon = spec.epsilon_values[cell_index % len(spec.epsilon_values)]
    seed = derive_seed(spec.root_seed, "cell", cell_index, rep)
    cfg = replace(derive_cell_config(spec.base, ratio, epsilon), seed=seed)
    # eval seed hangs off the cell seed, exactly like a tuner trial, so a
    # sweep cell and a trial that share a derived seed share all metrics
    eval_cfg = replace(spec.eval_attack, seed=derive_seed(seed, "eval"))
    try:
        report = adversarial_train(train, cfg, net)
        result = evaluate(report.params, net, eval_data, eval_cfg)
    except (TrainingError, NumericError) as exc:
        return cell_index, rep, seed, None, None, str(exc)
    return cell_index, rep, seed, result.acc_test, result.acc_adv, None


def run_sweep(
    spec: SweepSpec,
    train: LabeledSet,
    eval_data: LabeledSet,
    net: NetworkSpec,
    workers: int = 1,
) -> SurfaceGrid:
    """Train and evaluate every (ratio, epsilon, repetition); aggregate per cell.

    A training failure is recorded in its cell's errors and the sweep
    continues. With workers > 1 the repetitions run in a process pool;
    results are identical to the serial order by construction.
    """
    cell_count = len(spec.ratio_values) * len(spec.epsilon_values)
    jobs = [
        (spec, net, train, eval_data, cell_index, rep)
        for cell_index in range(cell_count)
        for rep in range(spec.repetitions)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_rep, jobs, chunksize=1))
    else:
        outcomes = [_run_rep(j) for j in jobs]

    by_cell: dict[int, list] = {i: [] for i in range(cell_count)}
    for cell_index, rep, seed, acc_test, acc_adv, error in outcomes:
        by_cell[cell_index].append((rep, seed, acc_test, acc_adv, error))
    cells = []
    for cell_index in range(cell_count):
        ratio = spec.ratio_values[cell_index // len(spec.epsilon_values)]
        epsilon = spec.epsilon_values[cell_index % len(spec.epsilon_values)]
        rows = sorted(by_cell[cell_index])
        cells.append(
            CellResult(
                ratio=ratio,
                epsilon=epsilon,
                acc_test_values=tuple(r[2] for r in rows if r[4] is None),
                acc_adv_values=tuple(r[3] for r in rows if r[4] is None),
                seeds=tuple(r[1] for r in rows),
                errors=tuple(r[4] for r in rows if r[4] is not None),
            )
        )
    return SurfaceGrid(spec, tuple(cells))


def export_surface(grid: SurfaceGrid, path) -> None:
    """CSV of per-cell aggregates, 6-decimal fixed, sorted by (ratio, epsilon)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["ratio", "epsilon", "acc_test_mean", "acc_test_std", "acc_adv_mean", "acc_adv_std", "reps"]
        )
        for c in sorted(grid.cells, key=lambda c: (c.ratio, c.epsilon)):
            writer.writerow(
                [
                    f"{c.ratio:.6f}",
                    f"{c.epsilon:.6f}",
                    f"{c.acc_test_mean:.6f}",
                    f"{c.acc_test_std:.6f}",
                    f"{c.acc_adv_mean:.6f}",
                    f"{c.acc_adv_std:.6f}",
                    str(c.reps),
                ]
            )
