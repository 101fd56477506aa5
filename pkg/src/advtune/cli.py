"""Command-line entry point.

Five subcommands: baseline, train, eval, sweep, tune. Each reads one JSON
config (defaults filled in), applies --set dotted-path overrides, validates
everything before writing a single byte, then runs and drops its artifacts
plus a manifest into the output directory.

Exit codes: 0 success, 2 configuration error, 3 runtime failure, 4 tune
finished with no feasible configuration under the budget.

The manifest records the effective config, seed, library versions and the
sha256 of every deterministic artifact; re-running a command from the same
config on the same platform reproduces those artifacts byte for byte. The
timing sidecar (timings.jsonl) is the one deliberately nondeterministic
output and is excluded from the hash list.
"""

from __future__ import annotations

import argparse
import os
import platform
import sys
from dataclasses import replace

import numpy as np
import scipy

from . import __version__
from .attack import AttackConfig
from .config import (
    apply_overrides,
    dataset_from_config,
    eval_attack_from,
    load_config,
    network_from_config,
    search_space_from,
    split_from_config,
    train_config_from,
)
from .errors import ConfigError, InputError, NumericError, SearchSpaceExhausted, SpecError, TrainingError
from .evaluation import adversarial_accuracy, clean_accuracy, evaluate
from .nn import init_network
from .persist import load_params, save_params, sha256_file, write_json, write_jsonl
from .seeding import derive_seed
from .sweep import SweepSpec, export_surface, run_sweep
from .training import AdvTrainConfig, adversarial_train, train_clean
from .tuner import (
    Budget,
    measure_baseline,
    timing_rows,
    training_evaluator,
    trial_rows,
    tune,
)

_RUNTIME_ERRORS = (
    TrainingError,
    NumericError,
    InputError,
    SpecError,
    SearchSpaceExhausted,
    OSError,
)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON run config; defaults used when omitted")
    sub.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="PATH=VALUE",
        help="override a config field by dotted path, e.g. train.epochs=5",
    )
    sub.add_argument("--output", help="output directory (overrides config output_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advtune",
        description="Adversarial training, robustness surfaces, and budgeted hyperparameter tuning",
    )
    parser.add_argument("--version", action="version", version=f"advtune {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("baseline", help="clean training run plus metrics")
    _add_common(p)

    p = subs.add_parser("train", help="adversarial training at one (ratio, epsilon)")
    _add_common(p)
    p.add_argument("--ratio", type=float, help="shortcut for train.ratio")
    p.add_argument("--epsilon", type=float, help="shortcut for train.epsilon")

    p = subs.add_parser("eval", help="evaluate a saved model")
    _add_common(p)
    p.add_argument("--params", required=True, help="saved parameter file")
    p.add_argument("--epsilon", type=float, help="shortcut for eval_attack.epsilon")
    p.add_argument(
        "--limit", type=int,
        help="evaluate only the first N test samples (full split when omitted)",
    )

    p = subs.add_parser("sweep", help="(ratio, epsilon) sensitivity sweep")
    _add_common(p)
    p.add_argument("--workers", type=int, help="worker pool width (default ADVTUNE_WORKERS or 1)")

    p = subs.add_parser("tune", help="budgeted hyperparameter search")
    _add_common(p)
    p.add_argument("--strategy", choices=("grid", "random", "tpe"), help="search strategy")
    p.add_argument("--n", type=int, help="iterations per repetition")
    p.add_argument("--beta", help="accuracy budget in percentage points, or 'unbounded'")
    p.add_argument("--repeats", type=int, help="repetition count (grid always runs once)")
    return parser


def _effective_config(args) -> dict:
    cfg = apply_overrides(load_config(args.config), args.set)
    if args.command == "train":
        if args.ratio is not None:
            cfg["train"]["ratio"] = args.ratio
        if args.epsilon is not None:
            cfg["train"]["epsilon"] = args.epsilon
    elif args.command == "eval":
        if args.epsilon is not None:
            cfg["eval_attack"]["epsilon"] = args.epsilon
    elif args.command == "tune":
        section = cfg.setdefault("tune", {})
        if args.strategy is not None:
            section["strategy"] = args.strategy
        if args.n is not None:
            section["n"] = args.n
        if args.repeats is not None:
            section["repeats"] = args.repeats
        if args.beta is not None:
            if args.beta == "unbounded":
                section["beta"] = None
            else:
                try:
                    section["beta"] = float(args.beta)
                except ValueError:
                    raise ConfigError(f"--beta must be a number or 'unbounded', got {args.beta!r}")
    if args.output:
        cfg["output_dir"] = args.output
    return cfg


def _workers(args) -> int:
    if getattr(args, "workers", None):
        return max(1, args.workers)
    env = os.environ.get("ADVTUNE_WORKERS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"ADVTUNE_WORKERS must be an integer, got {env!r}")


class _Run:
    """Everything a command needs, assembled and validated up front."""

    def __init__(self, args):
        cfg = _effective_config(args)
        try:
            self.seed = int(cfg["seed"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"config seed {cfg.get('seed')!r} is not an integer")
        self.cfg = cfg
        self.net = network_from_config(cfg)
        data = dataset_from_config(cfg)
        try:
            data = data.reshaped(tuple(self.net.input_shape))
        except InputError as exc:
            raise ConfigError(f"dataset does not fit the network input: {exc}")
        self.train_data, self.val_data, self.test_data = split_from_config(cfg, data)
        self.eval_attack = eval_attack_from(cfg)
        self.train_cfg = train_config_from(cfg)
        self.out_dir = str(cfg.get("output_dir", "runs/advtune"))
        os.makedirs(self.out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_manifest(self, command: str, artifacts: list[str]) -> None:
        manifest = {
            "command": command,
            "seed": self.seed,
            "effective_config": self.cfg,
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "advtune": __version__,
            },
            "artifacts": {name: sha256_file(self.path(name)) for name in artifacts},
        }
        write_json(manifest, self.path("manifest.json"))


def _clean_train_config(run: _Run, seed: int) -> AdvTrainConfig:
    base = run.train_cfg
    return AdvTrainConfig(
        ratio=0.0,
        train_epsilon=0.0,
        epochs=base.epochs,
        batch_size=base.batch_size,
        learning_rate=base.learning_rate,
        seed=seed,
    )


def cmd_baseline(run: _Run, args) -> int:
    cfg = _clean_train_config(run, derive_seed(run.seed, "baseline"))
    report = train_clean(run.train_data, cfg, run.net)
    metrics = {
        "acc_val": clean_accuracy(report.params, run.net, run.val_data),
        "acc_test": clean_accuracy(report.params, run.net, run.test_data),
        "epoch_losses": list(report.epoch_losses),
        "samples": {
            "train": run.train_data.size,
            "validation": run.val_data.size,
            "test": run.test_data.size,
        },
    }
    save_params(report.params, run.path("params.bin"))
    write_json(metrics, run.path("metrics.json"))
    run.write_manifest("baseline", ["params.bin", "metrics.json"])
    print(f"baseline: acc_test {metrics['acc_test']:.4f} -> {run.out_dir}")
    return 0


def cmd_train(run: _Run, args) -> int:
    cfg = run.train_cfg
    report = adversarial_train(run.train_data, cfg, run.net)
    atk = replace(run.eval_attack, seed=derive_seed(run.seed, "eval"))
    result = evaluate(report.params, run.net, run.test_data, atk)
    metrics = {
        "ratio": cfg.ratio,
        "epsilon": cfg.train_epsilon,
        "acc_test": result.acc_test,
        "acc_adv": result.acc_adv,
        "eval_epsilon": result.eval_epsilon,
        "epoch_losses": list(report.epoch_losses),
        "sample_count": result.sample_count,
    }
    save_params(report.params, run.path("params.bin"))
    write_json(metrics, run.path("metrics.json"))
    run.write_manifest("train", ["params.bin", "metrics.json"])
    print(
        f"train: ratio {cfg.ratio} epsilon {cfg.train_epsilon} "
        f"acc_test {result.acc_test:.4f} acc_adv {result.acc_adv:.4f} -> {run.out_dir}"
    )
    return 0


def cmd_eval(run: _Run, args) -> int:
    params = load_params(args.params)
    reference = init_network(run.net, 0)
    got = [None if e is None else (e[0].shape, e[1].shape) for e in params.layers]
    want = [None if e is None else (e[0].shape, e[1].shape) for e in reference.layers]
    if got != want:
        raise InputError(f"parameter file {args.params} does not fit the configured network")
    data = run.test_data
    if args.limit is not None:
        data = data.subset(np.arange(min(args.limit, data.features.shape[0])))
    atk = replace(run.eval_attack, seed=derive_seed(run.seed, "eval"))
    result = evaluate(params, run.net, data, atk)
    metrics = {
        "acc_test": result.acc_test,
        "acc_adv": result.acc_adv,
        "eval_epsilon": result.eval_epsilon,
        "sample_count": result.sample_count,
    }
    write_json(metrics, run.path("metrics.json"))
    run.write_manifest("eval", ["metrics.json"])
    print(f"eval: acc_test {result.acc_test:.4f} acc_adv {result.acc_adv:.4f} -> {run.out_dir}")
    return 0


def _sweep_spec(run: _Run) -> SweepSpec:
    section = run.cfg.get("sweep")
    if not isinstance(section, dict):
        raise ConfigError("config needs a 'sweep' object")
    try:
        return SweepSpec(
            ratio_values=tuple(float(v) for v in section["ratio_values"]),
            epsilon_values=tuple(float(v) for v in section["epsilon_values"]),
            repetitions=int(section["repetitions"]),
            base=run.train_cfg,
            eval_attack=run.eval_attack,
            root_seed=run.seed,
        )
    except (KeyError, ValueError, SpecError) as exc:
        raise ConfigError(f"sweep: {exc}")


def cmd_sweep(run: _Run, args) -> int:
    spec = _sweep_spec(run)
    workers = _workers(args)
    grid = run_sweep(spec, run.train_data, run.test_data, run.net, workers=workers)
    export_surface(grid, run.path("surface.csv"))
    write_json(grid.to_dict(), run.path("sweep_grid.json"))
    run.write_manifest("sweep", ["surface.csv", "sweep_grid.json"])
    cells = len(grid.cells)
    print(f"sweep: {cells} cells x {spec.repetitions} reps -> {run.out_dir}")
    return 0


def cmd_tune(run: _Run, args) -> int:
    section = run.cfg.get("tune")
    if not isinstance(section, dict):
        raise ConfigError("config needs a 'tune' object")
    try:
        strategy = str(section["strategy"])
        n = int(section["n"])
        repeats = int(section.get("repeats", 1))
        beta = section.get("beta")
        beta = None if beta is None else float(beta)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"tune: {exc}")
    space = search_space_from(run.cfg)
    base = run.train_cfg

    baseline_acc = measure_baseline(
        run.train_data, run.val_data, run.net, base, derive_seed(run.seed, "baseline")
    )
    budget = Budget(beta, baseline_acc)
    evaluator = training_evaluator(run.train_data, run.val_data, run.net, base, run.eval_attack)
    result = tune(strategy, space, n, budget, evaluator, repeats, run.seed)

    write_jsonl(trial_rows(result), run.path("trials.jsonl"))
    write_jsonl(timing_rows(result), run.path("timings.jsonl"))
    summary = result.summary()
    summary["best_per_rep"] = [
        None
        if o.best is None
        else {
            "ratio": o.best.ratio,
            "epsilon": o.best.epsilon,
            "acc_test": o.best.acc_test,
            "acc_adv": o.best.acc_adv,
        }
        for o in result.outcomes
    ]
    summary["rep_errors"] = list(result.rep_errors)
    write_json(summary, run.path("summary.json"))
    run.write_manifest("tune", ["trials.jsonl", "summary.json"])
    if summary["success_rate"] == 0:
        print(
            f"tune: no feasible configuration under beta={beta} "
            f"(baseline {baseline_acc:.4f}) -> {run.out_dir}"
        )
        return 4
    print(
        f"tune: {strategy} success rate {summary['success_rate']:.2f} "
        f"mean best acc_adv {summary['mean_best_acc_adv']:.4f} -> {run.out_dir}"
    )
    return 0


_COMMANDS = {
    "baseline": cmd_baseline,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "tune": cmd_tune,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "eval":
            if not os.path.exists(args.params):
                raise ConfigError(f"parameter file not found: {args.params}")
            if args.limit is not None and args.limit < 1:
                raise ConfigError(f"--limit must be >= 1, got {args.limit}")
        run = _Run(args)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    try:
        return _COMMANDS[args.command](run, args)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    except _RUNTIME_ERRORS as exc:
        return _fail(str(exc), 3)


if __name__ == "__main__":
    sys.exit(main())
