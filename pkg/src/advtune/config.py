"""Run configuration: JSON schema, defaults, dotted-path overrides, builders.

A run config is one JSON object with sections for the dataset, split,
network, trainer, evaluation attack, sweep and tune. Missing sections fall
back to defaults; `--set a.b.c=value` overrides win over both. Everything
user-facing is validated here and surfaces as ConfigError, which the CLI
maps to exit code 2 before any artifact is written.
"""

from __future__ import annotations

import copy
import json
import os

from .attack import AttackConfig
from .data import LabeledSet, SplitSpec, load_idx, split, synth_blobs, synth_digits
from .errors import ConfigError, InputError, SpecError
from .nn import Conv2D, Dense, Flatten, MaxPool, NetworkSpec, ReLU, shape_plan
from .training import AdvTrainConfig, training_attack
from .tuner import SearchSpace


def default_config() -> dict:
    """Small self-contained run: synthetic digits and a dense net."""
    return {
        "dataset": {"kind": "digits", "count": 800},
        "split": {"validation_count": 150, "test_count": 150},
        "network": {
            "input_shape": [784],
            "layers": [["dense", 784, 32], ["relu"], ["dense", 32, 10]],
            "classes": 10,
        },
        "train": {
            "ratio": 0.5,
            "epsilon": 0.1,
            "epochs": 3,
            "batch_size": 50,
            "learning_rate": 0.5,
            "attack_iterations": 7,
        },
        "eval_attack": {
            "epsilon": 0.1,
            "step_size": 0.01,
            "iterations": 40,
            "random_start": True,
        },
        "sweep": {
            "ratio_values": [0.0, 0.5, 1.0],
            "epsilon_values": [0.05, 0.1, 0.2],
            "repetitions": 2,
        },
        "tune": {
            "strategy": "tpe",
            "n": 15,
            "beta": None,
            "repeats": 3,
            "space": {
                "ratio_points": 30,
                "epsilon_points": 30,
                "epsilon_min": 0.01,
                "epsilon_max": 0.5,
            },
        },
        "seed": 20240811,
        "output_dir": "runs/advtune",
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None) -> dict:
    """Defaults, deep-merged with the JSON file at `path` when given."""
    cfg = default_config()
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            loaded = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return _deep_merge(cfg, loaded)


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """Apply `dotted.path=value` assignments; values parse as JSON, else string."""
    cfg = copy.deepcopy(cfg)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        if not all(keys):
            raise ConfigError(f"override path {path!r} is malformed")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        for key in keys[:-1]:
            nxt = node.get(key)
            if not isinstance(nxt, dict):
                nxt = {}
                node[key] = nxt
            node = nxt
        node[keys[-1]] = value
    return cfg


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where} is missing required field {key!r}")
    return section[key]


def dataset_from_config(cfg: dict) -> LabeledSet:
    section = cfg.get("dataset")
    if not isinstance(section, dict):
        raise ConfigError("config needs a 'dataset' object")
    kind = _require(section, "kind", "dataset")
    try:
        if kind == "digits":
            data = synth_digits(int(_require(section, "count", "dataset")), int(cfg["seed"]))
        elif kind == "blobs":
            data = synth_blobs(
                int(_require(section, "classes", "dataset")),
                int(_require(section, "per_class", "dataset")),
                int(_require(section, "dims", "dataset")),
                float(_require(section, "spread", "dataset")),
                int(cfg["seed"]),
            )
        elif kind == "idx":
            images = _require(section, "images", "dataset")
            labels = _require(section, "labels", "dataset")
            for path in (images, labels):
                if not os.path.exists(path):
                    raise ConfigError(f"dataset file not found: {path}")
            data = load_idx(images, labels)
            limit = section.get("limit")
            if limit is not None:
                limit = int(limit)
                if not 0 < limit <= data.size:
                    raise ConfigError(f"dataset limit {limit} invalid for {data.size} samples")
                data = data.subset(range(limit))
        else:
            raise ConfigError(f"unknown dataset kind {kind!r}")
    except (InputError, SpecError, OSError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"dataset: {exc}") from exc
    return data


def network_from_config(cfg: dict) -> NetworkSpec:
    section = cfg.get("network")
    if not isinstance(section, dict):
        raise ConfigError("config needs a 'network' object")
    makers = {
        "dense": (Dense, 2),
        "relu": (ReLU, 0),
        "conv": (Conv2D, 2),
        "pool": (MaxPool, 0),
        "flatten": (Flatten, 0),
    }
    layers = []
    for entry in _require(section, "layers", "network"):
        if not isinstance(entry, list) or not entry or entry[0] not in makers:
            raise ConfigError(f"network layer {entry!r} is not recognized")
        maker, argc = makers[entry[0]]
        if len(entry) - 1 != argc:
            raise ConfigError(f"network layer {entry!r} needs {argc} arguments")
        layers.append(maker(*[int(a) for a in entry[1:]]))
    spec = NetworkSpec(
        tuple(int(d) for d in _require(section, "input_shape", "network")),
        tuple(layers),
        int(_require(section, "classes", "network")),
    )
    try:
        shape_plan(spec)
    except SpecError as exc:
        raise ConfigError(f"network: {exc}") from exc
    return spec


def split_from_config(cfg: dict, data: LabeledSet):
    section = cfg.get("split")
    if not isinstance(section, dict):
        raise ConfigError("config needs a 'split' object")
    try:
        return split(
            data,
            SplitSpec(
                int(_require(section, "validation_count", "split")),
                int(_require(section, "test_count", "split")),
                int(cfg["seed"]),
            ),
        )
    except (SpecError, InputError) as exc:
        raise ConfigError(f"split: {exc}") from exc


def train_config_from(cfg: dict) -> AdvTrainConfig:
    section = cfg.get("train")
    if not isinstance(section, dict):
        raise ConfigError("config needs a 'train' object")
    try:
        epsilon = float(_require(section, "epsilon", "train"))
        return AdvTrainConfig(
            ratio=float(_require(section, "ratio", "train")),
            train_epsilon=epsilon,
            epochs=int(_require(section, "epochs", "train")),
            batch_size=int(_require(section, "batch_size", "train")),
            learning_rate=float(_require(section, "learning_rate", "train")),
            seed=int(cfg["seed"]),
            attack=training_attack(epsilon, int(section.get("attack_iterations", 7))),
        )
    except (InputError, SpecError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc


def eval_attack_from(cfg: dict) -> AttackConfig:
    section = cfg.get("eval_attack")
    if not isinstance(section, dict):
        raise ConfigError("config needs an 'eval_attack' object")
    try:
        return AttackConfig(
            epsilon=float(_require(section, "epsilon", "eval_attack")),
            step_size=float(section.get("step_size", 0.01)),
            max_iterations=int(section.get("iterations", 40)),
            random_start=bool(section.get("random_start", True)),
        )
    except (InputError, ValueError) as exc:
        raise ConfigError(f"eval_attack: {exc}") from exc


def search_space_from(cfg: dict) -> SearchSpace:
    section = cfg.get("tune", {}).get("space", {})
    try:
        return SearchSpace(
            ratio_points=int(section.get("ratio_points", 30)),
            epsilon_points=int(section.get("epsilon_points", 30)),
            epsilon_min=float(section.get("epsilon_min", 0.01)),
            epsilon_max=float(section.get("epsilon_max", 0.5)),
        )
    except (SpecError, ValueError) as exc:
        raise ConfigError(f"tune.space: {exc}") from exc
