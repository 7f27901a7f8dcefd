"""Experiment configuration: flat INI sections parsed into typed configs.

Every hyperparameter is a key with a library default; unknown keys or
sections are rejected with their full path. The ``FSFL_SEED`` environment
variable overrides the configured seed.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .codec import FINE_STEP, WEIGHT_STEP_BIDIRECTIONAL, WEIGHT_STEP_UNIDIRECTIONAL
from .data import DatasetSpec
from .protocol import ProtocolConfig
from .sparsify import SparsifyConfig

SEED_ENV_VAR = "FSFL_SEED"

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _to_bool(raw: str, path: str) -> bool:
    low = raw.strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ValueError(f"invalid boolean for {path}: {raw!r}")


def _to_ratios(raw: str, path: str) -> tuple:
    parts = [p.strip() for p in raw.split(":")]
    if len(parts) != 3:
        raise ValueError(f"invalid split ratios for {path}: {raw!r} (want a:b:c)")
    values = [float(p) for p in parts]
    total = sum(values)
    if total <= 0:
        raise ValueError(f"invalid split ratios for {path}: {raw!r}")
    return tuple(v / total for v in values)


def _to_list(raw: str, _path: str) -> tuple:
    return tuple(p.strip() for p in raw.split(",") if p.strip())


def _to_tristate(raw: str, path: str):
    low = raw.strip().lower()
    if low == "auto":
        return None
    return _to_bool(raw, path)


# section -> key -> (converter, default)
SCHEMA = {
    "run": {
        "algorithm": (str, "fsfl"),
        "seed": (int, 42),
        "rounds": (int, 15),
        "clients": (int, 2),
        "output": (str, "rounds.csv"),
        "checkpoint": (str, ""),
    },
    "model": {
        "preset": (str, "tiny_cnn"),
        "scaling_policy": (str, "all_layers"),
        "listed_layers": (_to_list, ()),
    },
    "data": {
        "source": (str, "synthetic_gaussian_blobs"),
        "classes": (int, 10),
        "samples_per_class": (int, 60),
        "ratios": (_to_ratios, (0.70, 0.15, 0.15)),
        "noise": (float, 1.0),
        "path": (str, ""),
        "batch_size": (int, 64),
        "eval_batch_size": (int, 64),
        "augment": (_to_bool, True),
    },
    "sparsifier": {
        "mode": (str, "thresholded"),
        "delta": (float, 1.0),
        "gamma": (float, 1.0),
        "rate": (float, 0.96),
    },
    "codec": {
        "weight_step": (float, WEIGHT_STEP_UNIDIRECTIONAL),
        "weight_step_bidirectional": (float, WEIGHT_STEP_BIDIRECTIONAL),
        "fine_step": (float, FINE_STEP),
    },
    "protocol": {
        "sub_epochs": (int, 2),
        "bidirectional": (_to_bool, False),
        "partial_update": (_to_bool, False),
        "residuals": (_to_bool, False),
        "scaling": (_to_tristate, None),
        "weights_optimizer": (str, "adam"),
        "weights_lr": (float, 1e-5),
        "scaling_optimizer": (str, "adam"),
        "scaling_momentum": (float, 0.9),
    },
    "schedulers": {
        "kind": (str, "cawr"),
        "lr_max": (float, 1e-3),
        "lr_min": (float, 0.0),
    },
}


@dataclass
class ExperimentConfig:
    seed: int = 42
    output: str = "rounds.csv"
    checkpoint: str = ""
    model_preset: str = "tiny_cnn"
    scaling_policy: str = "all_layers"
    listed_layers: tuple = ()
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)


def _collect(parser: configparser.ConfigParser) -> dict:
    values = {sect: {k: default for k, (_c, default) in keys.items()}
              for sect, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ValueError(f"unknown config key: {section}.{key}")
            converter, _default = SCHEMA[section][key]
            path = f"{section}.{key}"
            try:
                values[section][key] = converter(raw, path) if converter in (
                    _to_bool, _to_ratios, _to_list, _to_tristate) else converter(raw)
            except ValueError as exc:
                raise ValueError(f"invalid value for {path}: {raw!r} ({exc})") from None
    return values


def config_from_values(values: dict) -> ExperimentConfig:
    run = values["run"]
    data = values["data"]
    spars = values["sparsifier"]
    codec = values["codec"]
    proto = values["protocol"]
    sched = values["schedulers"]

    seed = int(os.environ.get(SEED_ENV_VAR, run["seed"]))

    dataset = DatasetSpec(
        source=data["source"],
        classes=data["classes"],
        samples_per_class=data["samples_per_class"],
        ratios=data["ratios"],
        noise=data["noise"],
        path=data["path"] or None,
    ).validate()

    protocol = ProtocolConfig(
        algorithm=run["algorithm"],
        num_clients=run["clients"],
        rounds=run["rounds"],
        sub_epochs=proto["sub_epochs"],
        bidirectional=proto["bidirectional"],
        partial_update=proto["partial_update"],
        residuals=proto["residuals"],
        scaling=proto["scaling"],
        sparsify=SparsifyConfig(
            mode=spars["mode"],
            delta=spars["delta"],
            gamma=spars["gamma"],
            rate=spars["rate"],
            step_size=codec["weight_step"],
        ),
        weight_step=codec["weight_step"],
        weight_step_down=codec["weight_step_bidirectional"],
        fine_step=codec["fine_step"],
        weights_optimizer=proto["weights_optimizer"],
        weights_lr=proto["weights_lr"],
        scaling_optimizer=proto["scaling_optimizer"],
        scaling_momentum=proto["scaling_momentum"],
        schedule_kind=sched["kind"],
        scaling_lr_max=sched["lr_max"],
        scaling_lr_min=sched["lr_min"],
        batch_size=data["batch_size"],
        eval_batch_size=data["eval_batch_size"],
        augment=data["augment"],
    ).validate()

    return ExperimentConfig(
        seed=seed,
        output=run["output"],
        checkpoint=run["checkpoint"],
        model_preset=values["model"]["preset"],
        scaling_policy=values["model"]["scaling_policy"],
        listed_layers=values["model"]["listed_layers"],
        dataset=dataset,
        protocol=protocol,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read(path)
    return config_from_values(_collect(parser))
