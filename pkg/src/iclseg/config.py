"""Run configuration: key=value sections with flag overrides.

A run is fully described by three sections (model, data, train); the
resolved configuration is echoed to ``<outdir>/config.resolved`` before
anything executes, and re-running from that file reproduces the run.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .attention import ConfigError
from .backbone import ModelConfig
from .phantoms import PhantomConfig, SplitConfig
from .trainer import TrainConfig

_SCHEMA: dict[str, dict[str, type]] = {
    "model": {
        "height": int,
        "width": int,
        "classes": int,
        "base_width": int,
        "heads": int,
    },
    "data": {
        "labeled": int,
        "unlabeled": int,
        "val": int,
    },
    "train": {
        "lr0": float,
        "momentum": float,
        "weight_decay": float,
        "max_iters": int,
        "poly_power": float,
        "batch_size": int,
        "val_every": int,
        "alpha": float,
        "beta": float,
        "master_seed": int,
        "mode": str,
        "dtype": str,
    },
}

_DEFAULTS: dict[str, dict[str, object]] = {
    "model": {"height": 64, "width": 64, "classes": 4, "base_width": 8, "heads": 4},
    "data": {"labeled": 4, "unlabeled": 60, "val": 20},
    "train": {
        "lr0": 0.01, "momentum": 0.9, "weight_decay": 1e-4, "max_iters": 2000,
        "poly_power": 0.9, "batch_size": 4, "val_every": 100, "alpha": 1.0,
        "beta": 50.0, "master_seed": 0, "mode": "icl", "dtype": "float64",
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def model_config(self) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(height=m["height"], width=m["width"],
                           n_classes=m["classes"], base_width=m["base_width"],
                           n_heads=m["heads"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: v for k, v in self.values["train"].items()})

    def split_config(self) -> SplitConfig:
        m = self.values["model"]
        d = self.values["data"]
        phantom = PhantomConfig(height=m["height"], width=m["width"],
                                n_classes=m["classes"])
        return SplitConfig(n_labeled=d["labeled"], n_unlabeled=d["unlabeled"],
                           n_val=d["val"],
                           master_seed=self.values["train"]["master_seed"],
                           phantom=phantom)


def _coerce(section: str, key: str, raw: str):
    kind = _SCHEMA[section][key]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}")


def default_config() -> RunConfig:
    return RunConfig({s: dict(kv) for s, kv in _DEFAULTS.items()})


def parse_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Load defaults, then the file, then ``section.key=value`` overrides.

    Unknown sections or keys are collected and rejected in one error.
    """
    cfg = default_config()
    unknown: list[str] = []
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file {path} not found or unreadable")
        for section in parser.sections():
            if section not in _SCHEMA:
                unknown.extend(f"{section}.{k}" for k in parser[section])
                continue
            for key, raw in parser[section].items():
                if key not in _SCHEMA[section]:
                    unknown.append(f"{section}.{key}")
                    continue
                cfg.values[section][key] = _coerce(section, key, raw)
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            unknown.append(f"{section}.{key}")
            continue
        cfg.values[section][key] = _coerce(section, key, raw)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(set(unknown))))
    return cfg


def resolved_text(cfg: RunConfig) -> str:
    lines = []
    for section in ("model", "data", "train"):
        lines.append(f"[{section}]")
        for key in _SCHEMA[section]:
            lines.append(f"{key} = {cfg.values[section][key]}")
        lines.append("")
    return "\n".join(lines)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.resolved"
    path.write_text(resolved_text(cfg))
    return path
