"""Run configuration: a sectioned JSON file with strict key checking and a
single master seed fanned out deterministically to every module."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA = {
    "seed": None,
    "dataset": {"validation_fraction", "min_points", "min_thickness",
                "t_max_range", "max_residual"},
    "model": {"n_filter", "n_kernel", "n_latent", "activation",
              "conv_layers", "decoder_hidden"},
    "training": {"epochs", "initial_lr", "lr_decay", "lr_period", "beta",
                 "lambda", "n_resample"},
    "ga": {"population", "generations", "crossover_rate", "crossover_eta",
           "mutation_rate", "mutation_eta", "tournament_size", "elitism",
           "stall_window", "stall_tol"},
    "xfoil": {"binary", "reynolds", "mach", "alpha_deg", "n_panels",
              "n_iter", "timeout", "r_le_above"},
    "output": {"dir"},
}

SEED_STREAMS = ("dataset", "model", "ga", "sampling")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 2024
    dataset: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    ga: dict = field(default_factory=dict)
    xfoil: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        unknown = set(doc) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for section, allowed in SCHEMA.items():
            if allowed is None or section not in doc:
                continue
            bad = set(doc[section]) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
        return cls(**doc)

    def module_seed(self, stream: str) -> int:
        """Deterministic per-module child seed from the master seed."""
        idx = SEED_STREAMS.index(stream)
        child = np.random.SeedSequence(self.seed, spawn_key=(idx,))
        return int(child.generate_state(1)[0])

    def resolved(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": self.dataset,
            "model": self.model,
            "training": self.training,
            "ga": self.ga,
            "xfoil": self.xfoil,
            "output": self.output,
            "derived_seeds": {s: self.module_seed(s) for s in SEED_STREAMS},
        }


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def atomic_write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def write_resolved_config(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir) / "resolved_config.json"
    atomic_write_text(out, json.dumps(cfg.resolved(), indent=1, sort_keys=True))
    return out
