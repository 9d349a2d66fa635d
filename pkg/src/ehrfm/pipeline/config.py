"""Run configuration: a single JSON document."""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from pathlib import Path

from ..clif import OUTCOMES, PROFILES

ROLES = ("source", "target")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


DEFAULTS: dict = {
    "seed": 0,
    "out": "run",
    "sites": {
        "source": {"name": "A", "synth": {"profile": "A", "n_patients": 2000},
                   "ratios": [0.7, 0.1, 0.2]},
        "target": {"name": "B", "synth": {"profile": "B", "n_patients": 8000},
                   "ratios": [0.05, 0.05, 0.9]},
    },
    "tokenizer": {"max_len": 1024, "pad_gap_max": 8},
    "model": {"d_model": 64, "n_layers": 2, "n_heads": 4, "d_ff": 128, "max_context": 1024,
              "dropout": 0.0},
    "pretrain": {"lr": 2e-3, "warmup_steps": 30, "epochs": 3, "max_steps": None,
                 "batch_size": 16, "block_len": 64, "clip_norm": 1.0, "min_lr_ratio": 0.1,
                 "checkpoint_every": 0},
    "forest": {"n_trees": 100, "psi": 256, "threshold": 0.5, "contamination": None},
    "finetune": {"lr": 5e-4, "epochs": 3, "batch_size": 16, "warmup_steps": 10,
                 "init_from_probe": True},
    "finetune_urt": {"lr": 5e-4, "epochs": 3, "batch_size": 16, "warmup_steps": 10},
    "finetune_local": {"mode": "plain",
                       "search_space": [{"lr": 0.0, "epochs": 0}, {"lr": 1e-3, "epochs": 3},
                                        {"lr": 1e-3, "epochs": 6}],
                       "batch_size": 8},
    "outcomes": list(OUTCOMES),
    "curves": {"n_per_class": 100},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "sites":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclasses.dataclass
class RunConfig:
    raw: dict
    path: Path | None = None

    @classmethod
    def from_dict(cls, obj: dict, path: Path | None = None) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(obj) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(_merge(DEFAULTS, obj), path)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        path = Path(path)
        try:
            with open(path) as fh:
                obj = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(obj, path)

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if out is not None:
            raw["out"] = str(out)
        cfg = RunConfig(raw, self.path)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        r = self.raw
        if not isinstance(r["seed"], int) or r["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        sites = r["sites"]
        if set(sites) != set(ROLES):
            raise ConfigError("sites must define exactly 'source' and 'target'")
        names = set()
        for role in ROLES:
            site = sites[role]
            name = site.get("name")
            if not name or not str(name).isidentifier():
                raise ConfigError(f"{role} site needs an identifier-like name")
            names.add(name)
            has_synth, has_dir = "synth" in site, "directory" in site
            if has_synth == has_dir:
                raise ConfigError(f"{role} site needs exactly one of 'synth' or 'directory'")
            if has_synth:
                profile = site["synth"].get("profile")
                if profile not in PROFILES:
                    raise ConfigError(f"unknown synth profile {profile!r}")
                if int(site["synth"].get("n_patients", 0)) < 1:
                    raise ConfigError(f"{role} synth n_patients must be positive")
            else:
                directory = self.resolve(site["directory"])
                if not directory.is_dir():
                    raise ConfigError(f"{role} data directory {directory} does not exist")
            ratios = site.get("ratios")
            if (not isinstance(ratios, list) or len(ratios) != 3 or any(x < 0 for x in ratios)
                    or abs(sum(ratios) - 1.0) > 1e-9):
                raise ConfigError(f"{role} ratios must be three non-negative numbers summing to 1")
        if len(names) != 2:
            raise ConfigError("source and target sites need distinct names")
        bad = [o for o in r["outcomes"] if o not in OUTCOMES]
        if bad or not r["outcomes"]:
            raise ConfigError(f"unknown outcomes {bad}; choose from {sorted(OUTCOMES)}")
        if r["model"]["d_model"] % r["model"]["n_heads"]:
            raise ConfigError("model d_model must be divisible by n_heads")
        if r["tokenizer"]["max_len"] > r["model"]["max_context"]:
            raise ConfigError("tokenizer max_len exceeds the model context")
        if not r["finetune_local"]["search_space"]:
            raise ConfigError("finetune_local search_space is empty")

    def resolve(self, p: str) -> Path:
        p = Path(p)
        if p.is_absolute() or self.path is None:
            return p
        return self.path.parent / p

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def out(self) -> Path:
        return self.resolve(self.raw["out"])

    def site(self, role: str) -> dict:
        return self.raw["sites"][role]

    def site_name(self, role: str) -> str:
        return self.raw["sites"][role]["name"]

    def to_json(self) -> dict:
        return copy.deepcopy(self.raw)
