"""Experiment configuration: JSON documents merged over per-experiment defaults."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "DEFAULTS",
    "load_config",
    "make_config",
    "config_hash",
    "normalize_method",
    "EXPERIMENTS",
]

EXPERIMENTS = ("gaussian1d", "landscape", "variance", "density2d")


class ConfigError(ValueError):
    pass


_STD_NORMAL = {"kind": "gaussian", "mean": [0.0], "cov": [[1.0]]}

DEFAULTS: dict[str, dict] = {
    "gaussian1d": {
        "dataset": {"name": "gaussian1d", "n": 10_000, "params": {"theta_star": 16.0}},
        "noise": _STD_NORMAL,
        "theta_init": 0.0,
        "methods": [
            {"method": "meco", "noise": {"kind": "fitted_gaussian"}, "gamma": 0.1, "beta": 0.9, "lr": 0.01,
             "batch_data": 1, "batch_noise": 1},
            {"method": "nce", "optimizer": "sgd", "lr": 0.1, "batch_data": 1, "noise_ratio": 1},
            {"method": "nce", "optimizer": "ngd", "lr": 0.1, "batch_data": 1, "noise_ratio": 1},
            {"method": "ence", "optimizer": "ngd", "lr": 0.1, "batch_data": 1, "noise_ratio": 1},
            {"method": "mcmc", "optimizer": "sgd", "lr": 0.1, "batch_data": 1, "langevin_steps": 20,
             "langevin_step_size": 0.1, "init_std": 4.0},
            {"method": "mle_closed_form"},
        ],
        "budget": {"max_steps": 5000, "wall_secs": None},
        "seeds": list(range(10)),
        "log_every": 1,
    },
    "landscape": {
        "theta_grid": {"lo": 0.0, "hi": 32.0, "points": 161},
        "theta_star": 16.0,
        "theta_q": 0.0,
        "n_mc": 100_000,
        "seeds": [0],
    },
    "variance": {
        "theta": 1.0,
        "theta_star": 16.0,
        "offsets": [0.0, 1.0, 2.0, 5.0],
        "n_mc": 100_000,
        "convergence": {"theta_init": 12.0, "target_mse": 0.01, "max_steps": 20_000, "gamma": 0.1, "beta": 0.9,
                        "lr": 0.01, "batch_data": 1, "batch_noise": 1, "n_train": 10_000},
        "seeds": [0, 1, 2, 3, 4],
    },
    "density2d": {
        "dataset": {"name": "8gaussians", "n": 10_000},
        "noise": {"kind": "fitted_gaussian", "jitter": 1e-6},
        "model": {"hidden": [300, 300, 300], "activation": "swish"},
        "methods": [
            {"method": "meco", "gamma": 0.1, "beta": 0.9, "lr": 0.01, "batch_data": 64, "batch_noise": 64},
            {"method": "nce", "optimizer": "sgd", "lr": 0.1, "batch_data": 64, "noise_ratio": 1},
            {"method": "nce", "optimizer": "ngd", "lr": 0.01, "batch_data": 64, "noise_ratio": 1},
            {"method": "ence", "optimizer": "ngd", "lr": 0.01, "batch_data": 64, "noise_ratio": 1},
            {"method": "cd", "optimizer": "sgd", "lr": 0.1, "batch_data": 64, "langevin_steps": 20,
             "langevin_step_size": 0.01},
        ],
        # equal CPU time per method; the step cap is rarely the binding limit
        "budget": {"max_steps": 200_000, "wall_secs": 90.0, "clock": "cpu"},
        "eval": {"n_eval": 10_000, "langevin_steps": 100, "langevin_step_size": 0.01, "grid": 200,
                 "bandwidth_points": 1000, "clamp": 6.0},
        "seeds": [0, 1, 2, 3, 4],
        "log_every": 50,
    },
}


def normalize_method(spec: dict) -> dict:
    """Fill ``name`` and ``optimizer`` and accept ``nce_sgd``-style shorthands."""
    spec = dict(spec)
    method = spec.get("method")
    if method is None:
        raise ConfigError("method spec lacks a 'method' key")
    if "_" in method and method not in ("score_matching", "mle_closed_form"):
        base, opt = method.rsplit("_", 1)
        if opt in ("sgd", "ngd", "adam"):
            spec["method"], spec["optimizer"] = base, opt
            method = base
    if method not in ("meco", "nce", "ence", "cd", "mcmc", "score_matching", "mle_closed_form"):
        raise ConfigError(f"unknown method {method!r}")
    spec.setdefault("optimizer", "sgd")
    if spec["optimizer"] not in ("sgd", "ngd", "adam"):
        raise ConfigError(f"unknown optimizer {spec['optimizer']!r}")
    if "name" not in spec:
        if method in ("meco", "mle_closed_form"):
            spec["name"] = method if spec["optimizer"] == "sgd" else f"{method}_{spec['optimizer']}"
        else:
            spec["name"] = f"{method}_{spec['optimizer']}"
    return spec


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    settings: dict
    output_dir: Path = field(default_factory=lambda: Path("runs"))

    @property
    def seeds(self) -> list[int]:
        return list(self.settings["seeds"])

    @property
    def methods(self) -> list[dict]:
        return [normalize_method(m) for m in self.settings.get("methods", [])]

    @property
    def budget(self) -> dict:
        return self.settings.get("budget", {})

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, **self.settings}

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(doc: dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def make_config(experiment: str, overrides: dict | None = None, output_dir=None) -> ExperimentConfig:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    overrides = dict(overrides or {})
    overrides.pop("experiment", None)
    out = overrides.pop("output_dir", None)
    settings = _merge(DEFAULTS[experiment], overrides)
    if "methods" in overrides:
        settings["methods"] = copy.deepcopy(overrides["methods"])
    cfg = ExperimentConfig(experiment, settings, Path(output_dir or out or Path("runs") / experiment))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    s = cfg.settings
    if not s.get("seeds"):
        raise ConfigError("seeds must be a non-empty list")
    if any(int(x) < 0 for x in s["seeds"]):
        raise ConfigError("seeds must be non-negative integers")
    budget = s.get("budget")
    if budget is not None:
        if budget.get("max_steps") is None or int(budget["max_steps"]) < 0:
            raise ConfigError("budget.max_steps must be a non-negative integer")
        wall = budget.get("wall_secs")
        if wall is not None and not float(wall) > 0:
            raise ConfigError("budget.wall_secs must be positive when given")
        if budget.get("clock", "wall") not in ("wall", "cpu"):
            raise ConfigError("budget.clock must be 'wall' or 'cpu'")
    names = [m["name"] for m in cfg.methods]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate method names in config: {names}")
    if cfg.experiment == "gaussian1d":
        for m in cfg.methods:
            if m["method"] not in ("meco", "nce", "ence", "mcmc", "mle_closed_form"):
                raise ConfigError(f"method {m['name']!r} is not available for gaussian1d")
    if cfg.experiment == "density2d":
        from ..data import DATASETS_2D

        if s["dataset"]["name"] not in DATASETS_2D:
            raise ConfigError(f"density2d needs a 2D dataset, got {s['dataset']['name']!r}")
        for m in cfg.methods:
            if m["method"] == "mle_closed_form":
                raise ConfigError("mle_closed_form is only defined for gaussian1d")
    if cfg.experiment == "landscape":
        g = s["theta_grid"]
        if int(g["points"]) < 1 or float(g["hi"]) < float(g["lo"]):
            raise ConfigError("theta_grid needs points >= 1 and hi >= lo")


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    doc = json.loads(Path(path).read_text())
    exp = doc.get("experiment", experiment)
    if exp is None:
        raise ConfigError(f"{path}: no 'experiment' key")
    if experiment is not None and exp != experiment:
        raise ConfigError(f"{path} describes a {exp!r} experiment, not {experiment!r}")
    return make_config(exp, doc)
