"""Run configuration: defaults, config-file merge, flag overrides, manifest.

Every subcommand resolves one nested config dict before doing any work and
echoes it (plus the command line) into `manifest.json` in its output
directory. Re-running a command with `--config manifest.json` reproduces the
run bit for bit: all randomness is seeded from the config.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import yaml

DEFAULTS = {
    "seed": 0,
    "grid": {"side_cells": 64, "cell_size": 0.5},
    "filter": {
        "dt": 0.1,
        "process_noise_pos": 0.03,
        "process_noise_vel": 0.15,
        "particles_per_occupied_cell": 100,
        "newborn_ratio_gamma": 0.05,
        "newborn_speed_max": 16.7,
        "occupancy_threshold": 0.05,
        "min_occupancy": 0.02,
    },
    "sensor": {"beams": 360, "hit": [0.85, 0.15], "free": [0.15, 0.85]},
    "encoder": {"combo": 2, "range_t": 20, "crop": 600,
                "occupied_threshold": 0.6},
    "train": {
        "arch": "TOY-32s",
        "heads": False,
        "lr_policy": "step",
        "base_lr": 3.6e-5,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "iterations": 2000,
        "c_static": 1.0,
        "c_dynamic": 40.0,
        "orientation_loss_weight": 1.0,
        "eval_interval": 50,
    },
    "cluster": {"eps": 1.5, "min_pts": 3, "occupied_threshold": 0.6,
                "baseline_threshold": 1.0},
    "labeling": {"fractions": [0.8, 0.1, 0.1], "min_gap": 20,
                 "suppress_mode": "combined-p", "suppress_threshold": 0.0,
                 "min_cluster_cells": 1, "take_every": 5,
                 "prob_threshold": 0.5},
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file (YAML or a manifest), then overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        raw = Path(path).read_text()
        data = yaml.safe_load(raw) or {}
        if "config" in data and "command" in data:
            data = data["config"]  # replaying a manifest
        cfg = _deep_merge(cfg, data)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def write_manifest(out_dir, command: str, config: dict, argv: list) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "argv": list(argv), "config": config}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def filter_params_from(cfg: dict):
    from .filter import FilterParams

    f = cfg["filter"]
    return FilterParams(
        dt=f["dt"],
        process_noise_pos=f["process_noise_pos"],
        process_noise_vel=f["process_noise_vel"],
        particles_per_occupied_cell=f["particles_per_occupied_cell"],
        newborn_ratio_gamma=f["newborn_ratio_gamma"],
        rng_seed=cfg["seed"],
        newborn_speed_max=f["newborn_speed_max"],
        occupancy_threshold=f["occupancy_threshold"],
        min_occupancy=f["min_occupancy"],
    )


def encoder_config_from(cfg: dict):
    from .encode import EncoderConfig

    e = cfg["encoder"]
    return EncoderConfig(combo=e["combo"], range_t=e["range_t"], crop=e["crop"],
                         include_freespace=(e["combo"] != 3),
                         occupied_threshold=e["occupied_threshold"])


def train_config_from(cfg: dict):
    from .net import TrainConfig

    t = cfg["train"]
    return TrainConfig(
        lr_policy=t["lr_policy"],
        base_lr=t["base_lr"],
        momentum=t["momentum"],
        weight_decay=t["weight_decay"],
        iterations=t["iterations"],
        class_weights=(t["c_static"], t["c_dynamic"]),
        orientation_loss_weight=t["orientation_loss_weight"],
        rng_seed=cfg["seed"],
        eval_interval=t["eval_interval"],
    )
