# SPDX-License-Identifier: Apache-2.0
"""Coherent-reward PPO on a synthetic token world."""

import json
from os import PathLike
from pathlib import Path

from . import _srppo
from ._srppo import (
    ConfigError,
    InputError,
    OracleUnavailable,
    TrainingError,
    compute_gae,
)

__all__ = [
    "ConfigError",
    "InputError",
    "OracleUnavailable",
    "TrainingError",
    "compare",
    "compute_gae",
    "load_config",
    "report",
    "resolve_config",
    "run",
]


def load_config(path, output_dir=None, seed=None, stages=None) -> dict:
    out = None if output_dir is None else str(output_dir)
    return json.loads(_srppo.load_config(Path(path), out, seed, stages))


def resolve_config(config: dict) -> dict:
    return json.loads(_srppo.resolve_config(json.dumps(config)))


def run(config, output_dir=None, seed=None, stages=None) -> Path:
    """Run an experiment from a config dict or a config file path."""
    if isinstance(config, (str, PathLike)):
        config = load_config(config, output_dir, seed, stages)
    else:
        config = dict(config)
        if output_dir is not None:
            config["output_dir"] = str(output_dir)
        if seed is not None:
            config["seed"] = seed
        if stages is not None:
            config["stages"] = list(stages)
    return Path(_srppo.run_experiment(json.dumps(config)))


def report(run_dir) -> dict:
    files, absent = _srppo.generate_report(Path(run_dir))
    return {"files": [Path(f) for f in files], "absent_stages": list(absent)}


def compare(run_dirs) -> str:
    return _srppo.compare_runs([Path(d) for d in run_dirs])
