"""Experiment orchestration: seeding, statistics, configuration, I/O and CLI.

The numerical modules import the seeding and statistics helpers from here,
so the experiment runners (which import those modules) load lazily.
"""
from __future__ import annotations

from typing import Any

from .rng import StreamFactory, as_factory
from .stats import MomentEstimate, SlopeFit, batch_means_ci, slope_fit

_LAZY = {
    "ExperimentConfig": "config",
    "default_config": "config",
    "load_config": "config",
    "make_config": "config",
    "ResultBundle": "experiments",
    "run_config": "experiments",
}


def __getattr__(name: str) -> Any:
    if name in _LAZY:
        import importlib

        return getattr(importlib.import_module(f".{_LAZY[name]}", __name__), name)
    raise AttributeError(name)


__all__ = [
    "ExperimentConfig",
    "MomentEstimate",
    "ResultBundle",
    "SlopeFit",
    "StreamFactory",
    "as_factory",
    "batch_means_ci",
    "default_config",
    "load_config",
    "make_config",
    "run_config",
    "slope_fit",
]
