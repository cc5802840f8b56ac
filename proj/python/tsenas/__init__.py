"""Differentiable architecture search with training-speed estimates."""

import json as _json

import numpy as _np

from . import _tsenas
from ._tsenas import (  # noqa: F401
    ConfigError,
    IoError,
    NumericError,
    ShapeError,
    Supernet,
    emit_plots,
    mixture_weights,
    space_info,
)

__all__ = [
    "ConfigError",
    "IoError",
    "NumericError",
    "ShapeError",
    "Supernet",
    "cell_depth",
    "default_config",
    "discretize",
    "emit_plots",
    "mixture_weights",
    "run_search",
    "skip_count",
    "space_info",
    "synth_dataset",
    "verify",
]


def _space_arg(space):
    return space if isinstance(space, str) else _json.dumps(space)


def discretize(space, alpha, top_k=False):
    """Genotype document for `alpha` (shape edges x ops) on a preset or custom space."""
    return _json.loads(_tsenas.discretize(_space_arg(space), _np.asarray(alpha, dtype=float).ravel(), top_k))


def cell_depth(space, genotype):
    return _tsenas.cell_depth(_space_arg(space), _json.dumps(genotype))


def skip_count(space, genotype):
    return _tsenas.skip_count(_space_arg(space), _json.dumps(genotype))


def synth_dataset(spec="blobs", seed=0):
    """(features of shape (n, H, W, C), labels, classes) for a dataset spec string."""
    x, y, k = _tsenas.synth_dataset(spec, seed)
    return x, _np.asarray(y, dtype=int), k


def default_config():
    return _json.loads(_tsenas.default_config())


def run_search(**overrides):
    """Run one search; keyword arguments override default_config(). Returns (exit_code, log)."""
    cfg = default_config()
    unknown = set(overrides) - set(cfg)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
    cfg.update(overrides)
    return _tsenas.run_search(_json.dumps(cfg))


def verify(suite="all"):
    return _json.loads(_tsenas.run_verify(suite))
