"""Progressive tracker training: synthetic data, metrics, checkpoints and the CLI driver."""

import json

from . import _core
from ._core import (
    ContractViolation,
    IntegrityError,
    IoError,
    ParseError,
    UndefinedMetric,
    generate_sequence,
    precision_metrics,
    success_auc,
    track,
)

__all__ = [
    "ContractViolation",
    "IntegrityError",
    "IoError",
    "ParseError",
    "UndefinedMetric",
    "generate_sequence",
    "load_checkpoint",
    "main",
    "parameter_count",
    "parse_config",
    "precision_metrics",
    "success_auc",
    "track",
]


def parse_config(config=None, overrides=()):
    """Resolve a config dict with defaults filled; overrides are "dotted.key=value" strings."""
    return json.loads(_core.parse_config(json.dumps(config or {}), list(overrides)))


def parameter_count(model=None):
    return _core.parameter_count(json.dumps(model or {}))


def load_checkpoint(path):
    info = _core.load_checkpoint(str(path))
    info["model"] = json.loads(info["model"])
    info["metrics"] = json.loads(info["metrics"])
    return info


def main(args):
    return _core.main([str(a) for a in args])
