"""Python view of the cace C++ core.

Arrays are numpy float64 (H, W, K) maps and int label maps (H, W).
Configurations use the same JSON schema as the `cace run` command.
"""

import json

from ._core import (
    CaceError,
    adain,
    cc_adain,
    ce_loss,
    class_moments,
    cli,
    generate_scene,
    miou,
    normalize_config,
)
from ._core import run_sequence as _run_sequence

__all__ = [
    "CaceError",
    "adain",
    "cc_adain",
    "ce_loss",
    "class_moments",
    "cli",
    "generate_scene",
    "miou",
    "normalize_config",
    "run_sequence",
]


def run_sequence(config):
    """Run a full sequence. `config` is a dict or a JSON string."""
    if not isinstance(config, str):
        config = json.dumps(config)
    return _run_sequence(config)
