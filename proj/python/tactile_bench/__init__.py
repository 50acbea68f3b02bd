"""Python access to the tactile manipulation workbench.

Configs and summaries are plain dicts here; the extension takes and returns JSON text.
"""

import json
import os

from . import _core
from ._core import (
    PROTOCOL_NAME,
    PROTOCOL_VERSION,
    ExtractEnv as _ExtractEnv,
    GraspEnv as _GraspEnv,
    Hub,
    TactileError,
    axis_angle,
    derive_seed,
    derive_seed_index,
    extract_reward,
    grasp_reward,
    quat_delta,
    quat_multiply,
    read_demo_file,
)

__all__ = [
    "PROTOCOL_NAME",
    "PROTOCOL_VERSION",
    "ExtractEnv",
    "GraspEnv",
    "Hub",
    "TactileError",
    "axis_angle",
    "check_summary",
    "config_hash",
    "data_root",
    "derive_seed",
    "derive_seed_index",
    "extract_reward",
    "grasp_reward",
    "quat_delta",
    "quat_multiply",
    "read_demo_file",
    "run_experiment",
    "verify_run",
]


def _dump(config):
    return "" if config is None else json.dumps(config)


def ExtractEnv(config=None):
    return _ExtractEnv(_dump(config))


def GraspEnv(config=None):
    return _GraspEnv(_dump(config))


def config_hash(config):
    return _core.config_hash(json.dumps(config))


def data_root():
    return _core.data_root()


def run_experiment(config, on_event=None):
    """Runs to completion and returns the summary. on_event gets each progress event as a dict."""
    cb = None if on_event is None else (lambda text: on_event(json.loads(text)))
    return json.loads(_core.run_experiment(json.dumps(config), cb))


def verify_run(directory):
    return json.loads(_core.verify_run(os.fspath(directory)))


def check_summary(summary):
    return [
        {"name": name, "pass": ok, "detail": detail}
        for name, ok, detail in _core.check_summary(json.dumps(summary))
    ]
