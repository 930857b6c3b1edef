"""Python bindings for the phenoswin C++ library.

Configs may be passed as dicts, JSON text or a path to a JSON file.
"""

import json
import os

import numpy as np

from . import _phenoswin

__all__ = [
    "backbone_features",
    "compute_fractions",
    "config_hash",
    "default_config",
    "flops",
    "generate_dataset",
    "load_config",
    "metrics",
    "predict",
    "run_cli",
    "stage_shapes",
    "temporal_patch_size",
]

temporal_patch_size = _phenoswin.temporal_patch_size
run_cli = _phenoswin.run_cli


def _config_text(config):
    if config is None:
        return _phenoswin.default_config()
    if isinstance(config, dict):
        return json.dumps(config)
    if isinstance(config, (str, os.PathLike)) and os.path.exists(config):
        with open(config) as f:
            return f.read()
    return str(config)


def default_config():
    return json.loads(_phenoswin.default_config())


def load_config(config):
    """Validated config with every default filled in."""
    return json.loads(_phenoswin.normalize_config(_config_text(config)))


def config_hash(config):
    return _phenoswin.config_hash(_config_text(config))


def stage_shapes(frames, height, width=None, config=None, source=""):
    """(T, H, W, C) for the four stages."""
    width = height if width is None else width
    return [tuple(s) for s in _phenoswin.stage_shapes(_config_text(config), frames, height, width, source)]


def flops(frames, size, config=None, source="", include_decoder=True):
    return json.loads(_phenoswin.flops(_config_text(config), frames, size, source, include_decoder))


def backbone_features(x, config=None, source="", seed=0):
    return _phenoswin.backbone_features(_config_text(config), np.asarray(x, dtype=np.float64), source, seed)


def compute_fractions(labels, mapping):
    return _phenoswin.compute_fractions(np.asarray(labels, dtype=np.int32), {int(k): int(v) for k, v in mapping.items()})


def metrics(pred, gt, num_classes, ignore=None):
    return json.loads(_phenoswin.metrics(np.asarray(pred, dtype=np.int32), np.asarray(gt, dtype=np.int32), num_classes, ignore))


def predict(checkpoint, inputs, config=None):
    """Returns (class map, probabilities) for {source: [C, T, H, W]} inputs.

    Without a config the snapshot next to the checkpoint directory is used.
    """
    if config is None:
        config = os.path.join(os.path.dirname(os.path.abspath(checkpoint)), "config.json")
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    return _phenoswin.predict(_config_text(config), str(checkpoint), arrays)


def generate_dataset(root, config=None, workers=1):
    return _phenoswin.generate_dataset(_config_text(config), str(root), workers)
