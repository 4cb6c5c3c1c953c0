"""Python bindings for the einv C++ core.

Images are float32 arrays shaped [N, 1, 28, 28] in [-1, 1]; labels are int64.
JSON-shaped results come back as dicts.
"""

import json as _json
import os as _os

try:
    from . import _einv
except ImportError:  # build tree: the extension sits in <build>/python/einv
    _build = _os.environ.get("EINV_BUILD_DIR")
    if not _build:
        raise
    __path__.append(_os.path.join(_build, "python", "einv"))
    from . import _einv

from ._einv import (  # noqa: F401
    AttackDiverged,
    CorruptionError,
    Error,
    Generator,
    Model,
    StageFailure,
    ValidationError,
    class_loss,
    covariance_matrix,
    derive_seed,
    filter_top,
    fms_select,
    load_dataset,
    load_generator,
    load_model,
    max_response_loss,
    one_hot_loss,
    preset_names,
    random_model,
    random_select,
    render_figures,
    score_samples,
    select_models,
    sha256,
    supported_archs,
    train_classifier,
)

__version__ = "0.1.0"


def _dumps(value):
    return value if isinstance(value, str) else _json.dumps(value)


def preset(name):
    return _json.loads(_einv.preset(name))


def match_classes(score, threshold=0.0):
    return _json.loads(_einv.match_classes(score, threshold))


def run_attack(models, config=None, aux_images=None):
    """Train a conditional generator against models sharing one label order."""
    return _einv.run_attack(models, _dumps(config or {}), aux_images)


def evaluate(images, labels, eva, generic, train_images, train_labels, shared_class_count=10):
    return _json.loads(_einv.evaluate(images, labels, eva, generic, train_images, train_labels, shared_class_count))


def run_experiment(spec, out, data_dir=None, jobs=1, deterministic=True):
    """Run a spec (dict, preset name or path to a JSON file); returns the manifest."""
    if isinstance(spec, str):
        if spec in preset_names():
            spec = preset(spec)
        else:
            with open(spec) as f:
                spec = _json.load(f)
    return _json.loads(_einv.run_experiment(_dumps(spec), out, data_dir, jobs, deterministic))


def generator_config(generator):
    return _json.loads(generator.config)
