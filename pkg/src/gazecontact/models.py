"""Save and load every model type through the shared binary container."""

from __future__ import annotations

import hashlib

from .baselines import GazeLockModel, PeecModel
from .classifiers import ForestModel, LinearSvmModel
from .errors import IoError
from .numerics import encode_container, load_model, save_model
from .picnn.model import PicnnModel
from .posecluster import GmmPoseModel

GMM_KIND = 3
FOREST_KIND = 4
SVM_KIND = 5
PEEC_KIND = 7
GAZELOCK_KIND = 8
PICNN_KIND = 9

_KINDS = {
    GMM_KIND: GmmPoseModel,
    FOREST_KIND: ForestModel,
    SVM_KIND: LinearSvmModel,
    PEEC_KIND: PeecModel,
    GAZELOCK_KIND: GazeLockModel,
    PICNN_KIND: PicnnModel,
}
_CODES = {cls: kind for kind, cls in _KINDS.items()}


def model_bytes(model) -> bytes:
    return encode_container(_CODES[type(model)], model.to_arrays())


def model_digest(model) -> str:
    return hashlib.sha256(model_bytes(model)).hexdigest()


def save(path, model) -> None:
    save_model(path, _CODES[type(model)], model.to_arrays())


def load(path):
    kind, arrays = load_model(path)
    if kind not in _KINDS:
        raise IoError(f"{path}: unknown model kind {kind}")
    return _KINDS[kind].from_arrays(arrays)
