"""Multilayer ELM: greedily stacked ELM-AE feature layers under an ELM ridge head."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .autoencoder import AeLayer, ae_transform, fit_ae_layer, layer_to_bytes, read_layer
from .core import (
    DEFAULT_LAMBDA,
    MODEL_MAGIC,
    ElmModel,
    TimingReport,
    _Reader,
    as_batches,
    check_seed,
    model_from_bytes,
    model_to_bytes,
    _read_model,
    predict,
    train_elm,
)
from .errors import FormatError, ShapeError

ML_MAGIC = b"ELMM"
ML_VERSION = 1
_ML_HEADER = struct.Struct("<4sII")


def derive_seed(seed: int, *path: int) -> int:
    """Independent child seed for a numbered component of a run."""
    ss = np.random.SeedSequence([check_seed(seed), *path])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(eq=False)
class MlElmModel:
    ae_layers: list
    head: ElmModel
    timing: Optional[TimingReport] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.ae_layers:
            raise ShapeError("an ML-ELM needs at least one AE layer")
        for prev, nxt in zip(self.ae_layers, self.ae_layers[1:]):
            if prev.hidden_dim != nxt.input_dim:
                raise ShapeError(f"AE layer chain broken: {prev.hidden_dim} -> {nxt.input_dim}")
        if self.head.input_dim != self.ae_layers[-1].hidden_dim:
            raise ShapeError(
                f"head expects {self.head.input_dim} inputs, last AE layer gives "
                f"{self.ae_layers[-1].hidden_dim}"
            )

    @property
    def input_dim(self) -> int:
        return self.ae_layers[0].input_dim

    @property
    def layer_dims(self) -> list:
        return [layer.hidden_dim for layer in self.ae_layers]

    def transform(self, X):
        for layer in self.ae_layers:
            X = ae_transform(X, layer)
        return X

    def predict(self, X) -> np.ndarray:
        return predict_ml(self, X)


def predict_ml(model: MlElmModel, X) -> np.ndarray:
    return predict(model.head, model.transform(X))


class TransformedBatches:
    """Batches pushed through a fixed stack of AE layers on every pass."""

    def __init__(self, batches, layers: Sequence[AeLayer]):
        self.batches = batches
        self.layers = list(layers)

    @property
    def dim(self) -> int:
        return self.layers[-1].hidden_dim if self.layers else self.batches.dim

    def __iter__(self):
        for X, Y in self.batches:
            for layer in self.layers:
                X = ae_transform(X, layer)
            yield X, Y


def train_ml_elm(data, layer_dims: Sequence[int], lam_ae: float = DEFAULT_LAMBDA,
                 lam_head: float = DEFAULT_LAMBDA, activation="relu", seed: int = 0,
                 batch_size: int = 10000, hidden: int = 1000,
                 identity_transform: bool = False) -> MlElmModel:
    """Fit AE layers one at a time, each on the previous layers' output, then
    an ELM head with ``hidden`` random units on the last representation.

    A model with k AE layers reads the data k + 1 times.
    """
    if not layer_dims:
        raise ShapeError("layer_dims must be non-empty")
    batches = as_batches(data, batch_size)
    timing = TimingReport()
    layers: list[AeLayer] = []
    for k, L in enumerate(layer_dims):
        stream = TransformedBatches(batches, layers)
        layers.append(
            fit_ae_layer(stream, int(L), lam_ae, activation, derive_seed(seed, k + 1),
                         identity_transform, D=stream.dim, timing=timing)
        )
    head = train_elm(TransformedBatches(batches, layers), layers[-1].hidden_dim, hidden,
                     lam_head, activation, seed)
    return MlElmModel(layers, head, timing.combine(head.timing))


def ml_model_to_bytes(model: MlElmModel) -> bytes:
    parts = [_ML_HEADER.pack(ML_MAGIC, ML_VERSION, len(model.ae_layers))]
    parts += [layer_to_bytes(layer) for layer in model.ae_layers]
    parts.append(model_to_bytes(model.head))
    return b"".join(parts)


def ml_model_from_bytes(buf: bytes) -> MlElmModel:
    r = _Reader(buf, "ML-ELM model")
    magic, version, n_layers = r.unpack(_ML_HEADER)
    if magic != ML_MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}, expected {ML_MAGIC!r}")
    if version != ML_VERSION:
        raise FormatError(f"unsupported ML-ELM version {version}")
    layers = [read_layer(r) for _ in range(n_layers)]
    head = _read_model(r)
    r.done()
    return MlElmModel(layers, head)


AnyModel = Union[ElmModel, MlElmModel]


def any_model_to_bytes(model: AnyModel) -> bytes:
    if isinstance(model, MlElmModel):
        return ml_model_to_bytes(model)
    return model_to_bytes(model)


def any_model_from_bytes(buf: bytes) -> AnyModel:
    magic = bytes(buf[:4])
    if magic == MODEL_MAGIC:
        return model_from_bytes(buf)
    if magic == ML_MAGIC:
        return ml_model_from_bytes(buf)
    raise FormatError(f"not a model file (magic {magic!r})")


def save_any_model(model: AnyModel, path) -> None:
    Path(path).write_bytes(any_model_to_bytes(model))


def load_any_model(path) -> AnyModel:
    return any_model_from_bytes(Path(path).read_bytes())
