"""Extreme learning machine: frozen random hidden layer + closed-form ridge head.

Training never materializes the full hidden matrix. Each batch's hidden
activations are folded into the normal equations ``A = H^T H`` and
``c = H^T Y`` and the output weights come from one Cholesky solve of
``(A + lambda I) W = c``.
"""

from __future__ import annotations

import enum
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .data import ArrayBatches
from .errors import FormatError, NumericError, ShapeError, SingularityError

DEFAULT_LAMBDA = 1e-2
MASK64 = (1 << 64) - 1


class ActivationKind(enum.Enum):
    SIGMOID = "sigmoid"
    SINE = "sine"
    GAUSSIAN_RBF = "gaussian_rbf"
    RELU = "relu"
    IDENTITY = "identity"

    @property
    def code(self) -> int:
        return _ACTIVATION_CODES[self]

    @property
    def is_rbf(self) -> bool:
        return self is ActivationKind.GAUSSIAN_RBF

    @classmethod
    def from_code(cls, code: int) -> "ActivationKind":
        for kind, c in _ACTIVATION_CODES.items():
            if c == code:
                return kind
        raise FormatError(f"unknown activation id {code}")

    @classmethod
    def parse(cls, name) -> "ActivationKind":
        if isinstance(name, cls):
            return name
        name = str(name).lower()
        if name == "rbf":
            return cls.GAUSSIAN_RBF
        return cls(name)


_ACTIVATION_CODES = {
    ActivationKind.SIGMOID: 0,
    ActivationKind.SINE: 1,
    ActivationKind.GAUSSIAN_RBF: 2,
    ActivationKind.RELU: 3,
    ActivationKind.IDENTITY: 4,
}


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    """Apply an additive-node activation elementwise (in place where possible)."""
    if kind is ActivationKind.SIGMOID:
        return sigmoid(z)
    if kind is ActivationKind.SINE:
        return np.sin(z, out=z)
    if kind is ActivationKind.RELU:
        return np.maximum(z, 0.0, out=z)
    if kind is ActivationKind.IDENTITY:
        return z
    if kind is ActivationKind.GAUSSIAN_RBF:
        return np.exp(-(z * z))
    raise ValueError(kind)


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed


@dataclass(frozen=True, eq=False)
class RandomLayer:
    """Frozen random input weights ``(D, L)`` and biases ``(L,)``."""

    weights: np.ndarray
    bias: np.ndarray
    activation: ActivationKind
    seed: int

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"weights {self.weights.shape} and bias {self.bias.shape} do not match")

    @property
    def input_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def weight_sq_norms(self) -> np.ndarray:
        cached = self.__dict__.get("_wsq")
        if cached is None:
            cached = np.einsum("ij,ij->j", self.weights, self.weights)
            object.__setattr__(self, "_wsq", cached)
        return cached


def init_random_layer(D: int, L: int, seed: int, activation="relu") -> RandomLayer:
    """Draw ``W~`` uniform on [-1, 1]; biases uniform on [-1, 1] for additive
    nodes and on (0, 1] for RBF nodes."""
    if D < 1 or L < 1:
        raise ShapeError(f"layer dimensions must be positive, got D={D}, L={L}")
    activation = ActivationKind.parse(activation)
    rng = np.random.default_rng(check_seed(seed))
    weights = rng.uniform(-1.0, 1.0, size=(D, L))
    if activation.is_rbf:
        bias = 1.0 - rng.uniform(0.0, 1.0, size=L)
    else:
        bias = rng.uniform(-1.0, 1.0, size=L)
    return RandomLayer(weights, bias, activation, int(seed))


def _check_input(X, D: int):
    if X.ndim != 2 or X.shape[1] != D:
        raise ShapeError(f"input has shape {X.shape}, expected (n, {D})")


def _row_sq_norms(X) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", X, X)


def hidden(X, layer: RandomLayer) -> np.ndarray:
    """Hidden activations ``H`` for a batch ``X`` (dense or scipy sparse).

    Additive nodes give ``g(X W~ + b)``. Gaussian RBF nodes give
    ``exp(-(b_j * ||x_i - w~_j||)^2)`` with squared distances expanded as
    ``||x||^2 - 2 x.w + ||w||^2`` so sparse rows are never densified.
    """
    _check_input(X, layer.input_dim)
    XW = np.asarray(X @ layer.weights, dtype=np.float64)
    if layer.activation.is_rbf:
        sq = _row_sq_norms(X)[:, None] - 2.0 * XW + layer.weight_sq_norms[None, :]
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-(layer.bias ** 2)[None, :] * sq)
    XW += layer.bias
    return activate(layer.activation, XW)


class NormalEqAccumulator:
    """Running ``H^T H`` and ``H^T Y`` sums for a streaming ridge solve."""

    def __init__(self, hidden_dim: int, n_outputs: int = 1):
        self.A = np.zeros((hidden_dim, hidden_dim))
        self.c = np.zeros((hidden_dim, n_outputs))
        self.count = 0

    @property
    def hidden_dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.c.shape[1]

    def update(self, H: np.ndarray, Y) -> "NormalEqAccumulator":
        if not sp.issparse(Y):
            Y = np.asarray(Y, dtype=np.float64)
            if Y.ndim == 1:
                Y = Y[:, None]
        if H.ndim != 2 or H.shape[1] != self.hidden_dim:
            raise ShapeError(f"hidden batch {H.shape} does not match L={self.hidden_dim}")
        if Y.shape != (H.shape[0], self.n_outputs):
            raise ShapeError(f"targets {Y.shape} do not match hidden batch {H.shape}")
        if H.shape[0] == 0:
            return self
        self.A += H.T @ H
        if sp.issparse(Y):
            self.c += np.asarray((Y.T @ H).T)
        else:
            self.c += H.T @ Y
        self.count += H.shape[0]
        return self

    def merge(self, other: "NormalEqAccumulator") -> "NormalEqAccumulator":
        if self.A.shape != other.A.shape or self.c.shape != other.c.shape:
            raise ShapeError("cannot merge accumulators of different shapes")
        out = NormalEqAccumulator(self.hidden_dim, self.n_outputs)
        out.A = self.A + other.A
        out.c = self.c + other.c
        out.count = self.count + other.count
        return out


def accumulate(acc: NormalEqAccumulator, H: np.ndarray, Y) -> NormalEqAccumulator:
    return acc.update(H, Y)


def ridge_solve(acc: NormalEqAccumulator, lam: float) -> np.ndarray:
    """Solve ``(A + lam I) W = c`` by Cholesky factorization."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    M = acc.A + lam * np.eye(acc.hidden_dim)
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(acc.c))):
        raise NumericError("normal equations contain non-finite values")
    try:
        factor = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularityError(
            f"H^T H + {lam:g} I is not positive definite; use a larger lambda (> 0)"
        ) from None
    return scipy.linalg.cho_solve(factor, acc.c, check_finite=False)


@dataclass
class TimingReport:
    """Wall-clock costs of one training run (hidden + accumulate per batch)."""

    batch_seconds: list = field(default_factory=list)
    solve_seconds: float = 0.0
    n_instances: int = 0

    @property
    def n_batches(self) -> int:
        return len(self.batch_seconds)

    @property
    def mean_batch_seconds(self) -> float:
        return float(np.mean(self.batch_seconds)) if self.batch_seconds else 0.0

    @property
    def total_seconds(self) -> float:
        return float(sum(self.batch_seconds)) + self.solve_seconds

    @property
    def instances_per_second(self) -> float:
        total = self.total_seconds
        return self.n_instances / total if total > 0 else 0.0

    def combine(self, other: "TimingReport") -> "TimingReport":
        return TimingReport(
            self.batch_seconds + other.batch_seconds,
            self.solve_seconds + other.solve_seconds,
            self.n_instances + other.n_instances,
        )

    def as_dict(self) -> dict:
        return {
            "batches": self.n_batches,
            "mean_batch_seconds": self.mean_batch_seconds,
            "total_seconds": self.total_seconds,
            "instances_per_second": self.instances_per_second,
        }


def _design(H: np.ndarray, bias_unit: bool) -> np.ndarray:
    if not bias_unit:
        return H
    return np.hstack([H, np.ones((H.shape[0], 1))])


@dataclass(eq=False)
class ElmModel:
    layer: RandomLayer
    weights: np.ndarray
    lam: float
    bias_unit: bool = False
    timing: Optional[TimingReport] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        rows = self.layer.hidden_dim + int(self.bias_unit)
        if self.weights.ndim != 2 or self.weights.shape[0] != rows:
            raise ShapeError(f"output weights {self.weights.shape} do not match {rows} hidden units")

    @property
    def input_dim(self) -> int:
        return self.layer.input_dim

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[1]

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def predict(model: ElmModel, X) -> np.ndarray:
    """Raw real-valued scores ``hidden(X) W``, shape ``(n, n_outputs)``."""
    H = _design(hidden(X, model.layer), model.bias_unit)
    return H @ model.weights


def as_batches(data, batch_size: int):
    """Accept ``(X, y)`` arrays or an already re-iterable batch source."""
    if isinstance(data, tuple) and len(data) == 2:
        return ArrayBatches(data[0], data[1], batch_size)
    return data


def fit_accumulator(batches, layer: RandomLayer, bias_unit: bool = False,
                    timing: Optional[TimingReport] = None) -> NormalEqAccumulator:
    """Stream every batch through ``hidden`` into fresh normal equations."""
    acc = None
    for X, Y in batches:
        t0 = time.perf_counter()
        H = _design(hidden(X, layer), bias_unit)
        if acc is None:
            acc = NormalEqAccumulator(H.shape[1], 1 if np.ndim(Y) == 1 else np.shape(Y)[1])
        acc.update(H, Y)
        if timing is not None:
            timing.batch_seconds.append(time.perf_counter() - t0)
            timing.n_instances += X.shape[0]
    if acc is None or acc.count == 0:
        raise ShapeError("training data is empty")
    return acc


def train_elm(data, D: Optional[int] = None, L: int = 1000, lam: float = DEFAULT_LAMBDA,
              activation="relu", seed: int = 0, batch_size: int = 10000,
              bias_unit: bool = False) -> ElmModel:
    """Random layer init, one streaming pass of hidden + accumulate, ridge solve.

    ``data`` is either an ``(X, y)`` pair or a re-iterable of ``(X, Y)``
    batches (``ArrayBatches``, ``FileBatches``). The returned model carries a
    ``TimingReport``.
    """
    batches = as_batches(data, batch_size)
    if D is None:
        D = batches.dim
    layer = init_random_layer(D, L, seed, activation)
    timing = TimingReport()
    acc = fit_accumulator(batches, layer, bias_unit, timing)
    t0 = time.perf_counter()
    W = ridge_solve(acc, lam)
    timing.solve_seconds = time.perf_counter() - t0
    return ElmModel(layer, W, float(lam), bias_unit, timing)


# -- model file ---------------------------------------------------------------

MODEL_MAGIC = b"ELMK"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIIIQQQQd")
FLAG_BIAS_UNIT = 1


def _pack_f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = memoryview(buf)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def f64(self, *shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)

    def f32(self, *shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"trailing bytes after {self.what}")


def model_to_bytes(model: ElmModel) -> bytes:
    layer = model.layer
    flags = FLAG_BIAS_UNIT if model.bias_unit else 0
    header = _HEADER.pack(
        MODEL_MAGIC, MODEL_VERSION, layer.activation.code, flags,
        layer.input_dim, layer.hidden_dim, model.n_outputs, layer.seed & MASK64, float(model.lam),
    )
    return header + _pack_f64(layer.weights) + _pack_f64(layer.bias) + _pack_f64(model.weights)


def _read_model(r: _Reader) -> ElmModel:
    magic, version, act, flags, D, L, n_out, seed, lam = r.unpack(_HEADER)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    activation = ActivationKind.from_code(act)
    bias_unit = bool(flags & FLAG_BIAS_UNIT)
    weights = r.f64(D, L)
    bias = r.f64(L)
    W = r.f64(L + int(bias_unit), n_out)
    return ElmModel(RandomLayer(weights, bias, activation, seed), W, lam, bias_unit)


def model_from_bytes(buf: bytes) -> ElmModel:
    r = _Reader(buf, "ELM model")
    model = _read_model(r)
    r.done()
    return model


def save_model(model: ElmModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> ElmModel:
    return model_from_bytes(Path(path).read_bytes())
