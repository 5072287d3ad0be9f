"""ELM autoencoder layers with orthogonal random weights and Procrustes output weights."""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .core import (
    MASK64,
    ActivationKind,
    NormalEqAccumulator,
    RandomLayer,
    TimingReport,
    _Reader,
    _pack_f64,
    activate,
    check_seed,
    hidden,
    ridge_solve,
)
from .errors import NumericError, ShapeError

FLAG_IDENTITY_TRANSFORM = 1
_LAYER_HEADER = struct.Struct("<IIQQQd")
_MAX_REDRAWS = 16


@dataclass(eq=False)
class AeLayer:
    """One trained ELM-AE: random ``(D, L)`` weights, unit bias and the
    semi-orthogonal ``(L, D)`` output weights whose transpose maps inputs to
    features."""

    weights: np.ndarray
    bias: np.ndarray
    w_orth: np.ndarray
    lam: float
    activation: ActivationKind
    seed: int
    identity_transform: bool = False

    def __post_init__(self):
        D, L = self.weights.shape
        if self.bias.shape != (L,) or self.w_orth.shape != (L, D):
            raise ShapeError(
                f"AE layer shapes inconsistent: weights {self.weights.shape}, "
                f"bias {self.bias.shape}, w_orth {self.w_orth.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.weights.shape[1]

    def transform(self, X) -> np.ndarray:
        return ae_transform(X, self)


def _check_activation(activation) -> ActivationKind:
    kind = ActivationKind.parse(activation)
    if kind.is_rbf:
        raise ValueError("ELM-AE layers take additive activations only")
    return kind


def init_orthogonal(D: int, L: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random ``(D, L)`` weights with orthonormal columns (``L <= D``) or rows
    (``L > D``), plus a unit-norm bias of length ``L``.

    A uniform [-1, 1] draw is orthonormalized by QR with the sign of R's
    diagonal folded into Q, which makes the result unique for the draw.
    """
    if D < 1 or L < 1:
        raise ShapeError(f"layer dimensions must be positive, got D={D}, L={L}")
    rng = np.random.default_rng(check_seed(seed))
    tall = L <= D
    for _ in range(_MAX_REDRAWS):
        M = rng.uniform(-1.0, 1.0, size=(D, L))
        Q, R = scipy.linalg.qr(M if tall else M.T, mode="economic")
        diag = np.diag(R)
        if np.min(np.abs(diag)) > 1e-10 * max(1.0, np.max(np.abs(diag))):
            break
    else:
        raise NumericError("could not draw a full-rank random matrix")
    Q = Q * np.sign(diag)
    weights = Q if tall else Q.T
    while True:
        b = rng.uniform(-1.0, 1.0, size=L)
        norm = np.linalg.norm(b)
        if norm > 1e-12:
            return weights, b / norm


def ae_ridge_targets(acc: NormalEqAccumulator, lam: float) -> np.ndarray:
    """``(H^T H + lam I)^-1 H^T X`` from an accumulator whose targets were the inputs."""
    return ridge_solve(acc, lam)


def procrustes_orthogonalize(w_ridge: np.ndarray) -> np.ndarray:
    """Nearest semi-orthogonal matrix to ``w_ridge`` in Frobenius norm.

    With ``w_ridge = U S V^T`` this is ``U V^T``, which also maximizes
    ``trace(w_ridge^T Q)`` over semi-orthogonal ``Q``.
    """
    w_ridge = np.asarray(w_ridge, dtype=np.float64)
    if not np.all(np.isfinite(w_ridge)):
        raise NumericError("cannot orthogonalize a matrix with non-finite entries")
    U, _, Vt = scipy.linalg.svd(w_ridge, full_matrices=False, lapack_driver="gesvd")
    return U @ Vt


def ae_transform(X, layer: AeLayer) -> np.ndarray:
    """Features ``g(X w_orth^T)``; the AE bias is not used here."""
    if X.ndim != 2 or X.shape[1] != layer.input_dim:
        raise ShapeError(f"input has shape {X.shape}, expected (n, {layer.input_dim})")
    Z = np.asarray(X @ layer.w_orth.T, dtype=np.float64)
    if layer.identity_transform:
        return Z
    return activate(layer.activation, Z)


def fit_ae_layer(batches, L: int, lam: float, activation="relu", seed: int = 0,
                 identity_transform: bool = False, D: Optional[int] = None,
                 timing: Optional[TimingReport] = None) -> AeLayer:
    """Train one ELM-AE in a single streaming pass over ``(X, _)`` batches."""
    kind = _check_activation(activation)
    if D is None:
        D = batches.dim
    weights, bias = init_orthogonal(D, L, seed)
    layer = RandomLayer(weights, bias, kind, seed)
    acc = NormalEqAccumulator(L, D)
    for X, _ in batches:
        t0 = time.perf_counter()
        acc.update(hidden(X, layer), X)
        if timing is not None:
            timing.batch_seconds.append(time.perf_counter() - t0)
            timing.n_instances += X.shape[0]
    if acc.count == 0:
        raise ShapeError("training data is empty")
    t0 = time.perf_counter()
    w_orth = procrustes_orthogonalize(ae_ridge_targets(acc, lam))
    if timing is not None:
        timing.solve_seconds += time.perf_counter() - t0
    return AeLayer(weights, bias, w_orth, float(lam), kind, int(seed), identity_transform)


def layer_to_bytes(layer: AeLayer) -> bytes:
    flags = FLAG_IDENTITY_TRANSFORM if layer.identity_transform else 0
    header = _LAYER_HEADER.pack(
        layer.activation.code, flags, layer.input_dim, layer.hidden_dim,
        layer.seed & MASK64, float(layer.lam),
    )
    return header + _pack_f64(layer.weights) + _pack_f64(layer.bias) + _pack_f64(layer.w_orth)


def read_layer(r: _Reader) -> AeLayer:
    act, flags, D, L, seed, lam = r.unpack(_LAYER_HEADER)
    weights = r.f64(D, L)
    bias = r.f64(L)
    w_orth = r.f64(L, D)
    return AeLayer(weights, bias, w_orth, lam, ActivationKind.from_code(act), seed,
                   bool(flags & FLAG_IDENTITY_TRANSFORM))
