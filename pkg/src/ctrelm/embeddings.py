"""Per-field embedding tables that turn raw records into dense ELM inputs.

Tables come either from ``pretrain_embeddings`` (a one-pass logistic model
over field embeddings, trained by streaming SGD) or from an external
trainer via the ``ELME`` file format. ELM training never updates them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from . import kernels
from .core import MASK64, _Reader, check_seed
from .data import KEY_SEP, FeatureSchema, RawRecord
from .errors import DivergenceError, FormatError, ShapeError

TABLE_MAGIC = b"ELME"
TABLE_VERSION = 1
DEFAULT_DIM = 8
DEFAULT_BUCKETS = 1 << 16
INIT_SCALE = 0.05
_CHUNK = 10000

_HEAD = struct.Struct("<4sII")
_FIELD = struct.Struct("<QI")
_SEED = struct.Struct("<Q")


@dataclass(frozen=True)
class DenseInstance:
    vector: np.ndarray
    label: int


class EmbeddingTable:
    """One ``(bucket_count, d)`` float32 matrix per field, in schema order.

    A field value is looked up by hashing ``(field position, value)`` with
    the table's seed into that field's buckets, so rare and unseen values
    share rows.
    """

    def __init__(self, matrices: Sequence[np.ndarray], seed: int):
        mats = [np.ascontiguousarray(m, dtype=np.float32) for m in matrices]
        if not mats:
            raise ShapeError("embedding table needs at least one field")
        dims = {m.shape[1] for m in mats if m.ndim == 2}
        if any(m.ndim != 2 or m.shape[0] < 1 for m in mats) or len(dims) != 1:
            raise ShapeError("every field needs a non-empty (buckets, d) matrix with a shared d")
        self.matrices = mats
        self.seed = check_seed(seed)
        self._prefix = [str(f).encode("ascii") + KEY_SEP for f in range(len(mats))]

    @property
    def n_fields(self) -> int:
        return len(self.matrices)

    @property
    def d(self) -> int:
        return self.matrices[0].shape[1]

    @property
    def bucket_counts(self) -> list:
        return [m.shape[0] for m in self.matrices]

    @property
    def dim(self) -> int:
        return self.n_fields * self.d

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return self.seed == other.seed and len(self.matrices) == len(other.matrices) and all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.matrices, other.matrices)
        )

    def buckets(self, records: Sequence[RawRecord]) -> np.ndarray:
        """Per-field bucket ids, shape ``(n, n_fields)``; -1 marks a missing value."""
        n, F = len(records), self.n_fields
        out = np.full((n, F), -1, dtype=np.int64)
        keys, pos = [], []
        for i, rec in enumerate(records):
            if len(rec.values) != F:
                raise ShapeError(f"record has {len(rec.values)} values, table has {F} fields")
            for f, cell in enumerate(rec.values):
                if cell is not None:
                    keys.append(self._prefix[f] + cell.encode("utf-8"))
                    pos.append(i * F + f)
        if keys:
            h = kernels.hash_keys(keys, self.seed)
            pos = np.asarray(pos, dtype=np.int64)
            counts = np.asarray(self.bucket_counts, dtype=np.uint64)[pos % F]
            out.ravel()[pos] = (h % counts).astype(np.int64)
        return out

    def lookup(self, buckets: np.ndarray) -> np.ndarray:
        n, F = buckets.shape
        d = self.d
        X = np.zeros((n, F * d), dtype=np.float64)
        for f, mat in enumerate(self.matrices):
            b = buckets[:, f]
            present = b >= 0
            X[present, f * d:(f + 1) * d] = mat[b[present]]
        return X

    def encode_batch(self, records: Sequence[RawRecord]) -> tuple[np.ndarray, np.ndarray]:
        X = self.lookup(self.buckets(records))
        y = np.fromiter((r.label for r in records), dtype=np.float64, count=len(records))
        return X, y

    def transform(self, record: RawRecord) -> DenseInstance:
        X, _ = self.encode_batch([record])
        return DenseInstance(X[0], record.label)


def embed_transform(record: RawRecord, table: EmbeddingTable) -> DenseInstance:
    return table.transform(record)


def _bucket_list(bucket_counts, n_fields: int) -> list:
    if isinstance(bucket_counts, (int, np.integer)):
        counts = [int(bucket_counts)] * n_fields
    else:
        counts = [int(b) for b in bucket_counts]
    if len(counts) != n_fields or any(b < 1 for b in counts):
        raise ShapeError(f"need {n_fields} positive bucket counts, got {counts}")
    return counts


def _init_arrays(n_fields: int, d: int, counts: list, seed: int):
    rng = np.random.default_rng(check_seed(seed))
    mats = [rng.uniform(-INIT_SCALE, INIT_SCALE, size=(b, d)) for b in counts]
    proj = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_fields, d))
    return mats, proj


def init_table(schema: FeatureSchema, d: int = DEFAULT_DIM,
               bucket_counts: Union[int, Sequence[int]] = DEFAULT_BUCKETS, seed: int = 0) -> EmbeddingTable:
    """The untrained table that ``pretrain_embeddings`` starts from."""
    counts = _bucket_list(bucket_counts, schema.n_fields)
    mats, _ = _init_arrays(schema.n_fields, d, counts, seed)
    return EmbeddingTable(mats, seed)


class SurrogateModel:
    """Logistic model ``sigmoid(w0 + sum_f u_f . e_f(x))`` over field embeddings.

    It stands in for a full factorization-machine network: enough to make the
    embeddings label-aware in one streaming pass.
    """

    def __init__(self, schema: FeatureSchema, d: int = DEFAULT_DIM,
                 bucket_counts: Union[int, Sequence[int]] = DEFAULT_BUCKETS, seed: int = 0):
        self.schema = schema
        self.d = int(d)
        self.seed = check_seed(seed)
        counts = _bucket_list(bucket_counts, schema.n_fields)
        mats, self.proj = _init_arrays(schema.n_fields, self.d, counts, seed)
        self.offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        self.emb = np.vstack(mats)
        self.bias = np.zeros(1)
        self.losses: list = []
        self._lookup = EmbeddingTable([np.zeros((b, 1), np.float32) for b in counts], seed)
        self.steps = 0

    def _rows(self, records: Sequence[RawRecord]) -> np.ndarray:
        b = self._lookup.buckets(records)
        return np.where(b >= 0, b + self.offsets[None, :], -1)

    def partial_fit(self, records: Sequence[RawRecord], learning_rate: float) -> np.ndarray:
        rows = self._rows(records)
        labels = np.fromiter((r.label for r in records), dtype=np.float64, count=len(records))
        losses, bad = kernels.sgd_epoch(rows, labels, self.emb, self.proj, self.bias, float(learning_rate))
        if bad >= 0:
            raise DivergenceError(self.steps + int(bad))
        self.steps += len(records)
        self.losses.extend(losses.tolist())
        return losses

    def fit(self, records: Iterable[RawRecord], epochs: int = 1, learning_rate: float = 0.05) -> "SurrogateModel":
        if epochs < 1:
            raise ValueError("epochs must be >= 1")
        seen = 0
        for _ in range(epochs):
            buf = []
            for rec in records:
                buf.append(rec)
                if len(buf) == _CHUNK:
                    self.partial_fit(buf, learning_rate)
                    seen += len(buf)
                    buf = []
            if buf:
                self.partial_fit(buf, learning_rate)
                seen += len(buf)
        if seen == 0:
            raise ShapeError("pretraining data is empty")
        return self

    def decision_function(self, records: Sequence[RawRecord]) -> np.ndarray:
        rows = self._rows(records)
        z = np.full(len(records), self.bias[0])
        for f in range(rows.shape[1]):
            r = rows[:, f]
            present = r >= 0
            z[present] += self.emb[r[present]] @ self.proj[f]
        return z

    def predict_proba(self, records: Sequence[RawRecord]) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.decision_function(records)))

    def table(self) -> EmbeddingTable:
        bounds = list(self.offsets) + [self.emb.shape[0]]
        return EmbeddingTable([self.emb[a:b] for a, b in zip(bounds, bounds[1:])], self.seed)


def pretrain_embeddings(dataset: Iterable[RawRecord], schema: FeatureSchema, d: int = DEFAULT_DIM,
                        bucket_counts: Union[int, Sequence[int]] = DEFAULT_BUCKETS, epochs: int = 1,
                        learning_rate: float = 0.05, seed: int = 0) -> EmbeddingTable:
    model = SurrogateModel(schema, d, bucket_counts, seed)
    model.fit(dataset, epochs, learning_rate)
    return model.table()


def table_to_bytes(table: EmbeddingTable) -> bytes:
    parts = [_HEAD.pack(TABLE_MAGIC, TABLE_VERSION, table.n_fields)]
    for mat in table.matrices:
        parts.append(_FIELD.pack(mat.shape[0], mat.shape[1]))
        parts.append(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    parts.append(_SEED.pack(table.seed & MASK64))
    return b"".join(parts)


def table_from_bytes(buf: bytes) -> EmbeddingTable:
    r = _Reader(buf, "embedding table")
    magic, version, n_fields = r.unpack(_HEAD)
    if magic != TABLE_MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}, expected {TABLE_MAGIC!r}")
    if version != TABLE_VERSION:
        raise FormatError(f"unsupported table version {version}")
    mats = []
    for _ in range(n_fields):
        rows, d = r.unpack(_FIELD)
        mats.append(r.f32(rows, d))
    (seed,) = r.unpack(_SEED)
    r.done()
    try:
        return EmbeddingTable(mats, seed)
    except ShapeError as exc:
        raise FormatError(f"invalid embedding table: {exc}") from None


def save_table(table: EmbeddingTable, path) -> None:
    Path(path).write_bytes(table_to_bytes(table))


def load_table(path) -> EmbeddingTable:
    return table_from_bytes(Path(path).read_bytes())
