"""Parsing, feature hashing, splits and batching for CTR-style delimited files."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import ConfigError, DataError, LabelError, ParseError, ShapeError

CATEGORICAL = "categorical"
INTEGER = "integer"
KINDS = (CATEGORICAL, INTEGER)
KEY_SEP = b"\x1f"

_DELIMITER_NAMES = {"tab": "\t", "\\t": "\t", "comma": ",", "space": " ", "pipe": "|"}


@dataclass(frozen=True)
class FeatureSchema:
    """Column layout of a delimited dataset.

    ``fields`` lists the feature columns in file order; the label occupies
    column ``label_column`` and the features fill the remaining columns.
    """

    fields: tuple[tuple[str, str], ...]
    label_column: int = 0
    delimiter: str = "\t"
    has_header: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple((str(n), str(k)) for n, k in self.fields))
        names = [n for n, _ in self.fields]
        if len(set(names)) != len(names):
            raise ConfigError("schema field names must be unique")
        for name, kind in self.fields:
            if kind not in KINDS:
                raise ConfigError(f"field {name!r}: unknown kind {kind!r}")
        if not 0 <= self.label_column < self.n_columns:
            raise ConfigError(f"label_column {self.label_column} outside 0..{self.n_columns - 1}")
        if len(self.delimiter) != 1:
            raise ConfigError("delimiter must be a single character")

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    @property
    def n_columns(self) -> int:
        return len(self.fields) + 1

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.fields]


def parse_schema(text: str) -> FeatureSchema:
    """Parse the ``key: value`` schema format.

    ``label_column``, ``delimiter`` and ``has_header`` are settings; every
    other line declares one feature field as ``name: kind`` in column order.
    Blank lines and lines starting with ``#`` are ignored.
    """
    settings = {"label_column": "0", "delimiter": "tab", "has_header": "false"}
    fields = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ConfigError(f"schema line {lineno}: expected 'key: value'")
        key, value = (s.strip() for s in line.split(":", 1))
        if key in settings:
            settings[key] = value
        else:
            fields.append((key, value))
    delim = settings["delimiter"]
    delim = _DELIMITER_NAMES.get(delim.lower(), delim)
    try:
        label_column = int(settings["label_column"])
    except ValueError:
        raise ConfigError(f"label_column must be an integer, got {settings['label_column']!r}") from None
    header = settings["has_header"].lower()
    if header not in ("true", "false", "yes", "no", "1", "0"):
        raise ConfigError(f"has_header must be a boolean, got {settings['has_header']!r}")
    if not fields:
        raise ConfigError("schema declares no fields")
    return FeatureSchema(
        fields=tuple(fields),
        label_column=label_column,
        delimiter=delim,
        has_header=header in ("true", "yes", "1"),
    )


def load_schema(path) -> FeatureSchema:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read schema {path}: {exc.strerror}") from None
    return parse_schema(text)


def dump_schema(schema: FeatureSchema) -> str:
    names = {v: k for k, v in _DELIMITER_NAMES.items() if k != "\\t"}
    lines = [
        f"label_column: {schema.label_column}",
        f"delimiter: {names.get(schema.delimiter, schema.delimiter)}",
        f"has_header: {str(schema.has_header).lower()}",
    ]
    lines += [f"{name}: {kind}" for name, kind in schema.fields]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RawRecord:
    values: tuple[Optional[str], ...]
    label: int


@dataclass(frozen=True)
class EncodedInstance:
    indices: tuple[int, ...]
    values: tuple[float, ...]
    label: int


def parse_record(line: str, schema: FeatureSchema, line_number: Optional[int] = None) -> RawRecord:
    cells = line.rstrip("\r\n").split(schema.delimiter)
    if len(cells) != schema.n_columns:
        raise ParseError(f"expected {schema.n_columns} columns, got {len(cells)}", line_number)
    label_cell = cells.pop(schema.label_column).strip()
    if label_cell not in ("0", "1"):
        raise LabelError(f"label must be 0 or 1, got {label_cell!r}", line_number)
    values = []
    for (name, kind), cell in zip(schema.fields, cells):
        if cell == "":
            values.append(None)
            continue
        if kind == INTEGER:
            try:
                z = float(cell)
            except ValueError:
                raise ParseError(f"field {name!r}: not a number: {cell!r}", line_number) from None
            if not math.isfinite(z):
                raise ParseError(f"field {name!r}: non-finite value {cell!r}", line_number)
        values.append(cell)
    return RawRecord(tuple(values), int(label_cell))


def iter_records(path, schema: FeatureSchema) -> Iterator[RawRecord]:
    """Stream records from a delimited file in file order."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and schema.has_header:
                continue
            if line.strip("\r\n") == "":
                continue
            yield parse_record(line, schema, lineno)


def count_records(path, schema: FeatureSchema) -> int:
    n = 0
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for lineno, line in enumerate(fh, start=1):
                if lineno == 1 and schema.has_header:
                    continue
                if line.strip("\r\n"):
                    n += 1
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return n


def field_key(name: str, value: Optional[str] = None) -> bytes:
    """Byte key hashed for a field (integer fields) or a field/value pair."""
    if value is None:
        return name.encode("utf-8")
    return name.encode("utf-8") + KEY_SEP + value.encode("utf-8")


def hash64(key: bytes, seed: int) -> int:
    """Seeded 64-bit hash: FNV-1a with the seed folded into the offset basis,
    followed by the splitmix64 finalizer."""
    return int(kernels.hash_keys([key], seed)[0])


class HashEncoder:
    """Map raw records onto sparse ``hash_dims``-wide vectors.

    Categorical cells contribute 1.0 at ``hash(field, value) % hash_dims``;
    integer cells contribute ``log1p(max(z, 0))`` at ``hash(field) %
    hash_dims``. Missing cells contribute nothing and collisions add up.
    """

    def __init__(self, schema: FeatureSchema, hash_dims: int, seed: int):
        if hash_dims < 1:
            raise ConfigError("hash_dims must be >= 1")
        self.schema = schema
        self.hash_dims = int(hash_dims)
        self.seed = int(seed)
        self._prefix = [field_key(name, "") for name, _ in schema.fields]
        int_keys = [field_key(name) for name, _ in schema.fields]
        int_hashes = kernels.hash_keys(int_keys, self.seed) % np.uint64(self.hash_dims)
        self._int_index = [int(h) for h in int_hashes]
        self._is_int = [kind == INTEGER for _, kind in schema.fields]

    @property
    def dim(self) -> int:
        return self.hash_dims

    def encode_batch(self, records: Sequence[RawRecord]) -> tuple[sp.csr_matrix, np.ndarray]:
        n_fields = self.schema.n_fields
        indptr = [0]
        slots = []      # -1 marks a categorical entry resolved by hashing below
        vals = []
        keys = []
        for rec in records:
            if len(rec.values) != n_fields:
                raise ShapeError(f"record has {len(rec.values)} values, schema has {n_fields} fields")
            for j, cell in enumerate(rec.values):
                if cell is None:
                    continue
                if self._is_int[j]:
                    slots.append(self._int_index[j])
                    vals.append(math.log1p(max(float(cell), 0.0)))
                else:
                    slots.append(-1)
                    vals.append(1.0)
                    keys.append(self._prefix[j] + cell.encode("utf-8"))
            indptr.append(len(slots))
        idx = np.asarray(slots, dtype=np.int64)
        if keys:
            hashed = (kernels.hash_keys(keys, self.seed) % np.uint64(self.hash_dims)).astype(np.int64)
            idx[idx < 0] = hashed
        ptr, idx, data = kernels.coalesce_rows(
            np.asarray(indptr, dtype=np.int64), idx, np.asarray(vals, dtype=np.float64)
        )
        X = sp.csr_matrix((data, idx, ptr), shape=(len(records), self.hash_dims))
        y = np.fromiter((r.label for r in records), dtype=np.float64, count=len(records))
        return X, y

    def encode(self, record: RawRecord) -> EncodedInstance:
        X, y = self.encode_batch([record])
        return EncodedInstance(tuple(int(i) for i in X.indices), tuple(float(v) for v in X.data), record.label)


def hash_encode(record: RawRecord, schema: FeatureSchema, hash_dims: int, seed: int) -> EncodedInstance:
    return HashEncoder(schema, hash_dims, seed).encode(record)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    shuffle: bool = False

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ConfigError("split needs three non-negative ratios")
        if abs(sum(self.ratios) - 1.0) > 1e-12:
            raise ConfigError(f"split ratios must sum to 1, got {sum(self.ratios)!r}")


def parse_split(text: str) -> tuple[float, float, float]:
    """Parse ``8/1/1``, ``0.8,0.1,0.1`` or similar into normalized ratios."""
    parts = text.replace(",", "/").replace(":", "/").split("/")
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"bad split {text!r}") from None
    if len(nums) != 3 or any(x < 0 for x in nums) or sum(nums) <= 0:
        raise ConfigError(f"bad split {text!r}")
    total = sum(nums)
    val, test = nums[1] / total, nums[2] / total
    return (1.0 - val - test, val, test)


def split_dataset(n: int, spec: SplitSpec):
    """Split ``n`` instances into train/validation/test.

    Validation and test get ``round(n * ratio)`` instances (half rounds up);
    training takes the remainder. Ranges are contiguous in file order unless
    ``spec.shuffle`` is set, in which case index arrays of a seeded
    permutation are returned.
    """
    if n < 3:
        raise ConfigError(f"need at least 3 instances to split, got {n}")
    _, r_val, r_test = spec.ratios
    n_val = math.floor(n * r_val + 0.5)
    n_test = math.floor(n * r_test + 0.5)
    for name, size, ratio in (("validation", n_val, r_val), ("test", n_test, r_test)):
        if ratio > 0 and size == 0:
            raise ConfigError(f"{name} split is empty for n={n} at ratio {ratio}")
    n_train = n - n_val - n_test
    if n_train < 0 or (spec.ratios[0] > 0 and n_train == 0):
        raise ConfigError(f"training split is empty for n={n}")
    bounds = (0, n_train, n_train + n_val, n)
    if not spec.shuffle:
        return tuple(range(bounds[i], bounds[i + 1]) for i in range(3))
    perm = np.random.default_rng(spec.seed).permutation(n)
    return tuple(np.sort(perm[bounds[i]:bounds[i + 1]]) for i in range(3))


def batch_iter(split: Sequence[int], batch_size: int) -> Iterator[Sequence[int]]:
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    for start in range(0, len(split), batch_size):
        yield split[start:start + batch_size]


class ArrayBatches:
    """Re-iterable ``(X, y)`` batches over in-memory arrays (dense or CSR)."""

    def __init__(self, X, y, batch_size: int, rows: Optional[Sequence[int]] = None):
        self.X = X
        self.y = np.asarray(y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if X.shape[0] != self.y.shape[0]:
            raise ShapeError(f"X has {X.shape[0]} rows, y has {self.y.shape[0]}")
        self.batch_size = int(batch_size)
        self.rows = range(X.shape[0]) if rows is None else rows

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        for idx in batch_iter(self.rows, self.batch_size):
            if isinstance(idx, range):
                sl = slice(idx.start, idx.stop)
                yield self.X[sl], self.y[sl]
            else:
                yield self.X[idx], self.y[idx]


def select_rows(records: Iterable[RawRecord], rows: Optional[Sequence[int]]) -> Iterator[RawRecord]:
    """Yield the records whose 0-based position is in ``rows`` (all if None)."""
    if rows is None:
        yield from records
        return
    if isinstance(rows, range) and rows.step == 1:
        for i, rec in enumerate(records):
            if i >= rows.stop:
                return
            if i >= rows.start:
                yield rec
        return
    wanted = set(int(r) for r in rows)
    for i, rec in enumerate(records):
        if i in wanted:
            yield rec


@dataclass
class FileBatches:
    """Re-iterable encoded batches streamed from a delimited file.

    Only records whose position falls in ``rows`` are used. Each pass re-reads
    the file, so memory stays bounded by one batch.
    """

    path: object
    schema: FeatureSchema
    encoder: object
    batch_size: int
    rows: Optional[Sequence[int]] = None
    _n: Optional[int] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def __len__(self):
        if self.rows is not None:
            return len(self.rows)
        if self._n is None:
            self._n = count_records(self.path, self.schema)
        return self._n

    def __iter__(self):
        buf = []
        for rec in select_rows(iter_records(self.path, self.schema), self.rows):
            buf.append(rec)
            if len(buf) == self.batch_size:
                X, y = self.encoder.encode_batch(buf)
                yield X, y[:, None]
                buf = []
        if buf:
            X, y = self.encoder.encode_batch(buf)
            yield X, y[:, None]
