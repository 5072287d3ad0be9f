"""Planted-logistic categorical CTR data for tests, benchmarks and demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .data import CATEGORICAL, FeatureSchema, RawRecord, dump_schema


@dataclass
class PlantedCtr:
    schema: FeatureSchema
    records: list
    codes: np.ndarray       # (n, n_fields) value ids
    weights: np.ndarray     # (n_fields, vocab) planted logit contributions
    intercept: float
    labels: np.ndarray

    @property
    def logits(self) -> np.ndarray:
        return self.intercept + self.weights[np.arange(self.codes.shape[1]), self.codes].sum(axis=1)

    def write_tsv(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                cells = [str(rec.label)] + ["" if v is None else v for v in rec.values]
                fh.write("\t".join(cells) + "\n")

    def write_schema(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(dump_schema(self.schema))


def planted_ctr(n: int, n_fields: int = 20, vocab: int = 50, ctr: float = 0.17,
                weight_scale: float = 0.5, seed: int = 0) -> PlantedCtr:
    """Draw ``n`` records whose click probability is
    ``sigmoid(intercept + sum_f weights[f, value_f])``; the intercept is
    solved so the expected click rate equals ``ctr``."""
    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, weight_scale, size=(n_fields, vocab))
    codes = rng.integers(0, vocab, size=(n, n_fields))
    contrib = weights[np.arange(n_fields), codes].sum(axis=1)
    intercept = brentq(lambda b: expit(b + contrib).mean() - ctr, -50.0, 50.0)
    labels = (rng.random(n) < expit(intercept + contrib)).astype(np.int64)
    schema = FeatureSchema(tuple((f"C{f + 1}", CATEGORICAL) for f in range(n_fields)))
    records = [
        RawRecord(tuple(f"v{c}" for c in row), int(y)) for row, y in zip(codes.tolist(), labels.tolist())
    ]
    return PlantedCtr(schema, records, codes, weights, float(intercept), labels)
