"""Command-line front end: train, eval, predict and embedding pretraining.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import DEFAULT_LAMBDA, ActivationKind, train_elm
from .data import (
    FeatureSchema,
    FileBatches,
    HashEncoder,
    SplitSpec,
    count_records,
    iter_records,
    load_schema,
    parse_split,
    select_rows,
    split_dataset,
)
from .embeddings import DEFAULT_BUCKETS, DEFAULT_DIM, SurrogateModel, load_table, save_table
from .errors import ConfigError, CtrElmError, DataError, NumericError
from .metrics import evaluate, format_table
from .multilayer import MlElmModel, load_any_model, save_any_model, train_ml_elm

DEFAULTS = {
    "mode": "hashed",
    "hash_dims": 1 << 14,
    "hidden": 1000,
    "layers": None,
    "lambda": DEFAULT_LAMBDA,
    "lambda_ae": DEFAULT_LAMBDA,
    "activation": "relu",
    "seed": 0,
    "batch_size": 10000,
    "split": "8/1/1",
    "shuffle_split": False,
    "threshold": "fixed:0.5",
    "eval_split": "test",
    "emb_dim": DEFAULT_DIM,
    "emb_buckets": DEFAULT_BUCKETS,
    "learning_rate": 0.05,
    "epochs": 1,
}
COMMANDS = ("train", "eval", "predict", "pretrain_emb")
SPLIT_NAMES = ("train", "valid", "test")
ACTIVATIONS = ("sigmoid", "sine", "rbf", "relu")


@dataclass
class RunConfig:
    command: str
    data: Path
    schema: FeatureSchema
    schema_path: Path
    model_kind: str = "elm"
    mode: str = "hashed"
    emb_table: Optional[Path] = None
    hash_dims: int = 1 << 14
    hidden: int = 1000
    layers: list = field(default_factory=list)
    lam: float = DEFAULT_LAMBDA
    lam_ae: float = DEFAULT_LAMBDA
    activation: str = "relu"
    seed: int = 0
    batch_size: int = 10000
    split: tuple = (0.8, 0.1, 0.1)
    shuffle_split: bool = False
    threshold: str = "fixed:0.5"
    eval_split: str = "test"
    model_out: Optional[Path] = None
    model_in: Optional[Path] = None
    metrics_out: Optional[Path] = None
    out: Optional[Path] = None
    emb_dim: int = DEFAULT_DIM
    emb_buckets: int = DEFAULT_BUCKETS
    learning_rate: float = 0.05
    epochs: int = 1

    def echo(self) -> dict:
        return {
            "command": self.command.replace("_", "-"),
            "model": self.model_kind,
            "mode": self.mode,
            "hash_dims": self.hash_dims,
            "hidden": self.hidden,
            "layers": ";".join(str(x) for x in self.layers),
            "lambda": self.lam,
            "lambda_ae": self.lam_ae,
            "activation": self.activation,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "split": "/".join(f"{r:g}" for r in self.split),
            "shuffle_split": self.shuffle_split,
            "threshold": self.threshold,
            "emb_dim": self.emb_dim,
        }


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = _Parser(prog="ctrelm", description=__doc__.splitlines()[0], argument_default=S)
    cmd = p.add_mutually_exclusive_group(required=True)
    cmd.add_argument("--train", dest="command", action="store_const", const="train")
    cmd.add_argument("--eval", dest="command", action="store_const", const="eval")
    cmd.add_argument("--predict", dest="command", action="store_const", const="predict")
    cmd.add_argument("--pretrain-emb", dest="command", action="store_const", const="pretrain_emb")
    p.add_argument("--config", help="key = value file; command-line flags win")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--model-out")
    p.add_argument("--model-in")
    p.add_argument("--mode", choices=("hashed", "embedded"))
    p.add_argument("--emb-table", help="embedding table to read (embedded mode) or write (--pretrain-emb)")
    p.add_argument("--hash-dims", type=int)
    p.add_argument("--hidden", type=int, help="hidden units of the ELM (head)")
    p.add_argument("--layers", help="ML-ELM autoencoder widths, e.g. '500;500'")
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--lambda-ae", type=float)
    p.add_argument("--activation", choices=ACTIVATIONS)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--split", help="train/valid/test ratios, e.g. 8/1/1")
    p.add_argument("--shuffle-split", action="store_true")
    p.add_argument("--threshold", help="fixed:<x> or tuned")
    p.add_argument("--metrics-out")
    p.add_argument("--eval-split", choices=SPLIT_NAMES + ("all",))
    p.add_argument("--out", help="score file for --predict (default: stdout)")
    p.add_argument("--emb-dim", type=int)
    p.add_argument("--emb-buckets", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int)
    return p


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _coerce(key, value, kind):
    if value is None or isinstance(value, kind):
        return value
    try:
        if kind is bool:
            return str(value).lower() in ("1", "true", "yes", "on")
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None


def parse_layers(text) -> list:
    if text in (None, ""):
        return []
    try:
        dims = [int(t) for t in str(text).replace(",", ";").split(";") if t.strip()]
    except ValueError:
        raise ConfigError(f"bad --layers {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise ConfigError(f"bad --layers {text!r}")
    return dims


def resolve_config(argv) -> RunConfig:
    """Merge defaults, config file and flags, then validate. Reads no data."""
    ns = vars(build_parser().parse_args(argv))
    merged = dict(DEFAULTS)
    if "config" in ns:
        merged.update(read_config_file(ns["config"]))
    merged.update({k: v for k, v in ns.items() if k != "config"})
    unknown = set(merged) - set(DEFAULTS) - {
        "command", "data", "schema", "model_out", "model_in", "emb_table", "metrics_out", "out"
    }
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    command = merged["command"]
    types = {"hash_dims": int, "hidden": int, "lambda": float, "lambda_ae": float, "seed": int,
             "batch_size": int, "emb_dim": int, "emb_buckets": int, "learning_rate": float,
             "epochs": int, "shuffle_split": bool}
    for key, kind in types.items():
        merged[key] = _coerce(key, merged[key], kind)

    for key in ("data", "schema"):
        if not merged.get(key):
            raise ConfigError(f"--{key} is required")
    if merged["mode"] not in ("hashed", "embedded"):
        raise ConfigError(f"--mode must be hashed or embedded, got {merged['mode']!r}")
    if merged["activation"] not in ACTIVATIONS:
        raise ConfigError(f"--activation must be one of {', '.join(ACTIVATIONS)}")
    for key in ("hash_dims", "hidden", "batch_size", "emb_dim", "emb_buckets", "epochs"):
        if merged[key] < 1:
            raise ConfigError(f"--{key.replace('_', '-')} must be >= 1")
    for key in ("lambda", "lambda_ae", "learning_rate"):
        if merged[key] < 0:
            raise ConfigError(f"--{key.replace('_', '-')} must be >= 0")
    if not 0 <= merged["seed"] < 1 << 64:
        raise ConfigError("--seed must be in [0, 2**64)")
    threshold = str(merged["threshold"])
    if threshold != "tuned":
        if not threshold.startswith("fixed:"):
            raise ConfigError(f"--threshold must be fixed:<x> or tuned, got {threshold!r}")
        _coerce("threshold", threshold.split(":", 1)[1], float)
    if merged["eval_split"] not in SPLIT_NAMES + ("all",):
        raise ConfigError(f"bad --eval-split {merged['eval_split']!r}")
    layers = parse_layers(merged["layers"])
    if merged["activation"] == "rbf" and layers:
        raise ConfigError("ML-ELM autoencoder layers need an additive activation, not rbf")

    if command == "train" and not merged.get("model_out"):
        raise ConfigError("--train requires --model-out")
    if command in ("eval", "predict") and not merged.get("model_in"):
        raise ConfigError(f"--{command} requires --model-in")
    if command == "pretrain_emb" and not merged.get("emb_table"):
        raise ConfigError("--pretrain-emb requires --emb-table (output path)")
    if command != "pretrain_emb" and merged["mode"] == "embedded" and not merged.get("emb_table"):
        raise ConfigError("--mode embedded requires --emb-table")

    schema = load_schema(merged["schema"])
    opt = lambda k: Path(merged[k]) if merged.get(k) else None  # noqa: E731
    return RunConfig(
        command=command,
        data=Path(merged["data"]),
        schema=schema,
        schema_path=Path(merged["schema"]),
        model_kind="ml-elm" if layers else "elm",
        mode=merged["mode"],
        emb_table=opt("emb_table"),
        hash_dims=merged["hash_dims"],
        hidden=merged["hidden"],
        layers=layers,
        lam=merged["lambda"],
        lam_ae=merged["lambda_ae"],
        activation=merged["activation"],
        seed=merged["seed"],
        batch_size=merged["batch_size"],
        split=parse_split(str(merged["split"])),
        shuffle_split=merged["shuffle_split"],
        threshold=threshold,
        eval_split=merged["eval_split"],
        model_out=opt("model_out"),
        model_in=opt("model_in"),
        metrics_out=opt("metrics_out"),
        out=opt("out"),
        emb_dim=merged["emb_dim"],
        emb_buckets=merged["emb_buckets"],
        learning_rate=merged["learning_rate"],
        epochs=merged["epochs"],
    )


def _splits(cfg: RunConfig):
    n = count_records(cfg.data, cfg.schema)
    try:
        parts = split_dataset(n, SplitSpec(cfg.split, cfg.seed, cfg.shuffle_split))
    except ConfigError as exc:
        raise DataError(f"{cfg.data}: {exc}") from None
    return n, dict(zip(SPLIT_NAMES, parts))


def _encoder(cfg: RunConfig, hash_dims: int, hash_seed: int):
    if cfg.mode == "embedded":
        try:
            table = load_table(cfg.emb_table)
        except OSError as exc:
            raise DataError(f"cannot read {cfg.emb_table}: {exc.strerror}") from None
        if table.n_fields != cfg.schema.n_fields:
            raise DataError(
                f"{cfg.emb_table}: table has {table.n_fields} fields, schema has {cfg.schema.n_fields}"
            )
        return table
    return HashEncoder(cfg.schema, hash_dims, hash_seed)


def score_batches(model, batches) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    for X, Y in batches:
        scores.append(model.predict(X)[:, 0])
        labels.append(np.asarray(Y)[:, 0])
    if not scores:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(scores), np.concatenate(labels)


def _model_seed(model) -> int:
    head = model.head if isinstance(model, MlElmModel) else model
    return head.layer.seed


def _write_kv(path, sections: dict):
    lines = []
    for prefix, values in sections.items():
        for k, v in values.items():
            lines.append(f"{prefix}.{k}={v}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from None


def _print_echo(cfg: RunConfig, out):
    for k, v in cfg.echo().items():
        print(f"# {k}={v}", file=out)


def _print_timing(timing, out):
    d = timing.as_dict()
    print("batches\tmean_batch_seconds\ttotal_seconds\tinstances_per_second", file=out)
    print(f"{d['batches']}\t{d['mean_batch_seconds']:.5f}\t{d['total_seconds']:.5f}\t"
          f"{d['instances_per_second']:.1f}", file=out)


def run_train(cfg: RunConfig, out=None):
    out = out or sys.stdout
    _print_echo(cfg, out)
    n, splits = _splits(cfg)
    encoder = _encoder(cfg, cfg.hash_dims, cfg.seed)
    batches = lambda rows: FileBatches(cfg.data, cfg.schema, encoder, cfg.batch_size, rows)  # noqa: E731
    if cfg.model_kind == "ml-elm":
        model = train_ml_elm(batches(splits["train"]), cfg.layers, cfg.lam_ae, cfg.lam,
                             ActivationKind.parse(cfg.activation), cfg.seed, cfg.batch_size, cfg.hidden)
    else:
        model = train_elm(batches(splits["train"]), encoder.dim, cfg.hidden, cfg.lam,
                          ActivationKind.parse(cfg.activation), cfg.seed, cfg.batch_size)
    try:
        save_any_model(model, cfg.model_out)
    except OSError as exc:
        raise DataError(f"cannot write {cfg.model_out}: {exc.strerror}") from None
    scores, labels = score_batches(model, batches(splits["valid"]))
    report = evaluate(scores, labels, cfg.threshold)
    print(format_table({"valid": report}), file=out)
    _print_timing(model.timing, out)
    if cfg.metrics_out:
        _write_kv(cfg.metrics_out, {"config": cfg.echo(), "valid": report.as_dict(),
                                    "timing": model.timing.as_dict()})
    return model, report


def _load_model(cfg: RunConfig):
    try:
        return load_any_model(cfg.model_in)
    except OSError as exc:
        raise DataError(f"cannot read {cfg.model_in}: {exc.strerror}") from None


def run_eval(cfg: RunConfig, out=None):
    out = out or sys.stdout
    model = _load_model(cfg)
    _print_echo(cfg, out)
    encoder = _encoder(cfg, model.input_dim, _model_seed(model))
    if encoder.dim != model.input_dim:
        raise DataError(f"model expects {model.input_dim} inputs, encoder gives {encoder.dim}")
    if cfg.eval_split == "all":
        rows = None
    else:
        _, splits = _splits(cfg)
        rows = splits[cfg.eval_split]
    scores, labels = score_batches(model, FileBatches(cfg.data, cfg.schema, encoder, cfg.batch_size, rows))
    if scores.size == 0:
        raise DataError(f"{cfg.data}: no instances in split {cfg.eval_split!r}")
    report = evaluate(scores, labels, cfg.threshold)
    print(format_table({cfg.eval_split: report}), file=out)
    if cfg.metrics_out:
        _write_kv(cfg.metrics_out, {"config": cfg.echo(), cfg.eval_split: report.as_dict()})
    return report


def run_predict(cfg: RunConfig, out=None):
    out = out or sys.stdout
    model = _load_model(cfg)
    encoder = _encoder(cfg, model.input_dim, _model_seed(model))
    if encoder.dim != model.input_dim:
        raise DataError(f"model expects {model.input_dim} inputs, encoder gives {encoder.dim}")
    batches = FileBatches(cfg.data, cfg.schema, encoder, cfg.batch_size)
    target = open(cfg.out, "w") if cfg.out else out
    try:
        for X, _ in batches:
            target.write("".join(f"{s!r}\n" for s in model.predict(X)[:, 0].tolist()))
    finally:
        if cfg.out:
            target.close()


def run_pretrain(cfg: RunConfig, out=None):
    out = out or sys.stdout
    _print_echo(cfg, out)
    _, splits = _splits(cfg)
    records = select_rows(iter_records(cfg.data, cfg.schema), splits["train"])
    if cfg.epochs > 1:
        records = list(records)
    model = SurrogateModel(cfg.schema, cfg.emb_dim, cfg.emb_buckets, cfg.seed)
    model.fit(records, cfg.epochs, cfg.learning_rate)
    table = model.table()
    try:
        save_table(table, cfg.emb_table)
    except OSError as exc:
        raise DataError(f"cannot write {cfg.emb_table}: {exc.strerror}") from None
    losses = np.asarray(model.losses)
    print(f"pretrained {table.n_fields} fields x d={table.d} on {losses.size} instances; "
          f"mean logloss {losses.mean():.5f}", file=out)
    return table


RUNNERS = {"train": run_train, "eval": run_eval, "predict": run_predict, "pretrain_emb": run_pretrain}


def main(argv=None) -> int:
    try:
        cfg = resolve_config(sys.argv[1:] if argv is None else argv)
        RUNNERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except CtrElmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
