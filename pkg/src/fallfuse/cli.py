"""``fallfuse synth|train|eval|curves --config <path> [--out <dir>] [--seed <u64>]``.

Outputs, all under the run's output directory::

    data.ffd                  synth: FALLFUSE-DATA-1 corpus cache
    <variant>/model.ckpt      train: FALLFUSE-CKPT-1 checkpoint
    <variant>/epochs.csv      train: epoch,train_loss,val_accuracy,val_f1,seconds
    metrics.csv               eval: variant,split,averaging,accuracy,precision,recall,f1
    curves.csv                curves: variant,epoch,metric,value

Exit codes: 0 success, 2 bad config or unreadable input, 3 non-finite loss,
4 a model needs a modality the corpus lacks.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config
from .data import FusedDataset, load_corpus, read_cache, split, synth_dataset, write_cache
from .errors import DivergenceError, FallFuseError, ModalityError
from .metrics import confusion, format_metrics_csv, metrics_rows
from .model import (EPOCH_COLUMNS, build_model, default_spec, format_epochs_csv, load_checkpoint, predict,
                    save_checkpoint, train)
from .nn.layers import Mode

log = logging.getLogger("fallfuse")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_MODALITY = 0, 2, 3, 4
CURVE_COLUMNS = ("variant", "epoch", "metric", "value")
CURVE_METRICS = ("val_accuracy", "val_f1")


class CliError(FallFuseError):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def resolve_corpus(cfg: RunConfig) -> FusedDataset:
    """The full corpus named by ``cfg``; a cache is used when the source is ``cache``."""
    if cfg.source == "cache":
        data, _ = read_cache(cfg.cache_path)
        return data
    if cfg.source == "synth":
        return synth_dataset(cfg.synth)
    return FusedDataset.from_examples(load_corpus(cfg.layout))


def _corpus_meta(cfg: RunConfig) -> dict:
    if cfg.source == "synth":
        return {"source": "synth", "synth": cfg.synth.to_dict()}
    if cfg.source == "real":
        return {"source": "real", "root": str(cfg.layout.root), "subjects": list(cfg.layout.subjects)}
    return {"source": "cache", "path": str(cfg.cache_path)}


def _spec_for(cfg: RunConfig, variant: str, data: FusedDataset):
    width = None
    if variant == "MultiSensorFusion":
        width = cfg.multi_sensor_width or data.sensor_width
    return default_spec(variant, sensor_width=width, dropout_rate=cfg.dropout)


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.source == "cache":
        raise CliError("synth needs a \"synth\" or \"real\" corpus source, not \"cache\"")
    data = resolve_corpus(cfg)
    path = cfg.cache_path
    path.parent.mkdir(parents=True, exist_ok=True)
    write_cache(path, data, _corpus_meta(cfg))
    falls = int(data.label.sum())
    print(f"wrote {path}: {len(data)} examples, {falls} falls, {len(data) - falls} non-falls, "
          f"prevalence {data.prevalence():.4f}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    data = resolve_corpus(cfg)
    tr, va, _ = split(data, cfg.split)
    for variant in cfg.variants:
        model = build_model(_spec_for(cfg, variant, data), seed=cfg.train.seed)

        def report(entry, variant=variant):
            log.info("%s epoch %d: loss %.6f val_acc %.4f val_f1 %.4f", variant, entry.epoch,
                     entry.train_loss, entry.val_accuracy, entry.val_f1)

        try:
            model, logs = train(model, tr, va, cfg.train, on_epoch=report)
        except DivergenceError as exc:
            raise CliError(f"variant {exc}", EXIT_DIVERGED) from exc
        except ModalityError as exc:
            raise CliError(f"variant {variant}: {exc}", EXIT_MODALITY) from exc
        out = cfg.out / variant
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "model.ckpt",
                        extra={"corpus": _corpus_meta(cfg), "split": vars(cfg.split).copy(),
                               "epochs": cfg.train.epochs})
        _write_text(out / "epochs.csv", format_epochs_csv(logs))
        last = logs[-1]
        print(f"{variant}: {len(logs)} epochs, final loss {last.train_loss:.6f}, "
              f"val accuracy {last.val_accuracy:.4f}, val F1 {last.val_f1:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    data = resolve_corpus(cfg)
    _, _, test = split(data, cfg.split)
    rows = []
    for variant in cfg.variants:
        path = cfg.out / variant / "model.ckpt"
        if not path.exists():
            raise CliError(f"no checkpoint for {variant} at {path}; run `fallfuse train` first")
        model, _ = load_checkpoint(path)
        try:
            preds = predict(model.forward(test, Mode.EVAL))
        except ModalityError as exc:
            raise CliError(f"{path}: {exc}", EXIT_MODALITY) from exc
        rows.extend(metrics_rows(variant, "test", confusion(preds, test.label)))
    out = cfg.out / "metrics.csv"
    _write_text(out, format_metrics_csv(rows))
    print(f"wrote {out}: {len(rows)} rows")
    return EXIT_OK


def read_epochs_csv(path: Path) -> list[dict]:
    """Rows of an epochs CSV as strings, validated; raises CliError naming file and line."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"{path}: cannot open: {exc}") from exc
    rows = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != EPOCH_COLUMNS:
            raise CliError(f"{path}:1: expected header {','.join(EPOCH_COLUMNS)}, got {header}")
        for row in reader:
            line = reader.line_num
            if len(row) != len(EPOCH_COLUMNS):
                raise CliError(f"{path}:{line}: expected {len(EPOCH_COLUMNS)} fields, got {len(row)}")
            rec = dict(zip(EPOCH_COLUMNS, row))
            try:
                epoch = int(rec["epoch"])
                for name in EPOCH_COLUMNS[1:]:
                    float(rec[name])
            except ValueError as exc:
                raise CliError(f"{path}:{line}: {exc}") from exc
            if epoch < 1:
                raise CliError(f"{path}:{line}: epoch must be >= 1, got {epoch}")
            rows.append(rec)
    if not rows:
        raise CliError(f"{path}: no epoch rows")
    return rows


def merge_curves(inputs: dict) -> str:
    """Long-format CSV from ``{variant: epochs CSV path}``, sorted by variant then epoch.

    Values are copied verbatim from the inputs, so splitting the result per
    variant reproduces their metric columns byte for byte.
    """
    records = []
    for variant, path in inputs.items():
        for rec in read_epochs_csv(Path(path)):
            records.append((variant, int(rec["epoch"]), rec))
    records.sort(key=lambda r: (r[0], r[1]))
    lines = [",".join(CURVE_COLUMNS)]
    for variant, epoch, rec in records:
        for metric in CURVE_METRICS:
            lines.append(f"{variant},{epoch},{metric},{rec[metric]}")
    return "\n".join(lines) + "\n"


def cmd_curves(cfg: RunConfig) -> int:
    inputs = {v: cfg.out / v / "epochs.csv" for v in cfg.variants}
    text = merge_curves(inputs)
    out = cfg.out / "curves.csv"
    _write_text(out, text)
    print(f"wrote {out}: {text.count(chr(10)) - 1} rows")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "curves": cmd_curves}


def _seed_arg(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fallfuse", description="Multimodal fall detection experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__ or name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides `out` in the config)")
        p.add_argument("--seed", type=_seed_arg, help="run seed (overrides `seed` in the config)")
        p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    return parser


cmd_synth.__doc__ = "generate or ingest a corpus and write its cache"
cmd_train.__doc__ = "train every configured variant"
cmd_eval.__doc__ = "evaluate checkpoints on the test split"
cmd_curves.__doc__ = "merge epoch logs into one long-format CSV"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"fallfuse {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ModalityError as exc:
        print(f"fallfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_MODALITY
    except DivergenceError as exc:
        print(f"fallfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FallFuseError as exc:
        print(f"fallfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
