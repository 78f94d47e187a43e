"""Run configuration read from a TOML file.

Documented keys (everything except ``[model] variants`` has a default)::

    seed = 0                      # run seed; default for every seed below
    out = "runs/demo"             # output directory (``--out`` overrides)

    [corpus]
    source = "synth"              # "synth" | "cache" | "real"
    cache = "data.ffd"            # cache path; relative paths resolve under `out`

    [corpus.synth]                # SynthConfig fields, e.g. n, prevalence, noise, spike_g
    n = 2000

    [corpus.real]                 # CorpusLayout fields
    root = "/data/upfall"         # FALLFUSE_DATA_ROOT overrides
    sensor_csv = "sensors.csv"
    frame_dir = "S{subject}/A{activity}/T{trial}/cam{camera}"
    columns = { ax = "wrist_ax" }
    extra_columns = []
    subjects = [1, 2, 3]
    fall_set = [1, 2, 3, 4, 5]
    tolerance_ms = 100

    [model]
    variants = ["Fusion", "SensorMLP"]
    dropout = 0.3
    multi_sensor_width = 12       # default: the corpus's full sensor width

    [train]
    epochs = 50
    batch_size = 64
    algorithm = "Adam"            # or "SGD"
    lr = 0.001
    momentum = 0.0
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8
    wall_clock = false            # record epoch durations (breaks byte-identical reruns)

    [split]
    train = 0.6
    val = 0.2
    test = 0.2

``--seed`` replaces the top-level seed. ``[corpus.synth] seed``,
``[split] seed`` and ``[train] seed`` fall back to the top-level seed.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .data.ingest import CorpusLayout
from .data.split import SplitSpec
from .data.synth import SynthConfig
from .errors import ConfigError
from .model import VARIANTS, TrainConfig
from .nn.optim import OptimizerConfig

SOURCES = ("synth", "cache", "real")
MAX_SEED = 2 ** 64 - 1


@dataclass
class RunConfig:
    variants: tuple
    out: Path
    seed: int = 0
    source: str = "synth"
    cache: Path | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    layout: CorpusLayout | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    dropout: float = 0.3
    multi_sensor_width: int | None = None

    @property
    def cache_path(self) -> Path:
        return self.cache if self.cache is not None else self.out / "data.ffd"


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _pick(table: dict, cls, where: str, rename: dict | None = None) -> dict:
    rename = rename or {}
    allowed = {f.name for f in fields(cls)}
    out = {}
    for key, value in table.items():
        target = rename.get(key, key)
        if target not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        out[target] = value
    return out


def _seed(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= MAX_SEED:
        raise ConfigError(f"{where} must be an integer in [0, 2^64), got {value!r}")
    return value


def _build(cls, kwargs, where):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def parse_config(raw: dict, base_dir: Path = Path("."), out: str | Path | None = None,
                 seed: int | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed TOML table."""
    known = {"seed", "out", "corpus", "model", "train", "split"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown top-level key {key!r}")
    run_seed = _seed(seed if seed is not None else raw.get("seed", 0), "seed")
    out_dir = Path(out if out is not None else raw.get("out", "runs"))
    if not out_dir.is_absolute() and out is None:
        out_dir = base_dir / out_dir

    corpus = dict(_section(raw, "corpus"))
    synth_table = corpus.pop("synth", {})
    real_table = corpus.pop("real", None)
    source = corpus.pop("source", "synth")
    cache = corpus.pop("cache", None)
    if corpus:
        raise ConfigError(f"unknown key(s) in [corpus]: {sorted(corpus)}")
    if source not in SOURCES:
        raise ConfigError(f"[corpus] source must be one of {SOURCES}, got {source!r}")
    synth_kwargs = _pick(synth_table, SynthConfig, "corpus.synth")
    for key in ("fall_axes", "adl_axes", "subjects"):
        if key in synth_kwargs:
            synth_kwargs[key] = tuple(synth_kwargs[key])
    synth_kwargs["seed"] = _seed(synth_kwargs.get("seed", run_seed), "[corpus.synth] seed")
    synth = _build(SynthConfig, synth_kwargs, "corpus.synth")
    layout = None
    if source == "real":
        if real_table is None or "root" not in real_table:
            raise ConfigError("source = \"real\" needs a [corpus.real] table with `root`")
        layout_kwargs = _pick(real_table, CorpusLayout, "corpus.real")
        root = Path(layout_kwargs["root"])
        layout_kwargs["root"] = root if root.is_absolute() else base_dir / root
        layout = _build(CorpusLayout, layout_kwargs, "corpus.real")
    cache_path = None
    if cache is not None:
        cache_path = Path(cache)
        if not cache_path.is_absolute():
            cache_path = out_dir / cache_path
    if source == "cache" and cache_path is None:
        raise ConfigError("source = \"cache\" needs [corpus] cache = <path>")

    model = dict(_section(raw, "model"))
    variants = model.pop("variants", None)
    if isinstance(variants, str):
        variants = [variants]
    if not variants:
        raise ConfigError("[model] variants must list at least one variant")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    if len(set(variants)) != len(variants):
        raise ConfigError("[model] variants contains duplicates")
    dropout = model.pop("dropout", 0.3)
    multi_width = model.pop("multi_sensor_width", None)
    if model:
        raise ConfigError(f"unknown key(s) in [model]: {sorted(model)}")
    if not isinstance(dropout, (int, float)) or not 0 <= dropout < 1:
        raise ConfigError(f"[model] dropout must be in [0, 1), got {dropout!r}")

    train_table = dict(_section(raw, "train"))
    opt_kwargs = {k: train_table.pop(k) for k in ("algorithm", "lr", "momentum", "beta1", "beta2", "eps")
                  if k in train_table}
    optimizer = _build(OptimizerConfig, opt_kwargs, "train")
    train_kwargs = _pick(train_table, TrainConfig, "train", rename={"wall_clock": "record_wall_clock"})
    train_kwargs.setdefault("record_wall_clock", False)
    train_kwargs["seed"] = _seed(train_kwargs.get("seed", run_seed), "[train] seed")
    train_cfg = _build(TrainConfig, dict(train_kwargs, optimizer=optimizer), "train")

    split_kwargs = _pick(_section(raw, "split"), SplitSpec, "split")
    split_kwargs["seed"] = _seed(split_kwargs.get("seed", run_seed), "[split] seed")
    split_spec = _build(SplitSpec, split_kwargs, "split")

    return RunConfig(variants=tuple(variants), out=out_dir, seed=run_seed, source=source, cache=cache_path,
                     synth=synth, layout=layout, train=train_cfg, split=split_spec, dropout=float(dropout),
                     multi_sensor_width=multi_width)


def load_config(path, out=None, seed=None) -> RunConfig:
    """Read and validate a TOML config file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, path.parent, out=out, seed=seed)
