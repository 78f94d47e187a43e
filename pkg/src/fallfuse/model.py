"""Multimodal fusion network, its unimodal baselines, training and checkpoints.

Default fusion architecture (every size can be overridden in ``ModelSpec``)::

    sensor  (W x 4)      Conv1D(16, k3, p1) -> MaxPool1D(2) -> BatchNorm -> Flatten
    cam1    (1 x 32x32)  Conv2D(16, 3x3, p1) -> MaxPool2D(2) -> BatchNorm
                         -> Conv2D(32, 3x3, p1) -> MaxPool2D(2) -> BatchNorm -> Flatten
    cam2                 same stack as cam1, independent weights
    concat -> Dense(128) -> ReLU -> Dropout(0.3) -> Dense(64) -> ReLU -> Dense(2) -> softmax

The sensor vector (``W`` standardized channels, 4 for the wrist) is fed to
the 1D convolution as ``W`` channels of length 4, each channel being its
value repeated four times.

Randomness comes from one generator per model, seeded at build time. It is
consumed in this order: weight initialization (branches in the order sensor,
cam1, cam2, then the head), then during training, at the start of every epoch,
the shuffle permutation followed by the dropout masks of that epoch's batches.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .container import read_container, write_container
from .data.examples import FusedDataset, FusedExample
from .errors import ConfigError, DivergenceError, InputError, ModalityError, ShapeError
from .metrics import Averaging, confusion, metrics
from .nn import layers as L
from .nn.layers import LayerSpec, Mode, Sequential
from .preprocess import FRAME_SIZE, Standardizer

CKPT_MAGIC = "FALLFUSE-CKPT-1"
SENSOR_LENGTH = 4

VARIANTS = ("Fusion", "SensorMLP", "Sensor1DCNN", "Camera1", "Camera2", "Camera1And2", "MultiSensorFusion")
VARIANT_BRANCHES = {
    "Fusion": ("sensor", "cam1", "cam2"),
    "SensorMLP": ("sensor",),
    "Sensor1DCNN": ("sensor",),
    "Camera1": ("cam1",),
    "Camera2": ("cam2",),
    "Camera1And2": ("cam1", "cam2"),
    "MultiSensorFusion": ("sensor", "cam1", "cam2"),
}
BRANCH_ORDER = ("sensor", "cam1", "cam2")


def default_sensor_cnn():
    return (L.conv1d(16, 3, padding=1), L.maxpool1d(2), L.batchnorm(), L.flatten())


def default_sensor_mlp():
    return (L.dense(32), L.relu())


def default_camera_cnn():
    return (L.conv2d(16, 3, padding=1), L.maxpool2d(2), L.batchnorm(),
            L.conv2d(32, 3, padding=1), L.maxpool2d(2), L.batchnorm(), L.flatten())


def default_head(dropout_rate=0.3):
    return (L.dense(128), L.relu(), L.dropout(dropout_rate), L.dense(64), L.relu(), L.dense(2))


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "Fusion"
    sensor_width: int = 4
    sensor_branch: tuple = field(default_factory=default_sensor_cnn)
    camera_branch: tuple = field(default_factory=default_camera_cnn)
    head: tuple = field(default_factory=default_head)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.sensor_width < 1:
            raise ConfigError(f"sensor_width must be >= 1, got {self.sensor_width}")
        if not self.head or self.head[-1].kind != "Dense" or self.head[-1].units != 2:
            raise ConfigError("the head must end with Dense(2)")

    @property
    def branches(self) -> tuple[str, ...]:
        return VARIANT_BRANCHES[self.variant]

    @property
    def sensor_layout(self) -> str:
        return "flat" if self.sensor_branch and self.sensor_branch[0].kind == "Dense" else "sequence"

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "sensor_width": self.sensor_width,
            "sensor_branch": [s.to_dict() for s in self.sensor_branch],
            "camera_branch": [s.to_dict() for s in self.camera_branch],
            "head": [s.to_dict() for s in self.head],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            variant=d["variant"],
            sensor_width=int(d["sensor_width"]),
            sensor_branch=tuple(LayerSpec.from_dict(s) for s in d["sensor_branch"]),
            camera_branch=tuple(LayerSpec.from_dict(s) for s in d["camera_branch"]),
            head=tuple(LayerSpec.from_dict(s) for s in d["head"]),
        )


def default_spec(variant: str = "Fusion", sensor_width: int | None = None, dropout_rate: float = 0.3,
                 multi_sensor_width: int = 12) -> ModelSpec:
    """Spec for one of :data:`VARIANTS` with the default layer sizes."""
    if sensor_width is None:
        sensor_width = multi_sensor_width if variant == "MultiSensorFusion" else 4
    sensor = default_sensor_mlp() if variant == "SensorMLP" else default_sensor_cnn()
    return ModelSpec(variant, sensor_width, sensor, default_camera_cnn(), default_head(dropout_rate))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    optimizer: nn.OptimizerConfig = field(default_factory=nn.OptimizerConfig)
    # run seed, passed to build_model; train() itself draws from the model's generator
    seed: int = 0
    # always off: every run logs the full number of epochs
    early_stopping: bool = False
    record_wall_clock: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.early_stopping:
            raise ConfigError("early stopping is not supported; runs always last `epochs` epochs")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_f1: float
    seconds: float


class FusionModel:
    """Branches per modality, concatenated into an MLP head ending in softmax."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.standardizer: Standardizer | None = None
        self.branches: dict[str, Sequential] = {}
        for name in BRANCH_ORDER:
            if name not in spec.branches:
                continue
            try:
                self.branches[name] = Sequential(self._branch_specs(name), self._branch_input_shape(name),
                                                 self.rng, input_grad=False)
            except ShapeError as exc:
                raise ShapeError(f"{spec.variant}: {name} branch: {exc}") from exc
        widths = []
        for name, branch in self.branches.items():
            if len(branch.out_shape) != 1:
                raise ShapeError(f"{spec.variant}: {name} branch output {branch.out_shape} is not flat "
                                 f"at the concat junction; end the branch with Flatten")
            widths.append(branch.out_shape[0])
        self.branch_widths = widths
        try:
            self.head = Sequential(spec.head, (sum(widths),), self.rng)
        except ShapeError as exc:
            raise ShapeError(f"{spec.variant}: head after concat of width {sum(widths)}: {exc}") from exc

    def _branch_specs(self, name):
        return self.spec.sensor_branch if name == "sensor" else self.spec.camera_branch

    def _branch_input_shape(self, name):
        if name != "sensor":
            return (1, FRAME_SIZE, FRAME_SIZE)
        if self.spec.sensor_layout == "flat":
            return (self.spec.sensor_width,)
        return (self.spec.sensor_width, SENSOR_LENGTH)

    # --- parameters -------------------------------------------------------

    def named_layers(self):
        for name, branch in self.branches.items():
            yield from branch.named_layers(f"{name}.")
        yield from self.head.named_layers("head.")

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{lname}.{p}": arr for lname, layer in self.named_layers() for p, arr in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{lname}.{p}": layer.grads[p] for lname, layer in self.named_layers() for p in layer.params}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{lname}.{b}": arr for lname, layer in self.named_layers() for b, arr in layer.buffers.items()}

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # --- inputs -------------------------------------------------------------

    def inputs(self, batch) -> dict[str, np.ndarray]:
        """Model-ready arrays for ``batch``.

        ``batch`` may be a :class:`FusedDataset`, a list of
        :class:`FusedExample`, or a dict with any of the keys ``sensor``
        (``N x W`` raw values), ``cam1``/``cam2`` (``N x 32 x 32``).
        """
        if isinstance(batch, FusedDataset):
            raw = {"sensor": batch.sensor, "cam1": batch.cam1, "cam2": batch.cam2}
        elif isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], FusedExample):
            raw = {
                "sensor": np.stack([np.asarray(e.sensor, dtype=np.float64) for e in batch]),
                "cam1": np.stack([e.cam1.pixels for e in batch]),
                "cam2": np.stack([e.cam2.pixels for e in batch]),
            }
        elif isinstance(batch, dict):
            raw = batch
        else:
            raise InputError("batch must be a non-empty FusedDataset, list of FusedExample, or dict of arrays")
        out = {}
        for name in self.branches:
            if raw.get(name) is None:
                raise ModalityError(f"{self.spec.variant} needs the {name!r} modality, which the batch lacks")
            arr = np.asarray(raw[name], dtype=np.float64)
            if arr.shape[0] == 0:
                raise InputError("batch is empty")
            if name == "sensor":
                out[name] = self._sensor_input(arr)
            else:
                if arr.shape[1:] != (FRAME_SIZE, FRAME_SIZE):
                    raise ModalityError(f"{name} frames must be {FRAME_SIZE}x{FRAME_SIZE}, got {arr.shape[1:]}")
                out[name] = arr[:, None, :, :]
        return out

    def _sensor_input(self, raw):
        w = self.spec.sensor_width
        if raw.ndim != 2 or raw.shape[1] < w:
            raise ModalityError(f"{self.spec.variant} needs {w} sensor channels, data provides "
                                f"{raw.shape[1] if raw.ndim == 2 else raw.shape}")
        x = raw[:, :w]
        if self.standardizer is not None:
            x = self.standardizer.transform(x)
        if self.spec.sensor_layout == "flat":
            return np.ascontiguousarray(x)
        return np.repeat(x[:, :, None], SENSOR_LENGTH, axis=2)

    def fit_standardizer(self, data: FusedDataset) -> None:
        if "sensor" in self.branches:
            self.standardizer = Standardizer.fit(data.sensor[:, :self.spec.sensor_width])

    # --- forward / backward --------------------------------------------------

    def logits(self, inputs: dict[str, np.ndarray], mode=Mode.EVAL) -> np.ndarray:
        feats = [self.branches[name].forward(inputs[name], mode) for name in self.branches]
        return self.head.forward(np.concatenate(feats, axis=1), mode)

    def backward(self, grad_logits: np.ndarray) -> None:
        grad = self.head.backward(grad_logits)
        start = 0
        for (name, branch), width in zip(self.branches.items(), self.branch_widths):
            branch.backward(grad[:, start:start + width])
            start += width

    def forward(self, batch, mode=Mode.EVAL, chunk: int = 512) -> np.ndarray:
        """Class probabilities (``N x 2``); eval mode is evaluated in chunks."""
        return self.probabilities(self.inputs(batch), mode, chunk)

    def probabilities(self, inputs: dict[str, np.ndarray], mode=Mode.EVAL, chunk: int = 512) -> np.ndarray:
        """:meth:`forward` on arrays already prepared by :meth:`inputs`."""
        n = next(iter(inputs.values())).shape[0]
        if Mode(mode) is Mode.TRAIN or n <= chunk:
            return nn.softmax(self.logits(inputs, mode))
        parts = [nn.softmax(self.logits({k: v[i:i + chunk] for k, v in inputs.items()}, mode))
                 for i in range(0, n, chunk)]
        return np.concatenate(parts)

    def predict(self, batch) -> np.ndarray:
        return predict(self.forward(batch, Mode.EVAL))


def build_model(spec: ModelSpec, seed: int = 0) -> FusionModel:
    return FusionModel(spec, seed)


def predict(probs) -> np.ndarray | int:
    """Argmax label; an exact 0.5 / 0.5 tie resolves to 0 (no fall)."""
    p = np.asarray(probs, dtype=np.float64)
    labels = (p[..., 1] > p[..., 0]).astype(np.int64)
    return int(labels) if labels.ndim == 0 else labels


def evaluate(model: FusionModel, data: FusedDataset):
    """Confusion counts of ``model`` on ``data`` (eval mode)."""
    return confusion(model.predict(data), data.label)


def train(model: FusionModel, train_data: FusedDataset, val_data: FusedDataset, cfg: TrainConfig,
          on_epoch=None) -> tuple[FusionModel, list[EpochLog]]:
    """Minibatch training for exactly ``cfg.epochs`` epochs.

    Each epoch shuffles the training set with the model's generator, runs
    forward/backward/optimizer steps, then records eval-mode validation
    accuracy and fall-class F1. The sensor standardizer is fitted on
    ``train_data`` if the model does not have one yet.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise InputError("train and validation sets must be non-empty")
    if model.standardizer is None:
        model.fit_standardizer(train_data)
    optimizer = nn.Optimizer(cfg.optimizer)
    params = model.parameters()
    train_inputs = model.inputs(train_data)
    val_inputs = model.inputs(val_data)
    for split_name, arrays in (("training", train_inputs), ("validation", val_inputs)):
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{split_name} {name} data contains NaN or Inf")
    labels = train_data.label
    n = len(train_data)
    logs: list[EpochLog] = []
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = model.rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size), start=1):
            idx = order[lo:lo + cfg.batch_size]
            logits = model.logits({k: v[idx] for k, v in train_inputs.items()}, Mode.TRAIN)
            loss, grad = nn.cross_entropy(nn.softmax(logits), labels[idx])
            if not math.isfinite(loss) or not np.all(np.isfinite(logits)):
                raise DivergenceError(
                    f"{model.spec.variant}: non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            model.backward(grad)
            optimizer.step(params, model.gradients())
            total += loss * idx.size
        preds = predict(model.probabilities(val_inputs, Mode.EVAL))
        counts = confusion(preds, val_data.label)
        report = metrics(counts, Averaging.PER_CLASS_POSITIVE)
        seconds = time.perf_counter() - start if cfg.record_wall_clock else 0.0
        log = EpochLog(epoch, total / n, report.accuracy, report.f1, seconds)
        logs.append(log)
        if on_epoch is not None:
            on_epoch(log)
    return model, logs


# --- persistence ----------------------------------------------------------

EPOCH_COLUMNS = ("epoch", "train_loss", "val_accuracy", "val_f1", "seconds")


def format_epochs_csv(logs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_COLUMNS)
    for log in logs:
        w.writerow([log.epoch, repr(float(log.train_loss)), repr(float(log.val_accuracy)),
                    repr(float(log.val_f1)), repr(float(log.seconds))])
    return buf.getvalue()


def save_checkpoint(model: FusionModel, path, extra: dict | None = None) -> None:
    """Write a FALLFUSE-CKPT-1 container.

    Manifest keys: ``model`` (the ModelSpec as a dict), ``seed``,
    ``parameters``/``buffers`` (tensor names in payload order),
    ``standardized`` and ``extra``. Payload tensors are every parameter, then
    every buffer (BatchNorm running statistics), then the standardizer's
    ``standardizer.mean``/``standardizer.std`` if present.
    """
    params = model.parameters()
    bufs = model.buffers()
    arrays = dict(params)
    arrays.update(bufs)
    if model.standardizer is not None:
        arrays["standardizer.mean"] = model.standardizer.mean
        arrays["standardizer.std"] = model.standardizer.std
    manifest = {
        "format": CKPT_MAGIC,
        "model": model.spec.to_dict(),
        "seed": model.seed,
        "parameters": list(params),
        "buffers": list(bufs),
        "standardized": model.standardizer is not None,
        "extra": extra or {},
    }
    write_container(path, CKPT_MAGIC, manifest, arrays)


def load_checkpoint(path) -> tuple[FusionModel, dict]:
    manifest, arrays = read_container(path, CKPT_MAGIC)
    model = FusionModel(ModelSpec.from_dict(manifest["model"]), manifest.get("seed", 0))
    for lname, layer in model.named_layers():
        for group in (layer.params, layer.buffers):
            for key in group:
                full = f"{lname}.{key}"
                if full not in arrays:
                    raise ShapeError(f"{path}: checkpoint lacks tensor {full}")
                if arrays[full].shape != group[key].shape:
                    raise ShapeError(f"{path}: tensor {full} has shape {arrays[full].shape}, "
                                     f"model expects {group[key].shape}")
                group[key] = arrays[full].copy()
    if manifest.get("standardized"):
        model.standardizer = Standardizer(arrays["standardizer.mean"], arrays["standardizer.std"])
    return model, manifest.get("extra", {})
