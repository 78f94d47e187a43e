"""Fused training records and their columnar, cacheable form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..container import read_container, write_container
from ..errors import DecodeError, InputError
from ..preprocess import FRAME_SIZE, FrameGray

DATA_MAGIC = "FALLFUSE-DATA-1"


@dataclass
class FusedExample:
    """One aligned sample: sensor vector + both camera frames + binary label.

    ``sensor`` holds the raw (unstandardized) ``(ax, ay, az, sv_total)``
    followed by any extra multi-sensor channels; standardization is fitted
    on the training split and owned by the model.
    """

    sensor: np.ndarray
    cam1: FrameGray
    cam2: FrameGray
    label: int
    timestamp: int
    subject: int = 0
    trial: int = 0
    activity_id: int = 0


class FusedDataset:
    """Column-oriented collection of fused examples.

    ``sensor`` is ``N x W``, ``cam1``/``cam2`` are ``N x 32 x 32``, and the
    integer columns are length-``N`` int64 arrays.
    """

    INT_COLUMNS = ("label", "timestamp", "subject", "trial", "activity_id", "cam1_timestamp", "cam2_timestamp")

    def __init__(self, sensor, cam1, cam2, label, timestamp, subject=None, trial=None,
                 activity_id=None, cam1_timestamp=None, cam2_timestamp=None):
        self.sensor = np.asarray(sensor, dtype=np.float64)
        self.cam1 = np.asarray(cam1, dtype=np.float64)
        self.cam2 = np.asarray(cam2, dtype=np.float64)
        n = self.sensor.shape[0]
        zeros = np.zeros(n, dtype=np.int64)
        self.label = np.asarray(label, dtype=np.int64)
        self.timestamp = np.asarray(timestamp, dtype=np.int64)
        self.subject = zeros.copy() if subject is None else np.asarray(subject, dtype=np.int64)
        self.trial = zeros.copy() if trial is None else np.asarray(trial, dtype=np.int64)
        self.activity_id = zeros.copy() if activity_id is None else np.asarray(activity_id, dtype=np.int64)
        self.cam1_timestamp = self.timestamp.copy() if cam1_timestamp is None else np.asarray(cam1_timestamp, dtype=np.int64)
        self.cam2_timestamp = self.timestamp.copy() if cam2_timestamp is None else np.asarray(cam2_timestamp, dtype=np.int64)
        self._validate()

    def _validate(self):
        n = len(self)
        if self.sensor.ndim != 2:
            raise InputError(f"sensor must be N x W, got {self.sensor.shape}")
        for name in ("cam1", "cam2"):
            if getattr(self, name).shape != (n, FRAME_SIZE, FRAME_SIZE):
                raise InputError(f"{name} must be N x {FRAME_SIZE} x {FRAME_SIZE}, got {getattr(self, name).shape}")
        for name in self.INT_COLUMNS:
            if getattr(self, name).shape != (n,):
                raise InputError(f"{name} must have length {n}")
        if not np.isin(self.label, (0, 1)).all():
            raise InputError("labels must be 0 or 1")

    def __len__(self):
        return self.sensor.shape[0]

    @property
    def sensor_width(self) -> int:
        return self.sensor.shape[1]

    def subset(self, indices) -> "FusedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return FusedDataset(
            self.sensor[idx], self.cam1[idx], self.cam2[idx],
            **{name: getattr(self, name)[idx] for name in self.INT_COLUMNS})

    def example(self, i: int) -> FusedExample:
        return FusedExample(
            sensor=self.sensor[i].copy(),
            cam1=FrameGray(self.cam1[i].copy(), 1, int(self.cam1_timestamp[i])),
            cam2=FrameGray(self.cam2[i].copy(), 2, int(self.cam2_timestamp[i])),
            label=int(self.label[i]),
            timestamp=int(self.timestamp[i]),
            subject=int(self.subject[i]),
            trial=int(self.trial[i]),
            activity_id=int(self.activity_id[i]),
        )

    def examples(self) -> list[FusedExample]:
        return [self.example(i) for i in range(len(self))]

    @classmethod
    def from_examples(cls, examples) -> "FusedDataset":
        examples = list(examples)
        if not examples:
            raise InputError("cannot build a dataset from zero examples")
        return cls(
            sensor=np.stack([np.asarray(e.sensor, dtype=np.float64) for e in examples]),
            cam1=np.stack([e.cam1.pixels for e in examples]),
            cam2=np.stack([e.cam2.pixels for e in examples]),
            label=[e.label for e in examples],
            timestamp=[e.timestamp for e in examples],
            subject=[e.subject for e in examples],
            trial=[e.trial for e in examples],
            activity_id=[e.activity_id for e in examples],
            cam1_timestamp=[e.cam1.timestamp for e in examples],
            cam2_timestamp=[e.cam2.timestamp for e in examples],
        )

    def prevalence(self) -> float:
        return float(self.label.mean())


def write_cache(path, data: FusedDataset, meta: dict | None = None) -> None:
    """Write ``data`` as a FALLFUSE-DATA-1 container (see :mod:`fallfuse.container`)."""
    arrays = {"sensor": data.sensor, "cam1": data.cam1, "cam2": data.cam2}
    arrays.update({name: getattr(data, name) for name in FusedDataset.INT_COLUMNS})
    manifest = {"format": DATA_MAGIC, "count": len(data), "sensor_width": data.sensor_width,
                "meta": meta or {}}
    write_container(path, DATA_MAGIC, manifest, arrays)


def read_cache(path) -> tuple[FusedDataset, dict]:
    manifest, arrays = read_container(path, DATA_MAGIC)
    try:
        data = FusedDataset(**arrays)
    except (TypeError, InputError) as exc:
        raise DecodeError(f"{path}: malformed data cache: {exc}") from exc
    if len(data) != manifest.get("count"):
        raise DecodeError(f"{path}: manifest count {manifest.get('count')} != stored rows {len(data)}")
    return data, manifest.get("meta", {})
