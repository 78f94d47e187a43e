"""UP-FALL style corpus ingestion: sensor CSVs, camera frame folders, alignment.

Default on-disk layout (every piece is configurable through
:class:`CorpusLayout`)::

    <root>/sensors.csv                                   one or more CSVs (glob)
    <root>/S{subject}/A{activity}/T{trial}/cam{camera}/<timestamp>.png

Timestamps are either integer milliseconds since the Unix epoch or ISO-8601
date-times (naive values are read as UTC). In frame file names the time part
may use ``_`` instead of ``:`` (``2018-07-04T12_04_17.738369.png``), which is
how UP-FALL names its frames.
"""
from __future__ import annotations

import bisect
import csv
import glob
import logging
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..errors import CorpusError, DecodeError, SchemaError
from ..preprocess import (DEFAULT_ACTIVITY_IDS, DEFAULT_FALL_SET, FrameGray, SensorSample, binarize_label,
                          magnitude, preprocess_frame, resize_bilinear)
from .examples import FusedExample

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = {
    "timestamp": "timestamp",
    "ax": "wrist_ax",
    "ay": "wrist_ay",
    "az": "wrist_az",
    "activity": "activity",
    "subject": "subject",
    "trial": "trial",
}
REQUIRED_COLUMNS = ("timestamp", "ax", "ay", "az", "activity")
FRAME_EXTENSIONS = (".png", ".jpg", ".jpeg")
_FRACTION = re.compile(r"\.(\d+)(?=$|[-+Z])")


@dataclass
class CorpusLayout:
    root: Path
    sensor_csv: str = "sensors.csv"
    frame_dir: str = "S{subject}/A{activity}/T{trial}/cam{camera}"
    columns: dict = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    extra_columns: tuple = ()
    subjects: tuple = (1, 2, 3)
    fall_set: frozenset = DEFAULT_FALL_SET
    activity_ids: frozenset = DEFAULT_ACTIVITY_IDS
    tolerance_ms: int = 100

    def __post_init__(self):
        self.root = Path(os.environ.get("FALLFUSE_DATA_ROOT", self.root))
        merged = dict(DEFAULT_COLUMNS)
        merged.update(self.columns or {})
        self.columns = merged
        self.extra_columns = tuple(self.extra_columns)
        self.subjects = tuple(int(s) for s in self.subjects)
        self.fall_set = frozenset(int(a) for a in self.fall_set)
        self.activity_ids = frozenset(int(a) for a in self.activity_ids)


def parse_timestamp(text: str) -> int:
    """Integer ms, or an ISO-8601 date-time (``_`` accepted in place of ``:``)."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
        if np.isfinite(value):
            return int(round(value))
    except ValueError:
        pass
    if "T" in text:
        date, _, clock = text.partition("T")
        text = f"{date}T{clock.replace('_', ':')}"
        # older fromisoformat only takes 3 or 6 fractional digits
        text = _FRACTION.sub(lambda m: "." + (m.group(1) + "000000")[:6], text)
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp() * 1000))


def _sensor_files(layout: CorpusLayout, subjects) -> list[tuple[Path, dict]]:
    pattern = layout.sensor_csv
    files = []
    if "{subject}" in pattern:
        for s in sorted(subjects):
            for p in sorted(glob.glob(str(layout.root / pattern.format(subject=s)))):
                files.append((Path(p), {"subject": s}))
    else:
        files = [(Path(p), {}) for p in sorted(glob.glob(str(layout.root / pattern)))]
    if not files:
        raise CorpusError(f"no sensor CSV matches {layout.root / pattern}")
    return files


def ingest_sensor_csv(layout: CorpusLayout, subjects=None) -> tuple[list[SensorSample], int]:
    """Read wrist-accelerometer rows for ``subjects``.

    Returns ``(samples, dropped)`` where ``dropped`` counts rows whose numeric
    cells (timestamp, axes, activity, extra channels) did not parse. Only the
    configured columns are read; ``sv_total`` is always recomputed.
    """
    subjects = set(layout.subjects if subjects is None else subjects)
    cols = layout.columns
    samples: list[SensorSample] = []
    dropped = 0
    for path, implied in _sensor_files(layout, subjects):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise CorpusError(f"{path}: empty CSV") from None
            pos = {h: i for i, h in enumerate(header)}
            for key in REQUIRED_COLUMNS + ("subject", "trial"):
                name = cols.get(key)
                if key in ("subject", "trial") and (not name or (key in implied and name not in pos)):
                    continue
                if name not in pos:
                    raise SchemaError(f"{path}: missing column {name!r} (for {key})")
            for name in layout.extra_columns:
                if name not in pos:
                    raise SchemaError(f"{path}: missing column {name!r} (extra sensor channel)")
            has_subject = bool(cols.get("subject")) and cols["subject"] in pos
            has_trial = bool(cols.get("trial")) and cols["trial"] in pos
            for row in reader:
                if not row or all(not cell.strip() for cell in row):
                    continue
                try:
                    subject = int(float(row[pos[cols["subject"]]])) if has_subject else implied.get("subject", 0)
                    if subject not in subjects:
                        continue
                    ts = parse_timestamp(row[pos[cols["timestamp"]]])
                    ax, ay, az = (float(row[pos[cols[k]]]) for k in ("ax", "ay", "az"))
                    activity = int(float(row[pos[cols["activity"]]]))
                    trial = int(float(row[pos[cols["trial"]]])) if has_trial else 0
                    extra = tuple(float(row[pos[name]]) for name in layout.extra_columns)
                    if not np.all(np.isfinite((ax, ay, az) + extra)):
                        raise ValueError("non-finite value")
                except (ValueError, IndexError):
                    dropped += 1
                    continue
                samples.append(SensorSample(ts, ax, ay, az, magnitude(ax, ay, az), activity, subject, trial, extra))
    if dropped:
        log.warning("dropped %d sensor rows with unparseable values", dropped)
    if not samples:
        raise CorpusError(f"no sensor rows for subjects {sorted(subjects)}")
    samples.sort(key=lambda s: s.timestamp)
    return samples, dropped


@dataclass(frozen=True)
class FrameRef:
    timestamp: int
    path: Path | None = None
    camera: int = 1
    pixels: np.ndarray | None = field(default=None, compare=False, repr=False)


def _frame_dir_regex(pattern: str) -> re.Pattern:
    parts = re.split(r"(\{subject\}|\{activity\}|\{trial\}|\{camera\})", pattern)
    out = []
    for part in parts:
        if part.startswith("{") and part.endswith("}"):
            out.append(f"(?P<{part[1:-1]}>\\d+)")
        else:
            out.append(re.escape(part))
    return re.compile("".join(out) + "$")


def index_frames(layout: CorpusLayout, camera: int, subjects=None) -> list[FrameRef]:
    """Timestamp-sorted frames of one camera, one entry per timestamp.

    Files whose stem does not parse as a timestamp are skipped with a
    warning; when two files share a timestamp the lexicographically first
    path is kept.
    """
    subjects = set(layout.subjects if subjects is None else subjects)
    dir_glob = layout.frame_dir.format(subject="*", activity="*", trial="*", camera=camera)
    rx = _frame_dir_regex(layout.frame_dir)
    found = []
    for d in sorted(glob.glob(str(layout.root / dir_glob))):
        rel = Path(d).relative_to(layout.root).as_posix()
        m = rx.match(rel)
        if not m:
            continue
        groups = m.groupdict()
        if "subject" in groups and int(groups["subject"]) not in subjects:
            continue
        for f in sorted(Path(d).iterdir()):
            if f.suffix.lower() not in FRAME_EXTENSIONS:
                continue
            try:
                ts = parse_timestamp(f.stem)
            except ValueError:
                log.warning("skipping frame with unparseable name: %s", f)
                continue
            found.append((ts, str(f)))
    found.sort()
    index: list[FrameRef] = []
    for ts, path in found:
        if index and index[-1].timestamp == ts:
            log.warning("duplicate frame timestamp %d: keeping %s, skipping %s", ts, index[-1].path, path)
            continue
        index.append(FrameRef(ts, Path(path), camera))
    if not index:
        raise CorpusError(f"no frames found for camera {camera} under {layout.root / dir_glob}")
    return index


def load_frame(ref: FrameRef) -> FrameGray:
    """Decode, grayscale and resize one frame (PNG/JPEG decoding via Pillow)."""
    if ref.pixels is not None:
        pixels = np.asarray(ref.pixels, dtype=np.float64)
        if pixels.ndim == 3:
            return preprocess_frame(pixels, ref.camera, ref.timestamp)
        return FrameGray(resize_bilinear(pixels), ref.camera, ref.timestamp)
    from PIL import Image, UnidentifiedImageError
    try:
        with Image.open(ref.path) as im:
            rgb = np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise DecodeError(f"cannot decode frame {ref.path}: {exc}") from exc
    return preprocess_frame(rgb, ref.camera, ref.timestamp)


def nearest(index_ts: list[int], t: int) -> int:
    """Position of the entry closest to ``t``; equal distances pick the earlier frame."""
    i = bisect.bisect_left(index_ts, t)
    if i == 0:
        return 0
    if i == len(index_ts):
        return len(index_ts) - 1
    return i if index_ts[i] - t < t - index_ts[i - 1] else i - 1


def align(samples, index_cam1, index_cam2, tolerance_ms: int = 100, fall_set=DEFAULT_FALL_SET,
          activity_ids=DEFAULT_ACTIVITY_IDS, load=load_frame) -> tuple[list[FusedExample], int]:
    """Pair each sensor sample with the nearest frame of each camera.

    A sample is kept only when both cameras have a frame within
    ``tolerance_ms``. Returns ``(examples, unmatched)``; output follows
    sensor timestamp order. Decoded frames are memoized per frame.
    """
    ts1 = [f.timestamp for f in index_cam1]
    ts2 = [f.timestamp for f in index_cam2]
    decoded: dict[tuple[int, int], FrameGray] = {}

    def frame(cam, refs, i):
        key = (cam, i)
        if key not in decoded:
            decoded[key] = load(refs[i])
        return decoded[key]

    out = []
    unmatched = 0
    for s in sorted(samples, key=lambda s: s.timestamp):
        if not ts1 or not ts2:
            unmatched += 1
            continue
        i1 = nearest(ts1, s.timestamp)
        i2 = nearest(ts2, s.timestamp)
        if abs(ts1[i1] - s.timestamp) > tolerance_ms or abs(ts2[i2] - s.timestamp) > tolerance_ms:
            unmatched += 1
            continue
        sensor = np.array((s.ax, s.ay, s.az, s.sv_total) + tuple(s.extra), dtype=np.float64)
        out.append(FusedExample(
            sensor=sensor,
            cam1=frame(1, index_cam1, i1),
            cam2=frame(2, index_cam2, i2),
            label=binarize_label(s.activity_id, fall_set, activity_ids),
            timestamp=s.timestamp,
            subject=s.subject,
            trial=s.trial,
            activity_id=s.activity_id,
        ))
    if unmatched:
        log.info("%d sensor samples had no frame pair within %d ms", unmatched, tolerance_ms)
    return out, unmatched


def load_corpus(layout: CorpusLayout) -> list[FusedExample]:
    """Ingest, index and align a real corpus in one call."""
    samples, _ = ingest_sensor_csv(layout)
    cam1 = index_frames(layout, 1)
    cam2 = index_frames(layout, 2)
    examples, _ = align(samples, cam1, cam2, layout.tolerance_ms, layout.fall_set, layout.activity_ids)
    if not examples:
        raise CorpusError("alignment produced no fused examples; check timestamps and tolerance_ms")
    return examples
