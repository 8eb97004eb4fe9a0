"""Event stream data model: types, stream hygiene, and coordinate transforms.

An event stream is a time-ordered set of (t, x, y, p) records plus the sensor
geometry that produced it.  Raw streams carry integer-microsecond timestamps;
the time axis is retagged "scaled" once it has been normalized for
voxelization.  All operations are pure: they return new streams and never
mutate their input.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError, ValidationError

MICROSECONDS = "microseconds"
SCALED = "scaled"

_TIME_UNITS = (MICROSECONDS, SCALED)


@dataclass(frozen=True)
class SensorGeometry:
    """Pixel dimensions of the sensor (and of every grid built from it)."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"sensor geometry must be at least 1x1, got {self.width}x{self.height}"
            )

    @property
    def center(self) -> tuple[float, float]:
        """Grid-frame center ((W-1)/2, (H-1)/2)."""
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)


@dataclass(frozen=True)
class Event:
    """A single event: timestamp, pixel position, and polarity (+1 or -1)."""

    t: float
    x: float
    y: float
    p: int

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise ValidationError(f"polarity must be -1 or +1, got {self.p}")


@dataclass(frozen=True)
class Flow:
    """Constant pixel velocity (pixels per unit of the stream's time axis)."""

    vx: float
    vy: float

    def __post_init__(self):
        if not (math.isfinite(self.vx) and math.isfinite(self.vy)):
            raise ValidationError(f"flow must be finite, got ({self.vx}, {self.vy})")

    def __add__(self, other: "Flow") -> "Flow":
        return Flow(self.vx + other.vx, self.vy + other.vy)

    def magnitude(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class LandmarkEstimate:
    """A reference point used to center a stream before normalization."""

    lx: float
    ly: float

    def __post_init__(self):
        if not (math.isfinite(self.lx) and math.isfinite(self.ly)):
            raise ValidationError(f"landmark must be finite, got ({self.lx}, {self.ly})")


@dataclass(frozen=True)
class EventStream:
    """Struct-of-arrays event container.

    Coordinates and timestamps are float64 even for raw integer pixels so the
    same type serves pre- and post-transform streams.  Arrays are marked
    read-only; derive modified streams through the module-level operations.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    geometry: SensorGeometry
    time_unit: str = MICROSECONDS

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.float64)
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        p = np.ascontiguousarray(self.p, dtype=np.int8)
        if not (t.ndim == x.ndim == y.ndim == p.ndim == 1):
            raise ValidationError("event arrays must be one-dimensional")
        if not (t.size == x.size == y.size == p.size):
            raise ValidationError("event arrays must have equal length")
        if p.size and not np.all(np.abs(p) == 1):
            bad = int(np.flatnonzero(np.abs(p) != 1)[0])
            raise ValidationError(f"polarity must be -1 or +1 (event {bad})")
        if self.time_unit not in _TIME_UNITS:
            raise ValidationError(f"unknown time unit {self.time_unit!r}")
        for arr, name in ((t, "t"), (x, "x"), (y, "y"), (p, "p")):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.t.size

    @classmethod
    def from_events(
        cls,
        events: list[Event],
        geometry: SensorGeometry,
        time_unit: str = MICROSECONDS,
    ) -> "EventStream":
        t = np.array([e.t for e in events], dtype=np.float64)
        x = np.array([e.x for e in events], dtype=np.float64)
        y = np.array([e.y for e in events], dtype=np.float64)
        p = np.array([e.p for e in events], dtype=np.int8)
        return cls(t, x, y, p, geometry, time_unit)

    @property
    def events(self) -> list[Event]:
        """Materialize the stream as Event objects (small streams only)."""
        return [
            Event(float(t), float(x), float(y), int(p))
            for t, x, y, p in zip(self.t, self.x, self.y, self.p)
        ]

    def _with(self, **changes) -> "EventStream":
        return replace(self, **changes)


def canonicalize(stream: EventStream) -> EventStream:
    """Sort events by (t, y, x, p) ascending and reject non-finite values.

    Idempotent; the multiset of events is preserved.  The tie-break order
    makes every downstream accumulation deterministic.
    """
    for arr, name in ((stream.t, "t"), (stream.x, "x"), (stream.y, "y")):
        finite = np.isfinite(arr)
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise ValidationError(f"non-finite {name} at event {bad}")
    order = np.lexsort((stream.p, stream.x, stream.y, stream.t))
    return stream._with(
        t=stream.t[order], x=stream.x[order], y=stream.y[order], p=stream.p[order]
    )


def zero_time(stream: EventStream) -> EventStream:
    """Shift timestamps so the oldest event sits at t = 0."""
    if len(stream) == 0:
        raise ValidationError("cannot zero an empty stream")
    if stream.t[0] != stream.t.min():
        raise ValidationError("stream is not in canonical order")
    return stream._with(t=stream.t - stream.t[0])


def scale_time(stream: EventStream, target_max: float) -> EventStream:
    """Rescale zeroed timestamps linearly onto [0, target_max].

    When every timestamp coincides the whole stream maps to 0 (the degenerate
    stream stays voxelizable instead of dividing by zero).
    """
    if target_max <= 0:
        raise ValidationError(f"target_max must be positive, got {target_max}")
    if len(stream) == 0:
        raise ValidationError("cannot scale an empty stream")
    if stream.t[0] != 0:
        raise ValidationError("scale_time expects a zeroed stream")
    span = stream.t[-1] - stream.t[0]
    if span == 0:
        scaled = np.zeros_like(stream.t)
    else:
        scaled = target_max * (stream.t / span)
    return stream._with(t=scaled, time_unit=SCALED)


def apply_flow(stream: EventStream, flow: Flow) -> EventStream:
    """Shear event positions by the constant-velocity motion model.

    Each event moves to (x + vx*t, y + vy*t) in the stream's current time
    unit; timestamps are untouched.
    """
    return stream._with(
        x=stream.x + flow.vx * stream.t, y=stream.y + flow.vy * stream.t
    )


def translate(stream: EventStream, sx: float, sy: float) -> EventStream:
    """Shift every event position by (sx, sy)."""
    return stream._with(x=stream.x + sx, y=stream.y + sy)


def centroid(stream: EventStream) -> LandmarkEstimate:
    """Unweighted mean event position; polarity is ignored.

    Equal weighting keeps the estimate exactly covariant with translation:
    centroid(translate(E, s)) == centroid(E) + s.
    """
    if len(stream) == 0:
        raise ValidationError("centroid of an empty stream is undefined")
    return LandmarkEstimate(float(stream.x.mean()), float(stream.y.mean()))


def center(stream: EventStream, landmark: LandmarkEstimate) -> EventStream:
    """Translate the stream so the landmark moves to the origin."""
    return translate(stream, -landmark.lx, -landmark.ly)


# ---------------------------------------------------------------------------
# EVT1 binary format and CSV alternative
# ---------------------------------------------------------------------------

EVT1_MAGIC = b"EVT1"
EVT1_VERSION = 1
_EVT1_HEADER = struct.Struct("<4sIHHQ")
_EVT1_RECORD = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1")]
)
assert _EVT1_RECORD.itemsize == 14

_CSV_HEADER = ["t_us", "x", "y", "p"]


def _require_raw_integral(stream: EventStream) -> None:
    if stream.time_unit != MICROSECONDS:
        raise ValidationError("only raw microsecond streams can be serialized")
    w, h = stream.geometry.width, stream.geometry.height
    if len(stream) == 0:
        return
    if stream.t.min() < 0 or np.any(stream.t != np.floor(stream.t)):
        raise ValidationError("raw timestamps must be non-negative integers")
    for arr, name, hi in ((stream.x, "x", w - 1), (stream.y, "y", h - 1)):
        if np.any(arr != np.floor(arr)) or arr.size and (arr.min() < 0 or arr.max() > hi):
            raise ValidationError(f"raw {name} coordinates must be integers in [0, {hi}]")


def write_evt1(stream: EventStream, path) -> None:
    """Write a raw stream as an EVT1 binary file (14 bytes per record)."""
    _require_raw_integral(stream)
    records = np.zeros(len(stream), dtype=_EVT1_RECORD)
    records["t"] = stream.t.astype(np.uint64)
    records["x"] = stream.x.astype(np.uint16)
    records["y"] = stream.y.astype(np.uint16)
    records["p"] = stream.p
    header = _EVT1_HEADER.pack(
        EVT1_MAGIC,
        EVT1_VERSION,
        stream.geometry.width,
        stream.geometry.height,
        len(stream),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def read_evt1(path) -> EventStream:
    """Read an EVT1 file, rejecting bad magic, version, polarity, or truncation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _EVT1_HEADER.size:
        raise FormatError("truncated EVT1 header")
    magic, version, width, height, count = _EVT1_HEADER.unpack_from(blob)
    if magic != EVT1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EVT1_MAGIC!r}")
    if version != EVT1_VERSION:
        raise FormatError(f"unsupported EVT1 version {version}")
    payload = blob[_EVT1_HEADER.size :]
    need = count * _EVT1_RECORD.itemsize
    if len(payload) < need:
        raise FormatError(
            f"truncated EVT1 payload: {len(payload)} bytes for {count} records"
        )
    records = np.frombuffer(payload[:need], dtype=_EVT1_RECORD)
    if count and not np.all(np.abs(records["p"]) == 1):
        bad = int(np.flatnonzero(np.abs(records["p"]) != 1)[0])
        raise FormatError(f"bad polarity value at record {bad}")
    return EventStream(
        t=records["t"].astype(np.float64),
        x=records["x"].astype(np.float64),
        y=records["y"].astype(np.float64),
        p=records["p"].astype(np.int8),
        geometry=SensorGeometry(width, height),
        time_unit=MICROSECONDS,
    )


def write_csv(stream: EventStream, path) -> None:
    """Write a raw stream as CSV with header t_us,x,y,p."""
    _require_raw_integral(stream)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p):
            writer.writerow([int(t), int(x), int(y), int(p)])


def read_csv(path, geometry: SensorGeometry) -> EventStream:
    """Read the CSV alternative of the EVT1 format."""
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty event CSV") from None
        if header != _CSV_HEADER:
            raise FormatError(f"bad event CSV header {header!r}")
        rows = list(reader)
    t = np.empty(len(rows), dtype=np.float64)
    x = np.empty(len(rows), dtype=np.float64)
    y = np.empty(len(rows), dtype=np.float64)
    p = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) != 4:
            raise FormatError(f"bad field count at CSV row {i + 1}")
        try:
            t[i], x[i], y[i], p[i] = (float(v) for v in row)
        except ValueError:
            raise FormatError(f"unparseable value at CSV row {i + 1}") from None
    if len(rows) and not np.all(np.abs(p) == 1):
        bad = int(np.flatnonzero(np.abs(p) != 1)[0])
        raise FormatError(f"bad polarity value at CSV row {bad + 1}")
    return EventStream(t, x, y, p.astype(np.int8), geometry, MICROSECONDS)
