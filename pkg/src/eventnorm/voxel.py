"""Discretized event volumes built by trilinear insertion.

Each event deposits its polarity into the eight grid cells surrounding its
(x, y, t) position, weighted by the linear kernel max(0, 1 - |a|) along each
axis.  Contributions aimed at cells outside the W x H x B grid are discarded,
which is how out-of-frame events are omitted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .events import SCALED, EventStream, SensorGeometry


@dataclass(frozen=True)
class EventVolume:
    """W x H x B grid of signed float64 polarity mass.

    data is stored bin-major as (bins, height, width); entry [b, y, x] is the
    cell at spatial (x, y) and temporal bin b.  Entries may be negative
    (polarities are summed, not counted).
    """

    data: np.ndarray
    geometry: SensorGeometry
    bins: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        expected = (self.bins, self.geometry.height, self.geometry.width)
        if data.shape != expected:
            raise ValidationError(f"volume shape {data.shape} != {expected}")
        if not np.isfinite(data).all():
            raise ValidationError("volume entries must be finite")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def value(self, ix: int, iy: int, ib: int) -> float:
        """Cell value at spatial (ix, iy), bin ib."""
        return float(self.data[ib, iy, ix])


def linear_kernel(a):
    """Triangular insertion weight max(0, 1 - |a|)."""
    return np.maximum(0.0, 1.0 - np.abs(a))


def build(stream: EventStream, geometry: SensorGeometry, bins: int) -> EventVolume:
    """Accumulate a grid-frame scaled stream into an event volume.

    Accumulation runs in stream (canonical) order, event by event, so the
    result is bit-identical across runs regardless of how events cancel.
    """
    if stream.geometry != geometry:
        raise ValidationError(
            f"stream geometry {stream.geometry} does not match {geometry}"
        )
    if stream.time_unit != SCALED:
        raise ValidationError("build requires a stream in scaled time")
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    w, h = geometry.width, geometry.height
    flat = np.zeros(w * h * bins, dtype=np.float64)
    n = len(stream)
    if n:
        x0 = np.floor(stream.x)
        y0 = np.floor(stream.y)
        b0 = np.floor(stream.t)
        fx = stream.x - x0
        fy = stream.y - y0
        fb = stream.t - b0

        # Corner order is fixed (x fastest, then y, then bin) so the single
        # scatter below deposits event-major, corner-minor.
        cx = np.stack([x0, x0 + 1], axis=1).astype(np.int64)  # (n, 2)
        cy = np.stack([y0, y0 + 1], axis=1).astype(np.int64)
        cb = np.stack([b0, b0 + 1], axis=1).astype(np.int64)
        wx = np.stack([1.0 - fx, fx], axis=1)
        wy = np.stack([1.0 - fy, fy], axis=1)
        wb = np.stack([1.0 - fb, fb], axis=1)

        p = stream.p.astype(np.float64)
        # (n, bin, y, x) -> (n, 8)
        weights = (
            p[:, None, None, None]
            * wb[:, :, None, None]
            * wy[:, None, :, None]
            * wx[:, None, None, :]
        ).reshape(n, 8)
        ix = np.broadcast_to(cx[:, None, None, :], (n, 2, 2, 2)).reshape(n, 8)
        iy = np.broadcast_to(cy[:, None, :, None], (n, 2, 2, 2)).reshape(n, 8)
        ib = np.broadcast_to(cb[:, :, None, None], (n, 2, 2, 2)).reshape(n, 8)

        valid = (
            (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h) & (ib >= 0) & (ib < bins)
        ).reshape(-1)
        idx = ((ib * h + iy) * w + ix).reshape(-1)[valid]
        np.add.at(flat, idx, weights.reshape(-1)[valid])
    return EventVolume(flat.reshape(bins, h, w), geometry, bins)


def shift(volume: EventVolume, dx: int, dy: int) -> EventVolume:
    """Translate the volume by integer (dx, dy) in space with zero fill."""
    if dx != int(dx) or dy != int(dy):
        raise ValidationError("shift requires integer offsets")
    dx, dy = int(dx), int(dy)
    w, h = volume.geometry.width, volume.geometry.height
    out = np.zeros_like(volume.data)
    sx0, sx1 = max(0, -dx), min(w, w - dx)
    sy0, sy1 = max(0, -dy), min(h, h - dy)
    if sx0 < sx1 and sy0 < sy1:
        out[:, sy0 + dy : sy1 + dy, sx0 + dx : sx1 + dx] = volume.data[
            :, sy0:sy1, sx0:sx1
        ]
    return EventVolume(out, volume.geometry, volume.bins)


def max_abs_diff(a: EventVolume, b: EventVolume, margin: int = 0) -> float:
    """Infinity norm of (a - b), optionally over an interior spatial region."""
    if a.data.shape != b.data.shape:
        raise ValidationError(f"volume shapes differ: {a.data.shape} vs {b.data.shape}")
    if margin < 0:
        raise ValidationError("margin must be >= 0")
    w, h = a.geometry.width, a.geometry.height
    if 2 * margin >= min(w, h):
        raise ValidationError(f"margin {margin} leaves no interior for {w}x{h}")
    region = np.s_[:, margin : h - margin, margin : w - margin]
    return float(np.abs(a.data[region] - b.data[region]).max())


# ---------------------------------------------------------------------------
# VOL1 binary format
# ---------------------------------------------------------------------------

VOL1_MAGIC = b"VOL1"
VOL1_VERSION = 1
_VOL1_HEADER = struct.Struct("<4sIHHHH")


def write_vol1(volume: EventVolume, path) -> None:
    """Write a volume as VOL1: header then float64 cells, bin-major."""
    header = _VOL1_HEADER.pack(
        VOL1_MAGIC,
        VOL1_VERSION,
        volume.geometry.width,
        volume.geometry.height,
        volume.bins,
        0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(volume.data.astype("<f8").tobytes())


def read_vol1(path) -> EventVolume:
    """Read a VOL1 file, rejecting bad magic, version, or truncation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _VOL1_HEADER.size:
        raise FormatError("truncated VOL1 header")
    magic, version, width, height, bins, _pad = _VOL1_HEADER.unpack_from(blob)
    if magic != VOL1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VOL1_MAGIC!r}")
    if version != VOL1_VERSION:
        raise FormatError(f"unsupported VOL1 version {version}")
    payload = blob[_VOL1_HEADER.size :]
    need = width * height * bins * 8
    if len(payload) < need:
        raise FormatError(
            f"truncated VOL1 payload: {len(payload)} bytes for {width}x{height}x{bins}"
        )
    data = np.frombuffer(payload[:need], dtype="<f8").reshape(bins, height, width)
    return EventVolume(data, SensorGeometry(width, height), bins)
