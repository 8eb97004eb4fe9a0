"""Event-camera simulator and synthetic dataset generator.

Intensity frames are rendered by sliding a glyph pattern along a trajectory;
events fire whenever a pixel's log intensity drifts more than a threshold away
from its per-pixel reference level, with sub-frame timestamps interpolated at
the individual threshold crossings.  The dataset generator sweeps a set of
motion directions over the built-in glyphs and writes one EVT1 file per
(class, motion, sample) cell plus a JSON manifest, all fully determined by the
config seed.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .events import (
    EventStream,
    Flow,
    SensorGeometry,
    canonicalize,
    write_evt1,
)

# 5x7 digit bitmaps ('#' = on), upscaled to 20x20 for use as patterns.
_GLYPH_ROWS = {
    0: (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    1: ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    2: (".###.", "#...#", "....#", "..##.", ".#...", "#....", "#####"),
    3: (".###.", "#...#", "....#", ".###.", "....#", "#...#", ".###."),
    4: ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    5: ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    6: (".###.", "#....", "####.", "#...#", "#...#", "#...#", ".###."),
    7: ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    8: (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    9: (".###.", "#...#", "#...#", ".####", "....#", "#...#", ".###."),
}

GLYPH_SIZE = 20


def glyph_bitmap(glyph_id: int) -> np.ndarray:
    """Return one of the 10 built-in digit glyphs as a 20x20 float bitmap.

    The 5x7 master is upscaled bilinearly so stroke boundaries become smooth
    ramps with intensity gradients in every orientation, the way rendered or
    photographed digits look to the simulator.
    """
    if glyph_id not in _GLYPH_ROWS:
        raise ValidationError(f"glyph id must be in 0..9, got {glyph_id}")
    rows = _GLYPH_ROWS[glyph_id]
    small = np.array([[1.0 if c == "#" else 0.0 for c in row] for row in rows])
    h, w = small.shape

    def axis_samples(n_out, n_in):
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        lo = np.clip(np.floor(pos), 0, n_in - 1).astype(np.int64)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(pos - lo, 0.0, 1.0)
        return lo, hi, frac

    y0, y1, fy = axis_samples(GLYPH_SIZE, h)
    x0, x1, fx = axis_samples(GLYPH_SIZE, w)
    top = (1 - fx)[None, :] * small[np.ix_(y0, x0)] + fx[None, :] * small[np.ix_(y0, x1)]
    bot = (1 - fx)[None, :] * small[np.ix_(y1, x0)] + fx[None, :] * small[np.ix_(y1, x1)]
    return (1 - fy)[:, None] * top + fy[:, None] * bot


@dataclass(frozen=True)
class PatternSource:
    """A glyph bitmap plus the photometric levels it is rendered with.

    Rendered linear intensity is background + contrast * bitmap, so the
    bitmap must stay in [0, 1].
    """

    bitmap: np.ndarray
    background: float = 0.2
    contrast: float = 1.0

    def __post_init__(self):
        bitmap = np.ascontiguousarray(self.bitmap, dtype=np.float64)
        if bitmap.ndim != 2:
            raise ValidationError("pattern bitmap must be 2-D")
        if bitmap.size == 0 or bitmap.min() < 0 or bitmap.max() > 1:
            raise ValidationError("pattern bitmap values must lie in [0, 1]")
        if self.background < 0 or self.background + self.contrast < 0:
            raise ValidationError("pattern intensity levels must be non-negative")
        bitmap.flags.writeable = False
        object.__setattr__(self, "bitmap", bitmap)

    @classmethod
    def from_image(cls, image: np.ndarray, background: float = 0.2,
                   contrast: float = 1.0) -> "PatternSource":
        """Build a pattern from an external image (e.g. one IDX digit)."""
        img = np.asarray(image, dtype=np.float64)
        if img.size and img.max() > 1.0:
            img = img / 255.0
        return cls(img, background, contrast)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant motion: ordered (duration_seconds, Flow) segments."""

    segments: tuple

    def __post_init__(self):
        segs = tuple((float(d), f) for d, f in self.segments)
        if not segs:
            raise ValidationError("trajectory needs at least one segment")
        for d, f in segs:
            if not (d > 0):
                raise ValidationError(f"segment durations must be positive, got {d}")
            if not isinstance(f, Flow):
                raise ValidationError("segment motion must be a Flow")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def constant(cls, flow: Flow, duration: float) -> "Trajectory":
        return cls(((duration, flow),))

    @property
    def duration(self) -> float:
        return sum(d for d, _ in self.segments)

    def displacement(self, t: float) -> tuple[float, float]:
        """Accumulated (dx, dy) after t seconds of motion."""
        dx = dy = 0.0
        remaining = t
        for d, f in self.segments:
            step = min(remaining, d)
            if step <= 0:
                break
            dx += f.vx * step
            dy += f.vy * step
            remaining -= step
        return dx, dy


@dataclass(frozen=True)
class SimParams:
    """Simulator settings.

    epsilon is the log-intensity trigger threshold; intensity_floor is added
    before the log so black pixels stay finite.  noise_rate is expressed in
    spurious events per pixel per second.
    """

    epsilon: float = 0.15
    frame_rate: float = 200.0
    duration: float = 0.3
    intensity_floor: float = 1e-3
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.frame_rate > 0):
            raise ValidationError(f"frame_rate must be positive, got {self.frame_rate}")
        if not (self.intensity_floor > 0):
            raise ValidationError("intensity_floor must be positive")
        if self.noise_rate < 0:
            raise ValidationError("noise_rate must be >= 0")


def render(pattern: PatternSource, offset: tuple[float, float],
           geometry: SensorGeometry) -> np.ndarray:
    """Render the pattern at a (possibly fractional) offset onto the canvas.

    The glyph's pixel (0, 0) lands at canvas position `offset`; sampling is
    bilinear with zero glyph intensity outside the bitmap, so integer offsets
    copy the bitmap exactly and off-canvas offsets yield pure background.
    """
    ox, oy = offset
    h, w = pattern.bitmap.shape
    gx = np.arange(geometry.width, dtype=np.float64) - ox
    gy = np.arange(geometry.height, dtype=np.float64) - oy

    # Two zero columns/rows on each side: clipping the base index into
    # [-2, w] keeps every out-of-bitmap sample on zero cells for BOTH corners
    # regardless of its fractional weight (one pad cell would alias the
    # bitmap border into far-away pixels).
    padded = np.zeros((h + 4, w + 4))
    padded[2 : h + 2, 2 : w + 2] = pattern.bitmap

    x0 = np.floor(gx)
    y0 = np.floor(gy)
    fx = gx - x0
    fy = gy - y0
    xi = np.clip(x0, -2, w).astype(np.int64) + 2
    yi = np.clip(y0, -2, h).astype(np.int64) + 2

    rows = (1.0 - fy)[:, None] * padded[yi] + fy[:, None] * padded[yi + 1]
    value = (1.0 - fx)[None, :] * rows[:, xi] + fx[None, :] * rows[:, xi + 1]
    return pattern.background + pattern.contrast * value


def generate_events(pattern: PatternSource, trajectory: Trajectory,
                    params: SimParams, geometry: SensorGeometry,
                    origin: tuple[float, float] = (0.0, 0.0)) -> EventStream:
    """Simulate an event stream for a pattern moving along a trajectory.

    Per pixel, a reference log intensity is initialized from the first frame.
    For each subsequent frame, k = floor(|delta| / epsilon) events fire with
    polarity sign(delta), timestamped at the linearly interpolated crossing
    fractions j*epsilon/|delta| within the frame interval, and the reference
    advances by k*epsilon*sign(delta) (the sub-threshold residue carries
    over).  Timestamps are rounded to integer microseconds and the output is
    canonical.
    """
    duration = trajectory.duration
    if not (duration > 0):
        raise ValidationError("trajectory duration must be positive")
    n_steps = int(round(duration * params.frame_rate))
    if n_steps < 1:
        raise ValidationError("frame interval exceeds the trajectory duration")
    times = np.linspace(0.0, duration, n_steps + 1)
    eps = params.epsilon

    ox, oy = origin
    frame = render(pattern, (ox, oy), geometry)
    log_ref = np.log(frame + params.intensity_floor)

    ts_parts, xs_parts, ys_parts, ps_parts = [], [], [], []
    for k in range(1, n_steps + 1):
        t0, t1 = times[k - 1], times[k]
        dx, dy = trajectory.displacement(t1)
        frame = render(pattern, (ox + dx, oy + dy), geometry)
        log_cur = np.log(frame + params.intensity_floor)
        delta = log_cur - log_ref
        mag = np.abs(delta)
        count = np.floor(mag / eps).astype(np.int64)
        sign = np.sign(delta)
        active = count > 0
        if active.any():
            iy, ix = np.nonzero(active)
            reps = count[active]
            cum = np.cumsum(reps)
            j = np.arange(1, cum[-1] + 1) - np.repeat(cum - reps, reps)
            frac = j * eps / np.repeat(mag[active], reps)
            ts_parts.append(t0 + frac * (t1 - t0))
            xs_parts.append(np.repeat(ix, reps).astype(np.float64))
            ys_parts.append(np.repeat(iy, reps).astype(np.float64))
            ps_parts.append(np.repeat(sign[active], reps).astype(np.int8))
        log_ref = log_ref + count * eps * sign

    if params.noise_rate > 0:
        rng = np.random.default_rng(params.seed)
        lam = params.noise_rate * geometry.width * geometry.height * duration
        n_noise = int(rng.poisson(lam))
        if n_noise:
            ts_parts.append(rng.uniform(0.0, duration, n_noise))
            xs_parts.append(rng.integers(0, geometry.width, n_noise).astype(np.float64))
            ys_parts.append(rng.integers(0, geometry.height, n_noise).astype(np.float64))
            ps_parts.append(rng.choice(np.array([-1, 1], dtype=np.int8), n_noise))

    if ts_parts:
        t_us = np.rint(np.concatenate(ts_parts) * 1e6)
        x = np.concatenate(xs_parts)
        y = np.concatenate(ys_parts)
        p = np.concatenate(ps_parts)
    else:
        t_us = np.empty(0)
        x = np.empty(0)
        y = np.empty(0)
        p = np.empty(0, dtype=np.int8)
    stream = EventStream(t_us, x, y, p, geometry)
    return canonicalize(stream)


def motion_set(n: int, speed: float) -> list[Flow]:
    """n flows of uniform magnitude `speed`, at angles 2*pi*k/n."""
    if n < 1:
        raise ValidationError(f"motion count must be >= 1, got {n}")
    return [
        Flow(speed * math.cos(2 * math.pi * k / n), speed * math.sin(2 * math.pi * k / n))
        for k in range(n)
    ]


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "width", "height", "bins", "classes", "motions", "samples_per_cell",
    "duration_s", "frame_rate", "epsilon", "noise_rate", "contrast_range",
    "offset_jitter_px", "seed",
}
_MOTION_KEYS = {"count", "speed_px_per_s"}


@dataclass(frozen=True)
class DatasetConfig:
    width: int
    height: int
    classes: tuple
    motion_count: int
    motion_speed: float
    samples_per_cell: int
    bins: int = 9
    duration_s: float = 0.3
    frame_rate: float = 200.0
    epsilon: float = 0.15
    noise_rate: float = 0.0
    contrast_range: tuple = (0.9, 1.1)
    offset_jitter_px: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not self.classes:
            raise ValidationError("class list must not be empty")
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        object.__setattr__(self, "contrast_range", tuple(float(v) for v in self.contrast_range))
        lo, hi = self.contrast_range
        if not (0 < lo <= hi):
            raise ValidationError(f"bad contrast range [{lo}, {hi}]")
        if self.samples_per_cell < 1:
            raise ValidationError("samples_per_cell must be >= 1")
        if self.motion_count < 1:
            raise ValidationError("motion count must be >= 1")
        if self.offset_jitter_px < 0:
            raise ValidationError("offset_jitter_px must be >= 0")

    @classmethod
    def from_dict(cls, cfg: dict) -> "DatasetConfig":
        unknown = set(cfg) - _CONFIG_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        missing = {"width", "height", "classes", "motions", "samples_per_cell"} - set(cfg)
        if missing:
            raise ValidationError(f"missing config keys: {sorted(missing)}")
        motions = cfg["motions"]
        if not isinstance(motions, dict) or set(motions) != _MOTION_KEYS:
            raise ValidationError("motions must be {count, speed_px_per_s}")
        kwargs = dict(
            width=int(cfg["width"]),
            height=int(cfg["height"]),
            classes=tuple(cfg["classes"]),
            motion_count=int(motions["count"]),
            motion_speed=float(motions["speed_px_per_s"]),
            samples_per_cell=int(cfg["samples_per_cell"]),
        )
        for key in ("bins", "duration_s", "frame_rate", "epsilon", "noise_rate",
                    "offset_jitter_px", "seed"):
            if key in cfg:
                kwargs[key] = cfg[key]
        if "contrast_range" in cfg:
            kwargs["contrast_range"] = tuple(cfg["contrast_range"])
        return cls(**kwargs)


def _sample_seed(seed: int, label: int, motion: int, sample: int) -> int:
    ss = np.random.SeedSequence((seed, label, motion, sample))
    return int(ss.generate_state(1)[0])


def generate_dataset(config: DatasetConfig, out_dir) -> dict:
    """Write EVT1 files plus manifest.json for every (class, motion, sample).

    Start offset, contrast, and noise seeds are drawn from per-sample
    generators derived deterministically from (seed, class, motion, sample),
    so the same config always produces byte-identical output.
    """
    os.makedirs(out_dir, exist_ok=True)
    geometry = SensorGeometry(config.width, config.height)
    flows = motion_set(config.motion_count, config.motion_speed)
    cx, cy = geometry.center
    lo, hi = config.contrast_range

    samples = []
    for label, glyph_id in enumerate(config.classes):
        bitmap = glyph_bitmap(glyph_id)
        gh, gw = bitmap.shape
        for motion_id, flow in enumerate(flows):
            for s in range(config.samples_per_cell):
                seed = _sample_seed(config.seed, label, motion_id, s)
                rng = np.random.default_rng(seed)
                contrast = float(rng.uniform(lo, hi))
                jx, jy = rng.uniform(-config.offset_jitter_px,
                                     config.offset_jitter_px, 2)
                noise_seed = int(rng.integers(0, 2**63 - 1))

                pattern = PatternSource(bitmap, contrast=contrast)
                disp_x = flow.vx * config.duration_s
                disp_y = flow.vy * config.duration_s
                origin = (
                    cx - (gw - 1) / 2.0 - disp_x / 2.0 + jx,
                    cy - (gh - 1) / 2.0 - disp_y / 2.0 + jy,
                )
                params = SimParams(
                    epsilon=config.epsilon,
                    frame_rate=config.frame_rate,
                    duration=config.duration_s,
                    noise_rate=config.noise_rate,
                    seed=noise_seed,
                )
                stream = generate_events(
                    pattern, Trajectory.constant(flow, config.duration_s),
                    params, geometry, origin,
                )
                name = f"c{glyph_id}_m{motion_id:02d}_s{s:03d}.evt1"
                write_evt1(stream, os.path.join(out_dir, name))
                samples.append({
                    "path": name,
                    "label": label,
                    "motion_id": motion_id,
                    "vx": flow.vx,
                    "vy": flow.vy,
                    "seed": seed,
                })

    manifest = {
        "geometry": {"width": config.width, "height": config.height},
        "classes": list(config.classes),
        "samples": samples,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


_SAMPLE_KEYS = {"path", "label", "motion_id", "vx", "vy", "seed"}


def load_manifest(path) -> dict:
    """Read and schema-check a dataset manifest."""
    with open(path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict) or set(manifest) != {"geometry", "classes", "samples"}:
        raise FormatError("manifest must have keys geometry, classes, samples")
    geom = manifest["geometry"]
    if not isinstance(geom, dict) or set(geom) != {"width", "height"}:
        raise FormatError("manifest geometry must have keys width, height")
    for i, sample in enumerate(manifest["samples"]):
        if not isinstance(sample, dict) or set(sample) != _SAMPLE_KEYS:
            raise FormatError(f"bad manifest sample entry at index {i}")
    return manifest


# ---------------------------------------------------------------------------
# MNIST-style IDX container (big-endian)
# ---------------------------------------------------------------------------

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def _read_idx(path, magic_expected: int, ndim: int) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    header_size = 4 + 4 * ndim
    if len(blob) < 4:
        raise FormatError("truncated IDX header")
    (magic,) = struct.unpack_from(">I", blob)
    if magic != magic_expected:
        raise FormatError(
            f"bad IDX magic 0x{magic:08x}, expected 0x{magic_expected:08x}"
        )
    if len(blob) < header_size:
        raise FormatError("truncated IDX dimension table")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    need = int(np.prod(dims))
    payload = blob[header_size:]
    if len(payload) < need:
        raise FormatError(f"truncated IDX payload: {len(payload)} bytes for {dims}")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Read an IDX unsigned-byte image tensor as (count, height, width)."""
    return _read_idx(path, IDX_IMAGE_MAGIC, 3)


def read_idx_labels(path) -> np.ndarray:
    """Read an IDX unsigned-byte label vector."""
    return _read_idx(path, IDX_LABEL_MAGIC, 1)
