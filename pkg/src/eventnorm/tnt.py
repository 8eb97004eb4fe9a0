"""Temporal normalization transform and the stream preparation pipelines.

The transform divides each event position by its (scaled) timestamp, which
turns constant-velocity motion into a pure spatial translation of the
normalized stream.  `prepare` wires the full baseline and normalized
pipelines, including landmark centering and the mapping back into the sensor
grid frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .events import (
    SCALED,
    EventStream,
    Flow,
    LandmarkEstimate,
    apply_flow,
    center,
    centroid,
    scale_time,
    translate,
    zero_time,
)

CENTER_MODES = ("none", "canvas", "centroid")
VARIANTS = ("baseline", "tnt")


@dataclass(frozen=True)
class TntOptions:
    """Knobs for the normalized pipeline.

    bins: number of temporal bins B; timestamps are scaled to [0, B-1].
    center_mode: landmark choice. "canvas" centers on the image midpoint,
        "centroid" on the event cloud mean, "none" skips centering.
    min_time: scaled-time cutoff; events with t <= min_time are dropped
        before the division (the default 0 drops exactly the t = 0 set).
    """

    bins: int = 9
    center_mode: str = "canvas"
    min_time: float = 0.0

    def __post_init__(self):
        if self.bins < 2:
            raise ValidationError(f"bins must be >= 2, got {self.bins}")
        if self.center_mode not in CENTER_MODES:
            raise ValidationError(f"unknown center_mode {self.center_mode!r}")
        if not (self.min_time >= 0):
            raise ValidationError(f"min_time must be >= 0, got {self.min_time}")


def temporal_normalize(stream: EventStream, min_time: float = 0.0) -> EventStream:
    """Map each event (x, y, t) to (x/t, y/t, t), dropping t <= min_time.

    Requires scaled time: dividing by raw microsecond values would collapse
    every coordinate toward zero.  Events at or below the cutoff are removed
    because the division is undefined (or explosive) there; canonical order
    is preserved since all survivors share positive divisors.
    """
    if stream.time_unit != SCALED:
        raise ValidationError("temporal_normalize requires a stream in scaled time")
    keep = stream.t > min_time
    t = stream.t[keep]
    return stream._with(
        t=t, x=stream.x[keep] / t, y=stream.y[keep] / t, p=stream.p[keep]
    )


def _landmark(stream: EventStream, mode: str) -> LandmarkEstimate:
    if mode == "none":
        return LandmarkEstimate(0.0, 0.0)
    if mode == "canvas":
        cx, cy = stream.geometry.center
        return LandmarkEstimate(cx, cy)
    if mode == "centroid":
        return centroid(stream)
    raise ValidationError(f"unknown center_mode {mode!r}")


def prepare(stream: EventStream, opts: TntOptions, variant: str) -> EventStream:
    """Run a raw canonical stream through one of the two input pipelines.

    baseline: zero the timestamps and scale them to [0, B-1]; positions are
    untouched.

    tnt: zero, center on the configured landmark, scale to [0, B-1], apply
    the temporal normalization, then translate by the canvas midpoint so a
    motionless pattern lands centered in the grid frame.  Events pushed
    outside the grid are retained here; discarding them is the voxelizer's
    job, so that equivariance checks can compare unclipped coordinates.
    """
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}")
    if len(stream) == 0:
        raise ValidationError("cannot prepare an empty stream")
    zeroed = zero_time(stream)
    if variant == "baseline":
        return scale_time(zeroed, opts.bins - 1)
    landmark = _landmark(zeroed, opts.center_mode)
    centered = center(zeroed, landmark)
    normalized = temporal_normalize(scale_time(centered, opts.bins - 1), opts.min_time)
    cx, cy = stream.geometry.center
    return translate(normalized, cx, cy)


def flow_to_translation_check(base: EventStream, v1: Flow, v2: Flow) -> float:
    """Max per-event discrepancy between normalized flow and translation.

    Compares temporal_normalize(apply_flow(base, v1)) against
    temporal_normalize(apply_flow(base, v2)) translated by (v1 - v2).  For
    the exact identity the base stream must be in scaled time with strictly
    positive timestamps (nothing gets dropped, so events match up pairwise).
    """
    if base.time_unit != SCALED:
        raise ValidationError("check requires a stream in scaled time")
    if len(base) and base.t.min() <= 0:
        raise ValidationError("check requires strictly positive timestamps")
    lhs = temporal_normalize(apply_flow(base, v1))
    rhs = translate(
        temporal_normalize(apply_flow(base, v2)), v1.vx - v2.vx, v1.vy - v2.vy
    )
    if len(lhs) == 0:
        return 0.0
    return float(
        max(
            np.abs(lhs.x - rhs.x).max(),
            np.abs(lhs.y - rhs.y).max(),
            np.abs(lhs.t - rhs.t).max(),
        )
    )
