"""Event-camera stream processing with the temporal normalization transform.

The package simulates event streams from moving intensity patterns, builds
discretized event volumes, normalizes streams so that constant motion becomes
translation, numerically verifies the underlying equivariance identities, and
trains a small CNN that demonstrates the generalization gain on unseen
motions.
"""

from .errors import EventNormError, FormatError, ValidationError
from .events import (
    Event,
    EventStream,
    Flow,
    LandmarkEstimate,
    MICROSECONDS,
    SCALED,
    SensorGeometry,
    apply_flow,
    canonicalize,
    center,
    centroid,
    read_csv,
    read_evt1,
    scale_time,
    translate,
    write_csv,
    write_evt1,
    zero_time,
)
from .tnt import TntOptions, flow_to_translation_check, prepare, temporal_normalize
from .voxel import (
    EventVolume,
    build,
    linear_kernel,
    max_abs_diff,
    read_vol1,
    shift,
    write_vol1,
)
from .sim import (
    DatasetConfig,
    PatternSource,
    SimParams,
    Trajectory,
    generate_dataset,
    generate_events,
    glyph_bitmap,
    load_manifest,
    motion_set,
    read_idx_images,
    read_idx_labels,
    render,
)
from .nn import (
    Model,
    TrainConfig,
    backward,
    conv2d,
    cross_entropy,
    evaluate,
    forward,
    load_model,
    normalize_input,
    save_model,
    softmax,
    train,
)
from .verify import CheckResult, run_suite

__version__ = "0.1.0"
