"""Small float64 CNN with manual backpropagation.

The classifier takes an event volume's temporal bins as input channels and
runs conv -> relu -> pool twice, then two fully connected layers.  Everything
is plain numpy so each gradient can be validated against central finite
differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .events import SensorGeometry

PARAM_NAMES = (
    "conv1_w", "conv1_b", "conv2_w", "conv2_b",
    "fc1_w", "fc1_b", "fc2_w", "fc2_b",
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    input_scale: float = 1.0

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValidationError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")


class Model:
    """Named-parameter container for the two-conv two-fc classifier."""

    def __init__(self, params: dict, geometry: SensorGeometry):
        for name in PARAM_NAMES:
            if name not in params:
                raise ValidationError(f"missing parameter {name}")
            setattr(self, name, np.ascontiguousarray(params[name], dtype=np.float64))
        self.geometry = geometry
        self._check_shapes()

    def _check_shapes(self):
        c1, b, k, k2 = self.conv1_w.shape
        if k != k2:
            raise ValidationError("conv kernels must be square")
        h1 = self.geometry.height - k + 1
        w1 = self.geometry.width - k + 1
        if h1 % 2 or w1 % 2:
            raise ValidationError("first conv output must have even spatial dims")
        h2 = h1 // 2 - k + 1
        w2 = w1 // 2 - k + 1
        if h2 < 1 or w2 < 1 or h2 % 2 or w2 % 2:
            raise ValidationError("second conv output must have even spatial dims")
        flat = self.conv2_w.shape[0] * (h2 // 2) * (w2 // 2)
        if self.fc1_w.shape[1] != flat:
            raise ValidationError(
                f"fc1 expects {self.fc1_w.shape[1]} features, geometry gives {flat}"
            )

    @property
    def bins(self) -> int:
        return self.conv1_w.shape[1]

    @property
    def num_classes(self) -> int:
        return self.fc2_w.shape[0]

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def init(cls, geometry: SensorGeometry, bins: int, num_classes: int,
             conv1_channels: int = 16, conv2_channels: int = 32,
             hidden: int = 128, kernel: int = 3, seed: int = 0) -> "Model":
        """Seeded uniform initialization in +-sqrt(6 / (fan_in + fan_out))."""
        rng = np.random.default_rng(seed)

        def glorot(shape, fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, shape)

        k = kernel
        h = (geometry.height - k + 1) // 2
        w = (geometry.width - k + 1) // 2
        h = (h - k + 1) // 2
        w = (w - k + 1) // 2
        flat = conv2_channels * h * w
        params = {
            "conv1_w": glorot((conv1_channels, bins, k, k), bins * k * k,
                              conv1_channels * k * k),
            "conv1_b": np.zeros(conv1_channels),
            "conv2_w": glorot((conv2_channels, conv1_channels, k, k),
                              conv1_channels * k * k, conv2_channels * k * k),
            "conv2_b": np.zeros(conv2_channels),
            "fc1_w": glorot((hidden, flat), flat, hidden),
            "fc1_b": np.zeros(hidden),
            "fc2_w": glorot((num_classes, hidden), hidden, num_classes),
            "fc2_b": np.zeros(num_classes),
        }
        return cls(params, geometry)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValidationError(f"expected 3-D or 4-D input, got shape {x.shape}")


def _patches(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N, C, H, W) -> (N*H'*W', C*kh*kw) patch matrix for valid windows."""
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    n, c, ho, wo = win.shape[:4]
    return (
        win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw),
        (n, ho, wo),
    )


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray | None = None,
           mode: str = "valid") -> np.ndarray:
    """Cross-correlation with valid padding, or circular padding for tests."""
    xb, squeeze = _as_batch(np.asarray(x, dtype=np.float64))
    kernels = np.asarray(kernels, dtype=np.float64)
    co, ci, kh, kw = kernels.shape
    if xb.shape[1] != ci:
        raise ValidationError(
            f"input has {xb.shape[1]} channels, kernels expect {ci}"
        )
    if mode == "circular":
        xb = np.concatenate([xb, xb[:, :, : kh - 1, :]], axis=2)
        xb = np.concatenate([xb, xb[:, :, :, : kw - 1]], axis=3)
    elif mode != "valid":
        raise ValidationError(f"unknown conv mode {mode!r}")
    if kh > xb.shape[2] or kw > xb.shape[3]:
        raise ValidationError(
            f"kernel {kh}x{kw} larger than input {xb.shape[2]}x{xb.shape[3]}"
        )
    pat, (n, ho, wo) = _patches(xb, kh, kw)
    out = pat @ kernels.reshape(co, -1).T
    if bias is not None:
        out = out + bias
    out = out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    return out[0] if squeeze else out


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, grad_out: np.ndarray):
    """Gradients of a valid-mode conv2d w.r.t. input, kernels, and bias."""
    co, ci, kh, kw = kernels.shape
    pat, (n, ho, wo) = _patches(x, kh, kw)
    dyf = grad_out.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
    dw = (dyf.T @ pat).reshape(co, ci, kh, kw)
    db = grad_out.sum(axis=(0, 2, 3))
    pad = ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1))
    flipped = kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx = conv2d(np.pad(grad_out, pad), flipped)
    return dx, dw, db


def avg_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling; spatial dims must be even."""
    xb, squeeze = _as_batch(np.asarray(x, dtype=np.float64))
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise ValidationError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    out = xb.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return out[0] if squeeze else out


def avg_pool2_backward(grad_out: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(grad_out, 2, axis=2), 2, axis=3) / 4.0


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def fc(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return x @ weights.T + bias


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy of (N, C) logits against integer labels."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(labels)), labels].mean())


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


def normalize_input(volume_data: np.ndarray, input_scale: float = 1.0) -> np.ndarray:
    """Per-sample scaling by 1 / max(1, max|V|), then the configured constant."""
    peak = np.abs(volume_data).max() if volume_data.size else 0.0
    return volume_data * (input_scale / max(1.0, peak))


def _forward(model: Model, x: np.ndarray) -> tuple[np.ndarray, dict]:
    z1 = conv2d(x, model.conv1_w, model.conv1_b)
    a1 = relu(z1)
    p1 = avg_pool2(a1)
    z2 = conv2d(p1, model.conv2_w, model.conv2_b)
    a2 = relu(z2)
    p2 = avg_pool2(a2)
    flat = p2.reshape(p2.shape[0], -1)
    z3 = fc(flat, model.fc1_w, model.fc1_b)
    a3 = relu(z3)
    logits = fc(a3, model.fc2_w, model.fc2_b)
    cache = {"x": x, "z1": z1, "p1": p1, "z2": z2, "p2": p2,
             "flat": flat, "z3": z3, "a3": a3}
    return logits, cache


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logits for one volume (bins, H, W) or a batch (N, bins, H, W)."""
    xb, squeeze = _as_batch(np.asarray(x, dtype=np.float64))
    if xb.shape[1] != model.bins:
        raise ValidationError(
            f"input has {xb.shape[1]} channels, model expects {model.bins}"
        )
    if xb.shape[2] != model.geometry.height or xb.shape[3] != model.geometry.width:
        raise ValidationError(
            f"input spatial dims {xb.shape[2]}x{xb.shape[3]} do not match "
            f"model geometry {model.geometry.height}x{model.geometry.width}"
        )
    logits, _ = _forward(model, xb)
    return logits[0] if squeeze else logits


def _loss_and_grads(model: Model, x: np.ndarray, labels: np.ndarray):
    logits, cache = _forward(model, x)
    n = x.shape[0]
    loss = cross_entropy(logits, labels)

    probs = softmax(logits)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grads = {}
    grads["fc2_w"] = dlogits.T @ cache["a3"]
    grads["fc2_b"] = dlogits.sum(axis=0)
    da3 = dlogits @ model.fc2_w
    dz3 = da3 * (cache["z3"] > 0)
    grads["fc1_w"] = dz3.T @ cache["flat"]
    grads["fc1_b"] = dz3.sum(axis=0)
    dflat = dz3 @ model.fc1_w
    dp2 = dflat.reshape(cache["p2"].shape)
    da2 = avg_pool2_backward(dp2)
    dz2 = da2 * (cache["z2"] > 0)
    dp1, grads["conv2_w"], grads["conv2_b"] = conv2d_backward(
        cache["p1"], model.conv2_w, dz2
    )
    da1 = avg_pool2_backward(dp1)
    dz1 = da1 * (cache["z1"] > 0)
    dx, grads["conv1_w"], grads["conv1_b"] = conv2d_backward(
        cache["x"], model.conv1_w, dz1
    )
    grads["input"] = dx
    return loss, logits, grads


def backward(model: Model, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch plus exact reverse-mode gradients.

    Returns (loss, grads); grads holds one entry per parameter name plus
    "input" for the gradient with respect to the batch itself.
    """
    xb, _ = _as_batch(np.asarray(x, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    loss, _, grads = _loss_and_grads(model, xb, labels)
    return loss, grads


def train(model: Model, inputs: np.ndarray, labels: np.ndarray,
          config: TrainConfig, val: tuple | None = None):
    """Momentum-SGD training, deterministic given the config seed.

    inputs: (N, bins, H, W) float64, already normalized; labels: (N,) ints.
    Returns (model, metrics) where metrics is a list of per-epoch rows
    {epoch, split, loss, accuracy}.
    """
    n = inputs.shape[0]
    if n == 0:
        raise ValidationError("training set is empty")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    velocity = {name: np.zeros_like(p) for name, p in model.params().items()}
    metrics = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb, yb = inputs[idx], labels[idx]
            loss, logits, grads = _loss_and_grads(model, xb, yb)
            for name in PARAM_NAMES:
                velocity[name] = (
                    config.momentum * velocity[name]
                    - config.learning_rate * grads[name]
                )
                setattr(model, name, getattr(model, name) + velocity[name])
            total_loss += loss * len(idx)
            correct += int((np.argmax(logits, axis=1) == yb).sum())
        metrics.append({
            "epoch": epoch,
            "split": "train",
            "loss": total_loss / n,
            "accuracy": correct / n,
        })
        if val is not None:
            vx, vy = val
            acc, _ = evaluate(model, vx, vy)
            vlogits = forward(model, vx)
            metrics.append({
                "epoch": epoch,
                "split": "val",
                "loss": cross_entropy(vlogits, np.asarray(vy, dtype=np.int64)),
                "accuracy": acc,
            })
    return model, metrics


def evaluate(model: Model, inputs: np.ndarray, labels: np.ndarray,
             chunk: int = 256):
    """Accuracy plus a per-class confusion matrix (rows = true class).

    Argmax ties resolve toward the lowest class index.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = inputs.shape[0]
    if n == 0:
        raise ValidationError("evaluation set is empty")
    classes = model.num_classes
    confusion = np.zeros((classes, classes), dtype=np.int64)
    correct = 0
    for start in range(0, n, chunk):
        xb = inputs[start : start + chunk]
        yb = labels[start : start + chunk]
        pred = np.argmax(forward(model, xb), axis=1)
        correct += int((pred == yb).sum())
        np.add.at(confusion, (yb, pred), 1)
    return correct / n, confusion


def write_metrics_csv(metrics: list, path) -> None:
    """Write per-epoch metrics as CSV with header epoch,split,loss,accuracy."""
    with open(path, "w", newline="") as fh:
        fh.write("epoch,split,loss,accuracy\n")
        for row in metrics:
            fh.write(f"{row['epoch']},{row['split']},{row['loss']!r},{row['accuracy']!r}\n")


# ---------------------------------------------------------------------------
# MDL1 binary format
# ---------------------------------------------------------------------------

MDL1_MAGIC = b"MDL1"
MDL1_VERSION = 1
_MDL1_HEADER = struct.Struct("<4sII")


def save_model(model: Model, path, extra: dict | None = None) -> None:
    """Write all named tensors (parameters, geometry, any extras) as MDL1."""
    tensors = dict(model.params())
    tensors["geometry"] = np.array(
        [model.geometry.width, model.geometry.height], dtype=np.float64
    )
    if extra:
        for name, arr in extra.items():
            if name in tensors:
                raise ValidationError(f"extra tensor name {name!r} collides")
            tensors[name] = np.asarray(arr, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_MDL1_HEADER.pack(MDL1_MAGIC, MDL1_VERSION, len(tensors)))
        for name, arr in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path):
    """Read an MDL1 file; returns (model, extra_tensors)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _MDL1_HEADER.size:
        raise FormatError("truncated MDL1 header")
    magic, version, count = _MDL1_HEADER.unpack_from(blob)
    if magic != MDL1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MDL1_MAGIC!r}")
    if version != MDL1_VERSION:
        raise FormatError(f"unsupported MDL1 version {version}")
    offset = _MDL1_HEADER.size
    tensors = {}
    for _ in range(count):
        if offset + 2 > len(blob):
            raise FormatError("truncated MDL1 tensor table")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + name_len + 1 > len(blob):
            raise FormatError("truncated MDL1 tensor name")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        if offset + 4 * rank > len(blob):
            raise FormatError("truncated MDL1 tensor dims")
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        need = int(np.prod(dims)) * 8 if rank else 8
        if offset + need > len(blob):
            raise FormatError(f"truncated MDL1 tensor data for {name!r}")
        data = np.frombuffer(blob[offset : offset + need], dtype="<f8")
        offset += need
        tensors[name] = data.reshape(dims) if rank else data[0]
    missing = set(PARAM_NAMES) - set(tensors)
    if missing:
        raise FormatError(f"MDL1 file lacks parameters: {sorted(missing)}")
    if "geometry" not in tensors:
        raise FormatError("MDL1 file lacks the geometry tensor")
    width, height = (int(v) for v in np.asarray(tensors["geometry"]).ravel())
    params = {name: tensors[name] for name in PARAM_NAMES}
    extra = {
        name: arr for name, arr in tensors.items()
        if name not in PARAM_NAMES and name != "geometry"
    }
    return Model(params, SensorGeometry(width, height)), extra
