"""Dense feature-map primitives and a deterministic toy convolutional network.

Tensors are plain ``numpy.float32`` arrays. Convolutions accumulate in float64
in a fixed (channel, row, column) order and round once to float32, so results
are reproducible and match a naive loop implementation exactly.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .validation import check_feature_map, check_image

N_LAYERS = 10
PERSON_CLASS = 1

# indexed layer -> output channels; a 2x2/2 max-pool runs at the start of layers 3 and 6
_CHANNELS = (10, 10, 12, 12, 12, 12, 12, 12, 12, 12)
_POOL_BEFORE = (3, 6)

# centre-surround kernel matched to smooth blobs; sums to 1 so flat regions pass through
_BLOB_KERNEL = np.array(
    [[-0.05, 0.15, -0.05],
     [0.15, 0.60, 0.15],
     [-0.05, 0.15, -0.05]],
    dtype=np.float32,
)
_BLOB_BIAS = -0.01


class TensorFormatError(ValueError):
    """Raised when a tensor fixture file is malformed."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv", "relu" or "maxpool"
    index: int  # indexed layer this op belongs to (1-based)
    kernel: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    pad: int = 0
    k: int = 2


@dataclass(frozen=True)
class ToyNet:
    layers: tuple[LayerSpec, ...]
    seed: int
    layer_strides: tuple[int, ...]

    @property
    def n_layers(self) -> int:
        return len(self.layer_strides)

    def channels(self, layer: int) -> int:
        for spec in self.layers:
            if spec.kind == "conv" and spec.index == layer:
                return spec.kernel.shape[0]
        raise ValueError(f"no layer {layer}")

    def ops(self, layer: int) -> list[LayerSpec]:
        return [spec for spec in self.layers if spec.index == layer]

    def stride(self, layer: int) -> int:
        self._check_layer(layer)
        return self.layer_strides[layer - 1]

    def grid_shape(self, layer: int, image_hw: tuple[int, int]) -> tuple[int, int]:
        h, w = image_hw
        for idx in range(1, layer + 1):
            for spec in self.ops(idx):
                if spec.kind == "maxpool":
                    h = (h - spec.k) // spec.stride + 1
                    w = (w - spec.k) // spec.stride + 1
                elif spec.kind == "conv":
                    kh, kw = spec.kernel.shape[2:]
                    h = (h + 2 * spec.pad - kh) // spec.stride + 1
                    w = (w + 2 * spec.pad - kw) // spec.stride + 1
        return h, w

    def _check_layer(self, layer: int) -> None:
        if not 1 <= layer <= self.n_layers:
            raise ValueError(f"layer index {layer} outside 1..{self.n_layers}")


@dataclass
class LayerOutputs:
    """Feature maps at the tapped layers plus the final layer output."""

    maps: dict[int, np.ndarray] = field(default_factory=dict)
    final: np.ndarray | None = None

    def __getitem__(self, layer: int) -> np.ndarray:
        return self.maps[layer]

    def __contains__(self, layer: int) -> bool:
        return layer in self.maps


@dataclass(frozen=True)
class DetectionBox:
    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0
    class_id: int = PERSON_CLASS

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def conv2d(x, kernel, bias, stride=1, pad=0):
    x = np.asarray(x, dtype=np.float32)
    kernel = np.asarray(kernel, dtype=np.float32)
    bias = np.asarray(bias, dtype=np.float32)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ValueError("conv2d expects input [C,H,W] and kernel [O,C,kH,kW]")
    c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"kernel expects {kc} input channels, input has {c}")
    if bias.shape != (o,):
        raise ValueError(f"bias must have shape ({o},), got {bias.shape}")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"non-positive output extent ({oh}, {ow})")

    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
    k64 = kernel.astype(np.float64)
    acc = np.zeros((o, oh, ow), dtype=np.float64)
    tmp = np.empty_like(acc)
    row_end = (oh - 1) * stride + 1
    col_end = (ow - 1) * stride + 1
    for ci in range(c):
        for ki in range(kh):
            for kj in range(kw):
                window = xp[ci, ki:ki + row_end:stride, kj:kj + col_end:stride]
                np.multiply(k64[:, ci, ki, kj, None, None], window[None], out=tmp)
                acc += tmp
    acc += bias.astype(np.float64)[:, None, None]
    return acc.astype(np.float32)


def relu(x):
    return np.maximum(x, np.float32(0.0))


def max_pool2d(x, k=2, stride=2):
    x = np.asarray(x, dtype=np.float32)
    if k < 1 or stride < 1:
        raise ValueError("k and stride must be >= 1")
    c, h, w = x.shape
    if h < k or w < k:
        raise ValueError(f"pool window {k} larger than input {h}x{w}")
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    out = np.full((c, oh, ow), -np.inf, dtype=np.float32)
    for ki in range(k):
        for kj in range(k):
            window = x[:, ki:ki + (oh - 1) * stride + 1:stride, kj:kj + (ow - 1) * stride + 1:stride]
            np.maximum(out, window, out=out)
    return out


def build_toy_net(seed: int) -> ToyNet:
    rng = np.random.default_rng(seed)
    layers: list[LayerSpec] = []
    strides: list[int] = []
    in_ch, stride = 3, 1
    for idx, out_ch in enumerate(_CHANNELS, start=1):
        if idx in _POOL_BEFORE:
            layers.append(LayerSpec("maxpool", idx, k=2, stride=2))
            stride *= 2
        fan_in = in_ch * 9
        kernel = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(out_ch, in_ch, 3, 3)).astype(np.float32)
        bias = rng.normal(0.0, 0.01, size=out_ch).astype(np.float32)
        kernel[0] = 0.0
        if idx == 1:
            kernel[0, :] = _BLOB_KERNEL / np.float32(in_ch)
        else:
            kernel[0, 0] = _BLOB_KERNEL
        bias[0] = _BLOB_BIAS
        layers.append(LayerSpec("conv", idx, kernel=kernel, bias=bias, stride=1, pad=1))
        layers.append(LayerSpec("relu", idx))
        strides.append(stride)
        in_ch = out_ch
    return ToyNet(layers=tuple(layers), seed=seed, layer_strides=tuple(strides))


def _apply(spec: LayerSpec, x: np.ndarray) -> np.ndarray:
    if spec.kind == "conv":
        return conv2d(x, spec.kernel, spec.bias, spec.stride, spec.pad)
    if spec.kind == "relu":
        return relu(x)
    if spec.kind == "maxpool":
        return max_pool2d(x, spec.k, spec.stride)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def forward_with_taps(net: ToyNet, image=None, taps=(), resume_from=None) -> LayerOutputs:
    """Run the network, keeping the outputs of the tapped layers.

    ``resume_from=(j, fmap)`` skips layers 1..j and continues from a (possibly
    modified) layer-j feature map; ``image`` is then ignored.
    """
    taps = set(taps)
    for t in taps:
        net._check_layer(t)
    if resume_from is not None:
        start, x = resume_from
        net._check_layer(start)
        x = check_feature_map(x)
        expected = net.channels(start)
        if x.shape[0] != expected:
            raise ValueError(f"resumed map has {x.shape[0]} channels, layer {start} produces {expected}")
        bad = [t for t in taps if t <= start]
        if bad:
            raise ValueError(f"taps {sorted(bad)} precede the resume layer {start}")
    else:
        if image is None:
            raise ValueError("either image or resume_from is required")
        start, x = 0, check_image(image)

    out = LayerOutputs()
    for idx in range(start + 1, net.n_layers + 1):
        for spec in net.ops(idx):
            x = _apply(spec, x)
        if idx in taps:
            out.maps[idx] = x
    out.final = x
    return out


def detect_blobs(fmap, channels, threshold: float, stride_to_image: float) -> list[DetectionBox]:
    fmap = check_feature_map(fmap)
    channels = sorted(set(channels))
    if not channels:
        raise ValueError("channel set is empty")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    summary = fmap[channels].astype(np.float64).mean(axis=0)
    peak = summary.max()
    labels, n = ndimage.label(summary >= threshold)
    if n == 0 or peak <= 0:
        return []
    boxes = []
    for comp, sl in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = sl
        conf = float(np.clip(summary[labels == comp].mean() / peak, 0.0, 1.0))
        boxes.append(DetectionBox(
            x=float(cols.start * stride_to_image),
            y=float(rows.start * stride_to_image),
            w=float((cols.stop - cols.start) * stride_to_image),
            h=float((rows.stop - rows.start) * stride_to_image),
            confidence=conf,
        ))
    boxes.sort(key=lambda b: (-b.confidence, b.y, b.x))
    return boxes


_MAGIC = b"CVSF"
_VERSION = 1
_DTYPE_F32 = 0


def tensor_to_bytes(t) -> bytes:
    t = np.asarray(t)
    if t.dtype != np.float32:
        raise TensorFormatError(f"only float32 tensors are supported, got {t.dtype}")
    if not 1 <= t.ndim <= 4:
        raise TensorFormatError(f"ndim must be in 1..4, got {t.ndim}")
    header = struct.pack(f"<4sBBB{t.ndim}I", _MAGIC, _VERSION, _DTYPE_F32, t.ndim, *t.shape)
    return header + np.ascontiguousarray(t, dtype="<f4").tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 7:
        raise TensorFormatError("truncated header")
    magic, version, dtype, ndim = struct.unpack_from("<4sBBB", buf)
    if magic != _MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if dtype != _DTYPE_F32:
        raise TensorFormatError(f"unsupported dtype code {dtype}")
    offset = 7 + 4 * ndim
    if len(buf) < offset:
        raise TensorFormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 7)
    n = int(np.prod(dims))
    if len(buf) != offset + 4 * n:
        raise TensorFormatError(f"payload holds {len(buf) - offset} bytes, expected {4 * n}")
    return np.frombuffer(buf, dtype="<f4", count=n, offset=offset).astype(np.float32).reshape(dims)


def write_tensor(path, t) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


DETECTION_FIELDS = ("frame_id", "class_id", "x", "y", "w", "h", "confidence")


def write_detections(path, detections: dict[int, list[DetectionBox]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DETECTION_FIELDS)
        for frame_id in sorted(detections):
            for b in detections[frame_id]:
                writer.writerow([frame_id, b.class_id, repr(b.x), repr(b.y), repr(b.w), repr(b.h), repr(b.confidence)])


def read_detections(path) -> dict[int, list[DetectionBox]]:
    out: dict[int, list[DetectionBox]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != DETECTION_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            box = DetectionBox(
                x=float(row["x"]), y=float(row["y"]), w=float(row["w"]), h=float(row["h"]),
                confidence=float(row["confidence"]), class_id=int(row["class_id"]),
            )
            out.setdefault(int(row["frame_id"]), []).append(box)
    return out
