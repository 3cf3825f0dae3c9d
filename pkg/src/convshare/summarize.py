"""Scene summaries: activation templates, discriminant filters and digests."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .validation import check_channels, check_feature_map

C_A = "C_a"
C_L = "C_l"
_KIND_CODES = {C_A: 1, C_L: 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_DIGEST_MAGIC = b"CVDG"
_HEADER = struct.Struct("<4sBBHIHH")
DIGEST_HEADER_BYTES = _HEADER.size


class DigestFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    centroid: np.ndarray
    member_count: int


@dataclass(frozen=True)
class FilterScore:
    layer_index: int
    channel: int
    score: float


@dataclass(frozen=True, eq=False)
class Digest:
    kind: str
    source_node: int
    frame_id: int
    layer_index: int
    height: int
    width: int
    payload: np.ndarray  # float32 [H, W] for C_a, bool [H, W] for C_l

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown digest kind {self.kind!r}")
        if self.layer_index < 1:
            raise ValueError("layer_index must be >= 1")
        if self.payload.shape != (self.height, self.width):
            raise ValueError(f"payload shape {self.payload.shape} != ({self.height}, {self.width})")
        if self.kind == C_A and np.any(self.payload < 0):
            raise ValueError("C_a payload must be non-negative")

    def __eq__(self, other):
        if not isinstance(other, Digest):
            return NotImplemented
        same_meta = (self.kind, self.source_node, self.frame_id, self.layer_index, self.height, self.width) == (
            other.kind, other.source_node, other.frame_id, other.layer_index, other.height, other.width)
        return (same_meta and self.payload.dtype == other.payload.dtype
                and self.payload.tobytes() == other.payload.tobytes())

    __hash__ = None


def _lloyd(data: np.ndarray, k: int, seed: int, max_iters: int):
    n = len(data)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    min_d = ((data - data[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        min_d = np.minimum(min_d, ((data - data[nxt]) ** 2).sum(axis=1))
    centroids = data[chosen].copy()

    labels = None
    history = []
    for _ in range(max(1, max_iters)):
        d2 = ((data[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = data[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the point worst served by its centroid
                far = int(np.argmax(d2[np.arange(n), labels]))
                centroids[j] = data[far]
                labels[far] = j
    d2 = ((data[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return centroids, labels, history


def kmeans_templates(patches, k: int, seed: int = 0, max_iters: int = 100) -> list[Template]:
    """Cluster equally-sized activation patches into ``k`` templates."""
    patches = [np.asarray(p, dtype=np.float64) for p in patches]
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(patches) < k:
        raise ValueError(f"need at least k={k} patches, got {len(patches)}")
    shape = patches[0].shape
    if any(p.shape != shape for p in patches):
        raise ValueError("all patches must share the same dims")
    data = np.stack([p.ravel() for p in patches])
    centroids, labels, _ = _lloyd(data, k, seed, max_iters)
    counts = np.bincount(labels, minlength=k)
    return [Template(centroid=centroids[j].reshape(shape), member_count=int(counts[j])) for j in range(k)]


def discriminant_scores(fmaps, gt_masks, layer_index: int = 0) -> list[FilterScore]:
    """Score each channel by mean activation inside minus outside the person mask."""
    fmaps = [check_feature_map(f) for f in fmaps]
    gt_masks = [np.asarray(m, dtype=bool) for m in gt_masks]
    if not fmaps:
        raise ValueError("at least one frame is required")
    if len(fmaps) != len(gt_masks):
        raise ValueError("one mask per frame is required")
    n_ch = fmaps[0].shape[0]
    total = np.zeros(n_ch)
    used = 0
    for f, m in zip(fmaps, gt_masks):
        if f.shape[1:] != m.shape:
            raise ValueError(f"mask shape {m.shape} does not match map grid {f.shape[1:]}")
        if f.shape[0] != n_ch:
            raise ValueError("all frames must have the same channel count")
        if not m.any() or m.all():
            continue
        flat = f.reshape(n_ch, -1).astype(np.float64)
        inside = m.ravel()
        total += flat[:, inside].mean(axis=1) - flat[:, ~inside].mean(axis=1)
        used += 1
    scores = total / used if used else total
    return [FilterScore(layer_index, c, float(scores[c])) for c in range(n_ch)]


def select_top_filters(scores: list[FilterScore], k_n: int) -> list[int]:
    """Channels of the ``k_n`` best scores, best first; ties go to the lower channel."""
    if not scores:
        raise ValueError("score list is empty")
    if k_n < 1:
        raise ValueError("k_n must be >= 1")
    ranked = sorted(scores, key=lambda s: (-s.score, s.channel))
    return [s.channel for s in ranked[:k_n]]


def summary_map(fmap, channels) -> np.ndarray:
    fmap = check_feature_map(fmap)
    chans = sorted(check_channels(channels, fmap.shape[0]))
    return fmap[chans].astype(np.float64).mean(axis=0).astype(np.float32)


def build_digest(fmap, channels, kind: str = C_L, tau: float = 0.5, *,
                 source_node: int = 0, frame_id: int = 0, layer_index: int = 1) -> Digest:
    s = summary_map(fmap, channels)
    if kind == C_A:
        payload = np.maximum(s, np.float32(0.0))
    elif kind == C_L:
        peak = s.max()
        payload = s >= tau * peak if peak > 0 else np.zeros(s.shape, dtype=bool)
    else:
        raise ValueError(f"unknown digest kind {kind!r}")
    h, w = s.shape
    return Digest(kind, int(source_node), int(frame_id), int(layer_index), h, w, payload)


def _payload_bytes(kind: str, h: int, w: int) -> int:
    return 4 * h * w if kind == C_A else h * ((w + 7) // 8)


def encoded_size(kind: str, h: int, w: int) -> int:
    return DIGEST_HEADER_BYTES + _payload_bytes(kind, h, w)


def encode_digest(d: Digest) -> bytes:
    header = _HEADER.pack(_DIGEST_MAGIC, _KIND_CODES[d.kind], d.layer_index, d.source_node,
                          d.frame_id, d.height, d.width)
    if d.kind == C_A:
        body = np.ascontiguousarray(d.payload, dtype="<f4").tobytes()
    else:
        body = np.packbits(d.payload.astype(bool), axis=1).tobytes()
    return header + body


def decode_digest(buf: bytes) -> Digest:
    if len(buf) < DIGEST_HEADER_BYTES:
        raise DigestFormatError("truncated digest header")
    magic, code, layer, source, frame, h, w = _HEADER.unpack_from(buf)
    if magic != _DIGEST_MAGIC:
        raise DigestFormatError(f"bad magic {magic!r}")
    if code not in _KIND_NAMES:
        raise DigestFormatError(f"bad kind byte {code}")
    kind = _KIND_NAMES[code]
    body = buf[DIGEST_HEADER_BYTES:]
    if len(body) != _payload_bytes(kind, h, w):
        raise DigestFormatError(f"payload is {len(body)} bytes, expected {_payload_bytes(kind, h, w)}")
    if kind == C_A:
        payload = np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(h, w)
    else:
        packed = np.frombuffer(body, dtype=np.uint8).reshape(h, (w + 7) // 8)
        payload = np.unpackbits(packed, axis=1, count=w).astype(bool)
    return Digest(kind, source, frame, layer, h, w, payload)
