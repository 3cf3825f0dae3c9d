"""Offline calibration: pick the ingest-layer channels that feed the detector."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fuse import resize_bilinear
from .summarize import discriminant_scores, select_top_filters
from .tensorcore import ToyNet, forward_with_taps


@dataclass(frozen=True)
class FusionParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5
    mask_rebinarize_tau: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.mask_rebinarize_tau < 1:
            raise ValueError("mask_rebinarize_tau must be in (0, 1)")


@dataclass(frozen=True)
class FusionPlan:
    extract_layer: int
    ingest_layer: int
    target_channels: tuple[int, ...]
    params: FusionParams = field(default_factory=FusionParams)
    # channels summarised into outgoing digests, and the detector's channels
    digest_channels: tuple[int, ...] = ()
    predictor_layer: int | None = None
    predictor_channels: tuple[int, ...] = ()

    def __post_init__(self):
        if self.extract_layer >= self.ingest_layer:
            raise ValueError("extract_layer must precede ingest_layer")
        if len(set(self.target_channels)) != len(self.target_channels):
            raise ValueError("target_channels must be distinct")
        object.__setattr__(self, "target_channels", tuple(int(c) for c in self.target_channels))
        object.__setattr__(self, "digest_channels", tuple(int(c) for c in self.digest_channels))
        object.__setattr__(self, "predictor_channels", tuple(int(c) for c in self.predictor_channels))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("target_channels", "digest_channels", "predictor_channels"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionPlan":
        d = dict(d)
        d["params"] = FusionParams(**d.get("params", {}))
        return cls(**d)


def save_plan(path, plan: FusionPlan) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")


def load_plan(path) -> FusionPlan:
    return FusionPlan.from_dict(json.loads(Path(path).read_text()))


def correlation_score(x, y) -> float:
    """R^2 of the least-squares fit ``y ~ a*x + b``.

    ``x`` and ``y`` are per-frame 2-D maps of one channel each; every ``x`` map
    is resampled onto its ``y`` grid before the frames are concatenated.
    """
    xs = [np.asarray(a, dtype=np.float32) for a in x]
    ys = [np.asarray(b, dtype=np.float32) for b in y]
    if len(xs) != len(ys):
        raise ValueError("x and y must cover the same frames")
    xv, yv = [], []
    for a, b in zip(xs, ys):
        if a.ndim == 2 and b.ndim == 2:
            a = resize_bilinear(a, b.shape)
        if a.size != b.size:
            raise ValueError(f"length mismatch after resampling: {a.size} vs {b.size}")
        xv.append(a.ravel())
        yv.append(b.ravel())
    xf = np.concatenate(xv).astype(np.float64)
    yf = np.concatenate(yv).astype(np.float64)
    if xf.size < 2:
        raise ValueError("need at least two samples")
    dx = xf - xf.mean()
    dy = yf - yf.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx <= 0 or syy <= 0:
        return 0.0
    sxy = float(dx @ dy)
    return float(min(1.0, max(0.0, sxy * sxy / (sxx * syy))))


def masks_to_grid(mask, grid_hw: tuple[int, int], stride: float) -> np.ndarray:
    """Sample an image-resolution mask at the feature cells' image positions."""
    mask = np.asarray(mask, dtype=bool)
    h, w = grid_hw
    rows = np.clip((np.arange(h) * stride + (stride - 1) / 2).round().astype(int), 0, mask.shape[0] - 1)
    cols = np.clip((np.arange(w) * stride + (stride - 1) / 2).round().astype(int), 0, mask.shape[1] - 1)
    return mask[np.ix_(rows, cols)]


def rank_ingest_channels(ingest_maps, predictor_maps, predictor_channels) -> list[tuple[int, float]]:
    """Score every ingest channel by its best R^2 against any selected predictor channel."""
    n_ch = ingest_maps[0].shape[0]
    scored = []
    for c in range(n_ch):
        xs = [f[c] for f in ingest_maps]
        best = 0.0
        for p in predictor_channels:
            best = max(best, correlation_score(xs, [f[p] for f in predictor_maps]))
        scored.append((c, best))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored


def build_fusion_plan(net: ToyNet, calib_frames, gt_masks, i: int = 1, ingest: int = 9,
                      predictor_layer: int = 10, k_n: int = 4, k_prime: int = 4,
                      params: FusionParams | None = None) -> FusionPlan:
    """Calibrate a FusionPlan from labelled frames.

    ``gt_masks`` are boolean person masks at image resolution, one per frame.
    """
    if not i < ingest <= predictor_layer:
        raise ValueError(f"layers must satisfy i < ingest <= predictor ({i}, {ingest}, {predictor_layer})")
    if not calib_frames:
        raise ValueError("calibration set is empty")
    if len(calib_frames) != len(gt_masks):
        raise ValueError("one mask per calibration frame is required")
    params = params or FusionParams()
    taps = {i, ingest, predictor_layer}
    outs = [forward_with_taps(net, img, taps) for img in calib_frames]

    def layer_masks(layer):
        grid = outs[0][layer].shape[1:]
        return [masks_to_grid(m, grid, net.stride(layer)) for m in gt_masks]

    digest_scores = discriminant_scores([o[i] for o in outs], layer_masks(i), layer_index=i)
    digest_channels = select_top_filters(digest_scores, k_n)
    pred_scores = discriminant_scores([o[predictor_layer] for o in outs], layer_masks(predictor_layer),
                                      layer_index=predictor_layer)
    predictor_channels = select_top_filters(pred_scores, k_n)
    ranked = rank_ingest_channels([o[ingest] for o in outs], [o[predictor_layer] for o in outs],
                                  predictor_channels)
    return FusionPlan(
        extract_layer=i,
        ingest_layer=ingest,
        target_channels=tuple(c for c, _ in ranked[:k_prime]),
        params=params,
        digest_channels=tuple(digest_channels),
        predictor_layer=predictor_layer,
        predictor_channels=tuple(predictor_channels),
    )
