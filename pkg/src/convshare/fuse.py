"""Run-time fusion of collaborator digests into a reference feature map."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .summarize import C_A, C_L, Digest
from .validation import check_channels, check_feature_map, check_map2d


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective transform, normalised so that m[2, 2] == 1 when possible."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography has non-finite entries")
        if m[2, 2] != 0:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-9:
            raise ValueError("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.m @ other.m)

    def __eq__(self, other):
        if not isinstance(other, Homography):
            return NotImplemented
        return np.array_equal(self.m, other.m)

    __hash__ = None

    def apply(self, pts) -> np.ndarray:
        """Map (N, 2) points (x, y) through the transform."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        hom = np.c_[pts, np.ones(len(pts))] @ self.m.T
        return hom[:, :2] / hom[:, 2:3]

    def to_list(self) -> list[float]:
        return [float(v) for v in self.m.ravel()]


def save_homography(path, h: Homography) -> None:
    Path(path).write_text(json.dumps(h.to_list()) + "\n")


def load_homography(path) -> Homography:
    values = json.loads(Path(path).read_text())
    if len(values) != 9:
        raise ValueError(f"{path}: expected 9 values, got {len(values)}")
    return Homography(np.array(values, dtype=np.float64).reshape(3, 3))


@dataclass(frozen=True)
class GridSpec:
    height: int
    width: int
    stride: float = 1.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("grid extents must be positive")
        if self.stride < 1:
            raise ValueError("grid stride must be >= 1")


def scale_homography_to_grid(h_img: Homography, src: GridSpec, dst: GridSpec) -> Homography:
    """Source feature cells to destination feature cells: image pixels of a cell are stride * cell."""
    cell_to_px = np.diag([src.stride, src.stride, 1.0])
    px_to_cell = np.diag([1.0 / dst.stride, 1.0 / dst.stride, 1.0])
    return Homography(px_to_cell @ h_img.m @ cell_to_px)


def _bilinear_sample(src: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``src`` at float coordinates; neighbours outside the map count as zero."""
    h, w = src.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(xs.shape, dtype=np.float64)
    src64 = src.astype(np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy = y0 + dy
            xx = x0 + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            wgt = wy * wx
            ok &= wgt != 0
            out[ok] += wgt[ok] * src64[yy[ok], xx[ok]]
    return out


def warp_bilinear(payload, h_grid: Homography, out: GridSpec) -> np.ndarray:
    """Inverse-map each destination cell through ``h_grid`` and sample the source."""
    src = check_map2d(payload, "payload")
    inv = np.linalg.inv(h_grid.m)
    yy, xx = np.mgrid[0:out.height, 0:out.width].astype(np.float64)
    den = inv[2, 0] * xx + inv[2, 1] * yy + inv[2, 2]
    valid = np.abs(den) > 1e-12
    safe = np.where(valid, den, 1.0)
    sx = (inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]) / safe
    sy = (inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]) / safe
    # points behind the projective horizon, and far-away samples, read nothing
    valid &= den > 0
    h, w = src.shape
    valid &= (sx > -1) & (sx < w) & (sy > -1) & (sy < h)
    sx = np.where(valid, sx, -2.0)
    sy = np.where(valid, sy, -2.0)
    return _bilinear_sample(src, sx, sy).astype(np.float32)


def resize_bilinear(x, out_hw: tuple[int, int]) -> np.ndarray:
    """Resample a 2-D map to ``out_hw`` with cell-centre alignment and edge clamping."""
    x = check_map2d(x)
    h, w = x.shape
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return x.copy()
    ys = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0, w - 1)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(x, gx, gy).astype(np.float32)


def _p95(channel: np.ndarray) -> float:
    if not np.any(channel):
        return 0.0
    return float(np.percentile(channel.astype(np.float64), 95))


def inject(fmap, channels, warped, kind: str, params) -> np.ndarray:
    """Add a warped collaborator contribution to the selected channels."""
    fmap = check_feature_map(fmap)
    warped = check_map2d(warped, "warped")
    if warped.shape != fmap.shape[1:]:
        raise ValueError(f"warped extent {warped.shape} != map extent {fmap.shape[1:]}")
    chans = check_channels(channels, fmap.shape[0])
    out = fmap.copy()
    if kind == C_A:
        contrib = np.float32(params.alpha) * warped
        for c in chans:
            out[c] = fmap[c] + contrib
    elif kind == C_L:
        mask = (warped >= params.mask_rebinarize_tau).astype(np.float32)
        for c in chans:
            boost = np.float32(params.beta * _p95(fmap[c]))
            out[c] = fmap[c] + boost * mask
    else:
        raise ValueError(f"unknown digest kind {kind!r}")
    return out


def channel_maxima(fmap, channels) -> list[float]:
    fmap = check_feature_map(fmap)
    return [float(fmap[c].max()) for c in channels]


def renormalize_gamma(fmap, channels, pre_max, gamma: float) -> np.ndarray:
    """Restore each selected channel's pre-injection maximum, then gamma-correct it."""
    fmap = check_feature_map(fmap)
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    chans = check_channels(channels, fmap.shape[0])
    if len(pre_max) != len(chans):
        raise ValueError("one pre-injection maximum per channel is required")
    out = fmap.copy()
    for c, m in zip(chans, pre_max):
        ch = fmap[c]
        if np.any(ch < 0):
            raise ValueError(f"channel {c} has negative activations")
        cur = float(ch.max())
        if m <= 0 or cur <= 0:
            continue
        v = ch.astype(np.float64)
        if cur != m:
            v = v * (m / cur)
        if gamma != 1:
            v = m * (v / m) ** gamma
        out[c] = v.astype(np.float32)
    return out


def fuse_digest(fmap_at_ingest, digest: Digest, h_img: Homography, grids: tuple[GridSpec, GridSpec], plan):
    """Warp one collaborator digest into the reference grid and fold it in."""
    fmap = check_feature_map(fmap_at_ingest)
    if digest.layer_index != plan.extract_layer:
        raise ValueError(f"digest from layer {digest.layer_index}, plan extracts at {plan.extract_layer}")
    src, dst = grids
    if (src.height, src.width) != digest.payload.shape:
        raise ValueError("source grid does not match the digest extent")
    if (dst.height, dst.width) != fmap.shape[1:]:
        raise ValueError("destination grid does not match the feature map extent")
    chans = list(plan.target_channels)
    pre_max = channel_maxima(fmap, chans)
    h_grid = scale_homography_to_grid(h_img, src, dst)
    warped = warp_bilinear(digest.payload.astype(np.float32), h_grid, dst)
    injected = inject(fmap, chans, warped, digest.kind, plan.params)
    return renormalize_gamma(injected, chans, pre_max, plan.params.gamma)


def fuse_digests(fmap_at_ingest, digests, homographies: dict, grids: dict, plan):
    """Apply several digests in ascending source-node order.

    ``homographies[src]`` maps the source image into the reference image;
    ``grids[src]`` is the (src, dst) GridSpec pair for that source.
    """
    out = check_feature_map(fmap_at_ingest)
    for d in sorted(digests, key=lambda d: d.source_node):
        out = fuse_digest(out, d, homographies[d.source_node], grids[d.source_node], plan)
    return out
