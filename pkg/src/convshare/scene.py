"""Synthetic multi-camera scenes: persons on a ground plane seen by planar cameras."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .fuse import Homography
from .tensorcore import DetectionBox

log = logging.getLogger(__name__)

PLANE = (16.0, 16.0)
IMAGE_SIZE = (192, 256)
MIN_VISIBLE = 0.05


@dataclass(frozen=True)
class Person:
    x: float
    y: float
    radius: float
    intensity: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0 < self.intensity <= 1:
            raise ValueError("intensity must be in (0, 1]")


@dataclass(frozen=True)
class Camera:
    camera_id: int
    h_ground_to_image: Homography
    image_size: tuple[int, int] = IMAGE_SIZE


@dataclass
class World:
    persons: list[Person]
    # camera id -> list of (x0, y0, x1, y1) image rectangles, half-open
    occluders: dict[int, list[tuple[float, float, float, float]]] = field(default_factory=dict)
    seed: int = 0
    background: float = 0.0


@dataclass
class CameraView:
    camera_id: int
    h_ground_to_image: Homography
    image_size: tuple[int, int]
    stimulus: np.ndarray
    gt_boxes: list[DetectionBox]
    person_ids: list[int]
    visibility: list[float]


def homography_from_points(src, dst) -> Homography:
    """Direct linear solve for the homography taking four points onto four points."""
    a, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        b.append(u)
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.append(v)
    h = np.linalg.solve(np.array(a, dtype=np.float64), np.array(b, dtype=np.float64))
    return Homography(np.append(h, 1.0).reshape(3, 3))


def camera_homography(cam_index: int, rng: np.random.Generator,
                      plane=PLANE, image_size=IMAGE_SIZE) -> Homography:
    """A perspective view of the ground plane, looking in from one side of it."""
    gw, gh = plane
    h, w = image_size
    corners = [(0.0, 0.0), (gw, 0.0), (gw, gh), (0.0, gh)]
    # near edge spans the image bottom, far edge is foreshortened
    far_inset = 0.22 * w
    quad = np.array([
        [4.0, h - 4.0],
        [w - 4.0, h - 4.0],
        [w - far_inset, 6.0],
        [far_inset, 6.0],
    ])
    quad += rng.uniform(-2.0, 2.0, size=quad.shape)
    rot = cam_index % 4
    src = corners[rot:] + corners[:rot]
    return homography_from_points(src, quad)


def projected_sigma(h: Homography, p: Person) -> tuple[float, float, float]:
    """Image centre and blob sigma of a person; sigma is the projected radius."""
    pts = h.apply([[p.x, p.y], [p.x + p.radius, p.y], [p.x, p.y + p.radius]])
    c = pts[0]
    sigma = 0.5 * (np.linalg.norm(pts[1] - c) + np.linalg.norm(pts[2] - c))
    return float(c[0]), float(c[1]), float(sigma)


def _partial_occluder(cx, cy, sigma, visible, side):
    """Rectangle hiding all of a blob except a strip carrying ``visible`` of its mass."""
    d = float(norm.ppf(1.0 - visible)) * sigma
    big = 4.0 * sigma
    if side == 0:  # strip on the right stays visible
        return (cx - big, cy - big, cx + d, cy + big)
    if side == 1:
        return (cx - d, cy - big, cx + big, cy + big)
    if side == 2:  # strip at the bottom
        return (cx - big, cy - big, cx + big, cy + d)
    return (cx - big, cy - d, cx + big, cy + big)


def generate_world(n_persons: int, n_cameras: int, seed: int, occlusion_spec: dict | None = None, *,
                   camera_seed: int | None = None, plane=PLANE, image_size=IMAGE_SIZE,
                   radius_range=(0.6, 0.8), intensity_range=(0.8, 1.0), background: float = 0.0,
                   min_separation: float = 0.0) -> tuple[World, list[Homography]]:
    """Place persons on the ground plane and derive camera homographies and occluders.

    ``min_separation`` is a ground-plane distance enforced between persons.
    ``occlusion_spec`` maps camera id (or ``"all"``) to
    ``{"fraction": f, "visible": [lo, hi]}``: a fraction of the persons seen by
    that camera get an occluder leaving ``lo..hi`` of their blob mass visible.
    Cameras depend only on ``camera_seed`` (default ``seed``) so a sequence of
    frames can share one rig.
    """
    if n_persons < 1:
        raise ValueError("n_persons must be >= 1")
    if n_cameras < 2:
        raise ValueError("n_cameras must be >= 2")
    cam_rng = np.random.default_rng(seed if camera_seed is None else camera_seed)
    homs = [camera_homography(c, cam_rng, plane, image_size) for c in range(n_cameras)]

    rng = np.random.default_rng(seed)
    gw, gh = plane
    margin = radius_range[1]
    persons: list[Person] = []
    for _ in range(n_persons):
        # rejection sampling keeps ground positions at least min_separation apart
        for _attempt in range(1000):
            x = float(rng.uniform(margin, gw - margin))
            y = float(rng.uniform(margin, gh - margin))
            if all(np.hypot(x - q.x, y - q.y) >= min_separation for q in persons):
                break
        else:
            raise ValueError(f"cannot place {n_persons} persons {min_separation} apart")
        persons.append(Person(x=x, y=y, radius=float(rng.uniform(*radius_range)),
                              intensity=float(rng.uniform(*intensity_range))))

    occluders: dict[int, list] = {c: [] for c in range(n_cameras)}
    spec = occlusion_spec or {}
    for c in range(n_cameras):
        cfg = spec.get(str(c), spec.get(c, spec.get("all")))
        if not cfg:
            continue
        n_occ = int(round(cfg.get("fraction", 0.0) * n_persons))
        lo, hi = cfg.get("visible", (0.1, 0.3))
        picks = rng.permutation(n_persons)[:n_occ]
        for k in sorted(int(v) for v in picks):
            cx, cy, sigma = projected_sigma(homs[c], persons[k])
            occluders[c].append(_partial_occluder(cx, cy, sigma, float(rng.uniform(lo, hi)),
                                                  int(rng.integers(4))))
    return World(persons=persons, occluders=occluders, seed=seed, background=background), homs


def _occlusion_mask(rects, image_size) -> np.ndarray:
    h, w = image_size
    yy, xx = np.mgrid[0:h, 0:w]
    mask = np.zeros((h, w), dtype=bool)
    for x0, y0, x1, y1 in rects:
        mask |= (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
    return mask


def render_view(world: World, cam: Camera) -> CameraView:
    h, w = cam.image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    occ = _occlusion_mask(world.occluders.get(cam.camera_id, []), cam.image_size)
    canvas = np.zeros((h, w), dtype=np.float64)
    boxes, ids, vis = [], [], []
    for k, p in enumerate(world.persons):
        cx, cy, sigma = projected_sigma(cam.h_ground_to_image, p)
        if not (0 <= cx < w and 0 <= cy < h) or sigma <= 0:
            log.warning("person %d projects outside camera %d, skipped", k, cam.camera_id)
            continue
        blob = p.intensity * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))
        canvas = np.maximum(canvas, blob)
        mass = blob.sum()
        visible = blob[~occ].sum() / mass if mass > 0 else 0.0
        if visible < MIN_VISIBLE:
            continue
        x0, y0 = max(0.0, cx - 2 * sigma), max(0.0, cy - 2 * sigma)
        x1, y1 = min(float(w), cx + 2 * sigma), min(float(h), cy + 2 * sigma)
        boxes.append(DetectionBox(x0, y0, x1 - x0, y1 - y0, 1.0))
        ids.append(k)
        vis.append(float(visible))
    if world.background > 0:
        bg_rng = np.random.default_rng([world.seed, cam.camera_id])
        canvas = np.maximum(canvas, world.background * bg_rng.random((h, w)))
    canvas[occ] = 0.0
    stimulus = np.repeat(np.clip(canvas, 0.0, 1.0)[None], 3, axis=0).astype(np.float32)
    return CameraView(cam.camera_id, cam.h_ground_to_image, cam.image_size, stimulus, boxes, ids, vis)


def cross_view_homography(cam_a, cam_b) -> Homography:
    """Image-a pixels to image-b pixels, exact for ground-plane points."""
    ha = cam_a.h_ground_to_image if isinstance(cam_a, (Camera, CameraView)) else cam_a
    hb = cam_b.h_ground_to_image if isinstance(cam_b, (Camera, CameraView)) else cam_b
    if ha == hb:
        return Homography.identity()
    return Homography(hb.m @ np.linalg.inv(ha.m))


def boxes_to_mask(boxes, image_size) -> np.ndarray:
    h, w = image_size
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    mask = np.zeros((h, w), dtype=bool)
    for b in boxes:
        mask |= (xx >= b.x) & (xx < b.x + b.w) & (yy >= b.y) & (yy < b.y + b.h)
    return mask
