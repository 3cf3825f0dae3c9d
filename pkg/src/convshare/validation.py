"""Input validation helpers shared by the library functions and estimators."""

import numpy as np


def _as_finite_f32(x, name):
    arr = np.asarray(x)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_feature_map(x, name="feature map"):
    """Return ``x`` as a finite float32 array of shape [C, H, W]."""
    arr = _as_finite_f32(x, name)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"{name} must have shape [C, H, W], got {arr.shape}")
    return arr


def check_image(x, name="image"):
    arr = check_feature_map(x, name)
    if arr.shape[0] != 3:
        raise ValueError(f"{name} must have 3 channels, got {arr.shape[0]}")
    return arr


def check_map2d(x, name="map"):
    arr = _as_finite_f32(x, name)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_channels(channels, n_channels, name="channels"):
    """Validate a channel selection against a layer width; keeps the given order."""
    chans = [int(c) for c in channels]
    if not chans:
        raise ValueError(f"{name} must be non-empty")
    if len(set(chans)) != len(chans):
        raise ValueError(f"{name} contains duplicates: {chans}")
    bad = [c for c in chans if not 0 <= c < n_channels]
    if bad:
        raise ValueError(f"{name} {bad} outside 0..{n_channels - 1}")
    return chans
