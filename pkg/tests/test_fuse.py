import numpy as np
import pytest
from hypothesis import given, strategies as st

from convshare.fuse import (
    GridSpec, Homography, channel_maxima, fuse_digest, fuse_digests, inject, load_homography,
    renormalize_gamma, resize_bilinear, save_homography, scale_homography_to_grid, warp_bilinear,
)
from convshare.summarize import C_A, C_L, build_digest
from convshare.tensorcore import detect_blobs
from convshare.trace import FusionParams, FusionPlan


def translation(tx, ty):
    return Homography(np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=float))


def test_homography_normalisation_and_errors(tmp_path):
    h = Homography(2 * np.array([[1, 0.1, 3], [0, 1, 4], [0.001, 0, 1]]))
    assert h.m[2, 2] == 1.0
    with pytest.raises(ValueError, match="singular"):
        Homography(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        Homography(np.eye(2))
    save_homography(tmp_path / "h.json", h)
    assert load_homography(tmp_path / "h.json") == h
    (tmp_path / "bad.json").write_text("[1, 2, 3]")
    with pytest.raises(ValueError):
        load_homography(tmp_path / "bad.json")


def test_scale_homography_examples():
    g = GridSpec(8, 8, 4)
    assert scale_homography_to_grid(Homography.identity(), g, g) == Homography.identity()
    scaled = scale_homography_to_grid(Homography.identity(), GridSpec(32, 32, 1), GridSpec(8, 8, 4))
    np.testing.assert_array_equal(scaled.m, np.diag([0.25, 0.25, 1.0]))
    np.testing.assert_allclose(scale_homography_to_grid(translation(8, 0), g, g).m, translation(2, 0).m)


def test_warp_examples():
    rng = np.random.default_rng(0)
    p = rng.random((6, 9)).astype(np.float32)
    assert np.array_equal(warp_bilinear(p, Homography.identity(), GridSpec(6, 9)), p)
    one = np.zeros((4, 4), dtype=np.float32)
    one[0, 0] = 1
    moved = warp_bilinear(one, translation(1, 0), GridSpec(4, 4))
    expected = np.zeros((4, 4), dtype=np.float32)
    expected[0, 1] = 1
    assert np.array_equal(moved, expected)
    gone = warp_bilinear(p, translation(100, 100), GridSpec(6, 9))
    assert not gone.any()


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 999))
def test_warp_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.random((5, 7)), rng.random((5, 7))
    h = Homography(np.array([[0.9, 0.05, 0.7], [-0.04, 1.1, -0.3], [0.002, 0.001, 1.0]]))
    out = GridSpec(6, 6)
    lhs = warp_bilinear((a * p + b * q).astype(np.float32), h, out)
    rhs = a * warp_bilinear(p.astype(np.float32), h, out) + b * warp_bilinear(q.astype(np.float32), h, out)
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


@given(seed=st.integers(0, 999), h=st.integers(1, 9), w=st.integers(1, 9), stride=st.sampled_from([1, 2, 4]))
def test_scaled_identity_warp_is_exact(seed, h, w, stride):
    p = np.random.default_rng(seed).random((h, w)).astype(np.float32)
    g = GridSpec(h, w, stride)
    hg = scale_homography_to_grid(Homography.identity(), g, g)
    assert np.array_equal(warp_bilinear(p, hg, g), p)


def test_resize_bilinear_identity_and_constant():
    x = np.random.default_rng(0).random((4, 6)).astype(np.float32)
    assert np.array_equal(resize_bilinear(x, (4, 6)), x)
    assert np.allclose(resize_bilinear(np.full((3, 3), 2.0), (7, 5)), 2.0)


def test_inject_examples():
    params = FusionParams(alpha=0.0)
    fmap = np.random.default_rng(1).random((3, 4, 4)).astype(np.float32)
    assert np.array_equal(inject(fmap, [0, 2], np.ones((4, 4)), C_A, params), fmap)
    out = inject(fmap, [1], np.ones((4, 4)), C_A, FusionParams(alpha=1.0))
    np.testing.assert_array_equal(out[1], fmap[1] + 1)
    assert np.array_equal(out[[0, 2]], fmap[[0, 2]])
    ch = np.full((1, 10, 10), 4.0, dtype=np.float32)
    ch[0, 0, :5] = 0.0  # 5% zeros keeps the 95th percentile at 4
    mask = np.zeros((10, 10), dtype=np.float32)
    mask[3, 7] = 1.0
    boosted = inject(ch, [0], mask, C_L, FusionParams(beta=1.0))
    diff = boosted - ch
    assert diff[0, 3, 7] == 4.0 and np.count_nonzero(diff) == 1
    with pytest.raises(ValueError, match="extent"):
        inject(fmap, [0], np.ones((3, 3)), C_A, params)


@given(seed=st.integers(0, 999))
def test_inject_locality(seed):
    rng = np.random.default_rng(seed)
    fmap = rng.random((2, 6, 6)).astype(np.float32)
    warped = np.where(rng.random((6, 6)) > 0.5, rng.random((6, 6)), 0).astype(np.float32)
    for kind in (C_A, C_L):
        out = inject(fmap, [0, 1], warped, kind, FusionParams(mask_rebinarize_tau=0.01))
        assert np.array_equal(out[:, warped == 0], fmap[:, warped == 0])


def test_renormalize_gamma_examples():
    ch = np.array([[[0.0, 2.0, 4.0]]], dtype=np.float32)
    out = renormalize_gamma(ch, [0], [4.0], 0.5)
    np.testing.assert_allclose(out[0, 0], [0, 4 * np.sqrt(0.5), 4], rtol=1e-6)
    assert np.array_equal(renormalize_gamma(ch, [0], [4.0], 1.0), ch)
    with pytest.raises(ValueError, match="negative"):
        renormalize_gamma(-ch, [0], [4.0], 0.5)
    with pytest.raises(ValueError):
        renormalize_gamma(ch, [0], [4.0], 1.5)


@given(seed=st.integers(0, 10_000), gamma=st.floats(0.05, 0.99), boost=st.floats(0.0, 3.0))
def test_gamma_lifts_values_and_keeps_rank(seed, gamma, boost):
    rng = np.random.default_rng(seed)
    fmap = rng.random((2, 5, 5)).astype(np.float32)
    pre = channel_maxima(fmap, [0, 1])
    injected = fmap + np.float32(boost) * rng.random((1, 5, 5)).astype(np.float32)
    rescaled = renormalize_gamma(injected, [0, 1], pre, 1.0)
    out = renormalize_gamma(injected, [0, 1], pre, gamma)
    for c in range(2):
        assert np.all(out[c] >= rescaled[c] * (1 - 1e-6))
        order = np.argsort(rescaled[c].ravel(), kind="stable")
        assert np.all(np.diff(out[c].ravel()[order]) >= 0)
        assert np.argmax(out[c]) == np.argmax(rescaled[c])


def _plan(alpha=1.0, beta=1.0, gamma=0.5, targets=(0, 1)):
    return FusionPlan(1, 9, targets, FusionParams(alpha, beta, gamma, 0.5), (0,), 10, (0,))


@given(seed=st.integers(0, 10_000), kind=st.sampled_from([C_A, C_L]))
def test_fuse_zero_weight_unit_gamma_is_identity(seed, kind):
    rng = np.random.default_rng(seed)
    fmap = rng.random((4, 6, 8)).astype(np.float32) * np.float32(rng.uniform(0.1, 5))
    src = rng.random((2, 24, 32)).astype(np.float32)
    d = build_digest(src, [0, 1], kind, source_node=1)
    h = Homography(np.array([[1.0, 0.02, rng.uniform(-3, 3)], [0.01, 0.98, rng.uniform(-3, 3)], [0, 0, 1]]))
    out = fuse_digest(fmap, d, h, (GridSpec(24, 32, 1), GridSpec(6, 8, 4)), _plan(0.0, 0.0, 1.0))
    assert out.tobytes() == fmap.tobytes()


def test_fuse_out_of_bounds_digest_is_identity():
    fmap = np.random.default_rng(2).random((3, 6, 8)).astype(np.float32)
    d = build_digest(np.ones((1, 24, 32), np.float32), [0], C_A)
    out = fuse_digest(fmap, d, translation(1000, 0), (GridSpec(24, 32, 1), GridSpec(6, 8, 4)), _plan(gamma=1.0))
    assert np.array_equal(out, fmap)


def test_fuse_errors():
    fmap = np.ones((3, 6, 8), np.float32)
    d = build_digest(np.ones((1, 24, 32), np.float32), [0], C_A, layer_index=2)
    grids = (GridSpec(24, 32, 1), GridSpec(6, 8, 4))
    with pytest.raises(ValueError, match="layer"):
        fuse_digest(fmap, d, Homography.identity(), grids, _plan())
    d = build_digest(np.ones((1, 24, 32), np.float32), [0], C_A)
    with pytest.raises(ValueError, match="grid"):
        fuse_digest(fmap, d, Homography.identity(), (GridSpec(20, 32, 1), grids[1]), _plan())
    with pytest.raises(ValueError, match="grid"):
        fuse_digest(fmap, d, Homography.identity(), (grids[0], GridSpec(5, 8, 4)), _plan())


def test_fusion_recovers_occluded_cell():
    # a person the reference barely sees gets lifted above the detector threshold
    fmap = np.zeros((1, 8, 8), dtype=np.float32)
    fmap[0, 1, 1] = 1.0  # a clearly visible person elsewhere
    fmap[0, 5, 5] = 0.1
    payload = np.zeros((8, 8), dtype=np.float32)
    payload[5, 5] = 0.95
    d = build_digest(payload[None], [0], C_A, source_node=1)
    plan = FusionPlan(1, 9, (0,), FusionParams(alpha=1.0, gamma=0.5), (0,), 10, (0,))
    fused = fuse_digest(fmap, d, Homography.identity(), (GridSpec(8, 8, 1), GridSpec(8, 8, 1)), plan)
    before = detect_blobs(fmap, [0], 0.3, 1)
    after = detect_blobs(fused, [0], 0.3, 1)
    assert not any(b.x == 5 and b.y == 5 for b in before)
    assert any(b.x == 5 and b.y == 5 for b in after)


def test_fuse_digests_order_is_by_source():
    rng = np.random.default_rng(4)
    fmap = rng.random((2, 6, 8)).astype(np.float32)
    d1 = build_digest(rng.random((1, 24, 32)), [0], C_A, source_node=1)
    d2 = build_digest(rng.random((1, 24, 32)), [0], C_A, source_node=2)
    homs = {1: Homography.identity(), 2: translation(4, 0)}
    grids = {k: (GridSpec(24, 32, 1), GridSpec(6, 8, 4)) for k in homs}
    a = fuse_digests(fmap, [d2, d1], homs, grids, _plan())
    b = fuse_digest(fuse_digest(fmap, d1, homs[1], grids[1], _plan()), d2, homs[2], grids[2], _plan())
    assert np.array_equal(a, b)
