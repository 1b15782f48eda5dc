import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridvc.core import DimensionError
from hybridvc.flow import FlowConfig, block_vectors, estimate_flow, prior_flows
from hybridvc.mc import warp

from clips import pink_texture


def _texture(size=64, seed=7):
    t = pink_texture(size, beta=1.0, seed=seed)
    return np.clip(128 + 50 * t, 0, 255).astype(np.uint8)


def oracle_search(src, dst, bs, rng):
    """Single-level exhaustive block search with edge-clamped reads."""
    src = src.astype(np.int64)
    dst = dst.astype(np.int64)
    h, w = src.shape
    out = np.zeros((-(-h // bs), -(-w // bs), 2), np.int64)
    for by in range(out.shape[0]):
        for bx in range(out.shape[1]):
            ys = np.arange(by * bs, min(h, by * bs + bs))
            xs = np.arange(bx * bs, min(w, bx * bs + bs))
            best = None
            for vy in range(-rng, rng + 1):
                for vx in range(-rng, rng + 1):
                    yy = np.clip(ys + vy, 0, h - 1)
                    xx = np.clip(xs + vx, 0, w - 1)
                    sad = np.abs(src[np.ix_(ys, xs)] - dst[np.ix_(yy, xx)]).sum()
                    # smaller SAD, then smaller |v|^2, then dy, then dx
                    key = (sad, vx * vx + vy * vy, vy, vx)
                    if best is None or key < best[0]:
                        best = (key, vx, vy)
            out[by, bx] = best[1], best[2]
    return out


def test_identical_frames_give_zero_flow():
    a = _texture()
    assert not estimate_flow(a, a).vectors.any()


def test_integer_shift_recovered():
    a = _texture(96)
    lo = a[16:80, 14:78]  # lo(p) = a(p + 14)
    hi = a[16:80, 16:80]  # hi(p) = a(p + 16)
    f = estimate_flow(hi, lo)
    assert np.all(f.vectors[8:56, 8:56] == (32, 0))
    f = estimate_flow(lo, hi)
    assert np.all(f.vectors[8:56, 8:56] == (-32, 0))


def test_half_pel_shift_recovered():
    a = _texture(96).astype(np.int32)
    # dst holds samples of a shifted by half a pel, built by averaging neighbours
    half = (a[:, :-1] + a[:, 1:] + 1) >> 1
    src = a[16:80, 16:80].astype(np.uint8)
    dst = half[16:80, 16:80].astype(np.uint8)
    f = estimate_flow(src, dst)
    inner = f.vectors[8:56, 8:56]
    assert np.mean(np.all(inner == (-8, 0), axis=-1)) > 0.9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.sampled_from([4, 8]))
def test_single_level_matches_exhaustive_oracle(seed, rng, bs):
    r = np.random.default_rng(seed)
    dst = r.integers(0, 256, (24, 20)).astype(np.uint8)
    src = np.roll(dst, (int(r.integers(-2, 3)), int(r.integers(-2, 3))), axis=(0, 1))
    src = np.clip(src.astype(int) + r.integers(-4, 5, src.shape), 0, 255).astype(np.uint8)
    cfg = FlowConfig(pyramid_levels=1, block_size=bs, search_range=rng, half_pel=False)
    assert np.array_equal(block_vectors(src, dst, cfg), 16 * oracle_search(src, dst, bs, rng))


def test_flat_blocks_prefer_zero():
    a = np.full((32, 32), 90, np.uint8)
    assert not block_vectors(a, a, FlowConfig(pyramid_levels=1)).any()


def test_prior_flows_are_opposite_for_a_pan():
    a = _texture(128)
    ref0 = a[32:96, 28:92]
    ref1 = a[32:96, 36:100]  # ref1(p) = ref0(p + 8)
    p10, p01 = prior_flows(ref0, ref1)
    assert np.all(p10.vectors[8:56, 8:48] == (128, 0))
    assert np.all(p01.vectors[8:56, 16:56] == (-128, 0))


def test_zoom_flow_points_radially():
    a = _texture(128)
    yy, xx = np.mgrid[0:128, 0:128]
    # src(p) = a(c + 1.1 (p - c)), so the true flow is 0.1 (p - c)
    true = np.stack([(xx - 63.5) * 1.6, (yy - 63.5) * 1.6], axis=-1)
    src = warp(a, np.round(true).astype(np.int32)).samples
    f = estimate_flow(src, a).vectors[16:112, 16:112].astype(float)
    err = np.abs(f - true[16:112, 16:112])
    assert np.median(err) <= 16
    assert f[:, 64:, 0].mean() > 40 and f[:, :32, 0].mean() < -40
    assert f[64:, :, 1].mean() > 40 and f[:32, :, 1].mean() < -40


def test_shape_mismatch_and_bad_config():
    with pytest.raises(DimensionError):
        estimate_flow(np.zeros((16, 16)), np.zeros((16, 8)))
    for bad in (dict(pyramid_levels=0), dict(search_range=0), dict(block_size=0)):
        with pytest.raises(ValueError):
            FlowConfig(**bad)
