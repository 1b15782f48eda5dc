import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridvc.entropy import (
    BYPASS, COUNT_LIMIT, CTX_MAG, CTX_SIG, N_CTX, DecodeError, RangeDecoder, band_table,
    code_coefficients, coef_estimate, coefficient_bins, coefficient_bits, decode_coefficients,
    estimate_rate, fresh_counts, range_decode, range_encode)
from hybridvc.wavelet import SUBBAND_TAGS, band_rect, coefficient_skip_mask, parse_tag


def oracle_cost(ctxs, vals):
    """-log2 p of each bin under count models, written from the model definition."""
    n = {}
    out = []
    for c, b in zip(ctxs, vals):
        c, b = int(c), int(b)
        if c == BYPASS:
            out.append(1.0)
            continue
        n0, n1 = n.get(c, (1, 1))
        out.append(-math.log2((n1 if b else n0) / (n0 + n1)))
        n0, n1 = (n0, n1 + 1) if b else (n0 + 1, n1)
        if n0 + n1 > COUNT_LIMIT:
            n0, n1 = (n0 + 1) // 2, (n1 + 1) // 2
        n[c] = (n0, n1)
    return out


def oracle_bins(q, skip):
    """Coefficient binarization written directly from its description."""
    h, w = q.shape
    ctxs, vals = [], []
    sig = (q != 0) & ~skip
    for b, tag in enumerate(SUBBAND_TAGS):
        orient, k = parse_tag(tag)
        group = 0 if orient == "LL" else 5 - k
        r0, c0, bh, bw = band_rect(tag, h, w)
        for i in range(bh):
            for j in range(bw):
                r, c = r0 + i, c0 + j
                if skip[r, c]:
                    continue
                nb = [(i, j - 1), (i - 1, j - 1), (i - 1, j), (i - 1, j + 1)]
                cnt = sum(sig[r0 + a, c0 + d] for a, d in nb if 0 <= a and 0 <= d < bw)
                v = int(q[r, c])
                ctxs.append(CTX_SIG + 3 * b + min(cnt, 2))
                vals.append(int(v != 0))
                if v == 0:
                    continue
                ctxs.append(BYPASS)
                vals.append(int(v < 0))
                m = abs(v) - 1
                e = (m + 1).bit_length() - 1
                for t in range(e):
                    ctxs.append(CTX_MAG + 6 * group + min(t, 5))
                    vals.append(1)
                ctxs.append(CTX_MAG + 6 * group + min(e, 5))
                vals.append(0)
                suffix = m + 1 - (1 << e)
                for t in range(e - 1, -1, -1):
                    ctxs.append(BYPASS)
                    vals.append((suffix >> t) & 1)
    return ctxs, vals


def _sparse_coeffs(rng, h, w, density=0.2, scale=6.0):
    q = np.round(rng.laplace(0, scale, (h, w))).astype(np.int32)
    q[rng.random((h, w)) > density] = 0
    return q


def test_round_trip_mixed_contexts():
    rng = np.random.default_rng(0)
    n = 50_000
    ctxs = rng.integers(-1, 12, n).astype(np.int32)
    p = rng.random(12)
    vals = (rng.random(n) < np.where(ctxs >= 0, p[ctxs], 0.5)).astype(np.int8)
    data = range_encode(ctxs, vals)
    assert range_decode(data, ctxs) == vals.tolist()


@pytest.mark.parametrize("p", [0.5, 0.9, 0.99, 0.001])
def test_compression_near_shannon(p):
    rng = np.random.default_rng(1)
    n = 100_000
    vals = (rng.random(n) < p).astype(np.int8)
    data = range_encode(np.zeros(n, np.int32), vals)
    k = int(vals.sum())
    # empirical entropy of the realised sequence
    h = -(k * math.log2(k / n) + (n - k) * math.log2(1 - k / n)) if 0 < k < n else 0.0
    assert len(data) <= h / 8 * 1.01 + 16
    assert range_decode(data, np.zeros(n, np.int32)) == vals.tolist()


def test_estimator_matches_oracle_and_coder():
    rng = np.random.default_rng(2)
    n = 20_000
    ctxs = rng.integers(-1, 4, n).astype(np.int32)
    vals = (rng.random(n) < 0.2 + 0.2 * (ctxs % 3)).astype(np.int8)
    total, per = estimate_rate(ctxs, vals, owners=ctxs + 1, n_owners=5)
    want = oracle_cost(ctxs, vals)
    assert total == pytest.approx(sum(want), rel=1e-12)
    assert per.sum() == pytest.approx(total)
    assert abs(8 * len(range_encode(ctxs, vals)) - total) <= 0.01 * total + 64


def test_count_halving_keeps_models_bounded():
    n = 5 * COUNT_LIMIT
    ctxs = np.zeros(n, np.int32)
    vals = np.ones(n, np.int8)
    cost = oracle_cost(ctxs, vals)
    assert estimate_rate(ctxs, vals) == pytest.approx(sum(cost), rel=1e-12)
    assert range_decode(range_encode(ctxs, vals), ctxs) == [1] * n


def test_empty_and_truncated_payloads():
    assert range_decode(range_encode([], []), []) == []
    with pytest.raises(DecodeError):
        RangeDecoder(b"\x01\x02")
    ctxs = np.zeros(4000, np.int32)
    vals = (np.arange(4000) % 3 == 0).astype(np.int8)
    data = range_encode(ctxs, vals)
    dec = RangeDecoder(data[: len(data) // 2])
    with pytest.raises(DecodeError):
        for c in ctxs:
            dec.decode(int(c))
    with pytest.raises(ValueError):
        range_encode([0, 0], [1])


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([(64, 64), (64, 128), (128, 64)]), st.integers(0, 2**32 - 1),
       st.booleans())
def test_coefficient_bins_match_oracle(shape, seed, with_skip):
    rng = np.random.default_rng(seed)
    h, w = shape
    q = _sparse_coeffs(rng, h, w)
    skip = np.zeros((h, w), bool)
    if with_skip:
        flags = rng.random((1, 1)) < 0.5 if shape == (64, 64) else rng.random(
            (-(-h // 64), -(-w // 64))) < 0.5
        skip = coefficient_skip_mask(flags, h, w, 64)
    ctx, val = coefficient_bins(q, skip)
    octx, oval = oracle_bins(q, skip)
    assert ctx.tolist() == octx and val.tolist() == oval
    data = code_coefficients(q, skip)
    back = decode_coefficients(data, h, w, skip, check_causal=True)
    assert np.array_equal(back, np.where(skip, 0, q))


def test_large_magnitudes_round_trip():
    q = np.zeros((64, 64), np.int32)
    q[0, 0] = 70_000
    q[5, 40] = -123_456
    q[63, 63] = 1
    assert np.array_equal(decode_coefficients(code_coefficients(q), 64, 64), q)


def test_fast_coefficient_estimate_matches_reference_pass():
    rng = np.random.default_rng(3)
    for density in (0.0, 0.05, 0.5):
        q = _sparse_coeffs(rng, 128, 128, density)
        skip = np.zeros((128, 128), bool)
        skip[:, 64:] = rng.random() < 0.5
        bits, total = coefficient_bits(q, skip)
        counts = fresh_counts()
        fast_bits = np.zeros((128, 128))
        fast = coef_estimate(q, skip, band_table(128, 128), counts, fast_bits, True)
        assert fast == pytest.approx(total, rel=1e-9, abs=1e-9)
        assert np.allclose(fast_bits, bits, rtol=1e-9, atol=1e-12)
        ctx, val = coefficient_bins(q, skip)
        assert total == pytest.approx(sum(oracle_cost(ctx, val)), rel=1e-9)


def test_estimated_coefficient_bits_track_payload():
    rng = np.random.default_rng(4)
    q = _sparse_coeffs(rng, 128, 128, 0.3)
    _, est = coefficient_bits(q)
    actual = 8 * len(code_coefficients(q))
    assert abs(actual - est) <= 0.02 * est + 64


def test_context_layout_fits():
    assert fresh_counts().shape == (N_CTX, 2)
    bands = band_table(64, 64)
    assert bands[:, 4].tolist() == list(range(13))
    assert sorted(set(bands[:, 5].tolist())) == [0, 1, 2, 3, 4]
