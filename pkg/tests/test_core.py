import math
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridvc.core import (
    CodecConfig, DimensionError, Mode, ModeDecision, ModeToggles, MotionField, PartitionTree,
    Plane, RDCost, ResidualPlane, ScalePair, pad_to_ctu, preset_config, psnr,
    quantize_to_half_pel, round_div, round_half_away, sse)


def _round_away(fr: Fraction) -> int:
    # Decimal ROUND_HALF_UP rounds ties away from zero
    return int((Decimal(fr.numerator) / Decimal(fr.denominator)).quantize(
        Decimal(1), rounding=ROUND_HALF_UP))


@given(st.integers(-10**9, 10**9), st.integers(-5000, 5000).filter(bool))
def test_round_div_matches_exact_rational(num, den):
    assert round_div(num, den) == _round_away(Fraction(num, den))


def test_round_div_arrays_match_scalars():
    rng = np.random.default_rng(0)
    num = rng.integers(-1000, 1000, 500)
    den = rng.integers(1, 40, 500) * rng.choice([-1, 1], 500)
    got = round_div(num, den)
    assert got.tolist() == [round_div(int(a), int(b)) for a, b in zip(num, den)]


def test_round_div_ties():
    assert round_div(3, 2) == 2
    assert round_div(-3, 2) == -2
    assert round_div(36, 8) == 5
    with pytest.raises(ZeroDivisionError):
        round_div(1, 0)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_round_half_away_scalar(x):
    want = int(Decimal(x).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    assert round_half_away(x) == want


def test_round_half_away_array():
    x = np.array([-2.5, -1.5, -0.5, 0.5, 1.5, 2.4999, -2.4999])
    assert round_half_away(x).tolist() == [-3, -2, -1, 1, 2, 2, -2]


def test_quantize_to_half_pel():
    # 2.25 pel sits exactly between 2.0 and 2.5; ties go away from zero
    assert quantize_to_half_pel(36) == 40
    assert quantize_to_half_pel(-36) == -40
    assert quantize_to_half_pel(35) == 32
    assert quantize_to_half_pel(0) == 0


def test_plane_validation_and_bytes():
    p = Plane.from_bytes(bytes(range(12)), 4, 3)
    assert (p.width, p.height) == (4, 3)
    assert p.to_bytes() == bytes(range(12))
    assert not p.samples.flags.writeable
    with pytest.raises(DimensionError):
        Plane.from_bytes(b"\0" * 11, 4, 3)
    with pytest.raises(ValueError):
        Plane(np.array([[256]]))
    with pytest.raises(DimensionError):
        Plane(np.zeros(4))
    assert ResidualPlane(np.array([[-3, 4]])).samples.dtype == np.int32


def test_pad_to_ctu_replicates_edges():
    a = np.arange(70 * 65, dtype=np.int64).reshape(65, 70) % 251
    p = pad_to_ctu(Plane(a.astype(np.uint8)))
    assert (p.height, p.width) == (128, 128)
    assert np.array_equal(p.samples[:65, :70], a)
    assert np.all(p.samples[100, :70] == a[64])
    assert np.all(p.samples[:65, 127] == a[:, 69])


def test_sse_and_psnr_against_loops():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 256, (20, 30)).astype(np.uint8)
    b = rng.integers(0, 256, (20, 30)).astype(np.uint8)
    want = sum((int(a[y, x]) - int(b[y, x])) ** 2 for y in range(15) for x in range(25))
    assert sse(a, b, 25, 15) == want
    assert psnr(a, b, 25, 15) == pytest.approx(10 * math.log10(255 ** 2 * 375 / want))
    assert psnr(a, a) == math.inf
    with pytest.raises(DimensionError):
        sse(a, b[:, :29])


def test_motion_types():
    f = MotionField.constant(4, 5, 8, -16)
    assert f.vectors.shape == (4, 5, 2) and np.all(f.vectors[..., 1] == -16)
    assert MotionField.zeros(2, 3).width == 3
    with pytest.raises(DimensionError):
        MotionField(np.zeros((2, 3)))
    assert ScalePair.from_real(0.5, 0.55, -0.25, 1.0) == (5, 6, -3, 10)
    d = ModeDecision(Mode.MV, 0, 0, 16, (8, -16, 0, 24))
    assert d.vectors[0].dy == -16
    with pytest.raises(ValueError):
        ModeDecision(Mode.MV, params=(4, 0, 0, 0))


def test_partition_tree_split_flags_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(50):
        flags = {}

        def grow(x, y, s):
            if s > 8 and rng.random() < 0.5:
                flags[(x, y, s)] = True
                h = s // 2
                for dy in (0, h):
                    for dx in (0, h):
                        grow(x + dx, y + dy, h)

        for cy in (0, 64):
            for cx in (0, 64, 128):
                grow(cx, cy, 64)
        t = PartitionTree.from_split_flags(192, 128, flags)
        assert PartitionTree.from_split_flags(192, 128, t.split_flags()) == t
        assert sum(s * s for _, _, s in t.leaves) == 192 * 128


def test_partition_tree_rejects_bad_tilings():
    with pytest.raises(ValueError):
        PartitionTree(64, 64, ((0, 0, 32),))
    with pytest.raises(ValueError):
        PartitionTree(64, 64, ((4, 0, 8),))
    with pytest.raises(DimensionError):
        PartitionTree(60, 64, ())
    assert PartitionTree.uniform(128, 64, 32).leaves[:4] == (
        (0, 0, 32), (32, 0, 32), (0, 32, 32), (32, 32, 32))


def test_rd_cost():
    c = RDCost(100.0, 10.0, 2.0) + RDCost(1.0, 1.0, 2.0)
    assert c.j == 101.0 + 2.0 * 11.0
    with pytest.raises(ValueError):
        RDCost(-1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        RDCost(1.0, 0.0, 1.0) + RDCost(1.0, 0.0, 2.0)


def test_config_validation():
    for bad in (dict(q_step_base=0), dict(gop=6), dict(skip_unit=96), dict(intra_period=12),
                dict(fixed_block=24), dict(mv_bound=4), dict(refine_iters=-1)):
        with pytest.raises(ValueError):
            CodecConfig(**bad)
    cfg = CodecConfig(q_step_base=12)
    assert [cfg.q_step_for(layer) for layer in range(4)] == [12, 13, 14, 16]
    assert cfg.num_layers == 4


def test_presets_nest_their_tools():
    e2e = preset_config("e2e-tmerge")
    assert e2e.enabled_modes() == (Mode.TMERGE,)
    assert not e2e.refine_layers and e2e.fixed_block == 32
    assert preset_config("tscale").enabled_modes() == (Mode.TMERGE, Mode.TSCALE)
    full = preset_config("full")
    assert full.toggles == ModeToggles() and full.refine_layers == {1}
    assert preset_config("full", refine_layers={2}).refine_layers == {2}
    with pytest.raises(KeyError):
        preset_config("nope")
    for bits in range(16):
        assert ModeToggles.from_bits(bits).to_bits() == bits
