"""Motion modes: initialization, quantization and pixel-flow expansion.

Three modes describe a block's bi-directional motion:

* TMerge: half of the prior flow between the references, nothing sent.
* TScale: the prior flows scaled componentwise by two transmitted 2-D
  factors (1/10 precision).
* MV: one transmitted half-pel vector per direction.

Prior flows are named by direction: ``prior_10`` maps ref1 onto ref0
(the flow from the future reference back to the past one) and
``prior_01`` the reverse.  The flow to ref0 is derived from ``prior_10``
and the flow to ref1 from ``prior_01``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import (
    DEFAULT_MV_BOUND,
    DEFAULT_SCALE_BOUND,
    HALF_PEL,
    MERGE_SCALE,
    SCALE_UNIT,
    DimensionError,
    Mode,
    ModeDecision,
    MotionField,
    PartitionTree,
    nb_round_div,
    round_div,
)


def _field(f) -> np.ndarray:
    return f.vectors if isinstance(f, MotionField) else np.asarray(f)


def _block_sums(f: np.ndarray, block) -> tuple[int, int, int]:
    x, y, size = block
    region = f[y:y + size, x:x + size]
    if region.shape[:2] != (size, size):
        raise DimensionError(f"flow does not cover block {block}")
    return int(region[..., 0].sum(dtype=np.int64)), int(region[..., 1].sum(dtype=np.int64)), size * size


def init_tmerge(block=(0, 0, 64)) -> ModeDecision:
    x, y, size = block
    return ModeDecision(Mode.TMERGE, x, y, size)


def scale_ratio(num_sum: int, den_sum: int, count: int, bound: int = DEFAULT_SCALE_BOUND) -> int:
    """Quantized ratio of two block means in 1/10 units.

    Falls back to 0.5 when the denominator's mean is under 1/16 pel.
    """
    if abs(den_sum) < count:
        return MERGE_SCALE
    s = round_div(SCALE_UNIT * num_sum, den_sum)
    return max(-bound, min(bound, s))


def init_tscale(block, flow_cur_to_ref0, flow_cur_to_ref1, prior_01, prior_10,
                bound: int = DEFAULT_SCALE_BOUND) -> ModeDecision:
    """TScale start point from block-mean flows.

    ``s0 = mean(cur->ref0) / mean(ref1->ref0)`` and
    ``s1 = mean(cur->ref1) / mean(ref0->ref1)``, per component.
    """
    c0x, c0y, n = _block_sums(_field(flow_cur_to_ref0), block)
    c1x, c1y, _ = _block_sums(_field(flow_cur_to_ref1), block)
    p10x, p10y, _ = _block_sums(_field(prior_10), block)
    p01x, p01y, _ = _block_sums(_field(prior_01), block)
    params = (scale_ratio(c0x, p10x, n, bound), scale_ratio(c0y, p10y, n, bound),
              scale_ratio(c1x, p01x, n, bound), scale_ratio(c1y, p01y, n, bound))
    x, y, size = block
    return ModeDecision(Mode.TSCALE, x, y, size, params)


def mean_to_half_pel(total: int, count: int, bound: int = DEFAULT_MV_BOUND) -> int:
    v = round_div(total, count * HALF_PEL) * HALF_PEL
    lim = bound - bound % HALF_PEL
    return max(-lim, min(lim, v))


def init_mv(block, flow_cur_to_ref0, flow_cur_to_ref1=None,
            bound: int = DEFAULT_MV_BOUND) -> ModeDecision:
    """MV start point: block-mean flows snapped to half-pel.

    Without ``flow_cur_to_ref1`` the decision is uni-directional and the
    second vector is zero.
    """
    sx, sy, n = _block_sums(_field(flow_cur_to_ref0), block)
    p = [mean_to_half_pel(sx, n, bound), mean_to_half_pel(sy, n, bound), 0, 0]
    if flow_cur_to_ref1 is not None:
        tx, ty, _ = _block_sums(_field(flow_cur_to_ref1), block)
        p[2] = mean_to_half_pel(tx, n, bound)
        p[3] = mean_to_half_pel(ty, n, bound)
    x, y, size = block
    return ModeDecision(Mode.MV, x, y, size, tuple(p))


# ---------------------------------------------------------------------------
# block decision arrays


@dataclass
class Decisions:
    """Per-leaf decisions of a frame as parallel arrays, in coding order."""

    xs: np.ndarray
    ys: np.ndarray
    sizes: np.ndarray
    modes: np.ndarray
    params: np.ndarray  # (n, 4)

    def __len__(self) -> int:
        return len(self.xs)

    @classmethod
    def from_leaves(cls, leaves, mode: Mode = Mode.TMERGE) -> "Decisions":
        n = len(leaves)
        arr = np.array(leaves, dtype=np.int32).reshape(n, 3)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(),
                   np.full(n, int(mode), np.int32), np.zeros((n, 4), np.int32))

    @classmethod
    def from_modes(cls, decisions) -> "Decisions":
        decisions = list(decisions)
        d = cls.from_leaves([(m.x, m.y, m.size) for m in decisions])
        for i, m in enumerate(decisions):
            d.modes[i] = int(m.mode)
            d.params[i] = m.params
        return d

    def copy(self) -> "Decisions":
        return Decisions(self.xs.copy(), self.ys.copy(), self.sizes.copy(),
                         self.modes.copy(), self.params.copy())

    @property
    def leaves(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(zip(self.xs.tolist(), self.ys.tolist(), self.sizes.tolist()))

    def partition(self, width: int, height: int) -> PartitionTree:
        return PartitionTree(width, height, self.leaves)

    def to_modes(self) -> list[ModeDecision]:
        return [ModeDecision(Mode(int(m)), int(x), int(y), int(s), tuple(int(v) for v in p))
                for x, y, s, m, p in zip(self.xs, self.ys, self.sizes, self.modes, self.params)]

    def key(self) -> bytes:
        return b"".join(a.astype(np.int32).tobytes() for a in
                        (self.xs, self.ys, self.sizes, self.modes, self.params))


# ---------------------------------------------------------------------------
# expansion


@njit(cache=True, inline="always")
def _clamp(v, b):
    return -b if v < -b else (b if v > b else v)


@njit(cache=True)
def fill_leaf_flow(f0, f1, p01, p10, x, y, z, mode, params, bound, bi):
    if mode == 2:
        for yy in range(y, y + z):
            for xx in range(x, x + z):
                f0[yy, xx, 0] = params[0]
                f0[yy, xx, 1] = params[1]
                if bi:
                    f1[yy, xx, 0] = params[2]
                    f1[yy, xx, 1] = params[3]
        return
    if mode == 1:
        s0x, s0y, s1x, s1y = params[0], params[1], params[2], params[3]
    else:
        s0x = s0y = s1x = s1y = 5
    for yy in range(y, y + z):
        for xx in range(x, x + z):
            f0[yy, xx, 0] = _clamp(nb_round_div(np.int64(p10[yy, xx, 0]) * s0x, 10), bound)
            f0[yy, xx, 1] = _clamp(nb_round_div(np.int64(p10[yy, xx, 1]) * s0y, 10), bound)
            f1[yy, xx, 0] = _clamp(nb_round_div(np.int64(p01[yy, xx, 0]) * s1x, 10), bound)
            f1[yy, xx, 1] = _clamp(nb_round_div(np.int64(p01[yy, xx, 1]) * s1y, 10), bound)


@njit(cache=True)
def fill_all(f0, f1, p01, p10, xs, ys, sizes, modes, params, bound, bi):
    for n in range(xs.shape[0]):
        fill_leaf_flow(f0, f1, p01, p10, xs[n], ys[n], sizes[n], modes[n], params[n], bound, bi)


def expand_to_pixel_flow(decisions, prior_01, prior_10, bound: int = DEFAULT_MV_BOUND):
    """Pixel flows ``(to ref0, to ref1)`` for a tiling set of block decisions."""
    dec = decisions if isinstance(decisions, Decisions) else Decisions.from_modes(decisions)
    p01 = np.ascontiguousarray(_field(prior_01), dtype=np.int32)
    p10 = np.ascontiguousarray(_field(prior_10), dtype=np.int32)
    h, w = p01.shape[:2]
    if p10.shape != p01.shape:
        raise DimensionError("prior flows differ in size")
    PartitionTree(w, h, dec.leaves)  # validates tiling
    f0 = np.zeros((h, w, 2), np.int32)
    f1 = np.zeros((h, w, 2), np.int32)
    fill_all(f0, f1, p01, p10, dec.xs, dec.ys, dec.sizes, dec.modes, dec.params, bound, True)
    return MotionField(f0), MotionField(f1)
