"""Pyramidal block-matching optical flow.

The estimate is a piecewise-constant field: one vector per block at the
finest level, copied to the block's pixels.  Everything is integer so the
decoder re-derives the prior flows bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import DEFAULT_MV_BOUND, DimensionError, MotionField, Plane

BIG = np.int64(1) << 62


@dataclass(frozen=True)
class FlowConfig:
    pyramid_levels: int = 3
    block_size: int = 8
    search_range: int = 8
    half_pel: bool = True
    bound: int = DEFAULT_MV_BOUND  # 1/16 pel

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.search_range < 1:
            raise ValueError("search_range must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")


@njit(cache=True)
def _downsample(a):
    h, w = a.shape
    h2 = (h + 1) // 2
    w2 = (w + 1) // 2
    out = np.empty((h2, w2), np.int32)
    for y in range(h2):
        y0 = 2 * y
        y1 = min(2 * y + 1, h - 1)
        for x in range(w2):
            x0 = 2 * x
            x1 = min(2 * x + 1, w - 1)
            out[y, x] = (a[y0, x0] + a[y0, x1] + a[y1, x0] + a[y1, x1] + 2) >> 2
    return out


@njit(cache=True, inline="always")
def _better(sad, vx, vy, best_sad, bx, by):
    if sad != best_sad:
        return sad < best_sad
    n1 = vx * vx + vy * vy
    n0 = bx * bx + by * by
    if n1 != n0:
        return n1 < n0
    if vy != by:
        return vy < by
    return vx < bx


@njit(cache=True)
def _block_sad_int(src, dst, x0, y0, bw, bh, vx, vy, limit):
    h, w = dst.shape
    s = np.int64(0)
    for y in range(y0, y0 + bh):
        yy = min(max(y + vy, 0), h - 1)
        for x in range(x0, x0 + bw):
            xx = min(max(x + vx, 0), w - 1)
            d = src[y, x] - dst[yy, xx]
            s += d if d >= 0 else -d
        if s > limit:
            return s
    return s


@njit(cache=True, inline="always")
def bilinear_sample(ref, x, y, ux, uy):
    """Sample ``ref`` at ``(x + ux/16, y + uy/16)`` with clamped taps."""
    h, w = ref.shape
    px = x * 16 + ux
    py = y * 16 + uy
    ix = px >> 4
    iy = py >> 4
    fx = px & 15
    fy = py & 15
    x0 = min(max(ix, 0), w - 1)
    x1 = min(max(ix + 1, 0), w - 1)
    y0 = min(max(iy, 0), h - 1)
    y1 = min(max(iy + 1, 0), h - 1)
    acc = ((16 - fx) * (16 - fy) * np.int64(ref[y0, x0]) + fx * (16 - fy) * np.int64(ref[y0, x1])
           + (16 - fx) * fy * np.int64(ref[y1, x0]) + fx * fy * np.int64(ref[y1, x1]))
    return (acc + 128) >> 8


@njit(cache=True)
def _block_sad_sub(src, dst, x0, y0, bw, bh, ux, uy, limit):
    s = np.int64(0)
    for y in range(y0, y0 + bh):
        for x in range(x0, x0 + bw):
            d = np.int64(src[y, x]) - bilinear_sample(dst, x, y, ux, uy)
            s += d if d >= 0 else -d
        if s > limit:
            return s
    return s


@njit(cache=True)
def _search_level(src, dst, bs, rng, pred, bound):
    h, w = src.shape
    nby = (h + bs - 1) // bs
    nbx = (w + bs - 1) // bs
    out = np.zeros((nby, nbx, 2), np.int64)
    for by in range(nby):
        y0 = by * bs
        bh = min(bs, h - y0)
        for bx in range(nbx):
            x0 = bx * bs
            bw = min(bs, w - x0)
            # zero vector is always a candidate
            best = _block_sad_int(src, dst, x0, y0, bw, bh, 0, 0, BIG)
            bvx = 0
            bvy = 0
            cx = pred[by, bx, 0]
            cy = pred[by, bx, 1]
            for vy in range(cy - rng, cy + rng + 1):
                if vy > bound or vy < -bound:
                    continue
                for vx in range(cx - rng, cx + rng + 1):
                    if vx > bound or vx < -bound:
                        continue
                    if vx == 0 and vy == 0:
                        continue
                    sad = _block_sad_int(src, dst, x0, y0, bw, bh, vx, vy, best)
                    if _better(sad, vx, vy, best, bvx, bvy):
                        best = sad
                        bvx = vx
                        bvy = vy
            out[by, bx, 0] = bvx
            out[by, bx, 1] = bvy
    return out


@njit(cache=True)
def _half_pel(src, dst, bs, vec, bound):
    h, w = src.shape
    nby, nbx = vec.shape[0], vec.shape[1]
    out = np.empty((nby, nbx, 2), np.int64)
    for by in range(nby):
        y0 = by * bs
        bh = min(bs, h - y0)
        for bx in range(nbx):
            x0 = bx * bs
            bw = min(bs, w - x0)
            cx = vec[by, bx, 0] * 16
            cy = vec[by, bx, 1] * 16
            best = _block_sad_sub(src, dst, x0, y0, bw, bh, cx, cy, BIG)
            bux = cx
            buy = cy
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    if dx == 0 and dy == 0:
                        continue
                    ux = cx + 8 * dx
                    uy = cy + 8 * dy
                    if ux > bound or ux < -bound or uy > bound or uy < -bound:
                        continue
                    sad = _block_sad_sub(src, dst, x0, y0, bw, bh, ux, uy, best)
                    if _better(sad, ux, uy, best, bux, buy):
                        best = sad
                        bux = ux
                        buy = uy
            out[by, bx, 0] = bux
            out[by, bx, 1] = buy
    return out


@njit(cache=True)
def _expand(vec, bs, h, w):
    field = np.empty((h, w, 2), np.int32)
    for y in range(h):
        by = y // bs
        for x in range(w):
            bx = x // bs
            field[y, x, 0] = vec[by, bx, 0]
            field[y, x, 1] = vec[by, bx, 1]
    return field


def block_vectors(src: np.ndarray, dst: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    """Per-block vectors (1/16 pel) at the finest level, shape ``(nby, nbx, 2)``."""
    src = np.ascontiguousarray(src, dtype=np.int32)
    dst = np.ascontiguousarray(dst, dtype=np.int32)
    pyr_s = [src]
    pyr_d = [dst]
    for _ in range(cfg.pyramid_levels - 1):
        pyr_s.append(_downsample(pyr_s[-1]))
        pyr_d.append(_downsample(pyr_d[-1]))
    bs = cfg.block_size
    vec = None
    for lev in range(cfg.pyramid_levels - 1, -1, -1):
        s, d = pyr_s[lev], pyr_d[lev]
        nby = -(-s.shape[0] // bs)
        nbx = -(-s.shape[1] // bs)
        if vec is None:
            pred = np.zeros((nby, nbx, 2), np.int64)
        else:
            iy = np.minimum(np.arange(nby) // 2, vec.shape[0] - 1)
            ix = np.minimum(np.arange(nbx) // 2, vec.shape[1] - 1)
            pred = np.ascontiguousarray(2 * vec[iy][:, ix])
        int_bound = (cfg.bound // 16) >> lev
        vec = _search_level(s, d, bs, cfg.search_range, pred, int_bound)
    if cfg.half_pel:
        return _half_pel(src, dst, bs, vec, cfg.bound)
    return vec * 16


def estimate_flow(src: Plane | np.ndarray, dst: Plane | np.ndarray,
                  cfg: FlowConfig | None = None) -> MotionField:
    """Flow such that ``src(p)`` is approximated by ``dst(p + flow(p))``."""
    cfg = cfg or FlowConfig()
    s = src.samples if isinstance(src, Plane) else np.asarray(src)
    d = dst.samples if isinstance(dst, Plane) else np.asarray(dst)
    if s.shape != d.shape:
        raise DimensionError(f"flow inputs differ: {s.shape} vs {d.shape}")
    vec = block_vectors(s, d, cfg)
    return MotionField(_expand(vec, cfg.block_size, s.shape[0], s.shape[1]))


def prior_flows(ref0, ref1, cfg: FlowConfig | None = None) -> tuple[MotionField, MotionField]:
    """Flows between the two references: ``(ref1 -> ref0, ref0 -> ref1)``."""
    return estimate_flow(ref1, ref0, cfg), estimate_flow(ref0, ref1, cfg)
