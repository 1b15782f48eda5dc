"""Fixed-point bilinear motion compensation."""

from __future__ import annotations

import numpy as np
from numba import njit

from .core import DimensionError, MotionField, Plane
from .flow import bilinear_sample


@njit(cache=True)
def warp_rect(ref, flow, out, x0, y0, x1, y1):
    for y in range(y0, y1):
        for x in range(x0, x1):
            out[y, x] = bilinear_sample(ref, x, y, flow[y, x, 0], flow[y, x, 1])


@njit(cache=True)
def bidir_rect(ref0, ref1, f0, f1, out, x0, y0, x1, y1):
    for y in range(y0, y1):
        for x in range(x0, x1):
            a = bilinear_sample(ref0, x, y, f0[y, x, 0], f0[y, x, 1])
            b = bilinear_sample(ref1, x, y, f1[y, x, 0], f1[y, x, 1])
            out[y, x] = (a + b + 1) >> 1


def _arrays(ref, flow):
    r = ref.samples if isinstance(ref, Plane) else np.asarray(ref)
    f = flow.vectors if isinstance(flow, MotionField) else np.asarray(flow)
    if f.shape[:2] != r.shape:
        raise DimensionError(f"flow {f.shape[:2]} does not match plane {r.shape}")
    return np.ascontiguousarray(r, dtype=np.uint8), np.ascontiguousarray(f, dtype=np.int32)


def warp(ref, flow) -> Plane:
    """Bilinear sample of ``ref`` at ``p + flow(p)`` for every pixel."""
    r, f = _arrays(ref, flow)
    out = np.empty(r.shape, np.uint8)
    warp_rect(r, f, out, 0, 0, r.shape[1], r.shape[0])
    return Plane(out)


def predict_uni(ref, flow) -> Plane:
    return warp(ref, flow)


def predict_bidir(ref0, ref1, f0, f1) -> Plane:
    """Equal-weight average of the two warps, rounded half up."""
    r0, a0 = _arrays(ref0, f0)
    r1, a1 = _arrays(ref1, f1)
    if r0.shape != r1.shape:
        raise DimensionError("reference planes differ in size")
    out = np.empty(r0.shape, np.uint8)
    bidir_rect(r0, r1, a0, a1, out, 0, 0, r0.shape[1], r0.shape[0])
    return Plane(out)
