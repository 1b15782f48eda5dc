"""Incremental residual simulation for parameter refinement.

A refinement probe changes the prediction of one block.  The integer
lifting transform is local, so only a small dependency cone of every
intermediate stage can change.  :class:`ResidualState` keeps all stages
(residual, row and column passes of each analysis level, quantized
coefficients, both passes of each synthesis level and per-pixel squared
error) and recomputes just the boxes a probe reaches.

Planes are stacked in one array per state; a probe writes a *trial* stack
and records the boxes it touched, which are then copied to or back from
the *committed* stack.  The rate pass still runs over every coefficient
(contexts adapt in scan order), but only when some quantized value
actually changed.  Results are identical to a full simulation.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .entropy import N_CTX, coef_estimate
from .wavelet import LEVELS

P_RES = 0
P_ROW = 1  # + level
P_COL = P_ROW + LEVELS
P_Q = P_COL + LEVELS
P_IROW = P_Q + 1  # inverse column pass output, + level
P_ICOL = P_IROW + LEVELS  # inverse row pass output, + level
P_ERR = P_ICOL + LEVELS
N_PLANES = P_ERR + 1
MAX_BOXES = 16 * LEVELS + 8


@njit(cache=True, inline="always")
def _quant(v, q_step, two_q):
    # both operands of the division are small non-negative integers, so
    # the float quotient truncates to the exact floor
    a = np.float64(2 * v + q_step if v >= 0 else -2 * v + q_step)
    m = np.int32(a / two_q)
    return m if v >= 0 else -m


@njit(cache=True, inline="always")
def _union(lo1, hi1, lo2, hi2):
    if lo1 > hi1:
        return lo2, hi2
    if lo2 > hi2:
        return lo1, hi1
    return min(lo1, lo2), max(hi1, hi2)


@njit(cache=True, inline="always")
def _analysis_ranges(a, b, half):
    # input samples [a, b) changed -> inclusive low (s) and high (d) ranges
    dlo = max(0, (a - 1) // 2)
    dhi = min(half - 1, (b - 1) // 2)
    return dlo, min(half - 1, dhi + 1), dlo, dhi


@njit(cache=True, inline="always")
def _synthesis_ranges(llo, lhi, hlo, hhi, half):
    # low/high inputs changed -> inclusive even (e) and odd (o) output ranges
    if hlo > hhi:
        elo, ehi = llo, lhi
    else:
        elo, ehi = _union(llo, lhi, hlo, min(half - 1, hhi + 1))
    if elo > ehi:
        return elo, ehi, hlo, hhi
    olo, ohi = _union(hlo, hhi, max(0, elo - 1), ehi)
    return elo, ehi, olo, ohi


@njit(cache=True, inline="always")
def _push(boxes, nb, p, r0, r1, c0, c1):
    if r0 < r1 and c0 < c1:
        boxes[nb, 0] = p
        boxes[nb, 1] = r0
        boxes[nb, 2] = r1
        boxes[nb, 3] = c0
        boxes[nb, 4] = c1
        nb += 1
    return nb


@njit(cache=True)
def copy_boxes(src, dst, boxes, nb):
    for k in range(nb):
        p = boxes[k, 0]
        for r in range(boxes[k, 1], boxes[k, 2]):
            for c in range(boxes[k, 3], boxes[k, 4]):
                dst[p, r, c] = src[p, r, c]


@njit(cache=True)
def _rows_fwd(src, dst, r0, r1, ww, slo, shi, dlo, dhi):
    half = ww // 2
    for r in range(r0, r1):
        for i in range(dlo, dhi + 1):
            e1 = src[r, 2 * i + 2] if i < half - 1 else src[r, 2 * i]
            dst[r, half + i] = src[r, 2 * i + 1] - ((src[r, 2 * i] + e1) >> 1)
        for i in range(slo, shi + 1):
            dm = dst[r, half + i - 1] if i > 0 else dst[r, half]
            dst[r, i] = src[r, 2 * i] + ((dm + dst[r, half + i] + 2) >> 2)


@njit(cache=True)
def _cols_fwd(src, dst, hh, c0, c1, slo, shi, dlo, dhi):
    hf = hh // 2
    for i in range(dlo, dhi + 1):
        dn = 2 * i + 2 if i < hf - 1 else 2 * i
        for c in range(c0, c1):
            dst[hf + i, c] = src[2 * i + 1, c] - ((src[2 * i, c] + src[dn, c]) >> 1)
    for i in range(slo, shi + 1):
        up = hf + i - 1 if i > 0 else hf
        for c in range(c0, c1):
            dst[i, c] = src[2 * i, c] + ((dst[up, c] + dst[hf + i, c] + 2) >> 2)


@njit(cache=True)
def _quant_box(col, q, ref, q_step, two_q, r0, r1, c0, c1, chg):
    # quantize a box of coefficients; grow chg = [rlo, rhi, clo, chi] to
    # cover every value that differs from the committed plane ``ref``
    for r in range(r0, r1):
        for c in range(c0, c1):
            v = _quant(col[r, c], q_step, two_q)
            q[r, c] = v
            if v != ref[r, c]:
                chg[0] = min(chg[0], r)
                chg[1] = max(chg[1], r)
                chg[2] = min(chg[2], c)
                chg[3] = max(chg[3], c)


@njit(cache=True)
def _cols_inv(q, ll, use_ll, dst, hh, ww, q_step, c0, c1, elo, ehi, olo, ohi):
    hf = hh // 2
    half = ww // 2
    for i in range(elo, ehi + 1):
        im = i - 1 if i > 0 else 0
        for c in range(c0, c1):
            s = ll[i, c] if use_ll and c < half else q[i, c] * q_step
            dst[2 * i, c] = s - ((q[hf + im, c] * q_step + q[hf + i, c] * q_step + 2) >> 2)
    for i in range(olo, ohi + 1):
        dn = 2 * i + 2 if i < hf - 1 else 2 * i
        for c in range(c0, c1):
            dst[2 * i + 1, c] = q[hf + i, c] * q_step + ((dst[2 * i, c] + dst[dn, c]) >> 1)


@njit(cache=True)
def _rows_inv(src, dst, r0, r1, ww, elo, ehi, olo, ohi):
    half = ww // 2
    for r in range(r0, r1):
        for i in range(elo, ehi + 1):
            dm = src[r, half + i - 1] if i > 0 else src[r, half]
            dst[r, 2 * i] = src[r, i] - ((dm + src[r, half + i] + 2) >> 2)
        for i in range(olo, ohi + 1):
            e1 = dst[r, 2 * i + 2] if i < half - 1 else dst[r, 2 * i]
            dst[r, 2 * i + 1] = src[r, half + i] + ((dst[r, 2 * i] + e1) >> 1)


@njit(cache=True)
def update(T, K, orig, pred, q_step, width, height, x0, y0, x1, y1, boxes, force):
    """Propagate a change of ``pred`` inside ``[y0, y1) x [x0, x1)``.

    Writes the trial stack ``T`` (``K`` is the committed stack), appends
    the touched boxes and returns ``(box count, SSE change, q changed)``.
    With ``force`` every recomputed coefficient counts as changed, which
    is how a state is built from scratch.
    """
    h, w = orig.shape
    nb = 0
    for r in range(y0, y1):
        for c in range(x0, x1):
            T[P_RES, r, c] = np.int32(orig[r, c]) - np.int32(pred[r, c])
    nb = _push(boxes, nb, P_RES, y0, y1, x0, x1)
    two_q = np.float64(2 * q_step)
    # changed-q bounding ranges per level: low rows, high rows, low cols, high cols
    chg = np.empty((LEVELS, 4, 2), np.int64)
    tmp = np.empty(4, np.int64)
    any_q = False
    ra, rb, ca, cb = y0, y1, x0, x1
    for lev in range(LEVELS):
        hh = h >> lev
        ww = w >> lev
        hf = hh // 2
        half = ww // 2
        src = T[P_RES] if lev == 0 else T[P_COL + lev - 1]
        rs_lo, rs_hi, rd_lo, rd_hi = _analysis_ranges(ra, rb, hf)
        cs_lo, cs_hi, cd_lo, cd_hi = _analysis_ranges(ca, cb, half)
        rows = T[P_ROW + lev]
        _rows_fwd(src, rows, ra, rb, ww, cs_lo, cs_hi, cd_lo, cd_hi)
        nb = _push(boxes, nb, P_ROW + lev, ra, rb, cs_lo, cs_hi + 1)
        nb = _push(boxes, nb, P_ROW + lev, ra, rb, half + cd_lo, half + cd_hi + 1)
        col = T[P_COL + lev]
        _cols_fwd(rows, col, hh, cs_lo, cs_hi + 1, rs_lo, rs_hi, rd_lo, rd_hi)
        _cols_fwd(rows, col, hh, half + cd_lo, half + cd_hi + 1, rs_lo, rs_hi, rd_lo, rd_hi)
        for a, b in ((rs_lo, rs_hi + 1), (hf + rd_lo, hf + rd_hi + 1)):
            nb = _push(boxes, nb, P_COL + lev, a, b, cs_lo, cs_hi + 1)
            nb = _push(boxes, nb, P_COL + lev, a, b, half + cd_lo, half + cd_hi + 1)
        # quantize the final bands of this level (LL only at the last one)
        for k in range(4):
            chg[lev, k, 0] = 1
            chg[lev, k, 1] = 0
        qp = T[P_Q]
        kq = K[P_Q]
        for quad in range(4):
            if quad == 0 and lev < LEVELS - 1:
                continue
            hi_r = quad >= 2
            hi_c = quad == 1 or quad == 3
            r0 = hf + rd_lo if hi_r else rs_lo
            r1 = hf + rd_hi + 1 if hi_r else rs_hi + 1
            c0 = half + cd_lo if hi_c else cs_lo
            c1 = half + cd_hi + 1 if hi_c else cs_hi + 1
            if r0 >= r1 or c0 >= c1:
                continue
            tmp[0] = r1
            tmp[1] = r0 - 1
            tmp[2] = c1
            tmp[3] = c0 - 1
            if force:
                tmp[0], tmp[1], tmp[2], tmp[3] = r0, r1 - 1, c0, c1 - 1
            _quant_box(col, qp, kq, q_step, two_q, r0, r1, c0, c1, tmp)
            nb = _push(boxes, nb, P_Q, r0, r1, c0, c1)
            if tmp[0] <= tmp[1]:
                any_q = True
                # split the changed box into section-relative ranges
                ri = 1 if hi_r else 0
                cj = 3 if hi_c else 2
                off_r = hf if hi_r else 0
                off_c = half if hi_c else 0
                chg[lev, ri, 0], chg[lev, ri, 1] = _union(
                    chg[lev, ri, 0], chg[lev, ri, 1], tmp[0] - off_r, tmp[1] - off_r)
                chg[lev, cj, 0], chg[lev, cj, 1] = _union(
                    chg[lev, cj, 0], chg[lev, cj, 1], tmp[2] - off_c, tmp[3] - off_c)
        ra, rb, ca, cb = rs_lo, rs_hi + 1, cs_lo, cs_hi + 1
    # synthesis, coarse to fine, driven by the changed coefficients
    ex0, ex1, ey0, ey1 = x0, x1, y0, y1
    if any_q:
        ll_r0, ll_r1, ll_c0, ll_c1 = 1, 0, 1, 0  # changed box of the synthesized LL
        for lev in range(LEVELS - 1, -1, -1):
            hh = h >> lev
            ww = w >> lev
            hf = hh // 2
            half = ww // 2
            rl0, rl1 = _union(chg[lev, 0, 0], chg[lev, 0, 1], ll_r0, ll_r1)
            rh0, rh1 = chg[lev, 1, 0], chg[lev, 1, 1]
            cl0, cl1 = _union(chg[lev, 2, 0], chg[lev, 2, 1], ll_c0, ll_c1)
            ch0, ch1 = chg[lev, 3, 0], chg[lev, 3, 1]
            if (rl0 > rl1 and rh0 > rh1) or (cl0 > cl1 and ch0 > ch1):
                ll_r0, ll_r1, ll_c0, ll_c1 = 1, 0, 1, 0
                continue
            # a changed low-section row/column index implies the full product
            # of changed rows and columns may differ; stay conservative
            elo, ehi, olo, ohi = _synthesis_ranges(rl0, rl1, rh0, rh1, hf)
            irow = T[P_IROW + lev]
            use_ll = lev < LEVELS - 1
            ll = T[P_ICOL + lev + 1] if use_ll else T[P_Q]
            for c0, c1 in ((cl0, cl1 + 1), (half + ch0, half + ch1 + 1)):
                if c0 >= c1:
                    continue
                _cols_inv(T[P_Q], ll, use_ll, irow, hh, ww, q_step, c0, c1, elo, ehi, olo, ohi)
                nb = _push(boxes, nb, P_IROW + lev, 2 * elo, 2 * ehi + 1, c0, c1)
                nb = _push(boxes, nb, P_IROW + lev, 2 * olo + 1, 2 * ohi + 2, c0, c1)
            r0 = min(2 * elo, 2 * olo + 1)
            r1 = max(2 * ehi, 2 * ohi + 1) + 1
            celo, cehi, colo, cohi = _synthesis_ranges(cl0, cl1, ch0, ch1, half)
            _rows_inv(irow, T[P_ICOL + lev], r0, r1, ww, celo, cehi, colo, cohi)
            c0 = min(2 * celo, 2 * colo + 1)
            c1 = max(2 * cehi, 2 * cohi + 1) + 1
            nb = _push(boxes, nb, P_ICOL + lev, r0, r1, c0, c1)
            ll_r0, ll_r1, ll_c0, ll_c1 = r0, r1 - 1, c0, c1 - 1
        if ll_r0 <= ll_r1:
            ey0 = min(ey0, ll_r0)
            ey1 = max(ey1, ll_r1 + 1)
            ex0 = min(ex0, ll_c0)
            ex1 = max(ex1, ll_c1 + 1)
    # squared error over the affected visible pixels
    dd = np.int64(0)
    rec = T[P_ICOL]
    for r in range(ey0, min(ey1, height)):
        for c in range(ex0, min(ex1, width)):
            v = np.int32(pred[r, c]) + rec[r, c]
            v = 0 if v < 0 else (255 if v > 255 else v)
            e = np.int32(orig[r, c]) - v
            T[P_ERR, r, c] = e * e
            dd += np.int64(e * e) - K[P_ERR, r, c]
    nb = _push(boxes, nb, P_ERR, ey0, min(ey1, height), ex0, min(ex1, width))
    return nb, dd, any_q


@njit(cache=True)
def build(T, K, orig, pred, q_step, width, height, bands, boxes):
    """Fill both stacks from scratch; returns ``(SSE, coefficient bits)``."""
    h, w = orig.shape
    T[:] = 0
    K[:] = 0
    nb, dd, _ = update(T, K, orig, pred, q_step, width, height, 0, 0, w, h, boxes, True)
    K[:] = T
    rate = coef_estimate(T[P_Q], np.zeros((h, w), np.bool_), bands,
                         np.ones((N_CTX, 2), np.int32), np.empty((1, 1), np.float64), False)
    return np.float64(dd), rate


class ResidualState:
    """Trial and committed stacks for one frame geometry."""

    def __init__(self, height: int, width: int):
        self.T = np.zeros((N_PLANES, height, width), np.int32)
        self.K = np.zeros((N_PLANES, height, width), np.int32)
        self.boxes = np.zeros((MAX_BOXES, 5), np.int64)
