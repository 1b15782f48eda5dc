"""Rate-distortion optimized mode, partition and residual-skip search.

The encoder evaluates a frame configuration by simulating the full coding
path (motion compensation, residual transform, quantization, rate
estimate, reconstruction) and scoring it with ``J = D + lam * R``.  The
search follows the hybrid scheme: per-mode initialization on a uniform
grid at every partition depth, optional local refinement of transmitted
parameters, per-block mode selection, a bottom-up partition decision and
finally a per-unit residual-skip decision.

Each frame also selects its own syntax (which modes may appear, fixed
block or quadtree partition, skip flags present or not; see
:class:`FrameTools`).  Simpler configurations therefore pay no rate for
syntax they do not use, so enabling a tool can only add candidates to the
search and never makes the best one worse.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .core import (
    CTU_SIZE,
    DEFAULT_MV_BOUND,
    DEFAULT_SCALE_BOUND,
    HALF_PEL,
    MIN_BLOCK,
    Mode,
    PartitionTree,
    RDCost,
    zorder_blocks,
)
from .entropy import (
    CTX_SKIP,
    N_CTX,
    _bin_cost,
    _update,
    band_table,
    coef_estimate,
    estimate_bins,
    motion_pass,
)
from .flow import bilinear_sample
from .incremental import P_Q, ResidualState, copy_boxes
from .incremental import build as inc_build
from .incremental import update as inc_update
from .motion import Decisions, fill_all, fill_leaf_flow, init_mv, init_tscale
from .wavelet import LEVELS, cell_leaf_map, coefficient_skip_mask, fdwt_inplace, \
    idwt_inplace, support_centers, unit_grid, unit_index_map


# ---------------------------------------------------------------------------
# per-frame syntax selection


@dataclass(frozen=True)
class FrameTools:
    """Syntax a frame uses: allowed modes, partition form and skip flags."""

    modes: tuple[int, ...] = (0,)
    quadtree: bool = False
    block: int = 32
    skip: bool = False

    def __post_init__(self):
        m = tuple(sorted({int(v) for v in self.modes}))
        if not m or any(v not in (0, 1, 2) for v in m):
            raise ValueError(f"bad mode set {self.modes}")
        object.__setattr__(self, "modes", m)
        if self.block not in (8, 16, 32, 64):
            raise ValueError("block must be 8, 16, 32 or 64")

    @property
    def mode_list(self) -> np.ndarray:
        return np.array(self.modes + (0,) * (3 - len(self.modes)), np.int32)

    def to_byte(self) -> int:
        mask = sum(1 << m for m in self.modes)
        lg = (self.block // MIN_BLOCK).bit_length() - 1
        return mask | (self.quadtree << 3) | (lg << 4) | (self.skip << 6)

    @classmethod
    def from_byte(cls, b: int) -> "FrameTools":
        if b & 0x80 or not b & 7:
            raise ValueError(f"invalid tools byte 0x{b:02x}")
        modes = tuple(m for m in range(3) if b >> m & 1)
        return cls(modes, bool(b >> 3 & 1), MIN_BLOCK << (b >> 4 & 3), bool(b >> 6 & 1))


# ---------------------------------------------------------------------------
# problem and evaluation


@dataclass
class FrameProblem:
    """Everything the search needs about one inter frame.

    Planes are CTU-padded ``uint8`` arrays; ``width``/``height`` give the
    visible region over which distortion is measured.  ``ref1`` is None for
    uni-directional frames.
    """

    orig: np.ndarray
    ref0: np.ndarray
    ref1: np.ndarray | None
    lam: float
    q_step: int
    width: int
    height: int
    prior_01: np.ndarray | None = None
    prior_10: np.ndarray | None = None
    flow_cur0: np.ndarray | None = None
    flow_cur1: np.ndarray | None = None
    skip_unit: int = 128
    mv_bound: int = DEFAULT_MV_BOUND  # search range of MV parameters
    scale_bound: int = DEFAULT_SCALE_BOUND

    def __post_init__(self):
        self.orig = np.ascontiguousarray(self.orig, np.uint8)
        self.ref0 = np.ascontiguousarray(self.ref0, np.uint8)
        h, w = self.orig.shape
        if self.ref1 is not None:
            self.ref1 = np.ascontiguousarray(self.ref1, np.uint8)
        zero = np.zeros((h, w, 2), np.int32)
        for name in ("prior_01", "prior_10", "flow_cur0", "flow_cur1"):
            v = getattr(self, name)
            v = zero if v is None else np.ascontiguousarray(getattr(v, "vectors", v), np.int32)
            setattr(self, name, v)

    @property
    def bi(self) -> bool:
        return self.ref1 is not None

    @property
    def shape(self) -> tuple[int, int]:
        return self.orig.shape


@njit(cache=True)
def _predict_rect(ref0, ref1, f0, f1, pred, x0, y0, x1, y1, bi):
    for y in range(y0, y1):
        for x in range(x0, x1):
            a = bilinear_sample(ref0, x, y, f0[y, x, 0], f0[y, x, 1])
            if bi:
                b = bilinear_sample(ref1, x, y, f1[y, x, 0], f1[y, x, 1])
                pred[y, x] = (a + b + 1) >> 1
            else:
                pred[y, x] = a


@njit(cache=True)
def residual_kernel(orig, pred, q_step, skip, bands, q, bits, recon, width, height, work,
                    keep):
    """Transform, quantize, cost and reconstruct one residual.

    Returns ``(visible SSE, coefficient bits)``.  With ``keep`` false the
    per-coefficient bits and the reconstruction are not stored.
    """
    h, w = orig.shape
    for r in range(h):
        for c in range(w):
            work[r, c] = np.int32(orig[r, c]) - np.int32(pred[r, c])
    fdwt_inplace(work, LEVELS)
    # both operands are small non-negative integers, so the float quotient
    # truncates to the exact floor
    two_q = np.float64(2 * q_step)
    for r in range(h):
        for c in range(w):
            v = work[r, c]
            a = np.float64(2 * v + q_step if v >= 0 else -2 * v + q_step)
            m = np.int32(a / two_q)
            q[r, c] = 0 if skip[r, c] else (m if v >= 0 else -m)
    if keep:
        bits[:, :] = 0.0
    counts = np.ones((N_CTX, 2), np.int32)
    rate = coef_estimate(q, skip, bands, counts, bits, keep)
    for r in range(h):
        for c in range(w):
            work[r, c] = q[r, c] * q_step
    idwt_inplace(work, LEVELS)
    for r in range(h):
        for c in range(w):
            v = np.int32(pred[r, c]) + work[r, c]
            work[r, c] = 0 if v < 0 else (255 if v > 255 else v)
    sse = np.int64(0)
    for r in range(min(h, height)):
        for c in range(min(w, width)):
            e = np.int64(orig[r, c]) - work[r, c]
            sse += e * e
    if keep:
        for r in range(h):
            for c in range(w):
                recon[r, c] = work[r, c]
    d = np.float64(sse)
    return d, rate


@njit(cache=True)
def leaf_sse(orig, recon, xs, ys, sizes, width, height, out):
    for n in range(xs.shape[0]):
        s = 0.0
        for y in range(ys[n], min(ys[n] + sizes[n], height)):
            for x in range(xs[n], min(xs[n] + sizes[n], width)):
                e = np.float64(np.int32(orig[y, x]) - np.int32(recon[y, x]))
                s += e * e
        out[n] = s


@njit(cache=True)
def motion_bits(xs, ys, sizes, modes, params, bi, quadtree, mode_list, n_modes, cell_leaf,
                per_leaf):
    """Estimated motion-syntax bits (fresh contexts), also split per leaf."""
    cap = 24 * xs.shape[0] + 64
    while True:
        ctx = np.empty(cap, np.int32)
        val = np.empty(cap, np.int8)
        own = np.empty(cap, np.int32)
        k = motion_pass(xs, ys, sizes, modes, params, bi, quadtree, mode_list, n_modes,
                        cell_leaf, ctx, val, own)
        if k <= cap:
            break
        cap = k
    counts = np.ones((N_CTX, 2), np.int32)
    cost = np.empty(k, np.float64)
    total = estimate_bins(ctx, val, k, counts, cost)
    for n in range(per_leaf.shape[0]):
        per_leaf[n] = 0.0
    for i in range(k):
        per_leaf[own[i]] += cost[i]
    return total


@njit(cache=True)
def skip_flag_bits(flags, per_unit):
    counts = np.ones((N_CTX, 2), np.int32)
    total = 0.0
    for u in range(flags.shape[0]):
        b = 1 if flags[u] else 0
        c = _bin_cost(counts, CTX_SKIP, b)
        _update(counts, CTX_SKIP, b)
        per_unit[u] = c
        total += c
    return total


@dataclass
class EvalResult:
    """Outcome of simulating one frame configuration."""

    lam: float
    distortion: float
    rate_motion: float
    rate_residual: float
    rate_skip: float
    recon: np.ndarray
    q: np.ndarray
    coef_bits: np.ndarray
    block_d: np.ndarray | None = None
    block_rate: np.ndarray | None = None

    @property
    def rate(self) -> float:
        return self.rate_motion + self.rate_residual + self.rate_skip

    @property
    def j(self) -> float:
        return self.distortion + self.lam * self.rate

    @property
    def cost(self) -> RDCost:
        return RDCost(self.distortion, self.rate, self.lam)

    @property
    def block_j(self) -> np.ndarray:
        return self.block_d + self.lam * self.block_rate

    def block_costs(self) -> list[RDCost]:
        return [RDCost(float(d), float(r), self.lam) for d, r in zip(self.block_d, self.block_rate)]


class _Geometry:
    """Per-partition lookup tables, cached by leaf layout."""

    def __init__(self, dec: Decisions, h: int, w: int, unit: int):
        self.cell_leaf = cell_leaf_map(dec.leaves, h, w)
        cy, cx = support_centers(h, w)
        self.coef_owner = self.cell_leaf[cy >> 3, cx >> 3].ravel()
        nuy, nux = unit_grid(h, w, unit)
        uy, ux = np.meshgrid(np.arange(nuy) * unit, np.arange(nux) * unit, indexing="ij")
        self.unit_owner = self.cell_leaf[uy.ravel() >> 3, ux.ravel() >> 3]


class Evaluator:
    """Incremental frame simulator.

    Keeps the pixel flows and prediction of the currently loaded decisions so
    that changing one block only re-predicts that block.
    """

    def __init__(self, problem: FrameProblem):
        self.p = problem
        h, w = problem.shape
        self.f0 = np.zeros((h, w, 2), np.int32)
        self.f1 = np.zeros((h, w, 2), np.int32)
        self.pred = np.zeros((h, w), np.uint8)
        self._ref1 = problem.ref1 if problem.bi else problem.ref0
        self._bands = band_table(h, w)
        self._geo: dict[bytes, _Geometry] = {}
        self._skip_masks: dict[bytes, np.ndarray] = {}
        self._no_skip = np.zeros((h, w), np.bool_)
        self.n_units = int(np.prod(unit_grid(h, w, problem.skip_unit)))
        self.evaluations = 0
        self._work = np.empty((h, w), np.int32)
        self._q = np.empty((h, w), np.int32)
        self._dummy_bits = np.empty((1, 1), np.float64)
        self._dummy_recon = np.empty((1, 1), np.uint8)
        self._leaf_buf = np.empty(0, np.float64)
        self._inc: ResidualState | None = None

    def geometry(self, dec: Decisions) -> _Geometry:
        key = dec.xs.tobytes() + dec.ys.tobytes() + dec.sizes.tobytes()
        g = self._geo.get(key)
        if g is None:
            h, w = self.p.shape
            g = self._geo[key] = _Geometry(dec, h, w, self.p.skip_unit)
        return g

    def skip_mask(self, flags) -> np.ndarray:
        if flags is None or not np.any(flags):
            return self._no_skip
        flags = np.asarray(flags, bool)
        key = flags.tobytes()
        m = self._skip_masks.get(key)
        if m is None:
            h, w = self.p.shape
            grid = unit_grid(h, w, self.p.skip_unit)
            m = np.ascontiguousarray(coefficient_skip_mask(flags.reshape(grid), h, w,
                                                           self.p.skip_unit))
            self._skip_masks[key] = m
        return m

    def load(self, dec: Decisions) -> None:
        p = self.p
        fill_all(self.f0, self.f1, p.prior_01, p.prior_10, dec.xs, dec.ys, dec.sizes,
                 dec.modes, dec.params, DEFAULT_MV_BOUND, p.bi)
        h, w = p.shape
        _predict_rect(p.ref0, self._ref1, self.f0, self.f1, self.pred, 0, 0, w, h, p.bi)

    def refill(self, dec: Decisions, n: int) -> None:
        p = self.p
        x, y, z = int(dec.xs[n]), int(dec.ys[n]), int(dec.sizes[n])
        fill_leaf_flow(self.f0, self.f1, p.prior_01, p.prior_10, x, y, z, dec.modes[n],
                       dec.params[n], DEFAULT_MV_BOUND, p.bi)
        _predict_rect(p.ref0, self._ref1, self.f0, self.f1, self.pred, x, y, x + z, y + z, p.bi)

    def evaluate(self, dec: Decisions, tools: FrameTools, skip_flags=None,
                 detail: bool = True) -> EvalResult:
        """Score the loaded decisions under ``tools`` syntax."""
        p = self.p
        h, w = p.shape
        self.evaluations += 1
        geo = self.geometry(dec)
        flags = np.zeros(self.n_units, bool) if skip_flags is None else \
            np.asarray(skip_flags, bool).ravel()
        mask = self.skip_mask(flags)
        q = np.empty((h, w), np.int32)
        bits = np.empty((h, w), np.float64)
        recon = np.empty((h, w), np.uint8)
        d, rr = residual_kernel(p.orig, self.pred, np.int32(p.q_step), mask, self._bands, q,
                                bits, recon, p.width, p.height, self._work, True)
        per_leaf = np.empty(len(dec), np.float64)
        rm = motion_bits(dec.xs, dec.ys, dec.sizes, dec.modes, dec.params, p.bi,
                         tools.quadtree, tools.mode_list, len(tools.modes), geo.cell_leaf,
                         per_leaf)
        rs = 0.0
        per_unit = np.zeros(self.n_units, np.float64)
        if tools.skip:
            rs = skip_flag_bits(flags, per_unit)
        res = EvalResult(p.lam, d, rm, rr, rs, recon, q, bits)
        if detail:
            bd = np.empty(len(dec), np.float64)
            leaf_sse(p.orig, recon, dec.xs, dec.ys, dec.sizes, p.width, p.height, bd)
            br = per_leaf + np.bincount(geo.coef_owner, weights=bits.ravel(), minlength=len(dec))
            if tools.skip:
                br += np.bincount(geo.unit_owner, weights=per_unit, minlength=len(dec))
            res.block_d = bd
            res.block_rate = br
        return res


    def residual_cost(self) -> tuple[float, float]:
        """``(SSE, coefficient bits)`` of the loaded prediction, nothing skipped."""
        p = self.p
        self.evaluations += 1
        return residual_kernel(p.orig, self.pred, np.int32(p.q_step), self._no_skip,
                               self._bands, self._q, self._dummy_bits, self._dummy_recon,
                               p.width, p.height, self._work, False)

    def motion_rate(self, dec: Decisions, tools: FrameTools) -> float:
        p = self.p
        return motion_bits(dec.xs, dec.ys, dec.sizes, dec.modes, dec.params, p.bi,
                           tools.quadtree, tools.mode_list, len(tools.modes),
                           self.geometry(dec).cell_leaf, self._per_leaf(len(dec)))

    @property
    def inc(self) -> ResidualState:
        if self._inc is None:
            self._inc = ResidualState(*self.p.shape)
        return self._inc

    def _per_leaf(self, n: int) -> np.ndarray:
        if self._leaf_buf.shape[0] != n:
            self._leaf_buf = np.empty(n, np.float64)
        return self._leaf_buf

def evaluate_config(problem: FrameProblem, decisions, tools: FrameTools | None = None,
                    skip_flags=None, evaluator: Evaluator | None = None) -> EvalResult:
    """Simulate-encode one configuration and return its costs and reconstruction."""
    dec = decisions if isinstance(decisions, Decisions) else Decisions.from_modes(decisions)
    if tools is None:
        sizes = set(dec.sizes.tolist())
        uniform = len(sizes) == 1
        tools = FrameTools(tuple(set(dec.modes.tolist())), quadtree=not uniform,
                           block=sizes.pop() if uniform else 32, skip=skip_flags is not None)
    h, w = problem.shape
    PartitionTree(w, h, dec.leaves)
    ev = evaluator or Evaluator(problem)
    ev.load(dec)
    return ev.evaluate(dec, tools, skip_flags)


# ---------------------------------------------------------------------------
# refinement


@dataclass
class RefineResult:
    decisions: Decisions
    trace: list[float]
    moves: int


@njit(cache=True)
def _refine_kernel(orig, ref0, ref1, p01, p10, f0, f1, pred, xs, ys, sizes, modes, params,
                   blocks, bi, quadtree, mode_list, n_modes, cell_leaf, q_step, bands,
                   width, height, lam, rs, step, bound, ncomp, iters, T, K, boxes, trace,
                   pred_only):
    """Coordinate-descent sweeps on the loaded state; see :func:`refine_mode_params`.

    ``f0``, ``f1``, ``pred`` and ``params`` are updated in place.  With
    ``pred_only`` every residual is skipped, so the cost is the visible
    prediction SSE plus side information.  Returns
    ``(sweeps, moves, residual evaluations)``; ``trace[k]`` is the cost
    after sweep ``k`` (``trace[0]`` the start).
    """
    h, w = orig.shape
    no_skip = np.zeros((h, w), np.bool_)
    dummy_bits = np.empty((1, 1), np.float64)
    per_leaf = np.empty(xs.shape[0], np.float64)
    zmax = 0
    for n in range(xs.shape[0]):
        zmax = max(zmax, sizes[n])
    sp = np.empty((zmax, zmax), np.uint8)
    s0 = np.empty((zmax, zmax, 2), np.int32)
    s1 = np.empty((zmax, zmax, 2), np.int32)
    if pred_only:
        d, rr = 0.0, 0.0
        for yy in range(min(h, height)):
            for xx in range(min(w, width)):
                e = np.float64(orig[yy, xx]) - np.float64(pred[yy, xx])
                d += e * e
    else:
        d, rr = inc_build(T, K, orig, pred, q_step, width, height, bands, boxes)
    evals = 1
    cur = d + lam * (motion_bits(xs, ys, sizes, modes, params, bi, quadtree, mode_list,
                                 n_modes, cell_leaf, per_leaf) + rr + rs)
    trace[0] = cur
    moves = 0
    sweeps = 0
    for it in range(iters):
        moved = 0
        for bn in range(blocks.shape[0]):
            n = blocks[bn]
            x, y, z = xs[n], ys[n], sizes[n]
            for c in range(ncomp):
                old = params[n, c]
                for yy in range(z):
                    for xx in range(z):
                        sp[yy, xx] = pred[y + yy, x + xx]
                        for k in range(2):
                            s0[yy, xx, k] = f0[y + yy, x + xx, k]
                            s1[yy, xx, k] = f1[y + yy, x + xx, k]
                for sgn in range(2):
                    v = old + step if sgn == 0 else old - step
                    if abs(v) > bound:
                        continue
                    params[n, c] = v
                    fill_leaf_flow(f0, f1, p01, p10, x, y, z, modes[n], params[n],
                                   DEFAULT_MV_BOUND, bi)
                    _predict_rect(ref0, ref1, f0, f1, pred, x, y, x + z, y + z, bi)
                    same = True
                    for yy in range(z):
                        for xx in range(z):
                            if pred[y + yy, x + xx] != sp[yy, xx]:
                                same = False
                    # an unchanged prediction leaves the residual path unchanged
                    nb = 0
                    dn, rn = d, rr
                    if not same and pred_only:
                        dd = 0.0
                        for yy in range(min(z, height - y)):
                            for xx in range(min(z, width - x)):
                                e1 = np.float64(orig[y + yy, x + xx]) - np.float64(pred[y + yy, x + xx])
                                e0 = np.float64(orig[y + yy, x + xx]) - np.float64(sp[yy, xx])
                                dd += e1 * e1 - e0 * e0
                        dn = d + dd
                        evals += 1
                    elif not same:
                        nb, dd, changed = inc_update(T, K, orig, pred, q_step, width, height,
                                                     x, y, x + z, y + z, boxes, False)
                        dn = d + np.float64(dd)
                        if changed:
                            rn = coef_estimate(T[P_Q], no_skip, bands,
                                               np.ones((N_CTX, 2), np.int32), dummy_bits,
                                               False)
                        evals += 1
                    j = dn + lam * (motion_bits(xs, ys, sizes, modes, params, bi, quadtree,
                                                mode_list, n_modes, cell_leaf, per_leaf)
                                    + rn + rs)
                    if j < cur:
                        cur = j
                        d = dn
                        rr = rn
                        moved += 1
                        copy_boxes(T, K, boxes, nb)
                        break
                    copy_boxes(K, T, boxes, nb)
                    params[n, c] = old
                    for yy in range(z):
                        for xx in range(z):
                            pred[y + yy, x + xx] = sp[yy, xx]
                            for k in range(2):
                                f0[y + yy, x + xx, k] = s0[yy, xx, k]
                                f1[y + yy, x + xx, k] = s1[yy, xx, k]
        sweeps += 1
        trace[sweeps] = cur
        moves += moved
        if moved == 0:
            break
    return sweeps, moves, evals


def refine_mode_params(ev: Evaluator, dec: Decisions, tools: FrameTools, mode: Mode,
                       iters: int = 10, skip_all: bool = False) -> RefineResult:
    """Coordinate descent over the transmitted parameters of ``mode`` blocks.

    Each sweep tries one quantization step up, then down, on every parameter
    of every block and keeps a move only if the frame cost strictly drops.
    Every probe is scored by a full simulation with fresh contexts, so the
    cost trace is exact and non-increasing.  ``skip_all`` scores every
    probe with all residual units skipped (requires ``tools.skip``).
    """
    mode = Mode(mode)
    if mode == Mode.TMERGE:
        raise ValueError("TMerge has no transmitted parameters")
    p = ev.p
    dec = dec.copy()
    if mode == Mode.MV:
        step, bound = HALF_PEL, p.mv_bound - p.mv_bound % HALF_PEL
        ncomp = 4 if p.bi else 2
    else:
        step, bound, ncomp = 1, p.scale_bound, 4
    if skip_all and not tools.skip:
        raise ValueError("skip_all needs skip syntax")
    flags = np.full(ev.n_units, skip_all, bool)
    rs = skip_flag_bits(flags, np.empty(ev.n_units)) if tools.skip else 0.0
    ev.load(dec)
    blocks = np.flatnonzero(dec.modes == int(mode)).astype(np.int32)
    trace = np.zeros(iters + 1)
    sweeps, moves, evals = _refine_kernel(
        p.orig, p.ref0, ev._ref1, p.prior_01, p.prior_10, ev.f0, ev.f1, ev.pred, dec.xs,
        dec.ys, dec.sizes, dec.modes, dec.params, blocks, p.bi, tools.quadtree,
        tools.mode_list, len(tools.modes), ev.geometry(dec).cell_leaf, np.int32(p.q_step),
        ev._bands, p.width, p.height, p.lam, rs, step, bound, ncomp, iters, ev.inc.T, ev.inc.K,
        ev.inc.boxes, trace, skip_all)
    ev.evaluations += evals
    return RefineResult(dec, trace[:sweeps + 1].tolist(), moves)


# ---------------------------------------------------------------------------
# partition and skip decisions


def uniform_leaves(width: int, height: int, size: int) -> tuple[tuple[int, int, int], ...]:
    return PartitionTree.uniform(width, height, size).leaves


def partition_search(leaf_j: dict[int, dict[tuple[int, int], float]], width: int,
                     height: int, split_cost: float):
    """Bottom-up quadtree decision over cached per-block costs.

    ``leaf_j[size][(x, y)]`` is the cost of coding that block as one leaf.
    Every node larger than the minimum block also pays ``split_cost`` for
    its split flag.  Ties keep the larger block.  Returns the tree and its
    total cost.
    """
    def best(x, y, s):
        leaf = leaf_j[s][(x, y)] + (split_cost if s > MIN_BLOCK else 0.0)
        if s == MIN_BLOCK:
            return leaf, [(x, y, s)]
        h = s // 2
        total = split_cost
        leaves = []
        for dy in (0, h):
            for dx in (0, h):
                c, lv = best(x + dx, y + dy, h)
                total += c
                leaves.extend(lv)
        if total < leaf:
            return total, leaves
        return leaf, [(x, y, s)]

    total = 0.0
    leaves = []
    for cy in range(0, height, CTU_SIZE):
        for cx in range(0, width, CTU_SIZE):
            c, lv = best(cx, cy, CTU_SIZE)
            total += c
            leaves.extend(lv)
    return PartitionTree(width, height, tuple(leaves)), total


def residual_skip_search(code_j, skip_j) -> np.ndarray:
    """Per-unit skip flags: skip wherever it costs no more than coding."""
    return np.asarray(skip_j, float) <= np.asarray(code_j, float)


def unit_costs(ev: Evaluator, res: EvalResult, flags) -> np.ndarray:
    """Per-unit ``D + lam * (coefficient bits + flag bits)`` of an evaluation."""
    p = ev.p
    h, w = p.shape
    unit = p.skip_unit
    nuy, nux = unit_grid(h, w, unit)
    err = (p.orig.astype(np.float64) - res.recon)[: p.height, : p.width] ** 2
    d = np.zeros(nuy * nux)
    for uy in range(nuy):
        for ux in range(nux):
            d[uy * nux + ux] = err[uy * unit:(uy + 1) * unit, ux * unit:(ux + 1) * unit].sum()
    bits = np.bincount(unit_index_map(h, w, unit).ravel(), weights=res.coef_bits.ravel(),
                       minlength=nuy * nux)
    flag_bits = np.zeros(nuy * nux)
    skip_flag_bits(np.asarray(flags, bool).ravel(), flag_bits)
    return d + p.lam * (bits + flag_bits)


# ---------------------------------------------------------------------------
# frame optimization


@dataclass
class Candidate:
    label: str
    decisions: Decisions
    tools: FrameTools
    skip_flags: np.ndarray
    result: EvalResult

    @property
    def j(self) -> float:
        return self.result.j


@dataclass
class SearchOptions:
    """Which tools the search may use for one frame."""

    modes: tuple[Mode, ...] = (Mode.TMERGE, Mode.TSCALE, Mode.MV)
    variable_block: bool = True
    residual_skip: bool = True
    fixed_block: int = 32
    refine: bool = False
    refine_iters: int = 10


@dataclass
class FrameResult:
    decisions: Decisions
    tools: FrameTools
    skip_flags: np.ndarray
    result: EvalResult
    trace: list[tuple[str, float]] = field(default_factory=list)
    depth_costs: dict[int, dict[tuple[int, int], float]] = field(default_factory=dict)
    split_cost: float = 0.0

    @property
    def j(self) -> float:
        return self.result.j

    @property
    def recon(self) -> np.ndarray:
        return self.result.recon

    @property
    def partition(self) -> PartitionTree:
        h, w = self.result.recon.shape
        return self.decisions.partition(w, h)


class FrameOptimizer:
    """Runs the candidate search for one frame, caching shared evaluations."""

    def __init__(self, problem: FrameProblem, opts: SearchOptions):
        self.p = problem
        self.opts = opts
        self.ev = Evaluator(problem)
        self._mode_cache: dict[tuple, Candidate] = {}
        self.depth_costs: dict[int, dict[tuple[int, int], float]] = {}

    # candidates --------------------------------------------------------

    def _evaluate(self, label, dec, tools, flags=None) -> Candidate:
        flags = np.zeros(self.ev.n_units, bool) if flags is None else np.asarray(flags, bool)
        self.ev.load(dec)
        return Candidate(label, dec, tools, flags, self.ev.evaluate(dec, tools, flags))

    def init_uniform(self, size: int, mode: Mode) -> Decisions:
        p = self.p
        h, w = p.shape
        leaves = uniform_leaves(w, h, size)
        dec = Decisions.from_leaves(leaves, mode)
        if mode == Mode.TSCALE:
            for n, blk in enumerate(leaves):
                dec.params[n] = init_tscale(blk, p.flow_cur0, p.flow_cur1, p.prior_01,
                                            p.prior_10, p.scale_bound).params
        elif mode == Mode.MV:
            for n, blk in enumerate(leaves):
                dec.params[n] = init_mv(blk, p.flow_cur0, p.flow_cur1 if p.bi else None,
                                        p.mv_bound).params
        return dec

    def mode_candidate(self, size: int, mode: Mode, refine: bool) -> Candidate:
        """All blocks of a uniform grid in one mode, single-mode syntax."""
        refine = refine and mode != Mode.TMERGE and self.opts.refine_iters > 0
        key = (size, int(mode), refine)
        if key in self._mode_cache:
            return self._mode_cache[key]
        tools = FrameTools((int(mode),), quadtree=False, block=size)
        if refine:
            base = self.mode_candidate(size, mode, False)
            r = refine_mode_params(self.ev, base.decisions, tools, mode, self.opts.refine_iters)
            cand = self._evaluate(f"{mode.name.lower()}@{size}+refine", r.decisions, tools)
        else:
            cand = self._evaluate(f"{mode.name.lower()}@{size}", self.init_uniform(size, mode),
                                  tools)
        self._mode_cache[key] = cand
        return cand

    def mode_search(self, size: int, modes, refine: bool) -> tuple[Candidate, list[Candidate]]:
        """Per-block argmin over the given modes at one depth, re-evaluated."""
        cands = [self.mode_candidate(size, m, refine) for m in modes]
        key = ("mix", size, tuple(int(m) for m in modes), refine)
        if key in self._mode_cache:
            return self._mode_cache[key], cands
        stack = np.stack([c.result.block_j for c in cands])
        pick = np.argmin(stack, axis=0)  # first minimum: lower mode index wins ties
        dec = cands[0].decisions.copy()
        for i, c in enumerate(cands):
            sel = pick == i
            dec.modes[sel] = c.decisions.modes[sel]
            dec.params[sel] = c.decisions.params[sel]
        used = tuple(sorted(set(dec.modes.tolist())))
        tools = FrameTools(used, quadtree=False, block=size)
        mixed = self._evaluate(f"modes{''.join(str(m) for m in used)}@{size}", dec, tools)
        self._mode_cache[key] = mixed
        return mixed, cands

    # stages ------------------------------------------------------------

    def run_chain(self, refine: bool) -> tuple[Candidate, list[tuple[str, float]]]:
        o = self.opts
        h, w = self.p.shape
        modes = list(o.modes)
        trace = []
        best: Candidate | None = None

        def offer(c: Candidate):
            nonlocal best
            trace.append((c.label, c.j))
            if best is None or (c.j, len(c.decisions)) < (best.j, len(best.decisions)):
                best = c

        def polish():
            # refine the parameters the incumbent actually uses; each preset's
            # chain stays a prefix of the next, so extra tools never cost more
            if not refine or o.refine_iters <= 0:
                return
            for mode in (Mode.TSCALE, Mode.MV):
                if mode not in best.tools.modes or not (best.decisions.modes == mode).any():
                    continue
                r = refine_mode_params(self.ev, best.decisions, best.tools, mode, o.refine_iters)
                if r.moves:
                    offer(self._evaluate(best.label + "+polish", r.decisions, best.tools))

        # fixed-block stages, adding one mode at a time
        for k in range(1, len(modes) + 1):
            mixed, cands = self.mode_search(o.fixed_block, modes[:k], refine)
            for c in cands:
                offer(c)
            offer(mixed)
            polish()
        if o.variable_block:
            tree_j: dict[int, dict[tuple[int, int], float]] = {}
            chosen: dict[int, Candidate] = {}
            for d in range(4):
                size = MIN_BLOCK << d
                mixed, cands = self.mode_search(size, modes, refine)
                for c in cands:
                    offer(c)
                offer(mixed)
                costs = mixed.result.block_j
                tree_j[size] = {(int(x), int(y)): float(costs[n]) for n, (x, y) in
                                enumerate(zip(mixed.decisions.xs, mixed.decisions.ys))}
                chosen[size] = mixed
            split_cost = self.p.lam * 1.0
            tree, _ = partition_search(tree_j, w, h, split_cost)
            self.depth_costs = tree_j
            self.split_cost = split_cost
            dec = self._decisions_for_tree(tree, chosen)
            used = tuple(sorted(set(dec.modes.tolist())))
            offer(self._evaluate("quadtree", dec, FrameTools(used, quadtree=True)))
            polish()
        if o.residual_skip:
            inc = best
            tools = replace(inc.tools, skip=True)
            zeros = np.zeros(self.ev.n_units, bool)
            ones = np.ones(self.ev.n_units, bool)
            code = self._evaluate(inc.label + "+flags", inc.decisions, tools, zeros)
            skip = self._evaluate(inc.label + "+skip-all", inc.decisions, tools, ones)
            flags = residual_skip_search(unit_costs(self.ev, code.result, zeros),
                                         unit_costs(self.ev, skip.result, ones))
            if flags.all():
                offer(skip)
                if refine and o.refine_iters > 0:
                    self._polish_skipped(skip, offer)
            elif not flags.any():
                offer(code)
            else:
                offer(self._evaluate(inc.label + "+skip", inc.decisions, tools, flags))
        return best, trace

    def _polish_skipped(self, cand: Candidate, offer):
        dec = cand.decisions
        for mode in (Mode.TSCALE, Mode.MV):
            if mode not in cand.tools.modes or not (dec.modes == mode).any():
                continue
            r = refine_mode_params(self.ev, dec, cand.tools, mode, self.opts.refine_iters,
                                   skip_all=True)
            if r.moves:
                dec = r.decisions
        if dec is not cand.decisions:
            offer(self._evaluate(cand.label + "+polish", dec, cand.tools, cand.skip_flags))

    @staticmethod
    def _decisions_for_tree(tree: PartitionTree, chosen: dict[int, Candidate]) -> Decisions:
        dec = Decisions.from_leaves(tree.leaves)
        index = {s: {(int(x), int(y)): n for n, (x, y) in
                     enumerate(zip(c.decisions.xs, c.decisions.ys))} for s, c in chosen.items()}
        for i, (x, y, s) in enumerate(tree.leaves):
            n = index[s][(x, y)]
            dec.modes[i] = chosen[s].decisions.modes[n]
            dec.params[i] = chosen[s].decisions.params[n]
        return dec

    def run(self) -> FrameResult:
        best, trace = self.run_chain(False)
        if self.opts.refine:
            rbest, rtrace = self.run_chain(True)
            trace += rtrace
            if rbest.j < best.j:
                best = rbest
        return FrameResult(best.decisions, best.tools, best.skip_flags, best.result,
                           trace, self.depth_costs, getattr(self, "split_cost", 0.0))


def optimize_frame(problem: FrameProblem, opts: SearchOptions | None = None) -> FrameResult:
    """Choose partition, per-block modes/parameters and skip flags for a frame."""
    opts = opts or SearchOptions()
    if not problem.bi:
        opts = replace(opts, modes=(Mode.MV,))
    return FrameOptimizer(problem, opts).run()


def intra_result(orig: np.ndarray, q_step: int, width: int, height: int) -> EvalResult:
    """Intra coding: constant 128 prediction, every coefficient coded."""
    h, w = orig.shape
    pred = np.full((h, w), 128, np.uint8)
    q = np.empty((h, w), np.int32)
    bits = np.empty((h, w), np.float64)
    recon = np.empty((h, w), np.uint8)
    d, rr = residual_kernel(np.ascontiguousarray(orig, np.uint8), pred, np.int32(q_step),
                            np.zeros((h, w), np.bool_), band_table(h, w), q, bits, recon,
                            width, height, np.empty((h, w), np.int32), True)
    return EvalResult(1.0, d, 0.0, rr, 0.0, recon, q, bits)


def zorder_index(width: int, height: int, size: int) -> list[tuple[int, int]]:
    out = []
    for cy in range(0, height, CTU_SIZE):
        for cx in range(0, width, CTU_SIZE):
            out.extend(zorder_blocks(cx, cy, size))
    return out
