"""Byte-level container and per-frame syntax.

A stream is a fixed-size header followed by frames in coding order.  Each
frame is a fixed-size header, a CRC32 of its payload and the payload: one
range-coded bin sequence holding motion syntax, skip flags and
coefficients, in that order, with all contexts reset at the frame start.
See ``docs/bitstream.md`` for the field tables.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .core import CTU_SIZE, MIN_BLOCK, MERGE_SCALE, Mode, PartitionTree
from .entropy import (
    BYPASS,
    CTX_MODE,
    CTX_MVD_PREFIX,
    CTX_MVD_ZERO,
    CTX_SKIP,
    CTX_SPLIT,
    CTX_TS_PREFIX,
    CTX_TS_ZERO,
    PREFIX_CAP_MOTION,
    BinBuffer,
    DecodeError,
    RangeDecoder,
    band_table,
    coef_bin_count,
    coef_pass,
    decode_coefficients_from,
    motion_pass,
    mv_predictor,
    range_encode,
)
from .motion import Decisions
from .rdo import FrameTools
from .wavelet import cell_leaf_map, coefficient_skip_mask, unit_grid

MAGIC = b"HVC1"
VERSION = 1
NO_REF = 0xFFFFFFFF

FRAME_I, FRAME_P, FRAME_B = 0, 1, 2
FRAME_TYPE_NAMES = {FRAME_I: "I", FRAME_P: "P", FRAME_B: "B"}

_STREAM = struct.Struct("<4sBHHIBHHBBB")
_FRAME = struct.Struct("<BBIIIHBII")


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    frame_count: int
    gop: int
    intra_period: int
    q_step_base: int
    lambda_schedule_id: int = 0
    toggles: int = 0xF
    skip_unit: int = 128
    version: int = VERSION

    SIZE = _STREAM.size

    def pack(self) -> bytes:
        return _STREAM.pack(MAGIC, self.version, self.width, self.height, self.frame_count,
                            self.gop, self.intra_period, self.q_step_base,
                            self.lambda_schedule_id, self.toggles, self.skip_unit // CTU_SIZE)

    @classmethod
    def parse(cls, data: bytes) -> "StreamHeader":
        if len(data) < _STREAM.size:
            raise DecodeError("stream shorter than its header", len(data))
        (magic, version, w, h, n, gop, ip, qb, lam_id, toggles,
         unit) = _STREAM.unpack_from(data, 0)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic!r}", 0)
        if version != VERSION:
            raise DecodeError(f"unsupported version {version}", 4)
        if w < 1 or h < 1 or gop < 1 or unit < 1:
            raise DecodeError("invalid stream geometry", 5)
        return cls(w, h, n, gop, ip, qb, lam_id, toggles, unit * CTU_SIZE, version)


@dataclass(frozen=True)
class FrameHeader:
    frame_type: int
    layer: int
    display: int
    ref0: int
    ref1: int
    q_step: int
    tools: int
    length: int
    crc: int

    SIZE = _FRAME.size

    def pack(self) -> bytes:
        return _FRAME.pack(self.frame_type, self.layer, self.display, self.ref0, self.ref1,
                           self.q_step, self.tools, self.length, self.crc)

    @classmethod
    def parse(cls, data: bytes, offset: int) -> "FrameHeader":
        if len(data) - offset < _FRAME.size:
            raise DecodeError("truncated frame header", offset)
        hdr = cls(*_FRAME.unpack_from(data, offset))
        if hdr.frame_type not in FRAME_TYPE_NAMES:
            raise DecodeError(f"unknown frame type {hdr.frame_type}", offset)
        if hdr.q_step < 1:
            raise DecodeError("zero q_step", offset)
        return hdr

    @property
    def refs(self) -> tuple[int, ...]:
        return tuple(r for r in (self.ref0, self.ref1) if r != NO_REF)


def crc32(payload: bytes) -> int:
    return zlib.crc32(payload) & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# payload construction


def motion_bins(dec: Decisions, tools: FrameTools, bi: bool, height: int, width: int):
    cell_leaf = cell_leaf_map(dec.leaves, height, width)
    cap = 24 * len(dec) + 64
    while True:
        ctx = np.empty(cap, np.int32)
        val = np.empty(cap, np.int8)
        own = np.empty(cap, np.int32)
        k = motion_pass(dec.xs, dec.ys, dec.sizes, dec.modes, dec.params, bi, tools.quadtree,
                        tools.mode_list, len(tools.modes), cell_leaf, ctx, val, own)
        if k <= cap:
            return ctx[:k], val[:k]
        cap = k


def payload_bins(q: np.ndarray, dec: Decisions | None = None, tools: FrameTools | None = None,
                 bi: bool = True, skip_flags=None, skip_unit: int = 128) -> BinBuffer:
    """Bin sequence of a frame payload: motion, skip flags, coefficients."""
    h, w = q.shape
    buf = BinBuffer(4096)
    if dec is not None:
        ctx, val = motion_bins(dec, tools, bi, h, w)
        buf.extend(ctx, val, np.zeros(len(ctx), np.int32))
    flags = np.zeros(unit_grid(h, w, skip_unit), bool) if skip_flags is None else \
        np.asarray(skip_flags, bool).reshape(unit_grid(h, w, skip_unit))
    if tools is not None and tools.skip:
        for f in flags.ravel():
            buf.put(CTX_SKIP, int(f), 1)
    skip = np.ascontiguousarray(coefficient_skip_mask(flags, h, w, skip_unit))
    q = np.ascontiguousarray(q, np.int32)
    bands = band_table(h, w)
    n = coef_bin_count(q, skip, bands)
    ctx = np.empty(n, np.int32)
    val = np.empty(n, np.int8)
    coef_pass(q, skip, bands, np.empty((1, 2), np.int32), True, ctx, val,
              np.empty((1, 1), np.float64), 0)
    buf.extend(ctx, val, np.full(n, 2, np.int32))
    return buf


def encode_payload(q, dec=None, tools=None, bi=True, skip_flags=None, skip_unit=128) -> bytes:
    ctx, val, _ = payload_bins(q, dec, tools, bi, skip_flags, skip_unit).arrays()
    return range_encode(ctx, val)


# ---------------------------------------------------------------------------
# payload parsing


def _decode_signed(dec: RangeDecoder, zctx: int, pctx: int) -> int:
    if not dec.decode(zctx):
        return 0
    neg = dec.decode(BYPASS)
    e = 0
    while dec.decode(pctx + min(e, PREFIX_CAP_MOTION)):
        e += 1
        if e > 30:
            raise DecodeError("corrupt motion value", dec.position)
    m = dec.bypass(e) + (1 << e) - 1
    return -(m + 1) if neg else m + 1


def decode_motion(dec: RangeDecoder, tools: FrameTools, bi: bool, height: int,
                  width: int) -> Decisions:
    """Parse partition and per-leaf motion syntax."""
    if not bi and tools.modes != (int(Mode.MV),):
        raise DecodeError("uni-directional frame must be MV-only", dec.position)
    cap = (height // MIN_BLOCK) * (width // MIN_BLOCK)
    xs = np.zeros(cap, np.int32)
    ys = np.zeros(cap, np.int32)
    sizes = np.zeros(cap, np.int32)
    modes = np.zeros(cap, np.int32)
    params = np.zeros((cap, 4), np.int32)
    cell_leaf = np.full((height // MIN_BLOCK, width // MIN_BLOCK), -1, np.int32)
    ts = [MERGE_SCALE] * 4
    n_modes = len(tools.modes)
    count = 0

    def leaf(x, y, z):
        nonlocal count, ts
        n = count
        if n_modes == 1:
            mode = tools.modes[0]
        elif n_modes == 2:
            mode = tools.modes[dec.decode(CTX_MODE)]
        else:
            mode = 0 if not dec.decode(CTX_MODE) else (2 if dec.decode(CTX_MODE + 1) else 1)
        xs[n], ys[n], sizes[n], modes[n] = x, y, z, mode
        if mode == Mode.TSCALE:
            ts = [ts[c] + _decode_signed(dec, CTX_TS_ZERO, CTX_TS_PREFIX) for c in range(4)]
            params[n] = ts
        elif mode == Mode.MV:
            for d in range(2 if bi else 1):
                px, py = mv_predictor(n, xs, ys, modes, params, cell_leaf, d)
                params[n, 2 * d] = px + 8 * _decode_signed(dec, CTX_MVD_ZERO, CTX_MVD_PREFIX)
                params[n, 2 * d + 1] = py + 8 * _decode_signed(dec, CTX_MVD_ZERO + 1,
                                                               CTX_MVD_PREFIX)
        cell_leaf[y >> 3:(y + z) >> 3, x >> 3:(x + z) >> 3] = n
        count += 1

    def node(x, y, s):
        if s > MIN_BLOCK and dec.decode(CTX_SPLIT + (s // 16).bit_length() - 1):
            h = s // 2
            for dy in (0, h):
                for dx in (0, h):
                    node(x + dx, y + dy, h)
        else:
            leaf(x, y, s)

    if tools.quadtree:
        for cy in range(0, height, CTU_SIZE):
            for cx in range(0, width, CTU_SIZE):
                node(cx, cy, CTU_SIZE)
    else:
        for x, y, s in PartitionTree.uniform(width, height, tools.block).leaves:
            leaf(x, y, s)
    n = count
    return Decisions(xs[:n].copy(), ys[:n].copy(), sizes[:n].copy(), modes[:n].copy(),
                     params[:n].copy())


@dataclass
class ParsedPayload:
    decisions: Decisions | None
    skip_flags: np.ndarray
    q: np.ndarray


def decode_payload(payload: bytes, height: int, width: int, tools: FrameTools | None,
                   bi: bool = True, skip_unit: int = 128, inter: bool = True) -> ParsedPayload:
    dec = RangeDecoder(payload)
    decisions = decode_motion(dec, tools, bi, height, width) if inter else None
    grid = unit_grid(height, width, skip_unit)
    flags = np.zeros(grid, bool)
    if tools is not None and tools.skip:
        flags = np.array([dec.decode(CTX_SKIP) for _ in range(grid[0] * grid[1])],
                         bool).reshape(grid)
    skip = np.ascontiguousarray(coefficient_skip_mask(flags, height, width, skip_unit))
    q, _ = decode_coefficients_from(dec, height, width, skip)
    if dec.position != len(payload):
        raise DecodeError(f"payload has {len(payload) - dec.position} trailing bytes",
                          dec.position)
    return ParsedPayload(decisions, flags, q)
