"""Sequence encoder and decoder.

Frames are coded in hierarchical-B order: the anchor that closes each GOP
first (intra at intra-period boundaries, otherwise a uni-directional P
frame on the previous anchor), then the B frames breadth first, each
predicted from the two nearest already coded frames.  Frames left over
after the last full GOP are coded as P frames on their predecessor.

The encoder always predicts from its own reconstructions, which the
decoder reproduces bit-exactly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import bitstream as bs
from .core import CTU_SIZE, DEFAULT_MV_BOUND, QP_EQUIV, CodecConfig, DimensionError, psnr
from .entropy import DecodeError
from .flow import FlowConfig, estimate_flow, prior_flows
from .motion import fill_all
from .rdo import (
    FrameProblem,
    FrameResult,
    FrameTools,
    SearchOptions,
    _predict_rect,
    intra_result,
    optimize_frame,
)
from .wavelet import LEVELS, idwt_inplace

log = logging.getLogger(__name__)

LAMBDA_BASE = 0.85


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class FrameJob:
    display: int
    frame_type: int
    layer: int
    ref0: int | None = None
    ref1: int | None = None

    @property
    def interval(self) -> int:
        if self.ref0 is None:
            return 0
        return self.display - self.ref0


class GopSchedule:
    """Coding order and references for a sequence."""

    def __init__(self, n_frames: int, gop: int = 8, intra_period: int = 32):
        if n_frames < 1:
            raise ValueError("need at least one frame")
        if gop < 1 or gop & (gop - 1):
            raise ValueError("gop must be a power of two")
        self.n_frames, self.gop, self.intra_period = n_frames, gop, intra_period
        self.jobs = self._build()

    def _is_intra(self, t: int) -> bool:
        return t == 0 or (self.intra_period > 0 and t % self.intra_period == 0)

    def _anchor(self, t: int, prev: int) -> FrameJob:
        if self._is_intra(t):
            return FrameJob(t, bs.FRAME_I, 0)
        return FrameJob(t, bs.FRAME_P, 0, prev)

    def _build(self) -> list[FrameJob]:
        jobs = [FrameJob(0, bs.FRAME_I, 0)]
        g = 0
        while g + self.gop < self.n_frames:
            a = g + self.gop
            jobs.append(self._anchor(a, g))
            layer, d = 1, self.gop // 2
            while d >= 1:
                for t in range(g + d, a, 2 * d):
                    jobs.append(FrameJob(t, bs.FRAME_B, layer, t - d, t + d))
                layer += 1
                d //= 2
            g = a
        for t in range(g + 1, self.n_frames):
            jobs.append(self._anchor(t, t - 1))
        return jobs

    def __iter__(self):
        return iter(self.jobs)

    def __len__(self) -> int:
        return len(self.jobs)

    def coding_order(self) -> list[int]:
        return [j.display for j in self.jobs]


def lambda_for(qp_equiv: float, layer: int, layer_weights=(1.0, 2.0, 2.5, 3.5)) -> float:
    """HM-style Lagrangian: ``0.85 * 2^((qp - 12) / 3)`` times a layer weight."""
    if not 0 <= layer <= 3:
        raise ValueError("layer must be in 0..3")
    return LAMBDA_BASE * 2.0 ** ((qp_equiv - 12) / 3.0) * layer_weights[min(layer,
                                                                           len(layer_weights) - 1)]


def qp_equiv_for(cfg: CodecConfig) -> float:
    if cfg.qp_equiv is not None:
        return cfg.qp_equiv
    if cfg.q_step_base not in QP_EQUIV:
        raise ValueError(f"no QP equivalent for q_step {cfg.q_step_base}; set qp_equiv")
    return QP_EQUIV[cfg.q_step_base]


def search_options(cfg: CodecConfig, layer: int) -> SearchOptions:
    return SearchOptions(modes=cfg.enabled_modes(),
                         variable_block=cfg.toggles.variable_block,
                         residual_skip=cfg.toggles.residual_skip,
                         fixed_block=cfg.fixed_block,
                         refine=layer in cfg.refine_layers,
                         refine_iters=cfg.refine_iters)


# ---------------------------------------------------------------------------
# helpers shared by both ends


def pad_frame(frame: np.ndarray) -> np.ndarray:
    h, w = frame.shape
    ph, pw = -(-h // CTU_SIZE) * CTU_SIZE, -(-w // CTU_SIZE) * CTU_SIZE
    return np.ascontiguousarray(np.pad(frame, ((0, ph - h), (0, pw - w)), mode="edge"))


@njit(cache=True)
def _synthesize(pred, q, q_step, recon):
    h, w = q.shape
    work = np.empty((h, w), np.int32)
    for r in range(h):
        for c in range(w):
            work[r, c] = q[r, c] * q_step
    idwt_inplace(work, LEVELS)
    for r in range(h):
        for c in range(w):
            v = np.int32(pred[r, c]) + work[r, c]
            recon[r, c] = 0 if v < 0 else (255 if v > 255 else v)


def reconstruct(pred: np.ndarray, q: np.ndarray, q_step: int) -> np.ndarray:
    recon = np.empty(pred.shape, np.uint8)
    _synthesize(np.ascontiguousarray(pred), np.ascontiguousarray(q, np.int32),
                np.int32(q_step), recon)
    return recon


def inter_prediction(dec, ref0, ref1, prior_01=None, prior_10=None,
                     mv_bound: int = DEFAULT_MV_BOUND) -> np.ndarray:
    h, w = ref0.shape
    bi = ref1 is not None
    f0 = np.zeros((h, w, 2), np.int32)
    f1 = np.zeros((h, w, 2), np.int32)
    zero = np.zeros((h, w, 2), np.int32)
    fill_all(f0, f1, zero if prior_01 is None else prior_01,
             zero if prior_10 is None else prior_10, dec.xs, dec.ys, dec.sizes, dec.modes,
             dec.params, mv_bound, bi)
    pred = np.empty((h, w), np.uint8)
    _predict_rect(ref0, ref1 if bi else ref0, f0, f1, pred, 0, 0, w, h, bi)
    return pred


def _vectors(m) -> np.ndarray:
    return m.vectors


# ---------------------------------------------------------------------------
# encoder


@dataclass
class FrameStats:
    display: int
    coding_index: int
    frame_type: int
    layer: int
    q_step: int
    lam: float
    payload_bits: int
    header_bits: int
    est_motion_bits: float
    est_skip_bits: float
    est_residual_bits: float
    distortion: float
    psnr: float
    j: float
    tools: FrameTools | None = None
    result: FrameResult | None = None
    seconds: float = 0.0

    @property
    def est_bits(self) -> float:
        return self.est_motion_bits + self.est_skip_bits + self.est_residual_bits

    @property
    def type_name(self) -> str:
        return bs.FRAME_TYPE_NAMES[self.frame_type]


@dataclass
class EncodeResult:
    data: bytes
    header: bs.StreamHeader
    stats: list[FrameStats]
    recon: list[np.ndarray]  # display order, visible size
    padded_recon: dict[int, np.ndarray] = field(default_factory=dict)
    padded_orig: dict[int, np.ndarray] = field(default_factory=dict)
    config: CodecConfig | None = None

    @property
    def total_bits(self) -> int:
        return 8 * len(self.data)

    def stats_by_display(self) -> dict[int, FrameStats]:
        return {s.display: s for s in self.stats}


def frame_problem(job: FrameJob, orig: np.ndarray, refs: dict[int, np.ndarray],
                  cfg: CodecConfig, width: int, height: int,
                  flow_cfg: FlowConfig | None = None) -> FrameProblem:
    """Search problem of an inter frame given padded original and references."""
    flow_cfg = flow_cfg or FlowConfig()
    ref0 = refs[job.ref0]
    ref1 = refs[job.ref1] if job.ref1 is not None else None
    lam = lambda_for(qp_equiv_for(cfg), job.layer, cfg.layer_weights)
    kw = dict(skip_unit=cfg.skip_unit, mv_bound=cfg.mv_bound, scale_bound=cfg.scale_bound)
    if ref1 is None:
        return FrameProblem(orig, ref0, None, lam, cfg.q_step_for(job.layer), width, height,
                            flow_cur0=_vectors(estimate_flow(orig, ref0, flow_cfg)), **kw)
    p10, p01 = prior_flows(ref0, ref1, flow_cfg)
    return FrameProblem(orig, ref0, ref1, lam, cfg.q_step_for(job.layer), width, height,
                        prior_01=_vectors(p01), prior_10=_vectors(p10),
                        flow_cur0=_vectors(estimate_flow(orig, ref0, flow_cfg)),
                        flow_cur1=_vectors(estimate_flow(orig, ref1, flow_cfg)), **kw)


def _as_frames(frames) -> list[np.ndarray]:
    out = [np.ascontiguousarray(getattr(f, "samples", f), np.uint8) for f in frames]
    if not out:
        raise ValueError("need at least one frame")
    shape = out[0].shape
    if len(shape) != 2 or any(f.shape != shape for f in out):
        raise DimensionError("frames must be equally sized 2-D luma planes")
    if shape[0] < CTU_SIZE or shape[1] < CTU_SIZE:
        raise DimensionError(f"frames must be at least {CTU_SIZE}x{CTU_SIZE}")
    if shape[0] > 0xFFFF or shape[1] > 0xFFFF:
        raise DimensionError("frame dimensions exceed 65535")
    return out


def encode(frames, cfg: CodecConfig | None = None, keep_results: bool = True,
           progress=None) -> EncodeResult:
    """Encode a sequence; returns the stream and per-frame statistics."""
    cfg = cfg or CodecConfig()
    frames = _as_frames(frames)
    height, width = frames[0].shape
    qp_equiv_for(cfg)  # validate before doing any work
    sched = GopSchedule(len(frames), cfg.gop, cfg.intra_period)
    header = bs.StreamHeader(width, height, len(frames), cfg.gop, cfg.intra_period,
                             cfg.q_step_base, cfg.lambda_schedule_id, cfg.toggles.to_bits(),
                             cfg.skip_unit)
    out = [header.pack()]
    padded = {t: pad_frame(f) for t, f in enumerate(frames)}
    recon: dict[int, np.ndarray] = {}
    stats = []
    for ci, job in enumerate(sched):
        t0 = time.perf_counter()
        orig = padded[job.display]
        q_step = cfg.q_step_for(job.layer)
        if job.frame_type == bs.FRAME_I:
            res = intra_result(orig, q_step, width, height)
            payload = bs.encode_payload(res.q, skip_unit=cfg.skip_unit)
            tools, fres, lam, tools_byte = None, None, 0.0, 0
            refs = (bs.NO_REF, bs.NO_REF)
        else:
            prob = frame_problem(job, orig, recon, cfg, width, height)
            fres = optimize_frame(prob, search_options(cfg, job.layer))
            res, tools, lam = fres.result, fres.tools, prob.lam
            payload = bs.encode_payload(res.q, fres.decisions, tools, prob.bi,
                                        fres.skip_flags, cfg.skip_unit)
            tools_byte = tools.to_byte()
            refs = (job.ref0, bs.NO_REF if job.ref1 is None else job.ref1)
        recon[job.display] = res.recon
        fh = bs.FrameHeader(job.frame_type, job.layer, job.display, refs[0], refs[1], q_step,
                            tools_byte, len(payload), bs.crc32(payload))
        out += [fh.pack(), payload]
        st = FrameStats(job.display, ci, job.frame_type, job.layer, q_step, lam,
                        8 * len(payload), 8 * bs.FrameHeader.SIZE, res.rate_motion,
                        res.rate_skip, res.rate_residual, res.distortion,
                        psnr(frames[job.display], res.recon[:height, :width]),
                        res.distortion + lam * res.rate, tools,
                        fres if keep_results else None, time.perf_counter() - t0)
        stats.append(st)
        log.info("frame %d (%s L%d) %d bits psnr %.2f in %.2fs", job.display, st.type_name,
                 job.layer, st.payload_bits, st.psnr, st.seconds)
        if progress is not None:
            progress(st)
    return EncodeResult(b"".join(out), header, stats,
                        [recon[t][:height, :width].copy() for t in range(len(frames))],
                        recon, padded, cfg)


def encode_sequence(frames, cfg: CodecConfig | None = None) -> bytes:
    return encode(frames, cfg, keep_results=False).data


# ---------------------------------------------------------------------------
# decoder


@dataclass
class DecodedFrame:
    header: bs.FrameHeader
    recon: np.ndarray  # visible size
    tools: FrameTools | None
    parsed: bs.ParsedPayload
    offset: int


@dataclass
class DecodeResult:
    header: bs.StreamHeader
    frames: list[DecodedFrame]

    def display_order(self) -> list[np.ndarray]:
        return [f.recon for f in sorted(self.frames, key=lambda f: f.header.display)]


def decode(data: bytes, flow_cfg: FlowConfig | None = None) -> DecodeResult:
    """Parse and reconstruct a stream; raises DecodeError with partial output."""
    hdr = bs.StreamHeader.parse(data)
    flow_cfg = flow_cfg or FlowConfig()
    pw = -(-hdr.width // CTU_SIZE) * CTU_SIZE
    ph = -(-hdr.height // CTU_SIZE) * CTU_SIZE
    pos = bs.StreamHeader.SIZE
    recon: dict[int, np.ndarray] = {}
    done: list[DecodedFrame] = []
    try:
        for _ in range(hdr.frame_count):
            start = pos
            fh = bs.FrameHeader.parse(data, pos)
            pos += bs.FrameHeader.SIZE
            end = pos + fh.length
            if end > len(data):
                raise DecodeError(f"frame {fh.display} payload truncated", len(data))
            payload = data[pos:end]
            if bs.crc32(payload) != fh.crc:
                raise DecodeError(f"frame {fh.display} payload checksum mismatch", pos)
            if fh.display >= hdr.frame_count or fh.display in recon:
                raise DecodeError(f"bad display index {fh.display}", start)
            if any(r not in recon for r in fh.refs):
                raise DecodeError(f"frame {fh.display} references an undecoded frame", start)
            try:
                if fh.frame_type == bs.FRAME_I:
                    tools = None
                    parsed = bs.decode_payload(payload, ph, pw, None, inter=False,
                                               skip_unit=hdr.skip_unit)
                    pred = np.full((ph, pw), 128, np.uint8)
                else:
                    tools = FrameTools.from_byte(fh.tools)
                    bi = fh.frame_type == bs.FRAME_B
                    if bi != (len(fh.refs) == 2):
                        raise DecodeError("reference count does not match frame type", start)
                    ref0 = recon[fh.ref0]
                    ref1 = recon[fh.ref1] if bi else None
                    parsed = bs.decode_payload(payload, ph, pw, tools, bi, hdr.skip_unit)
                    if bi:
                        p10, p01 = prior_flows(ref0, ref1, flow_cfg)
                        pred = inter_prediction(parsed.decisions, ref0, ref1, p01.vectors,
                                                p10.vectors)
                    else:
                        pred = inter_prediction(parsed.decisions, ref0, None)
            except DecodeError as e:
                raise DecodeError(f"frame {fh.display}: {e.args[0]}",
                                  pos + (e.offset or 0)) from None
            except ValueError as e:
                raise DecodeError(f"frame {fh.display}: {e}", pos) from None
            rec = reconstruct(pred, parsed.q, fh.q_step)
            recon[fh.display] = rec
            done.append(DecodedFrame(fh, rec[:hdr.height, :hdr.width].copy(), tools, parsed,
                                     start))
            pos = end
    except DecodeError as e:
        e.frames = done
        raise
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} bytes after the last frame", pos, done)
    return DecodeResult(hdr, done)


def decode_sequence(data: bytes) -> list[np.ndarray]:
    """Decoded frames in display order (visible size)."""
    return decode(data).display_order()
