"""Stream statistics: PSNR, partition/mode/skip area ratios and bit shares.

Ratios are area weighted over the visible part of every B frame, so each
category sums to one.  Bit shares split each frame's actual payload over
its syntax components in proportion to their estimated cost on the
decoded bin sequence; headers (stream header, frame headers, checksums)
form their own share.

CSV output is long format with columns ``section,item,value``; the first
data row is ``schema,version,<SCHEMA_VERSION>``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import bitstream as bs
from .core import MIN_BLOCK, CTU_SIZE, DimensionError, Mode, psnr
from .entropy import estimate_rate
from .pipeline import DecodeResult, decode

SCHEMA_VERSION = 1
CSV_COLUMNS = ("section", "item", "value")
COMPONENTS = ("motion", "skip_flags", "residual")
BLOCK_SIZES = tuple(MIN_BLOCK << d for d in range(4))
MODE_NAMES = {Mode.TMERGE: "tmerge", Mode.TSCALE: "tscale", Mode.MV: "mv"}


@dataclass
class FrameReport:
    display: int
    coding_index: int
    frame_type: str
    layer: int
    q_step: int
    bits: int  # payload plus frame header and checksum
    psnr: float
    component_bits: dict[str, float] = field(default_factory=dict)


@dataclass
class StreamReport:
    width: int
    height: int
    frames: list[FrameReport]
    stream_header_bits: int
    partition_area: dict[int, float]
    mode_area: dict[str, float]
    skip_area: float

    @property
    def total_bits(self) -> int:
        return self.stream_header_bits + sum(f.bits for f in self.frames)

    def bit_share(self) -> dict[str, float]:
        header = self.stream_header_bits + sum(
            f.bits - sum(f.component_bits.values()) for f in self.frames)
        parts = {"header": header}
        for c in COMPONENTS:
            parts[c] = sum(f.component_bits.get(c, 0.0) for f in self.frames)
        total = self.total_bits
        return {k: v / total for k, v in parts.items()}

    def layer_psnr(self) -> dict[str, float]:
        out = {}
        for f in self.frames:
            key = f"{f.frame_type}" if f.frame_type == "I" else f"L{f.layer}"
            out.setdefault(key, []).append(f.psnr)
        return {k: float(np.mean(v)) for k, v in sorted(out.items())}

    def rows(self) -> list[tuple[str, str, float]]:
        rows = [("schema", "version", SCHEMA_VERSION),
                ("stream", "width", self.width), ("stream", "height", self.height),
                ("stream", "frames", len(self.frames)), ("stream", "bits", self.total_bits)]
        for f in sorted(self.frames, key=lambda f: f.display):
            rows += [("frame_layer", str(f.display), f.layer),
                     ("frame_type", str(f.display), f.frame_type),
                     ("frame_bits", str(f.display), f.bits),
                     ("frame_psnr", str(f.display), _fmt(f.psnr))]
        rows += [("layer_psnr", k, _fmt(v)) for k, v in self.layer_psnr().items()]
        rows += [("partition_area", str(k), _fmt(v)) for k, v in self.partition_area.items()]
        rows += [("mode_area", k, _fmt(v)) for k, v in self.mode_area.items()]
        rows += [("skip_area", "skip", _fmt(self.skip_area)),
                 ("skip_area", "coded", _fmt(1.0 - self.skip_area))]
        rows += [("bit_share", k, _fmt(v)) for k, v in self.bit_share().items()]
        return rows


def _fmt(v: float):
    if isinstance(v, float) and math.isfinite(v):
        return round(v, 6)
    return v


def _component_bits(frame, bi: bool, skip_unit: int) -> dict[str, float]:
    p = frame.parsed
    inter = p.decisions is not None
    buf = bs.payload_bins(p.q, p.decisions if inter else None, frame.tools, bi, p.skip_flags,
                          skip_unit)
    ctx, val, owner = buf.arrays()
    total, per = estimate_rate(ctx, val, owners=owner, n_owners=3)
    actual = 8 * frame.header.length
    scale = actual / total if total > 0 else 0.0
    return {c: float(per[i] * scale) for i, c in enumerate(COMPONENTS)}


def analyze(stream: bytes | DecodeResult, originals=None) -> StreamReport:
    """Statistics of a stream, with PSNR when the original frames are given."""
    res = decode(stream) if isinstance(stream, (bytes, bytearray)) else stream
    hdr = res.header
    w, h = hdr.width, hdr.height
    if originals is not None:
        originals = [np.asarray(o) for o in originals]
        if len(originals) < len(res.frames):
            raise DimensionError(f"{len(originals)} original frames for a "
                                 f"{len(res.frames)}-frame stream")
        if any(o.shape != (h, w) for o in originals[:len(res.frames)]):
            raise DimensionError(f"original frames are not {w}x{h}")
    frames = []
    part = dict.fromkeys(BLOCK_SIZES, 0)
    mode = dict.fromkeys(MODE_NAMES.values(), 0)
    skipped = 0
    b_area = 0
    for k, f in enumerate(res.frames):
        fh = f.header
        q = psnr(originals[fh.display], f.recon) if originals is not None else math.nan
        rep = FrameReport(fh.display, k, bs.FRAME_TYPE_NAMES[fh.frame_type], fh.layer,
                          fh.q_step, 8 * (bs.FrameHeader.SIZE + fh.length), q)
        rep.component_bits = _component_bits(f, fh.frame_type == bs.FRAME_B, hdr.skip_unit)
        frames.append(rep)
        if fh.frame_type != bs.FRAME_B:
            continue
        b_area += w * h
        dec = f.parsed.decisions
        for x, y, z, m in zip(dec.xs, dec.ys, dec.sizes, dec.modes):
            a = max(0, min(z, w - x)) * max(0, min(z, h - y))
            part[int(z)] += a
            mode[MODE_NAMES[Mode(int(m))]] += a
        u = hdr.skip_unit
        for (uy, ux), s in np.ndenumerate(f.parsed.skip_flags):
            if s:
                skipped += max(0, min(u, w - ux * u)) * max(0, min(u, h - uy * u))
    norm = float(b_area) if b_area else math.nan
    return StreamReport(w, h, frames, 8 * bs.StreamHeader.SIZE,
                        {k: v / norm for k, v in part.items()},
                        {k: v / norm for k, v in mode.items()}, skipped / norm)


def write_csv(report: StreamReport, out) -> None:
    """Write ``report`` as long-format CSV to a path or text stream."""
    if isinstance(out, io.TextIOBase):
        _write(report, out)
        return
    with open(out, "w", newline="") as f:
        _write(report, f)


def _write(report: StreamReport, f) -> None:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(report.rows())


def read_csv(path) -> dict[tuple[str, str], str]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        head = next(r)
        if tuple(head) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {head}")
        return {(s, i): v for s, i, v in r}
