"""Command-line front end: encode, decode, analyze and rdcurve.

Exit status is 0 on success, 1 for usage errors and 2 for data errors
(unreadable or malformed input, geometry mismatches, corrupt streams).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings

import numpy as np

from . import __version__
from .analysis import analyze, write_csv
from .bdrate import RDPoint, RDWarning, bd_rate_points
from .core import PRESET_ORDER, DimensionError, preset_config
from .entropy import DecodeError
from .pipeline import decode, encode
from .yuv import FormatError, read_video, write_raw, write_y4m

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
RD_COLUMNS = ("q_step", "frames", "bits", "kbps", "psnr")
DATA_ERRORS = (OSError, FormatError, DimensionError, DecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _layers(text: str) -> frozenset:
    if text.strip().lower() in ("", "none"):
        return frozenset()
    try:
        return frozenset(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated layer list: {text!r}")


def _qsteps(text: str) -> list[int]:
    try:
        out = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated q_step list: {text!r}")
    if any(q < 1 for q in out):
        raise argparse.ArgumentTypeError("q_steps must be positive")
    return out


def _config(args, q_step: int):
    kw = dict(q_step_base=q_step, gop=args.gop, intra_period=args.intra_period)
    if args.refine_layers is not None:
        kw["refine_layers"] = args.refine_layers
    try:
        return preset_config(args.preset, **kw)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _read_input(args) -> list[np.ndarray]:
    return read_video(args.input, args.width, args.height, args.frames)


def _frame_table(stats, out) -> None:
    out.write(f"{'frame':>5} {'type':>4} {'layer':>5} {'q':>4} {'bits':>9} {'psnr':>7}\n")
    for s in sorted(stats, key=lambda s: s.display):
        out.write(f"{s.display:5d} {s.type_name:>4} {s.layer:5d} {s.q_step:4d} "
                  f"{s.payload_bits + s.header_bits:9d} {s.psnr:7.2f}\n")


def cmd_encode(args) -> int:
    frames = _read_input(args)
    cfg = _config(args, args.qstep)
    res = encode(frames, cfg)
    with open(args.output, "wb") as f:
        f.write(res.data)
    if not args.quiet:
        _frame_table(res.stats, sys.stdout)
        mean = np.mean([s.psnr for s in res.stats])
        print(f"total {res.total_bits} bits in {len(frames)} frames, mean PSNR {mean:.2f} dB")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("frame", "type", "layer", "q_step", "bits", "psnr"))
            for s in sorted(res.stats, key=lambda s: s.display):
                w.writerow((s.display, s.type_name, s.layer, s.q_step,
                            s.payload_bits + s.header_bits, round(s.psnr, 4)))
    return EXIT_OK


def _write_frames(path, frames) -> None:
    if str(path).endswith(".y4m"):
        write_y4m(path, frames)
    else:
        write_raw(path, frames)


def cmd_decode(args) -> int:
    with open(args.input, "rb") as f:
        data = f.read()
    try:
        res = decode(data)
    except DecodeError as e:
        done = sorted(e.frames, key=lambda f: f.header.display)
        if done:
            _write_frames(args.output, [f.recon for f in done])
            print(f"wrote {len(done)} frames decoded before the error", file=sys.stderr)
        raise
    _write_frames(args.output, res.display_order())
    if not args.quiet:
        h = res.header
        print(f"decoded {len(res.frames)} frames of {h.width}x{h.height}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    with open(args.stream, "rb") as f:
        data = f.read()
    res = decode(data)
    orig = None
    if args.orig:
        h = res.header
        orig = read_video(args.orig, h.width, h.height, len(res.frames))
    report = analyze(res, orig)
    write_csv(report, args.csv if args.csv else sys.stdout)
    return EXIT_OK


def _read_rd_csv(path) -> list[RDPoint]:
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        if r.fieldnames is None or not {"q_step", "kbps", "psnr"} <= set(r.fieldnames):
            raise FormatError(f"{path}: expected columns {', '.join(RD_COLUMNS)}")
        try:
            return [RDPoint(int(row["q_step"]), float(row["kbps"]), float(row["psnr"]))
                    for row in r]
        except ValueError as e:
            raise FormatError(f"{path}: {e}") from None


def cmd_rdcurve(args) -> int:
    frames = _read_input(args)
    rows = []
    for q in args.qsteps:
        res = encode(frames, _config(args, q), keep_results=False)
        mean = float(np.mean([s.psnr for s in res.stats]))
        kbps = res.total_bits * args.fps / len(frames) / 1000.0
        rows.append((q, len(frames), res.total_bits, kbps, mean))
        if not args.quiet:
            print(f"q_step {q:3d}: {res.total_bits} bits, {kbps:.2f} kbps, {mean:.2f} dB",
                  file=sys.stderr)
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(RD_COLUMNS)
        for q, n, bits, kbps, p in rows:
            w.writerow((q, n, bits, round(kbps, 6), round(p, 6)))
    finally:
        if out is not sys.stdout:
            out.close()
    if args.anchor:
        anchor = _read_rd_csv(args.anchor)
        test = [RDPoint(q, k, p) for q, _, _, k, p in rows]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RDWarning)
            try:
                bd = bd_rate_points(anchor, test)
            except ValueError as e:
                raise FormatError(f"BD-rate: {e}") from None
        for w_ in caught:
            print(f"warning: {w_.message}", file=sys.stderr)
        print(f"BD-rate vs {args.anchor}: {round(bd, 2) + 0.0:+.2f}%")
    return EXIT_OK


def _add_input(p, frames_help="number of frames to read (default: all)") -> None:
    p.add_argument("--input", "-i", required=True, help="raw 8-bit luma or Y4M file")
    p.add_argument("--width", type=int, help="frame width (raw input)")
    p.add_argument("--height", type=int, help="frame height (raw input)")
    p.add_argument("--frames", type=int, help=frames_help)


def _add_coding(p) -> None:
    p.add_argument("--gop", type=int, default=8)
    p.add_argument("--intra-period", type=int, default=32,
                   help="frames between intra frames, a multiple of the GOP; 0 for first only")
    p.add_argument("--preset", choices=PRESET_ORDER, default="full")
    p.add_argument("--refine-layers", type=_layers, default=None,
                   help="comma separated layers to refine, or 'none' (default: preset)")
    p.add_argument("--quiet", "-q", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hybridvc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--verbose", "-v", action="store_true", help="log per-frame progress")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="encode a sequence")
    _add_input(p)
    p.add_argument("--qstep", type=int, default=24)
    _add_coding(p)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--csv", help="also write per-frame statistics here")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a stream to raw luma (or .y4m)")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--quiet", "-q", action="store_true")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("analyze", help="PSNR, area ratios and bit shares as CSV")
    p.add_argument("--stream", "-s", required=True)
    p.add_argument("--orig", help="original sequence, for PSNR")
    p.add_argument("--csv", help="output path (default: stdout)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("rdcurve", help="encode at several q_steps; optional BD-rate")
    _add_input(p)
    p.add_argument("--qsteps", type=_qsteps, default=[12, 24, 45, 95])
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--anchor", help="anchor RD CSV written by a previous rdcurve run")
    _add_coding(p)
    p.add_argument("--csv", help="output path (default: stdout)")
    p.set_defaults(func=cmd_rdcurve)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"{ap.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"{ap.prog}: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
