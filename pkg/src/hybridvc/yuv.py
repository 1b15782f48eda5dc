"""Raw luma and Y4M input/output."""

from __future__ import annotations

import os
import re

import numpy as np

from .core import DimensionError, psnr  # noqa: F401  (re-exported)

Y4M_MAGIC = b"YUV4MPEG2"
# chroma plane size as a fraction of the luma plane, by Y4M colour space
_CHROMA = {"420": 0.5, "420jpeg": 0.5, "420paldv": 0.5, "420mpeg2": 0.5, "422": 1.0,
           "444": 2.0, "mono": 0.0}


class FormatError(ValueError):
    """Input file does not match the declared or detected format."""


def read_raw(path, width: int, height: int, frames: int | None = None) -> list[np.ndarray]:
    """Read 8-bit luma frames from a headerless raster file.

    The file size must be a whole number of ``width * height`` frames.
    """
    if width < 1 or height < 1:
        raise DimensionError("frame size must be positive")
    data = np.fromfile(path, dtype=np.uint8)
    size = width * height
    if data.size == 0 or data.size % size:
        raise FormatError(f"{os.fspath(path)}: {data.size} bytes is not a multiple of "
                          f"{width}x{height}")
    n = data.size // size
    if frames is not None:
        if frames > n:
            raise FormatError(f"{os.fspath(path)} holds {n} frames, {frames} requested")
        n = frames
    return [f.copy() for f in data[:n * size].reshape(n, height, width)]


def write_raw(path, frames) -> None:
    with open(path, "wb") as f:
        for fr in frames:
            f.write(np.ascontiguousarray(fr, np.uint8).tobytes())


def _y4m_params(line: bytes) -> dict[str, str]:
    tokens = line.decode("ascii", "replace").split()
    if not tokens or tokens[0].encode() != Y4M_MAGIC:
        raise FormatError("missing YUV4MPEG2 signature")
    return {t[0]: t[1:] for t in tokens[1:] if t}


def read_y4m(path, frames: int | None = None) -> tuple[list[np.ndarray], dict[str, str]]:
    """Read the luma planes of a Y4M file; chroma is skipped.

    Returns the frames and the stream parameters (``W``, ``H``, ``F``, ``C``...).
    """
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"\n")
    if end < 0:
        raise FormatError("truncated Y4M header")
    params = _y4m_params(data[:end])
    try:
        w, h = int(params["W"]), int(params["H"])
    except (KeyError, ValueError):
        raise FormatError("Y4M header lacks a valid W/H") from None
    cs = re.match(r"[a-z0-9]+", params.get("C", "420")).group(0)
    if cs not in _CHROMA:
        raise FormatError(f"unsupported Y4M colour space {params['C']!r}")
    luma = w * h
    frame_bytes = luma + int(round(luma * _CHROMA[cs]))
    out = []
    pos = end + 1
    while pos < len(data) and (frames is None or len(out) < frames):
        nl = data.find(b"\n", pos)
        if nl < 0 or not data.startswith(b"FRAME", pos):
            raise FormatError(f"bad FRAME marker at byte {pos}")
        pos = nl + 1
        if pos + frame_bytes > len(data):
            raise FormatError(f"truncated frame {len(out)}")
        out.append(np.frombuffer(data, np.uint8, luma, pos).reshape(h, w).copy())
        pos += frame_bytes
    if not out:
        raise FormatError("Y4M file holds no frames")
    return out, params


def write_y4m(path, frames, fps: str = "30:1") -> None:
    """Write luma frames as monochrome Y4M."""
    frames = [np.ascontiguousarray(f, np.uint8) for f in frames]
    h, w = frames[0].shape
    with open(path, "wb") as f:
        f.write(b"YUV4MPEG2 W%d H%d F%s Ip A1:1 Cmono\n" % (w, h, fps.encode()))
        for fr in frames:
            f.write(b"FRAME\n")
            f.write(fr.tobytes())


def is_y4m(path) -> bool:
    with open(path, "rb") as f:
        return f.read(len(Y4M_MAGIC)) == Y4M_MAGIC


def read_video(path, width: int | None = None, height: int | None = None,
               frames: int | None = None) -> list[np.ndarray]:
    """Read Y4M (detected by signature) or raw luma of the given size."""
    if is_y4m(path):
        out, params = read_y4m(path, frames)
        h, w = out[0].shape
        if (width and width != w) or (height and height != h):
            raise DimensionError(f"Y4M is {w}x{h}, {width}x{height} given")
        return out
    if width is None or height is None:
        raise DimensionError("raw input needs --width and --height")
    return read_raw(path, width, height, frames)

