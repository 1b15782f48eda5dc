"""Shared domain types, configuration and fixed-point conventions.

Every displacement in the codec is an integer in 1/16-pel units and every
temporal scale factor is an integer in 1/10 units.  All rounding is
round-half-away-from-zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

CTU_SIZE = 64
MIN_BLOCK = 8
FLOW_UNIT = 16  # fixed-point units per pel
HALF_PEL = FLOW_UNIT // 2
SCALE_UNIT = 10  # fixed-point units per 1.0 of scale
MERGE_SCALE = 5  # 0.5 in scale units
DEFAULT_MV_BOUND = 64 * FLOW_UNIT
DEFAULT_SCALE_BOUND = 3 * SCALE_UNIT


class DimensionError(ValueError):
    """Raised when two planes or fields disagree on geometry."""


# ---------------------------------------------------------------------------
# rounding


def round_div(num, den):
    """Integer division rounded half away from zero.

    Works on Python ints and on integer numpy arrays (``den`` may be an
    array too).  Exact: no floating point is involved.
    """
    if isinstance(num, np.ndarray) or isinstance(den, np.ndarray):
        num = np.asarray(num, dtype=np.int64)
        den = np.asarray(den, dtype=np.int64)
        sign = np.sign(num) * np.sign(den)
        a = np.abs(num)
        b = np.abs(den)
        return sign * ((2 * a + b) // (2 * b))
    if den == 0:
        raise ZeroDivisionError("round_div by zero")
    sign = -1 if (num < 0) != (den < 0) else 1
    a, b = abs(num), abs(den)
    return sign * ((2 * a + b) // (2 * b))


@njit(cache=True, inline="always")
def nb_round_div(num, den):
    # den > 0 required
    if num >= 0:
        return (2 * num + den) // (2 * den)
    return -((-2 * num + den) // (2 * den))


def round_half_away(x):
    """Round a float (or float array) to the nearest integer, ties away from zero."""
    if isinstance(x, np.ndarray):
        return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)
    r = int(abs(x) + 0.5)
    return -r if x < 0 else r


def quantize_to_half_pel(units: int) -> int:
    """Snap a 1/16-pel displacement to the half-pel grid (multiples of 8)."""
    return round_div(units, HALF_PEL) * HALF_PEL


# ---------------------------------------------------------------------------
# planes


@dataclass(frozen=True)
class Plane:
    """8-bit luma raster stored row-major as a ``(height, width)`` array."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise DimensionError("plane samples must be 2-D")
        if s.dtype != np.uint8:
            if s.size and (s.min() < 0 or s.max() > 255):
                raise ValueError("plane samples must lie in [0, 255]")
            s = s.astype(np.uint8)
        s = np.ascontiguousarray(s)
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def from_bytes(cls, data: bytes, width: int, height: int) -> "Plane":
        if len(data) != width * height:
            raise DimensionError(
                f"expected {width * height} bytes for {width}x{height}, got {len(data)}"
            )
        return cls(np.frombuffer(data, dtype=np.uint8).reshape(height, width))

    def to_bytes(self) -> bytes:
        return self.samples.tobytes()

    def crop(self, width: int, height: int) -> "Plane":
        return Plane(self.samples[:height, :width])


@dataclass(frozen=True)
class ResidualPlane:
    """Signed residual samples (one per pixel), nominally in [-255, 255]."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.int32)
        if s.ndim != 2:
            raise DimensionError("residual samples must be 2-D")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]


def padded_size(n: int, multiple: int = CTU_SIZE) -> int:
    return -(-n // multiple) * multiple


def pad_to_ctu(plane: Plane) -> Plane:
    """Pad a plane to multiples of the CTU size by replicating its edges."""
    h, w = plane.height, plane.width
    ph, pw = padded_size(h), padded_size(w)
    if (ph, pw) == (h, w):
        return plane
    return Plane(np.pad(plane.samples, ((0, ph - h), (0, pw - w)), mode="edge"))


def sse(a: Plane | np.ndarray, b: Plane | np.ndarray, width: int | None = None,
        height: int | None = None) -> int:
    """Sum of squared differences over the (optionally cropped) region.

    ``width``/``height`` name the unpadded region; by default the whole
    plane is used.
    """
    a = a.samples if isinstance(a, Plane) else np.asarray(a)
    b = b.samples if isinstance(b, Plane) else np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    h = a.shape[0] if height is None else height
    w = a.shape[1] if width is None else width
    d = a[:h, :w].astype(np.int64) - b[:h, :w].astype(np.int64)
    return int(np.sum(d * d))


def psnr(a, b, width=None, height=None) -> float:
    a_arr = a.samples if isinstance(a, Plane) else np.asarray(a)
    h = a_arr.shape[0] if height is None else height
    w = a_arr.shape[1] if width is None else width
    err = sse(a, b, w, h)
    if err == 0:
        return float("inf")
    return 10.0 * np.log10(255.0 * 255.0 * w * h / err)


# ---------------------------------------------------------------------------
# motion and modes


class MotionVector(NamedTuple):
    dx: int
    dy: int


class ScalePair(NamedTuple):
    """Per-direction 2-D scale factors, each in 1/10 units."""

    s0x: int
    s0y: int
    s1x: int
    s1y: int

    @classmethod
    def from_real(cls, s0x, s0y, s1x, s1y) -> "ScalePair":
        return cls(*(round_half_away(v * SCALE_UNIT) for v in (s0x, s0y, s1x, s1y)))

    def as_real(self) -> tuple[float, float, float, float]:
        return tuple(v / SCALE_UNIT for v in self)


@dataclass(frozen=True)
class MotionField:
    """Per-pixel displacement field, ``vectors[y, x] = (dx, dy)`` in 1/16 pel."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.int32)
        if v.ndim != 3 or v.shape[2] != 2:
            raise DimensionError("motion field must have shape (h, w, 2)")
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def zeros(cls, height: int, width: int) -> "MotionField":
        return cls(np.zeros((height, width, 2), dtype=np.int32))

    @classmethod
    def constant(cls, height: int, width: int, dx: int, dy: int) -> "MotionField":
        v = np.empty((height, width, 2), dtype=np.int32)
        v[..., 0] = dx
        v[..., 1] = dy
        return cls(v)


class Mode(enum.IntEnum):
    TMERGE = 0
    TSCALE = 1
    MV = 2


@dataclass(frozen=True)
class ModeDecision:
    """Motion mode of one block plus its transmitted parameters.

    ``params`` holds four integers: TScale ``(s0x, s0y, s1x, s1y)`` in 1/10
    units, MV ``(dx0, dy0, dx1, dy1)`` in 1/16 pel (multiples of 8), and is
    all zeros for TMerge.  Uni-directional frames use only the first pair.
    """

    mode: Mode
    x: int = 0
    y: int = 0
    size: int = CTU_SIZE
    params: tuple[int, int, int, int] = (0, 0, 0, 0)

    def __post_init__(self):
        p = tuple(int(v) for v in self.params)
        if len(p) != 4:
            raise ValueError("params must have four entries")
        if self.mode == Mode.MV and any(v % HALF_PEL for v in p):
            raise ValueError("MV components must be half-pel multiples of 8 units")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def scales(self) -> ScalePair:
        return ScalePair(*self.params)

    @property
    def vectors(self) -> tuple[MotionVector, MotionVector]:
        p = self.params
        return MotionVector(p[0], p[1]), MotionVector(p[2], p[3])

    def at(self, x: int, y: int, size: int) -> "ModeDecision":
        return ModeDecision(self.mode, x, y, size, self.params)


def zorder_blocks(ctu_x: int, ctu_y: int, size: int, ctu: int = CTU_SIZE):
    """Yield block origins of a uniform ``size`` grid inside a CTU in z-order."""
    if size >= ctu:
        yield ctu_x, ctu_y
        return
    half = ctu // 2
    for dy in (0, half):
        for dx in (0, half):
            yield from zorder_blocks(ctu_x + dx, ctu_y + dy, size, half)


@dataclass(frozen=True)
class PartitionTree:
    """Quadtree partition of a padded frame, stored as its leaves in coding order.

    Coding order is CTU raster scan and z-order inside each CTU.  Leaves are
    ``(x, y, size)`` with size in {8, 16, 32, 64}.
    """

    width: int
    height: int
    leaves: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if self.width % CTU_SIZE or self.height % CTU_SIZE:
            raise DimensionError("partition geometry must be CTU aligned")
        cover = np.zeros((self.height // MIN_BLOCK, self.width // MIN_BLOCK), np.int32)
        for x, y, s in self.leaves:
            if s not in (8, 16, 32, 64) or x % s or y % s:
                raise ValueError(f"illegal leaf {(x, y, s)}")
            cover[y // 8:(y + s) // 8, x // 8:(x + s) // 8] += 1
        if not np.all(cover == 1):
            raise ValueError("leaves do not tile the frame exactly")

    @classmethod
    def uniform(cls, width: int, height: int, size: int) -> "PartitionTree":
        leaves = []
        for cy in range(0, height, CTU_SIZE):
            for cx in range(0, width, CTU_SIZE):
                leaves.extend((x, y, size) for x, y in zorder_blocks(cx, cy, size))
        return cls(width, height, tuple(leaves))

    @classmethod
    def from_split_flags(cls, width: int, height: int, flags) -> "PartitionTree":
        """Build from a mapping ``(x, y, size) -> bool`` of split decisions.

        Missing nodes are treated as not split.
        """
        leaves = []

        def walk(x, y, s):
            if s > MIN_BLOCK and flags.get((x, y, s), False):
                h = s // 2
                for dy in (0, h):
                    for dx in (0, h):
                        walk(x + dx, y + dy, h)
            else:
                leaves.append((x, y, s))

        for cy in range(0, height, CTU_SIZE):
            for cx in range(0, width, CTU_SIZE):
                walk(cx, cy, CTU_SIZE)
        return cls(width, height, tuple(leaves))

    @property
    def is_uniform(self) -> bool:
        return len({s for _, _, s in self.leaves}) == 1

    def depth_of(self, size: int) -> int:
        return CTU_SIZE.bit_length() - size.bit_length()

    def split_flags(self) -> dict[tuple[int, int, int], bool]:
        flags = {}
        for x, y, s in self.leaves:
            if s > MIN_BLOCK:
                flags[(x, y, s)] = False
            node = s * 2
            while node <= CTU_SIZE:
                flags[(x - x % node, y - y % node, node)] = True
                node *= 2
        return flags


@dataclass(frozen=True)
class RDCost:
    """Rate-distortion cost; ``j`` is always derived, never stored."""

    distortion: float
    rate: float
    lam: float

    def __post_init__(self):
        if self.distortion < 0 or self.rate < 0:
            raise ValueError("distortion and rate must be non-negative")

    @property
    def j(self) -> float:
        return self.distortion + self.lam * self.rate

    def __add__(self, other: "RDCost") -> "RDCost":
        if other.lam != self.lam:
            raise ValueError("cannot add costs with different lambda")
        return RDCost(self.distortion + other.distortion, self.rate + other.rate, self.lam)


# ---------------------------------------------------------------------------
# configuration

# q_step -> HM-equivalent QP
QP_EQUIV = {12: 22, 24: 27, 45: 32, 95: 37}
DEFAULT_LAYER_WEIGHTS = (1.0, 2.0, 2.5, 3.5)
DEFAULT_QSTEP_LAYER_SCALE = (1.0, 1.1, 1.2, 1.3)


@dataclass(frozen=True)
class ModeToggles:
    tscale: bool = True
    mv: bool = True
    variable_block: bool = True
    residual_skip: bool = True

    def to_bits(self) -> int:
        return (self.tscale << 0) | (self.mv << 1) | (self.variable_block << 2) | (
            self.residual_skip << 3)

    @classmethod
    def from_bits(cls, bits: int) -> "ModeToggles":
        return cls(bool(bits & 1), bool(bits & 2), bool(bits & 4), bool(bits & 8))


@dataclass(frozen=True)
class CodecConfig:
    q_step_base: int = 24
    gop: int = 8
    intra_period: int = 32
    partition_depths: int = 4
    min_block: int = MIN_BLOCK
    motion_modes: int = 3
    skip_unit: int = 128
    refine_iters: int = 10
    refine_layers: frozenset = frozenset({1})
    layer_weights: tuple = DEFAULT_LAYER_WEIGHTS
    q_step_layer_scale: tuple = DEFAULT_QSTEP_LAYER_SCALE
    qp_equiv: float | None = None
    lambda_schedule_id: int = 0
    toggles: ModeToggles = field(default_factory=ModeToggles)
    fixed_block: int = 32
    mv_bound: int = DEFAULT_MV_BOUND
    scale_bound: int = DEFAULT_SCALE_BOUND

    def __post_init__(self):
        object.__setattr__(self, "refine_layers", frozenset(self.refine_layers))
        if self.q_step_base < 1:
            raise ValueError("q_step_base must be >= 1")
        if self.gop < 1 or self.gop & (self.gop - 1):
            raise ValueError("gop must be a power of two")
        if self.intra_period < 0 or (self.intra_period and self.intra_period % self.gop):
            raise ValueError("intra_period must be 0 or a multiple of gop")
        if self.skip_unit < CTU_SIZE or self.skip_unit % CTU_SIZE:
            raise ValueError("skip_unit must be a multiple of 64")
        if self.min_block != MIN_BLOCK or self.partition_depths != 4:
            raise ValueError("only z0=8 with D=4 partition depths is supported")
        if not 1 <= self.motion_modes <= 3:
            raise ValueError("motion_modes must be in 1..3")
        if self.fixed_block not in (8, 16, 32, 64):
            raise ValueError("fixed_block must be 8, 16, 32 or 64")
        if self.refine_iters < 0:
            raise ValueError("refine_iters must be >= 0")
        if not HALF_PEL <= self.mv_bound <= DEFAULT_MV_BOUND:
            raise ValueError(f"mv_bound must be in {HALF_PEL}..{DEFAULT_MV_BOUND}")
        if not 1 <= self.scale_bound <= 127:
            raise ValueError("scale_bound must be in 1..127")

    @property
    def num_layers(self) -> int:
        return max(1, self.gop.bit_length())

    def layer_value(self, table, layer: int) -> float:
        return table[min(layer, len(table) - 1)]

    def q_step_for(self, layer: int) -> int:
        return max(1, round_half_away(self.q_step_base * self.layer_value(
            self.q_step_layer_scale, layer)))

    def enabled_modes(self) -> tuple[Mode, ...]:
        modes = [Mode.TMERGE]
        if self.toggles.tscale and self.motion_modes >= 2:
            modes.append(Mode.TSCALE)
        if self.toggles.mv and self.motion_modes >= 3:
            modes.append(Mode.MV)
        return tuple(modes)


PRESETS = {
    "e2e-tmerge": dict(toggles=ModeToggles(False, False, False, False),
                       refine_layers=frozenset()),
    "tscale": dict(toggles=ModeToggles(True, False, False, False)),
    "mv": dict(toggles=ModeToggles(True, True, False, False)),
    "vblock": dict(toggles=ModeToggles(True, True, True, False)),
    "full": dict(toggles=ModeToggles(True, True, True, True)),
}
PRESET_ORDER = ("e2e-tmerge", "tscale", "mv", "vblock", "full")


def preset_config(name: str, **overrides) -> CodecConfig:
    """Configuration for one of the ablation presets, with field overrides.

    An explicit ``refine_layers`` override wins over the preset's own.
    """
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_ORDER)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return CodecConfig(**kw)
