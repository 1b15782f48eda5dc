"""Reversible 4-level CDF 5/3 wavelet, scalar quantizer and subband geometry.

Coefficients live in a single Mallat-layout array the size of the padded
frame: after each level the LL band occupies the top-left quadrant of the
previous LL region, HL the top-right, LH the bottom-left and HH the
bottom-right.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .core import DimensionError, ResidualPlane

LEVELS = 4
ORIENTATIONS = ("LL", "HL", "LH", "HH")
# scan order: LL4 first, then coarse to fine
SUBBAND_TAGS = ("LL4",) + tuple(f"{o}{k}" for k in range(LEVELS, 0, -1)
                                for o in ("HL", "LH", "HH"))


def parse_tag(tag: str) -> tuple[str, int]:
    if tag not in SUBBAND_TAGS:
        raise KeyError(f"unknown subband {tag!r}")
    return tag[:2], int(tag[2:])


def band_rect(tag: str, height: int, width: int) -> tuple[int, int, int, int]:
    """``(row0, col0, rows, cols)`` of a subband inside the Mallat array."""
    orient, k = parse_tag(tag)
    h, w = height >> k, width >> k
    r0 = h if orient in ("LH", "HH") else 0
    c0 = w if orient in ("HL", "HH") else 0
    return r0, c0, h, w


@dataclass(frozen=True)
class SubbandSet:
    """The 13 subbands of a 4-level decomposition in Mallat layout."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.coeffs, dtype=np.int32)
        h, w = c.shape
        if h % (1 << LEVELS) or w % (1 << LEVELS):
            raise DimensionError("subband geometry needs dimensions divisible by 16")
        object.__setattr__(self, "coeffs", c)

    @property
    def height(self) -> int:
        return self.coeffs.shape[0]

    @property
    def width(self) -> int:
        return self.coeffs.shape[1]

    def band(self, tag: str) -> np.ndarray:
        r0, c0, h, w = band_rect(tag, self.height, self.width)
        return self.coeffs[r0:r0 + h, c0:c0 + w]

    def bands(self) -> dict[str, np.ndarray]:
        return {t: self.band(t) for t in SUBBAND_TAGS}


# ---------------------------------------------------------------------------
# lifting kernels


@njit(cache=True)
def fdwt_inplace(a, levels):
    # lifting in place, then deinterleave into low | high halves
    h, w = a.shape
    tmp = np.empty((h, w), np.int32)
    for lev in range(levels):
        hh = h >> lev
        ww = w >> lev
        half = ww // 2
        for r in range(hh):
            ev = tmp[r, :half]
            od = tmp[r, half:ww]
            for i in range(half):
                ev[i] = a[r, 2 * i]
                od[i] = a[r, 2 * i + 1]
            for i in range(half - 1):
                od[i] -= (ev[i] + ev[i + 1]) >> 1
            od[half - 1] -= (ev[half - 1] + ev[half - 1]) >> 1
            ev[0] += (od[0] + od[0] + 2) >> 2
            for i in range(1, half):
                ev[i] += (od[i - 1] + od[i] + 2) >> 2
            for c in range(ww):
                a[r, c] = tmp[r, c]
        hf = hh // 2
        for i in range(hf):
            dn = 2 * i + 2 if i < hf - 1 else hh - 2
            for c in range(ww):
                a[2 * i + 1, c] -= (a[2 * i, c] + a[dn, c]) >> 1
        for i in range(hf):
            up = 2 * i - 1 if i > 0 else 1
            for c in range(ww):
                a[2 * i, c] += (a[up, c] + a[2 * i + 1, c] + 2) >> 2
        for i in range(hf):
            for c in range(ww):
                tmp[i, c] = a[2 * i, c]
                tmp[hf + i, c] = a[2 * i + 1, c]
        for r in range(hh):
            for c in range(ww):
                a[r, c] = tmp[r, c]


@njit(cache=True)
def idwt_inplace(a, levels):
    h, w = a.shape
    tmp = np.empty((h, w), np.int32)
    for lev in range(levels - 1, -1, -1):
        hh = h >> lev
        ww = w >> lev
        hf = hh // 2
        for i in range(hf):
            for c in range(ww):
                tmp[2 * i, c] = a[i, c]
                tmp[2 * i + 1, c] = a[hf + i, c]
        for i in range(hf):
            up = 2 * i - 1 if i > 0 else 1
            for c in range(ww):
                tmp[2 * i, c] -= (tmp[up, c] + tmp[2 * i + 1, c] + 2) >> 2
        for i in range(hf):
            dn = 2 * i + 2 if i < hf - 1 else hh - 2
            for c in range(ww):
                tmp[2 * i + 1, c] += (tmp[2 * i, c] + tmp[dn, c]) >> 1
        half = ww // 2
        for r in range(hh):
            ev = tmp[r, :half]
            od = tmp[r, half:ww]
            ev[0] -= (od[0] + od[0] + 2) >> 2
            for i in range(1, half):
                ev[i] -= (od[i - 1] + od[i] + 2) >> 2
            for i in range(half - 1):
                od[i] += (ev[i] + ev[i + 1]) >> 1
            od[half - 1] += (ev[half - 1] + ev[half - 1]) >> 1
            for i in range(half):
                a[r, 2 * i] = ev[i]
                a[r, 2 * i + 1] = od[i]


@njit(cache=True)
def quantize_array(y, q_step):
    out = np.empty_like(y)
    h, w = y.shape
    for r in range(h):
        for c in range(w):
            v = y[r, c]
            if v >= 0:
                out[r, c] = (2 * v + q_step) // (2 * q_step)
            else:
                out[r, c] = -((-2 * v + q_step) // (2 * q_step))
    return out


def _check_geometry(h: int, w: int) -> None:
    if h % (1 << LEVELS) or w % (1 << LEVELS):
        raise DimensionError(f"{w}x{h} is not divisible by {1 << LEVELS}")


def forward_dwt(res: ResidualPlane | np.ndarray) -> SubbandSet:
    """4-level 2-D integer CDF 5/3 analysis (rows, then columns, per level)."""
    arr = res.samples if isinstance(res, ResidualPlane) else res
    a = np.array(arr, dtype=np.int32, copy=True)
    _check_geometry(*a.shape)
    fdwt_inplace(a, LEVELS)
    return SubbandSet(a)


def inverse_dwt(s: SubbandSet) -> ResidualPlane:
    """Exact integer inverse of :func:`forward_dwt`; no clamping."""
    a = np.array(s.coeffs, dtype=np.int32, copy=True)
    _check_geometry(*a.shape)
    idwt_inplace(a, LEVELS)
    return ResidualPlane(a)


def quantize(s: SubbandSet, q_step: int) -> SubbandSet:
    if q_step < 1:
        raise ValueError("q_step must be >= 1")
    return SubbandSet(quantize_array(s.coeffs, np.int32(q_step)))


def dequantize(q: SubbandSet, q_step: int) -> SubbandSet:
    return SubbandSet(q.coeffs * np.int32(q_step))


# ---------------------------------------------------------------------------
# geometry: coefficient supports and their centres


def coeff_support(tag: str, i: int, j: int, height: int | None = None,
                  width: int | None = None) -> tuple[int, int, int, int]:
    """Pixel rectangle ``(x0, y0, x1, y1)`` (half-open) covered by a coefficient.

    ``i`` is the row and ``j`` the column inside the subband.  When the frame
    size is given, indices are range checked.
    """
    _, k = parse_tag(tag)
    if i < 0 or j < 0:
        raise IndexError("negative coefficient index")
    if height is not None and width is not None:
        if i >= height >> k or j >= width >> k:
            raise IndexError(f"({i}, {j}) outside {tag} of a {width}x{height} frame")
    s = 1 << k
    return j * s, i * s, (j + 1) * s, (i + 1) * s


@lru_cache(maxsize=16)
def _center_maps(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    cy = np.empty((height, width), np.int32)
    cx = np.empty((height, width), np.int32)
    for tag in SUBBAND_TAGS:
        _, k = parse_tag(tag)
        r0, c0, h, w = band_rect(tag, height, width)
        s, half = 1 << k, 1 << (k - 1)
        cy[r0:r0 + h, c0:c0 + w] = (np.arange(h) * s + half)[:, None]
        cx[r0:r0 + h, c0:c0 + w] = (np.arange(w) * s + half)[None, :]
    cy.flags.writeable = False
    cx.flags.writeable = False
    return cy, cx


def support_centers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-coefficient centre pixel ``(row, col)`` of its support rectangle."""
    _check_geometry(height, width)
    return _center_maps(height, width)


@lru_cache(maxsize=16)
def unit_index_map(height: int, width: int, unit: int) -> np.ndarray:
    """Index (raster over units) of the skip unit owning each coefficient."""
    cy, cx = support_centers(height, width)
    nux = -(-width // unit)
    m = (cy // unit) * nux + (cx // unit)
    m = m.astype(np.int32)
    m.flags.writeable = False
    return m


def unit_grid(height: int, width: int, unit: int) -> tuple[int, int]:
    return -(-height // unit), -(-width // unit)


def coefficient_skip_mask(flags: np.ndarray, height: int, width: int,
                          unit: int = 128) -> np.ndarray:
    """Boolean Mallat-layout mask of coefficients lying in skipped units."""
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != unit_grid(height, width, unit):
        raise DimensionError(f"skip flags {flags.shape} do not tile {width}x{height}")
    return flags.reshape(-1)[unit_index_map(height, width, unit)]


def zero_units(s: SubbandSet, flags: np.ndarray, unit: int = 128) -> SubbandSet:
    """Zero every coefficient whose support centre lies in a skipped unit."""
    mask = coefficient_skip_mask(flags, s.height, s.width, unit)
    out = s.coeffs.copy()
    out[mask] = 0
    return SubbandSet(out)


def leaf_index_of_coeffs(cell_leaf: np.ndarray, height: int, width: int) -> np.ndarray:
    """Leaf owning each coefficient, given an 8x8-cell to leaf-index map."""
    cy, cx = support_centers(height, width)
    return cell_leaf[cy >> 3, cx >> 3]


def attribute_bits(bits_per_coeff: np.ndarray, partition) -> np.ndarray:
    """Split per-coefficient bit estimates among the leaves of a partition.

    Each coefficient goes to the leaf containing the centre of its support
    rectangle.  Returns one rate per leaf, in the partition's leaf order.
    """
    h, w = bits_per_coeff.shape
    if (h, w) != (partition.height, partition.width):
        raise DimensionError("bit map and partition geometry differ")
    cell_leaf = cell_leaf_map(partition.leaves, h, w)
    owner = leaf_index_of_coeffs(cell_leaf, h, w)
    return np.bincount(owner.ravel(), weights=bits_per_coeff.ravel(),
                       minlength=len(partition.leaves))


def cell_leaf_map(leaves, height: int, width: int) -> np.ndarray:
    m = np.full((height >> 3, width >> 3), -1, np.int32)
    for n, (x, y, s) in enumerate(leaves):
        m[y >> 3:(y + s) >> 3, x >> 3:(x + s) >> 3] = n
    return m
