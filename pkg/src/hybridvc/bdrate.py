"""Bjontegaard delta rate between two rate-distortion curves."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

OVERLAP_TOL = 1e-6  # dB; absorbs rounding of PSNR values read back from CSV


class RDWarning(UserWarning):
    """A curve is not monotone or the quality ranges only partly overlap."""


@dataclass(frozen=True)
class RDPoint:
    q_step: int
    kbps: float
    psnr: float


def _check(rate, psnr, name: str):
    rate = np.asarray(rate, np.float64)
    psnr = np.asarray(psnr, np.float64)
    if rate.shape != psnr.shape or rate.ndim != 1:
        raise ValueError(f"{name}: rate and PSNR must be 1-D and equally long")
    if len(rate) < 4:
        raise ValueError(f"{name}: a cubic fit needs at least 4 points, got {len(rate)}")
    if np.any(rate <= 0) or not np.all(np.isfinite(psnr)):
        raise ValueError(f"{name}: rates must be positive and PSNR finite")
    order = np.argsort(rate)
    if np.any(np.diff(psnr[order]) <= 0):
        warnings.warn(f"{name}: PSNR does not increase with rate", RDWarning, stacklevel=3)
    return rate, psnr


def bd_rate(anchor_rate, anchor_psnr, test_rate, test_psnr) -> float:
    """Average rate difference of ``test`` over ``anchor`` at equal quality, in percent.

    ``log10(rate)`` is fitted as a cubic in PSNR for each curve and the gap
    between the fits is averaged over the PSNR interval both curves cover.
    If the intervals only partly overlap an :class:`RDWarning` is issued
    and the shared part is used.  Negative values mean the test curve
    needs fewer bits.
    """
    ra, pa = _check(anchor_rate, anchor_psnr, "anchor")
    rt, pt = _check(test_rate, test_psnr, "test")
    lo = max(pa.min(), pt.min())
    hi = min(pa.max(), pt.max())
    if lo >= hi:
        raise ValueError("the quality ranges of the two curves do not overlap")
    if lo - min(pa.min(), pt.min()) > OVERLAP_TOL or max(pa.max(), pt.max()) - hi > OVERLAP_TOL:
        warnings.warn(f"quality ranges differ; integrating over {lo:.3f}-{hi:.3f} dB only",
                      RDWarning, stacklevel=2)
    fa = np.polyint(np.polyfit(pa, np.log10(ra), 3))
    ft = np.polyint(np.polyfit(pt, np.log10(rt), 3))
    area_a = np.polyval(fa, hi) - np.polyval(fa, lo)
    area_t = np.polyval(ft, hi) - np.polyval(ft, lo)
    mean_diff = (area_t - area_a) / (hi - lo)
    return float((10.0 ** mean_diff - 1.0) * 100.0)


def bd_rate_points(anchor: list[RDPoint], test: list[RDPoint]) -> float:
    return bd_rate([p.kbps for p in anchor], [p.psnr for p in anchor],
                   [p.kbps for p in test], [p.psnr for p in test])
