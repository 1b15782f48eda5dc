"""Adaptive binary range coding, context layout and syntax binarization.

The coder is a 32-bit carry-propagating range coder (the LZMA scheme) driven
by count-based adaptive binary models.  A model is a pair of counts
``(n0, n1)`` starting at ``(1, 1)``; coding bin ``b`` adds one to ``n_b``
and both counts are halved (rounding up) once their sum exceeds
:data:`COUNT_LIMIT`.  Context index ``-1`` marks an equiprobable bypass bin.

The rate estimator charges ``-log2 p`` for every bin using the same model
updates, so an estimate of the exact bin sequence differs from the real
payload only by coder overhead.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .wavelet import SUBBAND_TAGS, band_rect, parse_tag

COUNT_LIMIT = 1024
TOP = 1 << 24
MASK32 = (1 << 32) - 1
BYPASS = -1

# context layout
CTX_SPLIT = 0  # node sizes 16, 32, 64
CTX_MODE = 3  # two mode-index bins
CTX_SKIP = 5
CTX_TS_ZERO = 6
CTX_TS_PREFIX = 7  # 4
CTX_MVD_ZERO = 11  # x, y
CTX_MVD_PREFIX = 13  # 4
CTX_SIG = 17  # 13 bands x 3 neighbour classes
CTX_MAG = CTX_SIG + 13 * 3  # 5 level groups x 6 prefix positions
N_CTX = CTX_MAG + 5 * 6
PREFIX_CAP_MOTION = 3
PREFIX_CAP_COEF = 5

LOG2_TABLE = np.log2(np.arange(1, 2 * COUNT_LIMIT + 4, dtype=np.float64))
LOG2_TABLE = np.concatenate([[0.0], LOG2_TABLE])  # LOG2_TABLE[n] == log2(n)


class DecodeError(ValueError):
    """Raised for malformed, corrupt or truncated data.

    ``offset`` is the byte position (within the whole stream when raised by
    the container parser) where decoding failed and ``frames`` holds
    whatever was decoded before the failure.
    """

    def __init__(self, message: str, offset: int | None = None, frames=None):
        super().__init__(message if offset is None else f"{message} (byte {offset})")
        self.offset = offset
        self.frames = frames if frames is not None else []


def fresh_counts() -> np.ndarray:
    """A ContextSet in its per-frame reset state (every model at p = 0.5)."""
    return np.ones((N_CTX, 2), dtype=np.int32)


@njit(cache=True, inline="always")
def _update(counts, ctx, b):
    counts[ctx, b] += 1
    if counts[ctx, 0] + counts[ctx, 1] > COUNT_LIMIT:
        counts[ctx, 0] = (counts[ctx, 0] + 1) >> 1
        counts[ctx, 1] = (counts[ctx, 1] + 1) >> 1


@njit(cache=True, inline="always")
def _bin_cost(counts, ctx, b):
    if ctx < 0:
        return 1.0
    return LOG2_TABLE[counts[ctx, 0] + counts[ctx, 1]] - LOG2_TABLE[counts[ctx, b]]


# ---------------------------------------------------------------------------
# range coder


@njit(cache=True, inline="always")
def _shift_low(st, out):
    # st = [low, cache, cache_size, pos, skip_first]
    low = st[0]
    if low < 0xFF000000 or low > MASK32:
        carry = low >> 32
        temp = st[1]
        while True:
            if st[4]:
                st[4] = 0  # the leading byte is always zero; never emitted
            else:
                out[st[3]] = (temp + carry) & 0xFF
                st[3] += 1
            temp = 0xFF
            st[2] -= 1
            if st[2] == 0:
                break
        st[1] = (low >> 24) & 0xFF
    st[2] += 1
    st[0] = (low & 0x00FFFFFF) << 8


@njit(cache=True)
def rc_encode(ctxs, vals, n, counts, out):
    """Encode ``n`` bins into ``out``; returns the number of bytes written."""
    st = np.zeros(5, np.int64)
    st[2] = 1
    st[4] = 1
    rng = np.int64(MASK32)
    for k in range(n):
        ctx = ctxs[k]
        b = vals[k]
        if ctx < 0:
            rng >>= 1
            if b:
                st[0] += rng
        else:
            c0 = np.int64(counts[ctx, 0])
            tot = c0 + counts[ctx, 1]
            bound = (rng // tot) * c0
            if b == 0:
                rng = bound
            else:
                st[0] += bound
                rng -= bound
            _update(counts, ctx, b)
        while rng < TOP:
            rng <<= 8
            _shift_low(st, out)
    for _ in range(5):
        _shift_low(st, out)
    return st[3]


@njit(cache=True)
def rc_decoder_init(buf, length, state):
    if length < 4:
        state[3] = 1
        return
    code = np.int64(0)
    for i in range(4):
        code = (code << 8) | buf[i]
    state[0] = code
    state[1] = MASK32
    state[2] = 4
    state[3] = 0


@njit(cache=True, inline="always")
def _normalize_dec(state, buf, length):
    while state[1] < TOP:
        if state[2] >= length:
            state[3] = 1
            state[1] = TOP  # stop; caller checks the error flag
            return
        state[1] = state[1] << 8
        state[0] = ((state[0] << 8) | buf[state[2]]) & 0xFFFFFFFFFF
        state[2] += 1


@njit(cache=True)
def rc_decode_bin(state, buf, length, counts, ctx):
    """Decode one bin; ``state = [code, range, pos, error]``."""
    code = state[0]
    rng = state[1]
    if ctx < 0:
        rng >>= 1
        if code >= rng:
            code -= rng
            b = 1
        else:
            b = 0
    else:
        c0 = np.int64(counts[ctx, 0])
        tot = c0 + counts[ctx, 1]
        bound = (rng // tot) * c0
        if code < bound:
            rng = bound
            b = 0
        else:
            code -= bound
            rng -= bound
            b = 1
        _update(counts, ctx, b)
    state[0] = code
    state[1] = rng
    _normalize_dec(state, buf, length)
    return b


@njit(cache=True)
def estimate_bins(ctxs, vals, n, counts, cost):
    """Per-bin ``-log2 p`` under adaptive updates; returns the total."""
    total = 0.0
    for k in range(n):
        ctx = ctxs[k]
        b = vals[k]
        c = _bin_cost(counts, ctx, b)
        cost[k] = c
        total += c
        if ctx >= 0:
            _update(counts, ctx, b)
    return total


class BinBuffer:
    """Growable (context, bin, owner) sequence."""

    def __init__(self, capacity: int = 1024):
        self.ctx = np.empty(capacity, np.int32)
        self.val = np.empty(capacity, np.int8)
        self.owner = np.empty(capacity, np.int32)
        self.n = 0

    def _grow(self, need):
        cap = max(need, 2 * len(self.ctx))
        for name in ("ctx", "val", "owner"):
            a = getattr(self, name)
            b = np.empty(cap, a.dtype)
            b[: self.n] = a[: self.n]
            setattr(self, name, b)

    def put(self, ctx: int, val: int, owner: int = 0) -> None:
        if self.n >= len(self.ctx):
            self._grow(self.n + 1)
        self.ctx[self.n] = ctx
        self.val[self.n] = val
        self.owner[self.n] = owner
        self.n += 1

    def extend(self, ctx, val, owner) -> None:
        m = len(ctx)
        if self.n + m > len(self.ctx):
            self._grow(self.n + m)
        self.ctx[self.n:self.n + m] = ctx
        self.val[self.n:self.n + m] = val
        self.owner[self.n:self.n + m] = owner
        self.n += m

    def arrays(self):
        return self.ctx[: self.n], self.val[: self.n], self.owner[: self.n]


def range_encode(ctxs, vals, counts=None) -> bytes:
    """Arithmetic-code a bin sequence starting from ``counts`` (fresh by default)."""
    ctxs = np.ascontiguousarray(ctxs, dtype=np.int32)
    vals = np.ascontiguousarray(vals, dtype=np.int8)
    if len(ctxs) != len(vals):
        raise ValueError("contexts and bins differ in length")
    counts = fresh_counts() if counts is None else counts.copy()
    out = np.empty(2 * len(ctxs) + 16, np.uint8)
    n = rc_encode(ctxs, vals, len(ctxs), counts, out)
    return out[:n].tobytes()


class RangeDecoder:
    """Sequential bin decoder over a byte string."""

    def __init__(self, data: bytes, counts=None):
        self.buf = np.frombuffer(data, dtype=np.uint8) if len(data) else np.zeros(1, np.uint8)
        self.length = len(data)
        self.counts = fresh_counts() if counts is None else counts
        self.state = np.zeros(4, np.int64)
        rc_decoder_init(self.buf, self.length, self.state)
        self._check()

    def _check(self):
        if self.state[3]:
            raise DecodeError("arithmetic payload truncated", int(self.state[2]))

    def decode(self, ctx: int) -> int:
        b = rc_decode_bin(self.state, self.buf, self.length, self.counts, ctx)
        if self.state[3]:
            self._check()
        return int(b)

    def bypass(self, nbits: int) -> int:
        v = 0
        for _ in range(nbits):
            v = (v << 1) | self.decode(BYPASS)
        return v

    @property
    def position(self) -> int:
        return int(self.state[2])


def range_decode(data: bytes, ctxs, counts=None) -> list[int]:
    """Decode one bin per context in ``ctxs``."""
    dec = RangeDecoder(data, None if counts is None else counts.copy())
    return [dec.decode(int(c)) for c in ctxs]


def estimate_rate(ctxs, vals, counts=None, owners=None, n_owners: int = 0):
    """Fractional bit cost of a bin sequence.

    Returns the total, and when ``owners`` is given also the bits summed per
    owner index (length ``n_owners``).
    """
    ctxs = np.ascontiguousarray(ctxs, dtype=np.int32)
    vals = np.ascontiguousarray(vals, dtype=np.int8)
    counts = fresh_counts() if counts is None else counts.copy()
    cost = np.empty(len(ctxs), np.float64)
    total = estimate_bins(ctxs, vals, len(ctxs), counts, cost)
    if owners is None:
        return total
    per = np.bincount(np.asarray(owners), weights=cost, minlength=n_owners)
    return total, per


# ---------------------------------------------------------------------------
# coefficient binarization


def _band_table(height: int, width: int) -> np.ndarray:
    rows = []
    for b, tag in enumerate(SUBBAND_TAGS):
        orient, k = parse_tag(tag)
        r0, c0, h, w = band_rect(tag, height, width)
        group = 0 if orient == "LL" else 5 - k
        rows.append((r0, c0, h, w, b, group))
    return np.array(rows, dtype=np.int32)


_BAND_TABLES: dict = {}


def band_table(height: int, width: int) -> np.ndarray:
    key = (height, width)
    if key not in _BAND_TABLES:
        _BAND_TABLES[key] = _band_table(height, width)
    return _BAND_TABLES[key]


SENTINEL = np.int32(-(2 ** 31))


@njit(cache=True, inline="always")
def _sig_class(q, r, c, r0, c0, i, j, w, trap):
    cnt = 0
    if j > 0:
        v = q[r, c - 1]
        if v == SENTINEL:
            trap[0] += 1
        elif v != 0:
            cnt += 1
    if i > 0:
        v = q[r - 1, c]
        if v == SENTINEL:
            trap[0] += 1
        elif v != 0:
            cnt += 1
        if j > 0:
            v = q[r - 1, c - 1]
            if v == SENTINEL:
                trap[0] += 1
            elif v != 0:
                cnt += 1
        if j + 1 < w:
            v = q[r - 1, c + 1]
            if v == SENTINEL:
                trap[0] += 1
            elif v != 0:
                cnt += 1
    return cnt if cnt < 2 else 2


@njit(cache=True)
def coef_pass(q, skip, bands, counts, emit, ctx_out, val_out, bits_out, start):
    """Binarize the coefficients of ``q`` in scan order.

    With ``emit`` true, bins are appended to ``ctx_out``/``val_out`` from
    index ``start`` and the new end index is returned.  Otherwise the bins
    are costed against ``counts`` (updated as coded) and each coefficient's
    bits are written to ``bits_out``.

    Neighbour significance is tracked in two padded row buffers, so the
    context of a coefficient depends only on already scanned ones.
    """
    maxw = 0
    for bi in range(bands.shape[0]):
        maxw = max(maxw, bands[bi, 3])
    up = np.zeros(maxw + 2, np.int32)
    cur = np.zeros(maxw + 2, np.int32)
    k = start
    for bi in range(bands.shape[0]):
        r0 = bands[bi, 0]
        c0 = bands[bi, 1]
        h = bands[bi, 2]
        w = bands[bi, 3]
        sig_base = CTX_SIG + bands[bi, 4] * 3
        mag_base = CTX_MAG + bands[bi, 5] * 6
        for j in range(w + 2):
            up[j] = 0
            cur[j] = 0
        for i in range(h):
            r = r0 + i
            for j in range(w):
                c = c0 + j
                if skip[r, c]:
                    cur[j + 1] = 0
                    continue
                v = q[r, c]
                cnt = cur[j] + up[j] + up[j + 1] + up[j + 2]
                sctx = sig_base + (cnt if cnt < 2 else 2)
                sig = 1 if v != 0 else 0
                cur[j + 1] = sig
                bits = 0.0
                if emit:
                    ctx_out[k] = sctx
                    val_out[k] = sig
                else:
                    bits += _bin_cost(counts, sctx, sig)
                    _update(counts, sctx, sig)
                k += 1
                if sig:
                    m = v - 1 if v > 0 else -v - 1
                    if emit:
                        ctx_out[k] = BYPASS
                        val_out[k] = 1 if v < 0 else 0
                    else:
                        bits += 1.0
                    k += 1
                    # exp-Golomb k=0: contexted unary prefix, bypass suffix
                    e = 0
                    while m >= (1 << (e + 1)) - 1:
                        pc = mag_base + (e if e < PREFIX_CAP_COEF else PREFIX_CAP_COEF)
                        if emit:
                            ctx_out[k] = pc
                            val_out[k] = 1
                        else:
                            bits += _bin_cost(counts, pc, 1)
                            _update(counts, pc, 1)
                        k += 1
                        e += 1
                    pc = mag_base + (e if e < PREFIX_CAP_COEF else PREFIX_CAP_COEF)
                    if emit:
                        ctx_out[k] = pc
                        val_out[k] = 0
                        suffix = m + 1 - (1 << e)
                        for t in range(e - 1, -1, -1):
                            ctx_out[k + 1 + e - 1 - t] = BYPASS
                            val_out[k + 1 + e - 1 - t] = (suffix >> t) & 1
                    else:
                        bits += _bin_cost(counts, pc, 0) + e
                        _update(counts, pc, 0)
                    k += 1 + e
                if not emit:
                    bits_out[r, c] = bits
            for j in range(w + 2):
                up[j] = cur[j]
    return k


@njit(cache=True, inline="always")
def _model_step(n0, n1, b):
    # cost and update of one adaptive model held in scalars
    if b:
        cost = LOG2_TABLE[n0 + n1] - LOG2_TABLE[n1]
        n1 += 1
    else:
        cost = LOG2_TABLE[n0 + n1] - LOG2_TABLE[n0]
        n0 += 1
    if n0 + n1 > COUNT_LIMIT:
        n0 = (n0 + 1) >> 1
        n1 = (n1 + 1) >> 1
    return n0, n1, cost


@njit(cache=True)
def coef_estimate(q, skip, bands, counts, bits_out, store):
    """Estimated bits of coding ``q``; same bins and models as :func:`coef_pass`.

    Returns the total, summed in scan order.  With ``store`` set, each
    coefficient's bits also go to ``bits_out``.  The three significance
    models of the current band live in locals, which keeps the common
    all-zero path free of memory round trips.
    """
    maxw = 0
    for bi in range(bands.shape[0]):
        maxw = max(maxw, bands[bi, 3])
    up = np.zeros(maxw + 2, np.int32)
    cur = np.zeros(maxw + 2, np.int32)
    total = 0.0
    for bi in range(bands.shape[0]):
        r0 = bands[bi, 0]
        c0 = bands[bi, 1]
        h = bands[bi, 2]
        w = bands[bi, 3]
        sb = CTX_SIG + bands[bi, 4] * 3
        mag_base = CTX_MAG + bands[bi, 5] * 6
        a0, a1 = counts[sb, 0], counts[sb, 1]
        b0, b1 = counts[sb + 1, 0], counts[sb + 1, 1]
        c0_, c1_ = counts[sb + 2, 0], counts[sb + 2, 1]
        for j in range(w + 2):
            up[j] = 0
            cur[j] = 0
        for i in range(h):
            r = r0 + i
            for j in range(w):
                c = c0 + j
                if skip[r, c]:
                    cur[j + 1] = 0
                    continue
                v = q[r, c]
                cnt = cur[j] + up[j] + up[j + 1] + up[j + 2]
                sig = 1 if v != 0 else 0
                cur[j + 1] = sig
                if cnt == 0:
                    a0, a1, bits = _model_step(a0, a1, sig)
                elif cnt == 1:
                    b0, b1, bits = _model_step(b0, b1, sig)
                else:
                    c0_, c1_, bits = _model_step(c0_, c1_, sig)
                if sig:
                    m = v - 1 if v > 0 else -v - 1
                    bits += 1.0
                    e = 0
                    while m >= (1 << (e + 1)) - 1:
                        pc = mag_base + (e if e < PREFIX_CAP_COEF else PREFIX_CAP_COEF)
                        bits += _bin_cost(counts, pc, 1)
                        _update(counts, pc, 1)
                        e += 1
                    pc = mag_base + (e if e < PREFIX_CAP_COEF else PREFIX_CAP_COEF)
                    bits += _bin_cost(counts, pc, 0) + e
                    _update(counts, pc, 0)
                total += bits
                if store:
                    bits_out[r, c] = bits
            for j in range(w + 2):
                up[j] = cur[j]
        counts[sb, 0], counts[sb, 1] = a0, a1
        counts[sb + 1, 0], counts[sb + 1, 1] = b0, b1
        counts[sb + 2, 0], counts[sb + 2, 1] = c0_, c1_
    return total


@njit(cache=True)
def coef_bin_count(q, skip, bands):
    n = 0
    for bi in range(bands.shape[0]):
        r0 = bands[bi, 0]
        c0 = bands[bi, 1]
        h = bands[bi, 2]
        w = bands[bi, 3]
        for i in range(h):
            for j in range(w):
                if skip[r0 + i, c0 + j]:
                    continue
                v = q[r0 + i, c0 + j]
                n += 1
                if v != 0:
                    m = v - 1 if v > 0 else -v - 1
                    e = 0
                    while m >= (1 << (e + 1)) - 1:
                        e += 1
                    n += 2 + 2 * e
    return n


@njit(cache=True)
def coef_decode(state, buf, length, counts, q, skip, bands, trap):
    """Inverse of :func:`coef_pass`; ``q`` must be prefilled with SENTINEL."""
    for bi in range(bands.shape[0]):
        r0 = bands[bi, 0]
        c0 = bands[bi, 1]
        h = bands[bi, 2]
        w = bands[bi, 3]
        band = bands[bi, 4]
        group = bands[bi, 5]
        for i in range(h):
            r = r0 + i
            for j in range(w):
                c = c0 + j
                if skip[r, c]:
                    q[r, c] = 0
                    continue
                sctx = CTX_SIG + band * 3 + _sig_class(q, r, c, r0, c0, i, j, w, trap)
                sig = rc_decode_bin(state, buf, length, counts, sctx)
                if state[3]:
                    return False
                if sig == 0:
                    q[r, c] = 0
                    continue
                neg = rc_decode_bin(state, buf, length, counts, BYPASS)
                e = 0
                while True:
                    pc = CTX_MAG + group * 6 + (e if e < PREFIX_CAP_COEF else PREFIX_CAP_COEF)
                    bit = rc_decode_bin(state, buf, length, counts, pc)
                    if state[3]:
                        return False
                    if bit == 0:
                        break
                    e += 1
                    if e > 30:
                        state[3] = 2
                        return False
                suffix = 0
                for t in range(e):
                    suffix = (suffix << 1) | rc_decode_bin(state, buf, length, counts, BYPASS)
                if state[3]:
                    return False
                m = suffix + (1 << e) - 1
                q[r, c] = -(m + 1) if neg else m + 1
    return True


def coefficient_bins(q: np.ndarray, skip: np.ndarray | None = None):
    """Bin sequence (contexts, values) for a Mallat-layout coefficient array."""
    q = np.ascontiguousarray(q, dtype=np.int32)
    h, w = q.shape
    if skip is None:
        skip = np.zeros((h, w), np.bool_)
    bands = band_table(h, w)
    n = coef_bin_count(q, skip, bands)
    ctx = np.empty(n, np.int32)
    val = np.empty(n, np.int8)
    dummy = np.empty((1, 1), np.float64)
    end = coef_pass(q, skip, bands, fresh_counts(), True, ctx, val, dummy, 0)
    assert end == n
    return ctx, val


def coefficient_bits(q: np.ndarray, skip: np.ndarray | None = None, counts=None):
    """Estimated bits of every coefficient and their total."""
    q = np.ascontiguousarray(q, dtype=np.int32)
    h, w = q.shape
    if skip is None:
        skip = np.zeros((h, w), np.bool_)
    bits = np.zeros((h, w), np.float64)
    counts = fresh_counts() if counts is None else counts.copy()
    coef_pass(q, skip, band_table(h, w), counts, False, np.empty(1, np.int32),
              np.empty(1, np.int8), bits, 0)
    return bits, float(bits.sum())


def code_coefficients(q: np.ndarray, skip: np.ndarray | None = None) -> bytes:
    """Stand-alone coefficient payload (fresh contexts)."""
    ctx, val = coefficient_bins(q, skip)
    return range_encode(ctx, val)


def decode_coefficients_from(dec: RangeDecoder, height: int, width: int,
                             skip: np.ndarray | None = None, check_causal: bool = False):
    q = np.full((height, width), SENTINEL, np.int32)
    if skip is None:
        skip = np.zeros((height, width), np.bool_)
    trap = np.zeros(1, np.int64)
    ok = coef_decode(dec.state, dec.buf, dec.length, dec.counts, q, skip,
                     band_table(height, width), trap)
    if not ok:
        if dec.state[3] == 2:
            raise DecodeError("corrupt coefficient prefix", dec.position)
        dec._check()
    if check_causal and trap[0]:
        raise AssertionError(f"{int(trap[0])} context reads touched undecoded coefficients")
    return q, int(trap[0])


def decode_coefficients(data: bytes, height: int, width: int, skip=None,
                        check_causal: bool = False) -> np.ndarray:
    q, _ = decode_coefficients_from(RangeDecoder(data), height, width, skip, check_causal)
    return q


# ---------------------------------------------------------------------------
# motion-side binarization


@njit(cache=True, inline="always")
def _put(ctx_out, val_out, own_out, k, ctx, val, owner):
    # past capacity every write lands on the last slot; the caller retries
    last = ctx_out.shape[0] - 1
    i = k if k < last else last
    ctx_out[i] = ctx
    val_out[i] = val
    own_out[i] = owner
    return k + 1


@njit(cache=True, inline="always")
def _put_signed(ctx_out, val_out, own_out, k, d, zctx, pctx, owner):
    k = _put(ctx_out, val_out, own_out, k, zctx, 1 if d != 0 else 0, owner)
    if d == 0:
        return k
    k = _put(ctx_out, val_out, own_out, k, BYPASS, 1 if d < 0 else 0, owner)
    m = (d if d > 0 else -d) - 1
    e = 0
    while m >= (1 << (e + 1)) - 1:
        k = _put(ctx_out, val_out, own_out, k,
                 pctx + (e if e < PREFIX_CAP_MOTION else PREFIX_CAP_MOTION), 1, owner)
        e += 1
    k = _put(ctx_out, val_out, own_out, k,
             pctx + (e if e < PREFIX_CAP_MOTION else PREFIX_CAP_MOTION), 0, owner)
    suffix = m + 1 - (1 << e)
    for t in range(e - 1, -1, -1):
        k = _put(ctx_out, val_out, own_out, k, BYPASS, (suffix >> t) & 1, owner)
    return k


@njit(cache=True, inline="always")
def _med3(a, b, c):
    if a > b:
        a, b = b, a
    if b > c:
        b = c
    return a if a > b else b


@njit(cache=True, inline="always")
def mv_predictor(n, xs, ys, modes, params, cell_leaf, direction):
    """Median of the left, above and above-left MV-mode neighbours (0 if absent).

    Neighbours are looked up at the 8x8 cells touching the block's top-left
    corner; only leaves already coded (index below ``n``) count.
    """
    cx = xs[n] >> 3
    cy = ys[n] >> 3
    i = 2 * direction
    vx0 = vy0 = vx1 = vy1 = vx2 = vy2 = 0
    for t in range(3):
        ny = cy - (t > 0)
        nx = cx - (t != 1)
        m = -1
        if ny >= 0 and nx >= 0:
            m = cell_leaf[ny, nx]
        ok = m >= 0 and m < n
        if ok:
            ok = modes[m] == 2
        if ok:
            if t == 0:
                vx0 = params[m, i]
                vy0 = params[m, i + 1]
            elif t == 1:
                vx1 = params[m, i]
                vy1 = params[m, i + 1]
            else:
                vx2 = params[m, i]
                vy2 = params[m, i + 1]
    return _med3(vx0, vx1, vx2), _med3(vy0, vy1, vy2)


@njit(cache=True)
def motion_pass(xs, ys, sizes, modes, params, bi, quadtree, mode_list, n_modes,
                cell_leaf, ctx_out, val_out, own_out):
    """Bins of the partition and motion syntax, in coding order.

    Returns the number of bins; if the output arrays are too short the
    excess is counted but not written, so callers can size and retry.
    """
    k = 0
    ts0 = 5
    ts1 = 5
    ts2 = 5
    ts3 = 5
    for n in range(xs.shape[0]):
        x = xs[n]
        y = ys[n]
        z = sizes[n]
        if quadtree:
            s = 64
            while s > z:
                if x % s == 0 and y % s == 0:
                    lg = 0
                    while (16 << lg) < s:
                        lg += 1
                    k = _put(ctx_out, val_out, own_out, k, CTX_SPLIT + lg, 1, n)
                s >>= 1
            if z > 8:
                lg = 0
                while (16 << lg) < z:
                    lg += 1
                k = _put(ctx_out, val_out, own_out, k, CTX_SPLIT + lg, 0, n)
        mode = modes[n]
        if n_modes == 2:
            k = _put(ctx_out, val_out, own_out, k, CTX_MODE, 1 if mode == mode_list[1] else 0, n)
        elif n_modes == 3:
            k = _put(ctx_out, val_out, own_out, k, CTX_MODE, 1 if mode != 0 else 0, n)
            if mode != 0:
                k = _put(ctx_out, val_out, own_out, k, CTX_MODE + 1, 1 if mode == 2 else 0, n)
        if mode == 1:
            k = _put_signed(ctx_out, val_out, own_out, k, params[n, 0] - ts0, CTX_TS_ZERO,
                            CTX_TS_PREFIX, n)
            k = _put_signed(ctx_out, val_out, own_out, k, params[n, 1] - ts1, CTX_TS_ZERO,
                            CTX_TS_PREFIX, n)
            k = _put_signed(ctx_out, val_out, own_out, k, params[n, 2] - ts2, CTX_TS_ZERO,
                            CTX_TS_PREFIX, n)
            k = _put_signed(ctx_out, val_out, own_out, k, params[n, 3] - ts3, CTX_TS_ZERO,
                            CTX_TS_PREFIX, n)
            ts0 = params[n, 0]
            ts1 = params[n, 1]
            ts2 = params[n, 2]
            ts3 = params[n, 3]
        elif mode == 2:
            ndir = 2 if bi else 1
            for d in range(ndir):
                pxv, pyv = mv_predictor(n, xs, ys, modes, params, cell_leaf, d)
                k = _put_signed(ctx_out, val_out, own_out, k, (params[n, 2 * d] - pxv) >> 3,
                                CTX_MVD_ZERO, CTX_MVD_PREFIX, n)
                k = _put_signed(ctx_out, val_out, own_out, k,
                                (params[n, 2 * d + 1] - pyv) >> 3,
                                CTX_MVD_ZERO + 1, CTX_MVD_PREFIX, n)
    return k
