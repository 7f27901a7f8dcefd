"""Context-adaptive binary arithmetic coding of signed integer levels.

Each level is binarized as: significance flag, sign flag, greater-than-one
flag, and an order-0 exponential-Golomb code of |level| - 2. Every bin class
has its own adaptive context (frequency counts with periodic rescaling); the
caller creates one coder run per tensor, so contexts reset at tensor
boundaries. The range-coder core uses 32-bit state with pending-bit carry
resolution and is compiled with numba, since level streams run into the
millions of bins per round.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_MAX = 0xFFFFFFFF
_HALF = 0x80000000
_QUARTER = 0x40000000
_THREE_QUARTER = 0xC0000000
_RESCALE = 1 << 13

_NCTX = 5
_CTX_SIG = 0
_CTX_SIGN = 1
_CTX_GT1 = 2
_CTX_EGP = 3  # exp-Golomb prefix bins
_CTX_EGS = 4  # exp-Golomb suffix bins

# encoder state vector layout: [byte_pos, bit_acc, bit_count, low, high, pending]
# decoder state vector layout: [byte_pos, bit_acc, bit_count, low, high, value]


@njit(cache=True)
def _put_bit(buf, s, bit):
    s[1] = (s[1] << 1) | bit
    s[2] += 1
    if s[2] == 8:
        if s[0] >= buf.size:
            grown = np.empty(buf.size * 2, np.uint8)
            grown[:buf.size] = buf
            buf = grown
        buf[s[0]] = s[1] & 0xFF
        s[0] += 1
        s[1] = 0
        s[2] = 0
    return buf


@njit(cache=True)
def _emit(buf, s, bit):
    buf = _put_bit(buf, s, bit)
    inv = 1 - bit
    while s[5] > 0:
        buf = _put_bit(buf, s, inv)
        s[5] -= 1
    return buf


@njit(cache=True)
def _update_ctx(ctx_counts, ctx, bit):
    ctx_counts[ctx, bit] += 1
    if ctx_counts[ctx, 0] + ctx_counts[ctx, 1] >= _RESCALE:
        c0 = ctx_counts[ctx, 0] >> 1
        c1 = ctx_counts[ctx, 1] >> 1
        ctx_counts[ctx, 0] = c0 if c0 > 0 else 1
        ctx_counts[ctx, 1] = c1 if c1 > 0 else 1


@njit(cache=True)
def _enc_bit(buf, s, ctx_counts, ctx, bit):
    c0 = ctx_counts[ctx, 0]
    total = c0 + ctx_counts[ctx, 1]
    rng = s[4] - s[3] + 1
    split = s[3] + (rng * c0) // total - 1
    if bit == 0:
        s[4] = split
    else:
        s[3] = split + 1
    while True:
        if s[4] < _HALF:
            buf = _emit(buf, s, 0)
        elif s[3] >= _HALF:
            buf = _emit(buf, s, 1)
            s[3] -= _HALF
            s[4] -= _HALF
        elif s[3] >= _QUARTER and s[4] < _THREE_QUARTER:
            s[5] += 1
            s[3] -= _QUARTER
            s[4] -= _QUARTER
        else:
            break
        s[3] = (s[3] << 1) & _MAX
        s[4] = ((s[4] << 1) & _MAX) | 1
    _update_ctx(ctx_counts, ctx, bit)
    return buf


@njit(cache=True)
def encode_levels(levels):
    """Encode an int64 level array into a byte payload."""
    n = levels.size
    if n == 0:
        return np.empty(0, np.uint8)
    buf = np.empty(64 + n // 3, np.uint8)
    s = np.zeros(6, np.int64)
    s[4] = _MAX
    ctx_counts = np.ones((_NCTX, 2), np.int64)
    for i in range(n):
        level = levels[i]
        if level == 0:
            buf = _enc_bit(buf, s, ctx_counts, _CTX_SIG, 0)
            continue
        buf = _enc_bit(buf, s, ctx_counts, _CTX_SIG, 1)
        buf = _enc_bit(buf, s, ctx_counts, _CTX_SIGN, 1 if level < 0 else 0)
        mag = -level if level < 0 else level
        buf = _enc_bit(buf, s, ctx_counts, _CTX_GT1, 1 if mag > 1 else 0)
        if mag > 1:
            v = mag - 2
            m = 0
            while (v + 1) >> (m + 1) != 0:
                m += 1
            for _ in range(m):
                buf = _enc_bit(buf, s, ctx_counts, _CTX_EGP, 1)
            buf = _enc_bit(buf, s, ctx_counts, _CTX_EGP, 0)
            suffix = (v + 1) - (1 << m)
            for j in range(m - 1, -1, -1):
                buf = _enc_bit(buf, s, ctx_counts, _CTX_EGS, (suffix >> j) & 1)
    # flush: one disambiguating bit plus byte padding
    s[5] += 1
    if s[3] < _QUARTER:
        buf = _emit(buf, s, 0)
    else:
        buf = _emit(buf, s, 1)
    while s[2] != 0:
        buf = _put_bit(buf, s, 0)
    return buf[:s[0]].copy()


@njit(cache=True)
def _get_bit(data, s):
    if s[2] == 0:
        if s[0] >= data.size:
            return 0  # past-the-end reads as zeros
        s[1] = data[s[0]]
        s[0] += 1
        s[2] = 8
    s[2] -= 1
    return (s[1] >> s[2]) & 1


@njit(cache=True)
def _dec_bit(data, s, ctx_counts, ctx):
    c0 = ctx_counts[ctx, 0]
    total = c0 + ctx_counts[ctx, 1]
    rng = s[4] - s[3] + 1
    split = s[3] + (rng * c0) // total - 1
    if s[5] <= split:
        bit = 0
        s[4] = split
    else:
        bit = 1
        s[3] = split + 1
    while True:
        if s[4] < _HALF:
            pass
        elif s[3] >= _HALF:
            s[3] -= _HALF
            s[4] -= _HALF
            s[5] -= _HALF
        elif s[3] >= _QUARTER and s[4] < _THREE_QUARTER:
            s[3] -= _QUARTER
            s[4] -= _QUARTER
            s[5] -= _QUARTER
        else:
            break
        s[3] = (s[3] << 1) & _MAX
        s[4] = ((s[4] << 1) & _MAX) | 1
        s[5] = ((s[5] << 1) & _MAX) | _get_bit(data, s)
    _update_ctx(ctx_counts, ctx, bit)
    return bit


@njit(cache=True)
def decode_levels(data, n):
    """Decode ``n`` levels from a payload produced by :func:`encode_levels`."""
    out = np.zeros(n, np.int64)
    if n == 0:
        return out
    s = np.zeros(6, np.int64)
    s[4] = _MAX
    for _ in range(32):
        s[5] = ((s[5] << 1) | _get_bit(data, s)) & _MAX
    ctx_counts = np.ones((_NCTX, 2), np.int64)
    for i in range(n):
        if _dec_bit(data, s, ctx_counts, _CTX_SIG) == 0:
            continue
        negative = _dec_bit(data, s, ctx_counts, _CTX_SIGN)
        if _dec_bit(data, s, ctx_counts, _CTX_GT1) == 0:
            mag = 1
        else:
            m = 0
            while _dec_bit(data, s, ctx_counts, _CTX_EGP) == 1:
                m += 1
                if m > 62:
                    raise ValueError("corrupt payload: runaway Golomb prefix")
            suffix = 0
            for _ in range(m):
                suffix = (suffix << 1) | _dec_bit(data, s, ctx_counts, _CTX_EGS)
            mag = (1 << m) + suffix + 1
        out[i] = -mag if negative == 1 else mag
    return out
