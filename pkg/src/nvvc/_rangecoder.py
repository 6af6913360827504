"""Integer range coder kernels (carry-aware Schindler style, 56-bit state).

No floating point anywhere in the coding loop.  The 56-bit state leaves
>= 2^31 of headroom above the 16-bit frequency total, so the range-division
truncation loss is below 2^-30 bits per symbol; total overhead is the ~10
byte flush plus one leading byte.

Layout invariants:
  low + range <= 2^56,  range > BOT outside normalization,
  emitted byte = bits 47..54 of low, bit 55 signals a pending carry.
"""

import numpy as np
from numba import njit

CODE_BITS = 56
SHIFT = CODE_BITS - 9  # 47
EXTRA = ((CODE_BITS - 2) % 8) + 1  # 7
TOP = 1 << (CODE_BITS - 1)
BOT = TOP >> 8
TAIL_BYTES = CODE_BITS // 8 - 1  # trailing zeros so the decoder never starves


@njit(cache=True)
def rc_encode(symbols, freq, cum, out):
    """Encode symbols (indexes into freq) into out (uint8). Returns byte count, -1 on overflow."""
    total = cum[cum.shape[0] - 1]
    low = 0
    rng = TOP
    buf = 0
    pending = 0  # run of bytes that may still absorb a carry
    pos = 0
    cap = out.shape[0]
    n = symbols.shape[0]
    for i in range(n):
        while rng <= BOT:
            if low < (255 << SHIFT):
                if pos + 1 + pending > cap:
                    return -1
                out[pos] = buf
                pos += 1
                for _ in range(pending):
                    out[pos] = 0xFF
                    pos += 1
                pending = 0
                buf = (low >> SHIFT) & 0xFF
            elif low & TOP:
                if pos + 1 + pending > cap:
                    return -1
                out[pos] = (buf + 1) & 0xFF
                pos += 1
                for _ in range(pending):
                    out[pos] = 0x00
                    pos += 1
                pending = 0
                buf = (low >> SHIFT) & 0xFF
            else:
                pending += 1
            rng <<= 8
            low = (low & (BOT - 1)) << 8
        s = symbols[i]
        r = rng // total
        tmp = r * cum[s]
        low += tmp
        if cum[s] + freq[s] < total:
            rng = r * freq[s]
        else:
            rng -= tmp  # top symbol keeps the leftover range
    # flush
    while rng <= BOT:
        if low < (255 << SHIFT):
            if pos + 1 + pending > cap:
                return -1
            out[pos] = buf
            pos += 1
            for _ in range(pending):
                out[pos] = 0xFF
                pos += 1
            pending = 0
            buf = (low >> SHIFT) & 0xFF
        elif low & TOP:
            if pos + 1 + pending > cap:
                return -1
            out[pos] = (buf + 1) & 0xFF
            pos += 1
            for _ in range(pending):
                out[pos] = 0x00
                pos += 1
            pending = 0
            buf = (low >> SHIFT) & 0xFF
        else:
            pending += 1
        rng <<= 8
        low = (low & (BOT - 1)) << 8
    tmp = (low >> SHIFT) + 1
    if pos + 2 + pending + TAIL_BYTES > cap:
        return -1
    if tmp > 0xFF:
        out[pos] = (buf + 1) & 0xFF
        pos += 1
        for _ in range(pending):
            out[pos] = 0x00
            pos += 1
    else:
        out[pos] = buf
        pos += 1
        for _ in range(pending):
            out[pos] = 0xFF
            pos += 1
    out[pos] = tmp & 0xFF
    pos += 1
    for _ in range(TAIL_BYTES):
        out[pos] = 0
        pos += 1
    return pos


@njit(cache=True)
def rc_decode(payload, n, freq, cum, sym_of, out):
    """Decode n symbols from an int64 byte array.

    Returns 0 on success, 1 if the payload ran out early.  (Bytes arrive as
    int64 so every expression stays in one signed integer domain; mixing uint8
    with int64 would promote to float64 under numba.)
    """
    total = cum[cum.shape[0] - 1]
    m = payload.shape[0]
    if n == 0:
        return 0
    if m < 2:
        return 1
    # first byte is the encoder's initial dummy buffer
    buf = payload[1]
    pos = 2
    low = buf >> (8 - EXTRA)
    rng = 1 << EXTRA
    truncated = 0
    for i in range(n):
        while rng <= BOT:
            low = (low << 8) | ((buf << EXTRA) & 0xFF)
            if pos < m:
                buf = payload[pos]
                pos += 1
            else:
                buf = 0
                truncated = 1
            low |= buf >> (8 - EXTRA)
            rng <<= 8
        h = rng // total
        v = low // h
        if v >= total:
            v = total - 1
        s = sym_of[v]
        out[i] = s
        tmp = h * cum[s]
        low -= tmp
        if cum[s] + freq[s] < total:
            rng = h * freq[s]
        else:
            rng -= tmp
    return truncated
