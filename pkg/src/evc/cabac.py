"""Adaptive binary arithmetic coding over byte strings.

Carry-free range coder with 32-bit state and pending-bit renormalization.
Each context is a 12-bit probability of the zero bin, nudged by a shift-5
exponential step after every coded bin.  Unsigned integers ride on top as
an adaptive Elias-gamma code: a unary run of ones picks the magnitude
class, a zero terminates it, and the class offset follows as plain bins.
Every bin position draws from its own context so short codes adapt fast.
"""

from __future__ import annotations

PROB_BITS = 12
PROB_ONE = 1 << PROB_BITS
PROB_INIT = PROB_ONE >> 1
ADAPT_SHIFT = 5

# unary prefixes beyond this are impossible for any 32-bit payload value;
# hitting the cap while decoding means the bitstream is corrupt
MAX_PREFIX = 40

_MASK = 0xFFFFFFFF
_HALF = 0x80000000
_QUARTER = 0x40000000


def make_contexts(n):
    """Fresh context bank: every bin starts at even odds."""
    return [PROB_INIT] * n


class BinaryEncoder:
    """Encodes bins into a byte string; call finish() exactly once."""

    __slots__ = ("low", "high", "pending", "_acc", "_nacc", "_out")

    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self._acc = 0
        self._nacc = 0
        self._out = bytearray()

    def _write_bit(self, bit):
        acc = (self._acc << 1) | bit
        n = self._nacc + 1
        if n == 8:
            self._out.append(acc)
            acc = 0
            n = 0
        self._acc = acc
        self._nacc = n

    def _emit(self, bit):
        self._write_bit(bit)
        inv = bit ^ 1
        while self.pending:
            self._write_bit(inv)
            self.pending -= 1

    def encode(self, ctx, i, bit):
        p0 = ctx[i]
        low = self.low
        high = self.high
        split = low + (((high - low + 1) * p0) >> PROB_BITS) - 1
        if bit:
            low = split + 1
            ctx[i] = p0 - (p0 >> ADAPT_SHIFT)
        else:
            high = split
            ctx[i] = p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT)
        while True:
            if (low ^ high) & _HALF == 0:
                self._emit(low >> 31)
                low = (low << 1) & _MASK
                high = ((high << 1) | 1) & _MASK
            elif low & ~high & _QUARTER:
                # straddling the midpoint: defer the bit, drop the 2nd MSB
                self.pending += 1
                low = (low << 1) ^ _HALF
                high = ((high ^ _HALF) << 1) | _HALF | 1
            else:
                break
        self.low = low
        self.high = high

    def encode_uint(self, prefix_ctx, suffix_ctx, u):
        """Adaptive Elias-gamma write of u >= 0.

        Emits the same bins, in the same order and against the same
        contexts, as per-bin encode() calls would; the whole number is
        coded in one pass with the coder state held in locals because
        this path dominates stream-encoding time.
        """
        k = (u + 1).bit_length() - 1
        top = len(prefix_ctx) - 1
        bins = []
        ap = bins.append
        for i in range(k):
            ap((prefix_ctx, i if i < top else top, 1))
        ap((prefix_ctx, k if k < top else top, 0))
        if k:
            rem = u + 1 - (1 << k)
            stop = len(suffix_ctx) - 1
            for j in range(k - 1, -1, -1):
                ap((suffix_ctx, j if j < stop else stop, (rem >> j) & 1))

        low = self.low
        high = self.high
        pending = self.pending
        acc = self._acc
        nacc = self._nacc
        out = self._out
        for ctx, i, bit in bins:
            p0 = ctx[i]
            split = low + (((high - low + 1) * p0) >> PROB_BITS) - 1
            if bit:
                low = split + 1
                ctx[i] = p0 - (p0 >> ADAPT_SHIFT)
            else:
                high = split
                ctx[i] = p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT)
            while True:
                if (low ^ high) & _HALF == 0:
                    msb = low >> 31
                    acc = (acc << 1) | msb
                    nacc += 1
                    if nacc == 8:
                        out.append(acc)
                        acc = 0
                        nacc = 0
                    if pending:
                        inv = msb ^ 1
                        while pending:
                            acc = (acc << 1) | inv
                            nacc += 1
                            if nacc == 8:
                                out.append(acc)
                                acc = 0
                                nacc = 0
                            pending -= 1
                    low = (low << 1) & _MASK
                    high = ((high << 1) | 1) & _MASK
                elif low & ~high & _QUARTER:
                    pending += 1
                    low = (low << 1) ^ _HALF
                    high = ((high ^ _HALF) << 1) | _HALF | 1
                else:
                    break
        self.low = low
        self.high = high
        self.pending = pending
        self._acc = acc
        self._nacc = nacc

    def finish(self):
        # the value 0.1000... always lies inside [low, high); the implicit
        # zero padding past the last byte completes it for the decoder
        self._emit(1)
        while self._nacc:
            self._write_bit(0)
        return bytes(self._out)


class BinaryDecoder:
    """Decodes bins from a byte string; reads zeros past the end."""

    __slots__ = ("low", "high", "code", "_data", "_pos", "_nbits")

    def __init__(self, data):
        self.low = 0
        self.high = _MASK
        self._data = data
        self._pos = 0
        self._nbits = len(data) * 8
        code = 0
        for _ in range(32):
            code = (code << 1) | self._read_bit()
        self.code = code

    def _read_bit(self):
        pos = self._pos
        if pos >= self._nbits:
            return 0
        self._pos = pos + 1
        return (self._data[pos >> 3] >> (7 - (pos & 7))) & 1

    def decode(self, ctx, i):
        p0 = ctx[i]
        low = self.low
        high = self.high
        code = self.code
        split = low + (((high - low + 1) * p0) >> PROB_BITS) - 1
        if code > split:
            bit = 1
            low = split + 1
            ctx[i] = p0 - (p0 >> ADAPT_SHIFT)
        else:
            bit = 0
            high = split
            ctx[i] = p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT)
        while True:
            if (low ^ high) & _HALF == 0:
                low = (low << 1) & _MASK
                high = ((high << 1) | 1) & _MASK
                code = ((code << 1) & _MASK) | self._read_bit()
            elif low & ~high & _QUARTER:
                low = (low << 1) ^ _HALF
                high = ((high ^ _HALF) << 1) | _HALF | 1
                code = (code & _HALF) | ((code << 1) & (_MASK >> 1)) | self._read_bit()
            else:
                break
        self.low = low
        self.high = high
        self.code = code
        return bit


def encode_uint(enc, prefix_ctx, suffix_ctx, u):
    """Adaptive Elias-gamma write of u >= 0."""
    enc.encode_uint(prefix_ctx, suffix_ctx, u)


def decode_uint(dec, prefix_ctx, suffix_ctx):
    """Inverse of encode_uint; raises ValueError on an impossible prefix."""
    k = 0
    top = len(prefix_ctx) - 1
    while dec.decode(prefix_ctx, k if k < top else top):
        k += 1
        if k > MAX_PREFIX:
            raise ValueError("unary prefix exceeds any encodable value")
    if not k:
        return 0
    rem = 0
    stop = len(suffix_ctx) - 1
    for j in range(k - 1, -1, -1):
        rem |= dec.decode(suffix_ctx, j if j < stop else stop) << j
    return (1 << k) + rem - 1


def zigzag(v):
    """Signed to unsigned: 0, -1, 1, -2, 2 ... -> 0, 1, 2, 3, 4 ..."""
    return (v << 1) if v >= 0 else ((-v << 1) - 1)


def unzigzag(u):
    return (u >> 1) if (u & 1) == 0 else -((u + 1) >> 1)
