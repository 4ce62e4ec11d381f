"""Integer range coder over 16-bit-precision cumulative frequency tables.

Stream format (normative):

* The coder keeps a 48-bit ``low`` (plus one carry bit, 64-bit state overall)
  and a ``range`` in ``[2**32, 2**48)``. Whenever ``range`` drops below
  ``2**32`` the top 16 bits of ``low`` are emitted as one big-endian word.
* A carry out of ``low`` increments the already-emitted words.
* On finish the encoder emits one terminator word: the top 16 bits of the
  smallest multiple of ``2**32`` inside ``[low, low + range)``.
* The decoder primes itself with three words and reads zero words past the
  end of the stream. It reads exactly two words past the end of a valid
  stream; reading further means the stream was truncated.

Symbol coding narrows ``range`` to ``(range >> 16) * freq``. No floating point
appears in the coding loop.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
STATE_BITS = 48
WORD_BITS = 16
STATE_MASK = (1 << STATE_BITS) - 1
RENORM_BELOW = 1 << (STATE_BITS - WORD_BITS)
WORD_MASK = (1 << WORD_BITS) - 1
INITIAL_RANGE = STATE_MASK
# escape payload: bit-length in 6 raw bits, then the zigzag value
ESCAPE_LENGTH_BITS = 6


class RangeCoderError(ValueError):
    pass


class TruncatedStreamError(RangeCoderError):
    pass


class CorruptStreamError(RangeCoderError):
    pass


class SymbolOutOfRangeError(RangeCoderError):
    pass


@dataclass(frozen=True)
class CdfTable:
    """Cumulative frequencies ``cdf[0] = 0 < ... < cdf[n] = 2**precision``."""

    cdf: tuple[int, ...]
    precision: int = PRECISION

    def __post_init__(self):
        cdf = self.cdf
        if len(cdf) < 2 or cdf[0] != 0 or cdf[-1] != 1 << self.precision:
            raise ValueError(f"cdf must run from 0 to 2**{self.precision}, got {cdf[:3]}...{cdf[-2:]}")
        if any(b <= a for a, b in zip(cdf, cdf[1:])):
            raise ValueError("cdf must be strictly increasing (every frequency >= 1)")

    @property
    def num_symbols(self) -> int:
        return len(self.cdf) - 1

    def freq(self, symbol: int) -> int:
        return self.cdf[symbol + 1] - self.cdf[symbol]

    def probability(self, symbol: int) -> float:
        return self.freq(symbol) / (1 << self.precision)


@dataclass(frozen=True)
class IntTable:
    """Codes integers ``offset .. offset + n - 2`` directly; the last symbol
    is an escape followed by a raw-bit payload for anything outside."""

    table: CdfTable
    offset: int

    @property
    def escape(self) -> int:
        return self.table.num_symbols - 1


def build_cdf_table(probabilities: Sequence[float], precision: int = PRECISION) -> CdfTable:
    """Quantize a probability vector to integer frequencies summing to
    ``2**precision``.

    Each symbol first gets one count; the remaining ``2**precision - n`` counts
    are apportioned by largest remainder, ties going to the lowest index.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    n = p.size
    total = 1 << precision
    if n == 0:
        raise ValueError("empty alphabet")
    if n > total:
        raise ValueError(f"alphabet of {n} symbols exceeds 2**{precision}")
    if not np.isfinite(p).all() or (p < 0).any() or p.sum() <= 0:
        raise ValueError("probabilities must be finite, non-negative and not all zero")
    spare = total - n
    quota = p / p.sum() * spare
    base = np.floor(quota)
    freq = base.astype(np.int64) + 1
    leftover = total - int(freq.sum())
    if leftover:
        frac = quota - base
        order = sorted(range(n), key=lambda i: (-frac[i], i))
        for i in order[:leftover]:
            freq[i] += 1
    cdf = [0]
    for f in freq.tolist():
        cdf.append(cdf[-1] + f)
    return CdfTable(tuple(cdf), precision)


def zigzag(v: int) -> int:
    return 2 * v if v >= 0 else -2 * v - 1


def unzigzag(u: int) -> int:
    return u >> 1 if u % 2 == 0 else -((u + 1) >> 1)


class Encoder:
    def __init__(self):
        self.low = 0
        self.range = INITIAL_RANGE
        self.words: list[int] = []

    def _carry(self) -> None:
        i = len(self.words) - 1
        while self.words[i] == WORD_MASK:
            self.words[i] = 0
            i -= 1
        self.words[i] += 1

    def _narrow(self, cum: int, freq: int, precision: int) -> None:
        r = self.range >> precision
        self.low += r * cum
        self.range = r * freq
        if self.low > STATE_MASK:
            self.low &= STATE_MASK
            self._carry()
        while self.range < RENORM_BELOW:
            self.words.append(self.low >> (STATE_BITS - WORD_BITS))
            self.low = (self.low << WORD_BITS) & STATE_MASK
            self.range <<= WORD_BITS

    def encode(self, symbol: int, table: CdfTable) -> None:
        if not 0 <= symbol < table.num_symbols:
            raise SymbolOutOfRangeError(f"symbol {symbol} outside alphabet of {table.num_symbols}")
        cum = table.cdf[symbol]
        self._narrow(cum, table.cdf[symbol + 1] - cum, table.precision)

    def encode_bits(self, value: int, nbits: int) -> None:
        """Raw bits, most significant chunk first, at most 16 per step."""
        if value < 0 or value >> nbits:
            raise SymbolOutOfRangeError(f"{value} does not fit in {nbits} bits")
        while nbits > 0:
            chunk = min(nbits, WORD_BITS)
            nbits -= chunk
            self._narrow((value >> nbits) & ((1 << chunk) - 1), 1, chunk)

    def encode_int(self, value: int, table: IntTable) -> None:
        s = value - table.offset
        if 0 <= s < table.escape:
            self.encode(s, table.table)
            return
        self.encode(table.escape, table.table)
        u = zigzag(value)
        n = u.bit_length()
        if n >= 1 << ESCAPE_LENGTH_BITS:
            raise SymbolOutOfRangeError(f"escaped value {value} is too large")
        self.encode_bits(n, ESCAPE_LENGTH_BITS)
        self.encode_bits(u, n)

    def finish(self) -> bytes:
        mask = (1 << (STATE_BITS - WORD_BITS)) - 1
        v = (self.low + mask) & ~mask
        if v > STATE_MASK:
            v &= STATE_MASK
            self._carry()
        self.words.append(v >> (STATE_BITS - WORD_BITS))
        out = b"".join(w.to_bytes(2, "big") for w in self.words)
        self.words = []
        return out


class Decoder:
    def __init__(self, data: bytes):
        if len(data) % 2:
            raise CorruptStreamError(f"stream length {len(data)} is not a whole number of 16-bit words")
        self.words = [int.from_bytes(data[i : i + 2], "big") for i in range(0, len(data), 2)]
        self.pos = 0
        self.range = INITIAL_RANGE
        self.code = 0
        for _ in range(STATE_BITS // WORD_BITS):
            self.code = (self.code << WORD_BITS) | self._next_word()

    def _next_word(self) -> int:
        pos = self.pos
        self.pos += 1
        if pos < len(self.words):
            return self.words[pos]
        if pos >= len(self.words) + 2:
            raise TruncatedStreamError("stream ended before all symbols were decoded")
        return 0

    def _target(self, precision: int) -> tuple[int, int]:
        r = self.range >> precision
        v = self.code // r
        if v >= 1 << precision:
            raise CorruptStreamError("decoder state left the coding interval")
        return r, v

    def _consume(self, r: int, cum: int, freq: int) -> None:
        self.code -= r * cum
        self.range = r * freq
        while self.range < RENORM_BELOW:
            self.code = (self.code << WORD_BITS) | self._next_word()
            self.range <<= WORD_BITS

    def decode(self, table: CdfTable) -> int:
        r, v = self._target(table.precision)
        s = bisect_right(table.cdf, v) - 1
        cum = table.cdf[s]
        self._consume(r, cum, table.cdf[s + 1] - cum)
        return s

    def decode_bits(self, nbits: int) -> int:
        value = 0
        while nbits > 0:
            chunk = min(nbits, WORD_BITS)
            nbits -= chunk
            r, v = self._target(chunk)
            self._consume(r, v, 1)
            value = (value << chunk) | v
        return value

    def decode_int(self, table: IntTable) -> int:
        s = self.decode(table.table)
        if s < table.escape:
            return s + table.offset
        n = self.decode_bits(ESCAPE_LENGTH_BITS)
        return unzigzag(self.decode_bits(n))

    def finish(self) -> None:
        """Verify the stream was consumed exactly."""
        expected = len(self.words) + 2
        if self.pos != expected:
            raise CorruptStreamError(
                f"stream has {expected - self.pos} unread word(s) after the last symbol"
            )


def _table_for(tables, i):
    return tables if isinstance(tables, CdfTable) else tables[i]


def encode_symbols(symbols: Iterable[int], tables: CdfTable | Sequence[CdfTable]) -> bytes:
    """Code ``symbols[i]`` with ``tables[i]`` (or one shared table)."""
    enc = Encoder()
    for i, s in enumerate(symbols):
        enc.encode(int(s), _table_for(tables, i))
    return enc.finish()


def decode_symbols(data: bytes, tables: CdfTable | Sequence[CdfTable], n: int) -> list[int]:
    dec = Decoder(data)
    out = [dec.decode(_table_for(tables, i)) for i in range(n)]
    dec.finish()
    return out


def ideal_bits(symbols: Iterable[int], tables: CdfTable | Sequence[CdfTable]) -> float:
    """``-sum log2 p`` of the symbols under the quantized tables."""
    total = 0.0
    for i, s in enumerate(symbols):
        t = _table_for(tables, i)
        total -= np.log2(t.freq(int(s))) - t.precision
    return float(total)
