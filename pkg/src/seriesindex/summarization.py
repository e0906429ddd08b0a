"""PAA and iSAX summaries.

A series of length n is cut into w segments; each segment is reduced to its
mean (PAA), and each mean is mapped to the index of the equiprobable
standard-normal region it falls into (iSAX symbol). Cardinality is variable
per segment and always a power of two, so a symbol at b bits is the b-bit
prefix of the symbol at the maximum cardinality.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numba
import numpy as np

MAX_CARD_BITS = 8


class RefinementExhausted(Exception):
    """Raised when no segment of a word can take another bit."""


def segment_starts(n: int, w: int) -> np.ndarray:
    """Start offsets of the w segments plus a trailing n.

    Segments have length n // w; the last one absorbs the remainder.
    """
    if w <= 0 or w > n:
        raise ValueError(f"segment count must be in 1..{n}, got {w}")
    starts = np.arange(w + 1, dtype=np.int64) * (n // w)
    starts[-1] = n
    return starts


def segment_lengths(n: int, w: int) -> np.ndarray:
    return np.diff(segment_starts(n, w)).astype(np.float64)


@numba.njit(nogil=True, cache=True)
def _paa_rows(data, starts):
    rows = data.shape[0]
    w = starts.shape[0] - 1
    out = np.empty((rows, w), dtype=np.float64)
    for r in range(rows):
        for s in range(w):
            acc = 0.0
            for i in range(starts[s], starts[s + 1]):
                acc += data[r, i]
            out[r, s] = acc / (starts[s + 1] - starts[s])
    return out


@numba.njit(nogil=True, cache=True)
def _symbolize(paa, breakpoints):
    # side='right' search: a value equal to a breakpoint goes to the region above
    rows, w = paa.shape
    out = np.empty((rows, w), dtype=np.uint8)
    m = breakpoints.shape[0]
    for r in range(rows):
        for s in range(w):
            v = paa[r, s]
            lo = 0
            hi = m
            while lo < hi:
                mid = (lo + hi) >> 1
                if breakpoints[mid] <= v:
                    lo = mid + 1
                else:
                    hi = mid
            out[r, s] = lo
    return out


@dataclass(frozen=True)
class PaaSummary:
    means: np.ndarray
    n: int
    w: int

    @property
    def lengths(self) -> np.ndarray:
        return segment_lengths(self.n, self.w)


@dataclass(frozen=True)
class SaxWord:
    """Per-segment symbols, each with its own bit count."""

    symbols: tuple[int, ...]
    card_bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.symbols) != len(self.card_bits):
            raise ValueError("symbols and card_bits differ in length")
        for sym, bits in zip(self.symbols, self.card_bits):
            if not 0 <= sym < (1 << bits):
                raise ValueError(f"symbol {sym} does not fit in {bits} bits")

    @property
    def w(self) -> int:
        return len(self.symbols)

    def truncate(self, card_bits) -> "SaxWord":
        syms = tuple(
            s >> (b - nb) for s, b, nb in zip(self.symbols, self.card_bits, card_bits)
        )
        return SaxWord(syms, tuple(card_bits))

    def covers(self, sax_max, max_bits: int = MAX_CARD_BITS) -> bool:
        """True if a full-cardinality word has this word as per-segment prefix."""
        return all(
            (int(v) >> (max_bits - b)) == s
            for v, s, b in zip(sax_max, self.symbols, self.card_bits)
        )

    def __str__(self):
        return " ".join(
            format(s, f"0{b}b") + f"_{b}" for s, b in zip(self.symbols, self.card_bits)
        )


class BreakpointTable:
    """Standard-normal quantile breakpoints for every power-of-two cardinality.

    Tables for smaller cardinalities are sliced out of the largest one, so
    the bit-prefix rule holds exactly in floating point.
    """

    def __init__(self, max_cardinality: int = 1 << MAX_CARD_BITS):
        c = int(max_cardinality)
        if c < 2 or c & (c - 1) or c > 1 << MAX_CARD_BITS:
            raise ValueError(
                f"cardinality must be a power of two in 2..256, got {max_cardinality}"
            )
        self.max_cardinality = c
        self.max_bits = c.bit_length() - 1
        nd = NormalDist()
        base = np.array([nd.inv_cdf(i / c) for i in range(1, c)], dtype=np.float64)
        self._breakpoints = {}
        self._lower = {}
        self._upper = {}
        for b in range(1, self.max_bits + 1):
            card = 1 << b
            bp = base[(c // card) * np.arange(1, card) - 1].copy()
            bp.setflags(write=False)
            self._breakpoints[b] = bp
            self._lower[b] = np.concatenate(([-np.inf], bp))
            self._upper[b] = np.concatenate((bp, [np.inf]))

    def breakpoints(self, cardinality: int) -> np.ndarray:
        return self._breakpoints[self._bits(cardinality)]

    def lower_edges(self, bits: int) -> np.ndarray:
        """Lower region edge per symbol at the given bit count."""
        return self._lower[bits]

    def upper_edges(self, bits: int) -> np.ndarray:
        return self._upper[bits]

    def box(self, word: SaxWord) -> tuple[np.ndarray, np.ndarray]:
        """Region edges (lower, upper) per segment of a word."""
        lo = np.array([self._lower[b][s] for s, b in zip(word.symbols, word.card_bits)])
        hi = np.array([self._upper[b][s] for s, b in zip(word.symbols, word.card_bits)])
        return lo, hi

    def _bits(self, cardinality: int) -> int:
        b = int(cardinality).bit_length() - 1
        if cardinality < 2 or 1 << b != cardinality or b > self.max_bits:
            raise ValueError(f"unsupported cardinality {cardinality}")
        return b


def build_breakpoints(max_cardinality: int = 256) -> BreakpointTable:
    return BreakpointTable(max_cardinality)


def compute_paa(series, w: int) -> PaaSummary:
    x = np.asarray(series, dtype=np.float64)
    starts = segment_starts(x.shape[0], w)
    means = _paa_rows(x.reshape(1, -1), starts)[0]
    return PaaSummary(means, x.shape[0], w)


def paa_batch(data: np.ndarray, w: int) -> np.ndarray:
    """PAA of every row of a 2-D array, float64 of shape (rows, w)."""
    starts = segment_starts(data.shape[1], w)
    return _paa_rows(data, starts)


def sax_batch(data: np.ndarray, w: int, table: BreakpointTable) -> np.ndarray:
    """Full-cardinality symbols of every row, uint8 of shape (rows, w)."""
    return _symbolize(paa_batch(data, w), table.breakpoints(table.max_cardinality))


def paa_to_sax(paa: PaaSummary, bits_per_segment, table: BreakpointTable) -> SaxWord:
    bits = [int(b) for b in bits_per_segment]
    if len(bits) != paa.w:
        raise ValueError("one bit count per segment is required")
    symbols = []
    for v, b in zip(paa.means, bits):
        if not 1 <= b <= table.max_bits:
            raise ValueError(f"bit count {b} outside 1..{table.max_bits}")
        symbols.append(int(np.searchsorted(table.breakpoints(1 << b), v, side="right")))
    return SaxWord(tuple(symbols), tuple(bits))


def refine_segment(
    word: SaxWord, segment: int, max_bits: int = MAX_CARD_BITS
) -> tuple[SaxWord, SaxWord]:
    """Split one segment's region in two by appending a 0 or 1 bit."""
    b = word.card_bits[segment]
    if b >= max_bits:
        raise RefinementExhausted(f"segment {segment} already at {b} bits")
    bits = list(word.card_bits)
    bits[segment] = b + 1
    out = []
    for tail in (0, 1):
        syms = list(word.symbols)
        syms[segment] = (syms[segment] << 1) | tail
        out.append(SaxWord(tuple(syms), tuple(bits)))
    return out[0], out[1]


def next_bits(entries: np.ndarray, segment: int, bits: int, max_bits: int = MAX_CARD_BITS):
    """The bit each full-cardinality entry would contribute at one more bit."""
    return (entries[:, segment] >> (max_bits - bits - 1)) & 1


def choose_split_segment(entries, current_bits, max_bits: int = MAX_CARD_BITS) -> int:
    """Refinable segment whose next bit divides the entries closest to 50/50.

    Ties go to the lowest segment index.
    """
    entries = np.asarray(entries, dtype=np.uint8)
    current = np.asarray(current_bits, dtype=np.int64)
    refinable = np.flatnonzero(current < max_bits)
    if refinable.size == 0:
        raise RefinementExhausted("every segment is at full cardinality")
    m = entries.shape[0]
    shifts = (max_bits - current[refinable] - 1).astype(np.uint8)
    ones = ((entries[:, refinable] >> shifts) & 1).sum(axis=0, dtype=np.int64)
    imbalance = np.abs(2 * ones - m)
    return int(refinable[np.argmin(imbalance)])
