"""Distance and lower-bound kernels.

Everything here works on squared distances; callers take the root only when
reporting. Point values are widened to float64 before subtraction, so a
float32 row and its float64 copy give bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .summarization import BreakpointTable, PaaSummary, SaxWord, paa_batch, segment_lengths


@dataclass(frozen=True)
class Envelope:
    upper: np.ndarray
    lower: np.ndarray
    reach: int


@dataclass(frozen=True)
class EnvelopePaa:
    upper_means: np.ndarray
    lower_means: np.ndarray
    n: int
    w: int

    @property
    def lengths(self) -> np.ndarray:
        return segment_lengths(self.n, self.w)


def _check_same_length(a, b):
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


@numba.njit(nogil=True, cache=True)
def sq_euclidean_kernel(a, b):
    acc = 0.0
    for i in range(a.shape[0]):
        d = np.float64(a[i]) - np.float64(b[i])
        acc += d * d
    return acc


@numba.njit(nogil=True, cache=True)
def mindist_box_kernel(paa, lo, hi, lengths):
    acc = 0.0
    for i in range(paa.shape[0]):
        below = lo[i] - paa[i]
        above = paa[i] - hi[i]
        d = below if below > above else above
        if d > 0.0:
            acc += lengths[i] * d * d
    return acc


@numba.njit(nogil=True, cache=True)
def lb_keogh_box_kernel(u_means, l_means, lo, hi, lengths):
    # three candidate distances per segment, one chosen by mask; no branches
    # on the data beyond the selects
    acc = 0.0
    for i in range(u_means.shape[0]):
        d_above = lo[i] - u_means[i]
        d_below = l_means[i] - hi[i]
        is_above = lo[i] > u_means[i]
        is_below = hi[i] < l_means[i]
        d = d_above * d_above if is_above else 0.0
        d = d_below * d_below if is_below else d
        acc += lengths[i] * d
    return acc


@numba.njit(nogil=True, cache=True)
def envelope_kernel(q, r):
    n = q.shape[0]
    upper = np.empty(n, dtype=np.float64)
    lower = np.empty(n, dtype=np.float64)
    maxdq = np.empty(n, dtype=np.int64)
    mindq = np.empty(n, dtype=np.int64)
    max_head = max_tail = 0
    min_head = min_tail = 0
    nxt = 0
    for i in range(n):
        end = min(n - 1, i + r)
        while nxt <= end:
            v = q[nxt]
            while max_tail > max_head and q[maxdq[max_tail - 1]] <= v:
                max_tail -= 1
            maxdq[max_tail] = nxt
            max_tail += 1
            while min_tail > min_head and q[mindq[min_tail - 1]] >= v:
                min_tail -= 1
            mindq[min_tail] = nxt
            min_tail += 1
            nxt += 1
        start = i - r
        while maxdq[max_head] < start:
            max_head += 1
        while mindq[min_head] < start:
            min_head += 1
        upper[i] = q[maxdq[max_head]]
        lower[i] = q[mindq[min_head]]
    return upper, lower


@numba.njit(nogil=True, cache=True)
def lb_keogh_raw_kernel(upper, lower, c):
    acc = 0.0
    for i in range(c.shape[0]):
        v = np.float64(c[i])
        if v > upper[i]:
            d = v - upper[i]
            acc += d * d
        elif v < lower[i]:
            d = v - lower[i]
            acc += d * d
    return acc


@numba.njit(nogil=True, cache=True)
def dtw_kernel(a, b, r, bound):
    """Sakoe-Chiba banded DTW over squared point costs, two rolling rows.

    Returns inf as soon as a whole row exceeds ``bound``.
    """
    n = a.shape[0]
    inf = np.inf
    prev = np.empty(n + 1, dtype=np.float64)
    cur = np.empty(n + 1, dtype=np.float64)
    for j in range(n + 1):
        prev[j] = inf
    prev[0] = 0.0
    for i in range(1, n + 1):
        lo = max(1, i - r)
        hi = min(n, i + r)
        cur[lo - 1] = inf
        if hi < n:
            cur[hi + 1] = inf
        ai = np.float64(a[i - 1])
        left = inf
        row_min = inf
        for j in range(lo, hi + 1):
            d = ai - np.float64(b[j - 1])
            m = prev[j - 1]
            p = prev[j]
            if p < m:
                m = p
            if left < m:
                m = left
            left = d * d + m
            cur[j] = left
            if left < row_min:
                row_min = left
        if row_min > bound:
            return inf
        prev, cur = cur, prev
    return prev[n]


def squared_euclidean(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_length(a, b)
    return float(sq_euclidean_kernel(a, b))


def mindist_paa_sax(paa: PaaSummary, word: SaxWord, table: BreakpointTable) -> float:
    """Squared lower bound on the Euclidean distance from a PAA to any series in a word's boxes."""
    if paa.w != word.w:
        raise ValueError("PAA and word have different segment counts")
    lo, hi = table.box(word)
    return float(mindist_box_kernel(paa.means, lo, hi, paa.lengths))


def build_envelope(query, r: int) -> Envelope:
    q = np.asarray(query, dtype=np.float64)
    if not 0 <= r <= q.shape[0]:
        raise ValueError(f"reach must be in 0..{q.shape[0]}, got {r}")
    upper, lower = envelope_kernel(q, int(r))
    return Envelope(upper, lower, int(r))


def envelope_paa(env: Envelope, w: int) -> EnvelopePaa:
    means = paa_batch(np.vstack([env.upper, env.lower]), w)
    return EnvelopePaa(means[0], means[1], env.upper.shape[0], w)


def lb_keogh_raw(env: Envelope, candidate) -> float:
    c = np.asarray(candidate)
    _check_same_length(env.upper, c)
    return float(lb_keogh_raw_kernel(env.upper, env.lower, c))


def lb_keogh_paa_sax(env_paa: EnvelopePaa, word: SaxWord, table: BreakpointTable) -> float:
    if env_paa.w != word.w:
        raise ValueError("envelope PAA and word have different segment counts")
    lo, hi = table.box(word)
    return float(
        lb_keogh_box_kernel(env_paa.upper_means, env_paa.lower_means, lo, hi, env_paa.lengths)
    )


def dtw(a, b, r: int) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_length(a, b)
    if not 0 <= r <= a.shape[0]:
        raise ValueError(f"reach must be in 0..{a.shape[0]}, got {r}")
    return float(dtw_kernel(a, b, int(r), np.inf))


def reach_from_percent(pct: float, n: int) -> int:
    """Warping reach in points for a percentage of the series length (floored)."""
    if pct < 0 or pct > 100:
        raise ValueError(f"reach percentage must be in [0, 100], got {pct}")
    return int(np.floor(pct * n / 100.0 + 1e-9))
