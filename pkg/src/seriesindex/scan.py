"""Parallel linear scan: the exact, unpruned baseline and correctness oracle.

The raw data is cut into one contiguous partition per worker and every
series' real distance is computed. The DTW scan runs the same recurrence as
``distance.dtw_kernel`` on blocks of candidates laid out lane-wise, so the
values are bit-identical to the per-pair kernel.
"""

from __future__ import annotations

import time

import numba
import numpy as np

from ._sync import default_threads, run_workers
from .distance import sq_euclidean_kernel
from .search import QueryResult, QueryStats

LANES = 16


@numba.njit(nogil=True, cache=True)
def _ed_range(q, data, start, stop, out):
    for i in range(start, stop):
        out[i] = sq_euclidean_kernel(q, data[i])


@numba.njit(nogil=True, cache=True)
def _dtw_range(q, data, r, start, stop, out):
    n = q.shape[0]
    inf = np.inf
    lanes = np.empty((n, LANES), dtype=np.float64)
    prev = np.empty((n + 1, LANES), dtype=np.float64)
    cur = np.empty((n + 1, LANES), dtype=np.float64)
    for s in range(start, stop, LANES):
        m = min(LANES, stop - s)
        for i in range(n):
            for l in range(LANES):
                lanes[i, l] = np.float64(data[s + l, i]) if l < m else 0.0
        for j in range(n + 1):
            for l in range(LANES):
                prev[j, l] = inf
        for l in range(LANES):
            prev[0, l] = 0.0
        for i in range(1, n + 1):
            lo = max(1, i - r)
            hi = min(n, i + r)
            qi = q[i - 1]
            for l in range(LANES):
                cur[lo - 1, l] = inf
            if hi < n:
                for l in range(LANES):
                    cur[hi + 1, l] = inf
            for j in range(lo, hi + 1):
                for l in range(LANES):
                    d = qi - lanes[j - 1, l]
                    x = prev[j - 1, l]
                    y = prev[j, l]
                    z = cur[j - 1, l]
                    mm = x if x < y else y
                    mm = mm if mm < z else z
                    cur[j, l] = d * d + mm
            prev, cur = cur, prev
        for l in range(m):
            out[s + l] = prev[n, l]


def _partitions(total: int, parts: int):
    bounds = np.linspace(0, total, parts + 1).astype(np.int64)
    return list(zip(bounds[:-1], bounds[1:]))


def scan_distances(data: np.ndarray, query, distance: str = "ed", reach: int = 0,
                   n_workers: int | None = None) -> np.ndarray:
    """Squared distance from the query to every series."""
    q = np.ascontiguousarray(query, dtype=np.float64).ravel()
    if q.shape[0] != data.shape[1]:
        raise ValueError(f"query length {q.shape[0]} != series length {data.shape[1]}")
    if distance not in ("ed", "dtw"):
        raise ValueError(f"unknown distance {distance!r}")
    n_workers = n_workers or default_threads()
    out = np.empty(data.shape[0], dtype=np.float64)
    parts = _partitions(data.shape[0], n_workers)

    def work(pid):
        start, stop = parts[pid]
        if distance == "dtw":
            _dtw_range(q, data, int(reach), start, stop, out)
        else:
            _ed_range(q, data, start, stop, out)

    run_workers(work, n_workers)
    return out


def top_k(sq_dists: np.ndarray, k: int):
    """(positions, squared distances) of the k smallest, ties by position."""
    order = np.lexsort((np.arange(sq_dists.shape[0]), sq_dists))[:k]
    return order.astype(np.int64), sq_dists[order]


def scan_search(data: np.ndarray, query, k: int = 1, distance: str = "ed", reach: int = 0,
                n_workers: int | None = None) -> QueryResult:
    t0 = time.perf_counter()
    dists = scan_distances(data, query, distance, reach, n_workers)
    pos, d = top_k(dists, k)
    stats = QueryStats(rd=int(data.shape[0]), process_seconds=time.perf_counter() - t0)
    return QueryResult(pos, d, stats)


def same_answer(result: QueryResult, oracle: QueryResult) -> bool:
    """Exact agreement of positions and squared distances."""
    return (np.array_equal(result.positions, oracle.positions)
            and np.array_equal(result.sq_distances, oracle.sq_distances))
