"""Exact k-NN search over a built index (Euclidean or banded DTW).

A query first seeds the best-so-far (BSF) list from the leaf its own word
descends to. N_s workers then split the root subtrees between them (shared
counter) and push every unpruned leaf into N_q priority queues round-robin.
After a barrier the workers drain the queues, giving a queue up as soon as
its smallest priority exceeds the current k-th best distance.

All distances are squared. Results are canonical: equal distances are
ordered by dataset position, and the k-th best is the (distance, position)
pair that a candidate must beat.
"""

from __future__ import annotations

import bisect
import heapq
import random
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from ._sync import AtomicCounter, default_threads, run_workers
from .distance import (
    dtw_kernel,
    envelope_kernel,
    lb_keogh_box_kernel,
    lb_keogh_raw_kernel,
    mindist_box_kernel,
    sq_euclidean_kernel,
)
from .index import Index, IndexNode, root_ids
from .summarization import _paa_rows, _symbolize, segment_starts

# padding entries sort after every real position and are distinct from each other
_PAD_BASE = 1 << 62
# root subtrees claimed per counter increment during traversal
_ROOT_BATCH = 64

DISTANCES = ("ed", "dtw")


@dataclass
class QueryConfig:
    n_search_workers: int = field(default_factory=lambda: min(48, default_threads()))
    n_queues: int = 24
    k: int = 1
    distance: str = "ed"
    reach: int = 0
    debug: bool = False

    def __post_init__(self):
        if self.n_queues < 1:
            raise ValueError("n_queues must be at least 1")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.n_search_workers < 1:
            raise ValueError("n_search_workers must be at least 1")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")
        if self.reach < 0:
            raise ValueError("reach must be non-negative")


@dataclass
class QueryStats:
    node_lb: int = 0
    lb: int = 0
    raw_lb: int = 0
    rd: int = 0
    queue_inserts: int = 0
    queue_deletes: int = 0
    abandoned: int = 0
    bsf_updates: int = 0
    approx_seconds: float = 0.0
    traverse_seconds: float = 0.0
    process_seconds: float = 0.0
    queue_sizes: list = field(default_factory=list)

    @property
    def total_seconds(self):
        return self.approx_seconds + self.traverse_seconds + self.process_seconds

    def as_record(self) -> dict:
        rec = asdict(self)
        rec.pop("queue_sizes")
        rec["total_seconds"] = self.total_seconds
        return rec


class BsfState:
    """The k best (squared distance, position) pairs seen so far, ascending.

    ``threshold`` mirrors the k-th distance and may be read without the lock;
    a stale read only weakens pruning. Writers re-check under the lock.
    """

    def __init__(self, k: int):
        self.k = k
        self._items = [(np.inf, _PAD_BASE + i) for i in range(k)]
        self._members = set()
        self.lock = threading.Lock()
        self.threshold = np.inf
        self.updates = 0
        self.history = []

    @property
    def items(self):
        return list(self._items)

    @property
    def kth(self):
        return self._items[-1]

    def offer(self, dist: float, pos: int) -> bool:
        if dist > self.threshold:
            return False
        cand = (float(dist), int(pos))
        with self.lock:
            items = self._items
            if cand >= items[-1] or cand[1] in self._members:
                return False
            new = list(items)
            bisect.insort(new, cand)
            dropped = new.pop()
            self._members.discard(dropped[1])
            self._members.add(cand[1])
            self._items = new
            self.threshold = new[-1][0]
            self.updates += 1
            self.history.append(new[-1])
            return True

    def snapshot(self):
        items = self._items
        return (np.array([d for d, _ in items], dtype=np.float64),
                np.array([p for _, p in items], dtype=np.int64))

    def results(self):
        """Finite entries as (positions, squared distances)."""
        found = [(d, p) for d, p in self._items if p < _PAD_BASE]
        pos = np.array([p for _, p in found], dtype=np.int64)
        dist = np.array([d for d, _ in found], dtype=np.float64)
        return pos, dist


class CandidateQueue:
    """Min-priority queue of leaves keyed by their squared lower bound."""

    def __init__(self):
        self._heap = []
        self._seq = 0
        self.lock = threading.Lock()
        self.finished = False
        self.inserts = 0
        self.deletes = 0
        self.abandoned_at = None

    def put(self, priority: float, leaf: IndexNode):
        if leaf.kind != "leaf":
            raise AssertionError("only leaves may be queued")
        with self.lock:
            heapq.heappush(self._heap, (priority, self._seq, leaf))
            self._seq += 1
            self.inserts += 1

    def delete_min(self):
        with self.lock:
            if not self._heap:
                return None
            prio, _, leaf = heapq.heappop(self._heap)
            self.deletes += 1
            return prio, leaf

    def remaining(self):
        return [p for p, _, _ in self._heap]

    def __len__(self):
        return len(self._heap)


@dataclass
class QueryResult:
    positions: np.ndarray
    sq_distances: np.ndarray
    stats: QueryStats

    @property
    def distances(self) -> np.ndarray:
        return np.sqrt(self.sq_distances)

    def pairs(self):
        return list(zip(self.sq_distances.tolist(), self.positions.tolist()))


# -- leaf kernels -------------------------------------------------------------


@numba.njit(nogil=True, cache=True)
def _accept(dist, p, top_d, top_p, ev_d, ev_p, n_ev):
    k = top_d.shape[0]
    if not (dist < top_d[k - 1] or (dist == top_d[k - 1] and p < top_p[k - 1])):
        return n_ev
    for t in range(k):
        if top_p[t] == p:
            return n_ev
    i = k - 1
    while i > 0 and (top_d[i - 1] > dist or (top_d[i - 1] == dist and top_p[i - 1] > p)):
        top_d[i] = top_d[i - 1]
        top_p[i] = top_p[i - 1]
        i -= 1
    top_d[i] = dist
    top_p[i] = p
    ev_d[n_ev] = dist
    ev_p[n_ev] = p
    return n_ev + 1


@numba.njit(nogil=True, cache=True)
def _scan_leaf_ed(words, positions, data, q, q_paa, lengths, lo8, hi8,
                  top_d, top_p, ev_d, ev_p, counts, debug):
    m, w = words.shape
    n_ev = 0
    for e in range(m):
        thr = top_d[top_d.shape[0] - 1]
        acc = 0.0
        for s in range(w):
            sym = words[e, s]
            below = lo8[sym] - q_paa[s]
            above = q_paa[s] - hi8[sym]
            d = below if below > above else above
            if d > 0.0:
                acc += lengths[s] * d * d
        counts[0] += 1
        if acc > thr:
            continue
        p = positions[e]
        dist = sq_euclidean_kernel(q, data[p])
        counts[2] += 1
        if debug and acc > dist:
            counts[3] += 1
        n_ev = _accept(dist, p, top_d, top_p, ev_d, ev_p, n_ev)
    return n_ev


@numba.njit(nogil=True, cache=True)
def _scan_leaf_dtw(words, positions, data, q, upper, lower, u_paa, l_paa, lengths, lo8, hi8,
                   r, top_d, top_p, ev_d, ev_p, counts, debug):
    m, w = words.shape
    n_ev = 0
    for e in range(m):
        thr = top_d[top_d.shape[0] - 1]
        acc = 0.0
        for s in range(w):
            sym = words[e, s]
            lo = lo8[sym]
            hi = hi8[sym]
            d_above = lo - u_paa[s]
            d_below = l_paa[s] - hi
            d = d_above * d_above if lo > u_paa[s] else 0.0
            d = d_below * d_below if hi < l_paa[s] else d
            acc += lengths[s] * d
        counts[0] += 1
        if acc > thr:
            continue
        p = positions[e]
        row = data[p]
        raw = lb_keogh_raw_kernel(upper, lower, row)
        counts[1] += 1
        if raw > thr:
            continue
        dist = dtw_kernel(q, row, r, thr)
        counts[2] += 1
        if debug:
            full = dtw_kernel(q, row, r, np.inf)
            if acc > raw or raw > full:
                counts[3] += 1
        n_ev = _accept(dist, p, top_d, top_p, ev_d, ev_p, n_ev)
    return n_ev


@numba.njit(nogil=True, cache=True)
def _root_bounds_ed(q_paa, lo, hi, lengths, start, stop):
    out = np.empty(stop - start, dtype=np.float64)
    for i in range(start, stop):
        out[i - start] = mindist_box_kernel(q_paa, lo[i], hi[i], lengths)
    return out


@numba.njit(nogil=True, cache=True)
def _root_bounds_dtw(u_paa, l_paa, lo, hi, lengths, start, stop):
    out = np.empty(stop - start, dtype=np.float64)
    for i in range(start, stop):
        out[i - start] = lb_keogh_box_kernel(u_paa, l_paa, lo[i], hi[i], lengths)
    return out


# -- query context --------------------------------------------------------------


class _RootBoxes:
    """Region edges of all root subtrees stacked for batch lower bounds."""

    def __init__(self, index: Index):
        self.ids = sorted(index.root.children)
        self.nodes = [index.root.children[i] for i in self.ids]
        w = index.config.w
        self.lo = np.array([n.lo for n in self.nodes]).reshape(-1, w)
        self.hi = np.array([n.hi for n in self.nodes]).reshape(-1, w)


def _root_boxes(index: Index) -> _RootBoxes:
    boxes = getattr(index, "_root_boxes", None)
    if boxes is None or len(boxes.ids) != len(index.root.children):
        boxes = _RootBoxes(index)
        index._root_boxes = boxes
    return boxes


class _Query:
    """Per-query representation: raw values, PAA, word and (for DTW) envelope."""

    def __init__(self, index: Index, query, qcfg: QueryConfig):
        q = np.ascontiguousarray(query, dtype=np.float64).ravel()
        if q.shape[0] != index.length:
            raise ValueError(f"query length {q.shape[0]} != series length {index.length}")
        if not np.isfinite(q).all():
            raise ValueError("query contains non-finite values")
        cfg = index.config
        self.values = q
        self.starts = segment_starts(q.shape[0], cfg.w)
        self.paa = _paa_rows(q.reshape(1, -1), self.starts)[0]
        self.word = _symbolize(
            self.paa.reshape(1, -1), index.table.breakpoints(1 << cfg.max_card_bits)
        )[0]
        self.dtw = qcfg.distance == "dtw"
        self.reach = int(qcfg.reach)
        if self.dtw:
            if self.reach > q.shape[0]:
                raise ValueError(f"reach {self.reach} exceeds series length {q.shape[0]}")
            self.upper, self.lower = envelope_kernel(q, self.reach)
            env = _paa_rows(np.vstack([self.upper, self.lower]), self.starts)
            self.u_paa, self.l_paa = env[0].copy(), env[1].copy()


class _Search:
    """Shared state of one query run: queues, BSF, counters and statistics."""

    def __init__(self, index: Index, query, qcfg: QueryConfig):
        self.index = index
        self.cfg = qcfg
        self.q = _Query(index, query, qcfg)
        self.bsf = BsfState(qcfg.k)
        self.queues = [CandidateQueue() for _ in range(qcfg.n_queues)]
        self.lengths = index.lengths
        mb = index.config.max_card_bits
        self.lo8 = index.table.lower_edges(mb)
        self.hi8 = index.table.upper_edges(mb)
        self.subtree_counter = AtomicCounter()
        self.skip = None
        self.barrier = None
        self.barrier_time = 0.0
        self.counts = [np.zeros(4, dtype=np.int64) for _ in range(qcfg.n_search_workers)]
        self.node_lb = [0] * qcfg.n_search_workers

    def node_bound(self, node: IndexNode) -> float:
        q = self.q
        if q.dtw:
            return lb_keogh_box_kernel(q.u_paa, q.l_paa, node.lo, node.hi, self.lengths)
        return mindist_box_kernel(q.paa, node.lo, node.hi, self.lengths)

    def scan_leaf(self, leaf: IndexNode, counts: np.ndarray):
        if leaf.size == 0:
            return
        top_d, top_p = self.bsf.snapshot()
        m = leaf.size
        ev_d = np.empty(m, dtype=np.float64)
        ev_p = np.empty(m, dtype=np.int64)
        q = self.q
        data = self.index.data
        if q.dtw:
            n_ev = _scan_leaf_dtw(leaf.words, leaf.positions, data, q.values, q.upper, q.lower,
                                  q.u_paa, q.l_paa, self.lengths, self.lo8, self.hi8, q.reach,
                                  top_d, top_p, ev_d, ev_p, counts, self.cfg.debug)
        else:
            n_ev = _scan_leaf_ed(leaf.words, leaf.positions, data, q.values, q.paa,
                                 self.lengths, self.lo8, self.hi8, top_d, top_p, ev_d, ev_p,
                                 counts, self.cfg.debug)
        if self.cfg.debug and counts[3]:
            raise AssertionError("filter chain produced a bound above the real distance")
        for i in range(n_ev):
            self.bsf.offer(ev_d[i], ev_p[i])


# -- algorithm steps ---------------------------------------------------------------


def _approximate_leaf(index: Index, q: _Query) -> IndexNode:
    children = index.root.children
    rid = int(root_ids(q.word[None, :], index.config.max_card_bits)[0])
    node = children.get(rid)
    if node is None or node.count == 0:
        lengths = index.lengths
        best = None
        for cand in children.values():
            if cand.count == 0:
                continue
            lb = mindist_box_kernel(q.paa, cand.lo, cand.hi, lengths)
            if best is None or lb < best[0]:
                best = (lb, cand)
        node = best[1]
    mb = index.config.max_card_bits
    while node.kind == "inner":
        s = node.split
        bit = (int(q.word[s]) >> (mb - int(node.bits[s]) - 1)) & 1
        child = node.children[bit]
        if child.count == 0:
            child = node.children[1 - bit]
        node = child
    return node


def approximate_search(index: Index, query, qconfig: QueryConfig | None = None) -> BsfState:
    """Seed a BSF list from the single leaf the query's own word leads to."""
    qconfig = qconfig or QueryConfig(n_search_workers=1)
    s = _Search(index, query, qconfig)
    leaf = _approximate_leaf(index, s.q)
    s.scan_leaf(leaf, s.counts[0])
    return s.bsf


def traverse_root_subtree(search: _Search, node: IndexNode, cursor: int, node_lb=None,
                          worker: int = 0) -> int:
    """Push every unpruned leaf under ``node`` into the queues round-robin.

    Returns the advanced queue cursor.
    """
    if node_lb is None:
        node_lb = search.node_bound(node)
        search.node_lb[worker] += 1
    if node_lb > search.bsf.threshold:
        return cursor
    if node.kind == "leaf":
        if node.size == 0 or node is search.skip:
            return cursor
        search.queues[cursor].put(node_lb, node)
        return (cursor + 1) % len(search.queues)
    for child in node.children:
        cursor = traverse_root_subtree(search, child, cursor, worker=worker)
    return cursor


def process_queue(search: _Search, queue: CandidateQueue, worker: int = 0):
    counts = search.counts[worker]
    while True:
        item = queue.delete_min()
        if item is None:
            queue.finished = True
            return
        prio, leaf = item
        thr = search.bsf.threshold
        if prio > thr:
            queue.abandoned_at = thr
            queue.finished = True
            return
        search.scan_leaf(leaf, counts)


def calculate_real_distance(search: _Search, leaf: IndexNode, worker: int = 0):
    """Filter a leaf's entries by lower bound, then by real distance, updating the BSF."""
    search.scan_leaf(leaf, search.counts[worker])


calculate_real_distance_dtw = calculate_real_distance


def _traverse_phase(search: _Search, pid: int) -> int:
    boxes = _root_boxes(search.index)
    n_roots = len(boxes.ids)
    q = search.q
    cursor = pid % len(search.queues)
    while True:
        b = search.subtree_counter.fetch_inc()
        start = b * _ROOT_BATCH
        if start >= n_roots:
            break
        stop = min(start + _ROOT_BATCH, n_roots)
        if q.dtw:
            lbs = _root_bounds_dtw(q.u_paa, q.l_paa, boxes.lo, boxes.hi, search.lengths,
                                   start, stop)
        else:
            lbs = _root_bounds_ed(q.paa, boxes.lo, boxes.hi, search.lengths, start, stop)
        search.node_lb[pid] += stop - start
        for i in range(stop - start):
            if lbs[i] > search.bsf.threshold:
                continue
            cursor = traverse_root_subtree(search, boxes.nodes[start + i], cursor,
                                           node_lb=lbs[i], worker=pid)
    return cursor


def _mark_traversal_done(search: _Search):
    search.barrier_time = time.perf_counter()


def _search_worker(pid: int, search: _Search):
    _traverse_phase(search, pid)
    if search.barrier is not None:
        search.barrier.wait()
    else:
        _mark_traversal_done(search)
    queues = search.queues
    qi = pid % len(queues)
    rng = random.Random(pid)
    while True:
        process_queue(search, queues[qi], pid)
        open_queues = [i for i, qq in enumerate(queues) if not qq.finished]
        if not open_queues:
            break
        qi = rng.choice(open_queues)


def exact_search(index: Index, query, qconfig: QueryConfig | None = None) -> QueryResult:
    qconfig = qconfig or QueryConfig()
    t0 = time.perf_counter()
    search = _Search(index, query, qconfig)
    seed_leaf = _approximate_leaf(index, search.q)
    search.scan_leaf(seed_leaf, search.counts[0])
    search.skip = seed_leaf
    t1 = time.perf_counter()
    ns = qconfig.n_search_workers
    if ns == 1:
        _search_worker(0, search)
    else:
        search.barrier = threading.Barrier(ns, action=lambda: _mark_traversal_done(search))
        run_workers(_search_worker, ns, search, barrier=search.barrier)
    t2 = time.perf_counter()

    stats = QueryStats()
    total = np.sum(search.counts, axis=0)
    stats.lb, stats.raw_lb, stats.rd = int(total[0]), int(total[1]), int(total[2])
    stats.node_lb = sum(search.node_lb)
    stats.queue_inserts = sum(q.inserts for q in search.queues)
    stats.queue_deletes = sum(q.deletes for q in search.queues)
    stats.abandoned = sum(len(q) for q in search.queues)
    stats.bsf_updates = search.bsf.updates
    stats.queue_sizes = [q.inserts for q in search.queues]
    stats.approx_seconds = t1 - t0
    stats.traverse_seconds = search.barrier_time - t1
    stats.process_seconds = t2 - search.barrier_time
    if qconfig.debug:
        _debug_checks(search)
    pos, dist = search.bsf.results()
    return QueryResult(pos, dist, stats)


def _debug_checks(search: _Search):
    hist = search.bsf.history
    for a, b in zip(hist, hist[1:]):
        if not b < a:
            raise AssertionError("k-th best did not strictly decrease")
    for q in search.queues:
        if q.inserts != q.deletes + len(q):
            raise AssertionError("queue accounting mismatch")
        if len(q) and (q.abandoned_at is None or min(q.remaining()) <= q.abandoned_at):
            raise AssertionError("queue abandoned with a priority at or below the BSF")


def knn_classify(index: Index, obj, labels, k: int = 1, qconfig: QueryConfig | None = None):
    """Majority label among the exact k nearest neighbours.

    Ties go to the label with the smallest summed distance, then the lowest label.
    """
    base = qconfig or QueryConfig()
    qcfg = QueryConfig(base.n_search_workers, base.n_queues, k, base.distance, base.reach,
                       base.debug)
    res = exact_search(index, obj, qcfg)
    labels = np.asarray(labels)
    votes = Counter()
    spread = Counter()
    for p, d in zip(res.positions, res.distances):
        lab = labels[p].item()
        votes[lab] += 1
        spread[lab] += float(d)
    return min(votes, key=lambda lab: (-votes[lab], spread[lab], lab))
