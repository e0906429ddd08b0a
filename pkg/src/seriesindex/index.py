"""iSAX index tree and its two-phase parallel construction.

Phase 1: workers claim fixed-size chunks of the raw data through a shared
fetch-and-increment counter, summarize every series, and append
(word, position) pairs to per-subtree buffers. Each buffer has one part per
worker, so no part ever has two writers.

Phase 2 (after a barrier): workers claim whole root subtrees through a
second counter and grow each one on their own.
"""

from __future__ import annotations

import functools
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ._sync import AtomicCounter, default_threads, run_workers
from .summarization import (
    MAX_CARD_BITS,
    BreakpointTable,
    RefinementExhausted,
    SaxWord,
    choose_split_segment,
    next_bits,
    refine_segment,
    sax_batch,
    segment_lengths,
)


class EmptyIndexError(ValueError):
    pass


@functools.lru_cache(maxsize=None)
def breakpoint_table(max_card_bits: int = MAX_CARD_BITS) -> BreakpointTable:
    return BreakpointTable(1 << max_card_bits)


@dataclass
class IndexConfig:
    w: int = 16
    max_card_bits: int = MAX_CARD_BITS
    leaf_capacity: int = 2000
    chunk_size: int = 20000
    n_workers: int = field(default_factory=default_threads)
    initial_part_capacity: int = 5

    def __post_init__(self):
        for name in ("w", "max_card_bits", "leaf_capacity", "chunk_size", "n_workers",
                     "initial_part_capacity"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.leaf_capacity < 2:
            raise ValueError("leaf_capacity must be at least 2")
        if self.max_card_bits > MAX_CARD_BITS:
            raise ValueError(f"max_card_bits cannot exceed {MAX_CARD_BITS}")
        if self.w > 64:
            raise ValueError("at most 64 segments are supported")


class BufferPart:
    """Growable (word, position) store written by a single worker."""

    __slots__ = ("positions", "words", "size", "grows")

    def __init__(self, capacity: int, w: int):
        self.positions = np.empty(capacity, dtype=np.int64)
        self.words = np.empty((capacity, w), dtype=np.uint8)
        self.size = 0
        self.grows = 0

    @property
    def capacity(self) -> int:
        return self.positions.shape[0]

    def extend(self, positions, words):
        need = self.size + positions.shape[0]
        cap = self.capacity
        if need > cap:
            while cap < need:
                cap *= 2
                self.grows += 1
            pos = np.empty(cap, dtype=np.int64)
            wds = np.empty((cap, self.words.shape[1]), dtype=np.uint8)
            pos[: self.size] = self.positions[: self.size]
            wds[: self.size] = self.words[: self.size]
            self.positions, self.words = pos, wds
        self.positions[self.size:need] = positions
        self.words[self.size:need] = words
        self.size = need


class IndexNode:
    """Root, inner or leaf node.

    ``key`` is the node's SaxWord; ``lo``/``hi`` are its per-segment region
    edges. Inner nodes split on ``split`` into (bit 0, bit 1) children.
    Leaves keep their entries as parallel arrays of full-cardinality words
    and dataset positions.
    """

    __slots__ = ("kind", "key", "bits", "lo", "hi", "split", "children", "positions",
                 "words", "count", "overflow")

    def __init__(self, kind, key=None, table=None):
        self.kind = kind
        self.key = key
        self.split = -1
        self.children = None
        self.positions = None
        self.words = None
        self.count = 0
        self.overflow = False
        if key is not None:
            self.bits = np.array(key.card_bits, dtype=np.int64)
            self.lo, self.hi = table.box(key)
        else:
            self.bits = self.lo = self.hi = None

    @property
    def size(self) -> int:
        return 0 if self.positions is None else self.positions.shape[0]

    def __repr__(self):
        return f"IndexNode({self.kind}, {self.key}, count={self.count})"


def _leaf(key, table, words, positions):
    node = IndexNode("leaf", key, table)
    node.words = words
    node.positions = positions
    node.count = positions.shape[0]
    return node


def root_key(rid: int, w: int) -> SaxWord:
    return SaxWord(tuple((rid >> (w - 1 - i)) & 1 for i in range(w)), (1,) * w)


def root_ids(words: np.ndarray, max_bits: int = MAX_CARD_BITS) -> np.ndarray:
    """Root-subtree id per word: the 1-bit prefixes of all segments packed MSB-first."""
    w = words.shape[1]
    top = (words >> (max_bits - 1)).astype(np.uint64)
    shifts = np.arange(w - 1, -1, -1, dtype=np.uint64)
    return np.bitwise_or.reduce(top << shifts, axis=1)


def _split_leaf(node: IndexNode, table: BreakpointTable, max_bits: int):
    seg = choose_split_segment(node.words, node.bits, max_bits)
    k0, k1 = refine_segment(node.key, seg, max_bits)
    ones = next_bits(node.words, seg, int(node.bits[seg]), max_bits).astype(bool)
    left = _leaf(k0, table, node.words[~ones], node.positions[~ones])
    right = _leaf(k1, table, node.words[ones], node.positions[ones])
    node.kind = "inner"
    node.split = seg
    node.children = (left, right)
    node.words = node.positions = None


def _descend_bit(node: IndexNode, word, max_bits: int) -> int:
    s = node.split
    return (int(word[s]) >> (max_bits - int(node.bits[s]) - 1)) & 1


def insert_entry(subtree: IndexNode, entry, config: IndexConfig, table=None):
    """Insert one (word, position) pair, splitting full leaves on the way.

    A full leaf that cannot be refined any further takes the entry anyway
    and is flagged as overflowing.
    """
    word, pos = entry
    if isinstance(word, SaxWord):
        word = word.symbols
    word = np.asarray(word, dtype=np.uint8)
    table = table or breakpoint_table(config.max_card_bits)
    mb = config.max_card_bits
    node = subtree
    node.count += 1
    while True:
        if node.kind == "inner":
            node = node.children[_descend_bit(node, word, mb)]
            node.count += 1
            continue
        if node.positions is None:
            node.positions = np.empty(0, dtype=np.int64)
            node.words = np.empty((0, word.shape[0]), dtype=np.uint8)
        if node.size >= config.leaf_capacity and not node.overflow:
            try:
                _split_leaf(node, table, mb)
                continue
            except RefinementExhausted:
                node.overflow = True
        node.positions = np.append(node.positions, np.int64(pos))
        node.words = np.vstack([node.words, word[None, :]])
        return


def grow_subtree(key, words, positions, config: IndexConfig, table) -> IndexNode:
    """Build the subtree holding ``positions`` in arrival order.

    Produces exactly the tree that inserting the entries one by one would:
    a node splits on the contents it held when it first filled, which are
    its first ``leaf_capacity`` arrivals.
    """
    cap = config.leaf_capacity
    mb = config.max_card_bits
    if positions.shape[0] <= cap:
        return _leaf(key, table, words, positions)
    bits = np.array(key.card_bits, dtype=np.int64)
    try:
        seg = choose_split_segment(words[:cap], bits, mb)
    except RefinementExhausted:
        node = _leaf(key, table, words, positions)
        node.overflow = True
        return node
    k0, k1 = refine_segment(key, seg, mb)
    ones = next_bits(words, seg, int(bits[seg]), mb).astype(bool)
    node = IndexNode("inner", key, table)
    node.split = seg
    node.children = (
        grow_subtree(k0, words[~ones], positions[~ones], config, table),
        grow_subtree(k1, words[ones], positions[ones], config, table),
    )
    node.count = positions.shape[0]
    return node


@dataclass
class BuildStats:
    phase1_seconds: float = 0.0
    phase2_seconds: float = 0.0
    chunks_by_worker: list = field(default_factory=list)
    subtrees_by_worker: list = field(default_factory=list)
    part_sizes: list = field(default_factory=list)
    part_capacities: list = field(default_factory=list)
    part_grows: int = 0

    @property
    def total_seconds(self):
        return self.phase1_seconds + self.phase2_seconds


class Index:
    """Raw data, breakpoint table, tree root and (during construction) the buffers."""

    def __init__(self, data: np.ndarray, config: IndexConfig, table: BreakpointTable):
        self.data = data
        self.config = config
        self.table = table
        self.root = IndexNode("root")
        self.root.children = {}
        self.stats = BuildStats()
        self.lengths = segment_lengths(data.shape[1], config.w)
        self.buffers: dict | None = {}
        self._phase = 1
        self._chunk_counter = AtomicCounter()
        self._subtree_counter = AtomicCounter()
        self._subtree_keys: list = []
        self._barrier = None
        self._barrier_time = 0.0

    @property
    def n_series(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]

    def subtrees(self):
        """Root children in ascending id order."""
        return [self.root.children[k] for k in sorted(self.root.children)]

    def leaves(self):
        stack = list(reversed(self.subtrees()))
        while stack:
            node = stack.pop()
            if node.kind == "leaf":
                yield node
            else:
                stack.append(node.children[1])
                stack.append(node.children[0])

    def nodes(self):
        stack = list(reversed(self.subtrees()))
        while stack:
            node = stack.pop()
            yield node
            if node.kind == "inner":
                stack.append(node.children[1])
                stack.append(node.children[0])

    def locate(self, word) -> IndexNode | None:
        """Leaf a full-cardinality word descends to, or None if its subtree is absent."""
        word = np.asarray(word, dtype=np.uint8)
        rid = int(root_ids(word[None, :], self.config.max_card_bits)[0])
        node = self.root.children.get(rid)
        while node is not None and node.kind == "inner":
            node = node.children[_descend_bit(node, word, self.config.max_card_bits)]
        return node

    def tree_stats(self) -> dict:
        inner = leaves = overflow = empty = 0
        depth_max = 0
        fills = []
        stack = [(n, 1) for n in self.subtrees()]
        while stack:
            node, d = stack.pop()
            depth_max = max(depth_max, d)
            if node.kind == "inner":
                inner += 1
                stack.extend((c, d + 1) for c in node.children)
            else:
                leaves += 1
                fills.append(node.size)
                overflow += node.overflow
                empty += node.size == 0
        fills = np.asarray(fills, dtype=np.int64)
        edges = np.linspace(0, self.config.leaf_capacity, 11)
        hist, _ = np.histogram(np.minimum(fills, self.config.leaf_capacity), bins=edges)
        return {
            "series": self.n_series,
            "root_children": len(self.root.children),
            "inner_nodes": inner,
            "leaves": leaves,
            "empty_leaves": empty,
            "overflow_leaves": overflow,
            "max_depth": depth_max,
            "entries": int(fills.sum()),
            "leaf_fill_histogram": hist.tolist(),
        }

    def canonical_form(self):
        """Tree shape with sorted leaf contents; equal for equal trees."""

        def walk(node):
            if node.kind == "leaf":
                return ("leaf", tuple(np.sort(node.positions).tolist()))
            return ("inner", node.split, walk(node.children[0]), walk(node.children[1]))

        return tuple((rid, walk(self.root.children[rid])) for rid in sorted(self.root.children))

    def audit(self):
        """Check completeness and prefix consistency; raise AssertionError on failure."""
        mb = self.config.max_card_bits
        seen = np.zeros(self.n_series, dtype=np.int64)
        for rid, sub in self.root.children.items():
            if sub.key != root_key(rid, self.config.w):
                raise AssertionError(f"subtree {rid} has key {sub.key}")
            stack = [sub]
            while stack:
                node = stack.pop()
                if node.kind == "inner":
                    for tail, child in enumerate(node.children):
                        expect = refine_segment(node.key, node.split, mb)[tail]
                        if child.key != expect:
                            raise AssertionError("child key does not refine its parent")
                    if node.count != sum(c.count for c in node.children):
                        raise AssertionError("inner count mismatch")
                    stack.extend(node.children)
                    continue
                if node.count != node.size:
                    raise AssertionError("leaf count mismatch")
                if node.size > self.config.leaf_capacity and not node.overflow:
                    raise AssertionError("leaf over capacity without overflow flag")
                if node.size:
                    shifts = (mb - node.bits).astype(np.uint8)
                    prefix = node.words >> shifts
                    if not np.array_equal(prefix, np.broadcast_to(
                            np.array(node.key.symbols, dtype=np.uint8), prefix.shape)):
                        raise AssertionError("leaf entry outside its node's regions")
                    np.add.at(seen, node.positions, 1)
        if not np.all(seen == 1):
            raise AssertionError(
                f"{int((seen == 0).sum())} series missing, {int((seen > 1).sum())} duplicated"
            )


def _as_dataset(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        data = dataset
    else:
        rows = list(dataset)
        if len({len(r) for r in rows}) > 1:
            raise ValueError("all series must have the same length")
        data = np.asarray(rows, dtype=np.float32)
    if data.ndim != 2:
        if data.size == 0:
            raise EmptyIndexError("cannot index an empty dataset")
        raise ValueError("dataset must be a 2-D array of series")
    if data.shape[0] == 0:
        raise EmptyIndexError("cannot index an empty dataset")
    data = np.ascontiguousarray(data, dtype=np.float32)
    if not np.isfinite(data).all():
        raise ValueError("dataset contains non-finite values")
    return data


def phase1_compute_summaries(index: Index, pid: int):
    cfg = index.config
    mb = cfg.max_card_bits
    n_series = index.n_series
    claimed = index.stats.chunks_by_worker[pid]
    while True:
        c = index._chunk_counter.fetch_inc()
        start = c * cfg.chunk_size
        if start >= n_series:
            break
        claimed.append(c)
        stop = min(start + cfg.chunk_size, n_series)
        words = sax_batch(index.data[start:stop], cfg.w, index.table)
        rids = root_ids(words, mb)
        order = np.argsort(rids, kind="stable")
        cuts = np.flatnonzero(np.diff(rids[order])) + 1
        for grp in np.split(order, cuts):
            rid = int(rids[grp[0]])
            parts = index.buffers.get(rid)
            if parts is None:
                parts = index.buffers.setdefault(rid, [None] * cfg.n_workers)
            part = parts[pid]
            if part is None:
                part = parts[pid] = BufferPart(cfg.initial_part_capacity, cfg.w)
            part.extend(grp + start, words[grp])


def _end_phase1(index: Index):
    # runs once, inside the barrier, before any worker starts phase 2
    index._subtree_keys = sorted(index.buffers)
    index._phase = 2
    index._barrier_time = time.perf_counter()


def phase2_build_subtrees(index: Index, pid: int):
    if index._phase != 2:
        raise AssertionError("tree construction started before all summaries were buffered")
    cfg = index.config
    keys = index._subtree_keys
    built = index.stats.subtrees_by_worker[pid]
    while True:
        b = index._subtree_counter.fetch_inc()
        if b >= len(keys):
            break
        rid = keys[b]
        parts = [p for p in index.buffers[rid] if p is not None]
        positions = np.concatenate([p.positions[: p.size] for p in parts])
        words = np.concatenate([p.words[: p.size] for p in parts])
        # arrival order is fixed to dataset order so the tree does not depend on N_w
        order = np.argsort(positions, kind="stable")
        node = grow_subtree(root_key(rid, cfg.w), words[order], positions[order], cfg, index.table)
        index.root.children[rid] = node
        built.append(rid)


def _index_worker(pid: int, index: Index):
    phase1_compute_summaries(index, pid)
    index._barrier.wait()
    phase2_build_subtrees(index, pid)


def build_index(dataset, config: IndexConfig | None = None) -> Index:
    config = config or IndexConfig()
    data = _as_dataset(dataset)
    if config.w > data.shape[1]:
        raise ValueError(f"w={config.w} exceeds series length {data.shape[1]}")
    index = Index(data, config, breakpoint_table(config.max_card_bits))
    nw = config.n_workers
    index.stats.chunks_by_worker = [[] for _ in range(nw)]
    index.stats.subtrees_by_worker = [[] for _ in range(nw)]
    index._barrier = threading.Barrier(nw, action=lambda: _end_phase1(index))
    t0 = time.perf_counter()
    if nw == 1:
        phase1_compute_summaries(index, 0)
        _end_phase1(index)
        phase2_build_subtrees(index, 0)
    else:
        run_workers(_index_worker, nw, index, barrier=index._barrier)
    t2 = time.perf_counter()
    index.stats.phase1_seconds = index._barrier_time - t0
    index.stats.phase2_seconds = t2 - index._barrier_time
    for parts in index.buffers.values():
        for p in parts:
            if p is not None:
                index.stats.part_sizes.append(p.size)
                index.stats.part_capacities.append(p.capacity)
                index.stats.part_grows += p.grows
    index.buffers = None
    index._barrier = None
    return index
