import numpy as np
import pytest

from seriesindex.data import generate_random_walk, z_normalize
from seriesindex.index import (EmptyIndexError, Index, IndexConfig, IndexNode, breakpoint_table,
                               build_index, grow_subtree, insert_entry, phase2_build_subtrees,
                               root_ids, root_key)
from seriesindex.summarization import sax_batch


def cfg(**kw):
    kw.setdefault("n_workers", 1)
    return IndexConfig(**kw)


def sequential_reference(data, config):
    """Tree built by inserting every series one at a time, in dataset order."""
    table = breakpoint_table(config.max_card_bits)
    words = sax_batch(data, config.w, table)
    rids = root_ids(words, config.max_card_bits)
    subtrees = {}
    for pos, (word, rid) in enumerate(zip(words, rids)):
        rid = int(rid)
        if rid not in subtrees:
            subtrees[rid] = IndexNode("leaf", root_key(rid, config.w), table)
        insert_entry(subtrees[rid], (word, pos), config, table)
    ref = Index(data, config, table)
    ref.root.children = subtrees
    return ref


class TestConfig:
    def test_defaults(self):
        c = IndexConfig()
        assert (c.w, c.leaf_capacity, c.chunk_size, c.initial_part_capacity) == (16, 2000, 20000, 5)

    @pytest.mark.parametrize("kw", [{"w": 0}, {"leaf_capacity": 1}, {"chunk_size": 0},
                                    {"n_workers": 0}, {"max_card_bits": 9}, {"w": 65}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            IndexConfig(**kw)


class TestCompleteness:
    @pytest.mark.parametrize("n", [1, 2000, 2001, 7777])
    def test_audit(self, n):
        data = generate_random_walk(n, 64, seed=n)
        index = build_index(data, cfg(leaf_capacity=50, chunk_size=1000))
        index.audit()
        pos = np.sort(np.concatenate([leaf.positions for leaf in index.leaves()]))
        assert np.array_equal(pos, np.arange(n))

    def test_every_entry_findable(self, walks_2k):
        index = build_index(walks_2k, cfg(leaf_capacity=20))
        words = sax_batch(walks_2k, 16, index.table)
        for pos in range(0, 2000, 7):
            leaf = index.locate(words[pos])
            assert pos in leaf.positions

    def test_identical_series_overflow(self):
        data = np.tile(np.linspace(-1, 1, 32, dtype=np.float32), (120, 1))
        index = build_index(data, cfg(leaf_capacity=10, w=8))
        assert len(index.root.children) == 1
        full = [leaf for leaf in index.leaves() if leaf.size]
        assert len(full) == 1 and full[0].overflow and full[0].size == 120
        assert np.all(full[0].bits == 8)
        index.audit()

    def test_all_low_series_route_to_zero_subtree(self):
        data = np.full((3, 32), -4.0, dtype=np.float32)
        index = build_index(data, cfg(w=4))
        assert list(index.root.children) == [0]

    def test_empty_rejected(self):
        with pytest.raises(EmptyIndexError):
            build_index(np.empty((0, 10), dtype=np.float32))
        with pytest.raises(EmptyIndexError):
            build_index([])

    def test_bad_input(self):
        with pytest.raises(ValueError):
            build_index([[1.0, 2.0], [1.0]])
        with pytest.raises(ValueError):
            build_index(np.array([[np.nan, 1.0]]))
        with pytest.raises(ValueError):
            build_index(np.zeros((3, 8)), cfg(w=16))

    def test_audit_detects_corruption(self, walks_2k):
        index = build_index(walks_2k, cfg(leaf_capacity=100))
        leaf = next(l for l in index.leaves() if l.size > 1)
        leaf.positions = leaf.positions.copy()
        leaf.positions[0] = leaf.positions[1]
        with pytest.raises(AssertionError):
            index.audit()


class TestPhases:
    def test_chunks(self):
        data = generate_random_walk(50000, 16, seed=3)
        index = build_index(data, cfg(chunk_size=20000, w=4))
        assert sorted(c for ws in index.stats.chunks_by_worker for c in ws) == [0, 1, 2]
        index.audit()

    def test_chunk_exclusivity_multiworker(self):
        data = generate_random_walk(30000, 16, seed=4)
        index = build_index(data, cfg(chunk_size=1000, w=4, n_workers=4))
        claimed = sorted(c for ws in index.stats.chunks_by_worker for c in ws)
        assert claimed == list(range(30))
        built = sorted(r for ws in index.stats.subtrees_by_worker for r in ws)
        assert built == sorted(index.root.children)

    def test_buffer_doubling(self, walks_10k):
        index = build_index(walks_10k, cfg(initial_part_capacity=5, chunk_size=500))
        caps = np.array(index.stats.part_capacities)
        sizes = np.array(index.stats.part_sizes)
        assert sizes.sum() == walks_10k.shape[0]
        ratio = caps // 5
        assert np.all(caps % 5 == 0) and np.all(ratio & (ratio - 1) == 0)
        assert np.all(caps >= sizes)
        assert index.stats.part_grows > 0

    def test_phase2_needs_barrier(self, walks_2k):
        c = cfg()
        index = Index(walks_2k, c, breakpoint_table())
        index.stats.subtrees_by_worker = [[]]
        with pytest.raises(AssertionError):
            phase2_build_subtrees(index, 0)

    def test_empty_subtrees_absent(self):
        data = np.full((10, 32), 3.0, dtype=np.float32)
        index = build_index(data, cfg(w=4))
        assert len(index.root.children) == 1

    def test_timings(self, walks_2k):
        index = build_index(walks_2k, cfg())
        assert index.stats.phase1_seconds >= 0 and index.stats.phase2_seconds >= 0
        assert index.buffers is None


class TestSplits:
    def test_one_split_at_capacity_plus_one(self):
        data = z_normalize(generate_random_walk(2001, 64, seed=5))
        table = breakpoint_table()
        words = sax_batch(data, 16, table)
        # force every entry into a single subtree by keeping its top bits only
        words[:, :] = (words & 0x7F)
        node = grow_subtree(root_key(0, 16), words, np.arange(2001), cfg(), table)
        assert node.kind == "inner"
        a, b = node.children
        assert a.kind == b.kind == "leaf" and a.size + b.size == 2001
        s = node.split
        assert np.all((a.words[:, s] >> 6) & 1 == 0) and np.all((b.words[:, s] >> 6) & 1 == 1)

    def test_insert_into_nonfull_leaf(self):
        table = breakpoint_table()
        leaf = IndexNode("leaf", root_key(0, 2), table)
        insert_entry(leaf, (np.array([1, 2], dtype=np.uint8), 0), cfg(w=2), table)
        insert_entry(leaf, (np.array([3, 4], dtype=np.uint8), 1), cfg(w=2), table)
        assert leaf.kind == "leaf" and leaf.count == 2 and leaf.positions.tolist() == [0, 1]

    def test_split_chain(self):
        table = breakpoint_table()
        config = cfg(w=1, leaf_capacity=4)
        words = np.array([[0], [0], [0], [0], [1]], dtype=np.uint8)
        root = IndexNode("leaf", root_key(0, 1), table)
        for p, wd in enumerate(words):
            insert_entry(root, (wd, p), config, table)
        inner = 0
        node = root
        while node.kind == "inner":
            inner += 1
            node = node.children[0]
        # bits 2..8 on the single segment: seven splits before the entries separate
        assert inner == 7
        leaves = [(n.key.card_bits, n.size) for n in _leaves(root) if n.size]
        assert leaves == [((8,), 4), ((8,), 1)]
        bulk = grow_subtree(root_key(0, 1), words, np.arange(5), config, table)
        assert _shape(bulk) == _shape(root)

    @pytest.mark.parametrize("cap", [3, 10, 64])
    def test_bulk_equals_sequential(self, walks_2k, cap):
        c = cfg(leaf_capacity=cap, w=8)
        assert build_index(walks_2k, c).canonical_form() == \
            sequential_reference(walks_2k, c).canonical_form()

    def test_bulk_equals_sequential_with_overflow(self):
        rng = np.random.default_rng(0)
        base = generate_random_walk(5, 32, seed=1)
        data = base[rng.integers(0, 5, 300)]
        c = cfg(leaf_capacity=8, w=4)
        built = build_index(data, c)
        assert built.canonical_form() == sequential_reference(data, c).canonical_form()
        assert any(l.overflow for l in built.leaves())


def _leaves(node):
    if node.kind == "leaf":
        return [node]
    return _leaves(node.children[0]) + _leaves(node.children[1])


def _shape(node):
    if node.kind == "leaf":
        return ("leaf", tuple(np.sort(node.positions).tolist()) if node.positions is not None else ())
    return (node.split, _shape(node.children[0]), _shape(node.children[1]))


class TestDeterminism:
    def test_worker_counts(self, walks_10k):
        forms = {nw: build_index(walks_10k, cfg(n_workers=nw, chunk_size=700, leaf_capacity=40))
                 .canonical_form() for nw in (1, 2, 8)}
        assert forms[1] == forms[2] == forms[8]

    def test_tree_stats(self, walks_10k):
        small = build_index(walks_10k, cfg(leaf_capacity=100)).tree_stats()
        big = build_index(walks_10k, cfg(leaf_capacity=20000)).tree_stats()
        assert small["entries"] == big["entries"] == 10000
        assert small["leaves"] > big["leaves"]
        assert sum(small["leaf_fill_histogram"]) == small["leaves"]
