"""Binary index snapshots, so benchmarks can skip rebuilding.

Layout (little-endian)::

    magic            8 bytes  b"SXIDXSNP"
    version          u32      1
    config           u32 w, u32 max_card_bits, u32 leaf_capacity, u32 chunk_size,
                     u32 n_workers, u32 initial_part_capacity,
                     u64 series count, u32 series length, u32 root children
    per root child   u64 subtree id, then its nodes in pre-order:
        inner        u8 tag=0, u8 split segment, then bit-0 child, then bit-1 child
        leaf         u8 tag=1 (2 when overflowing), u32 entry count m,
                     m x i64 positions, m x w u8 full-cardinality symbols

Node keys and region edges are not stored; they follow from the subtree id
and the split segments along the path.
"""

from __future__ import annotations

import struct

import numpy as np

from .index import Index, IndexConfig, IndexNode, _leaf, breakpoint_table, root_key
from .summarization import refine_segment

MAGIC = b"SXIDXSNP"
VERSION = 1
_HEAD = struct.Struct("<8sI")
_CONFIG = struct.Struct("<IIIIIIQII")
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")


class SnapshotError(ValueError):
    pass


def save_snapshot(index: Index, path):
    cfg = index.config
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION))
        fh.write(_CONFIG.pack(cfg.w, cfg.max_card_bits, cfg.leaf_capacity, cfg.chunk_size,
                              cfg.n_workers, cfg.initial_part_capacity, index.n_series,
                              index.length, len(index.root.children)))
        for rid in sorted(index.root.children):
            fh.write(_U64.pack(rid))
            stack = [index.root.children[rid]]
            while stack:
                node = stack.pop()
                if node.kind == "inner":
                    fh.write(bytes((0, node.split)))
                    stack.append(node.children[1])
                    stack.append(node.children[0])
                else:
                    fh.write(bytes((2 if node.overflow else 1,)))
                    fh.write(_U32.pack(node.size))
                    if node.size:
                        fh.write(np.ascontiguousarray(node.positions, dtype="<i8").tobytes())
                        fh.write(np.ascontiguousarray(node.words, dtype=np.uint8).tobytes())


def load_snapshot(path, data: np.ndarray) -> Index:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEAD.size + _CONFIG.size:
        raise SnapshotError("snapshot is truncated")
    magic, version = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise SnapshotError(f"bad snapshot magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    (w, mb, cap, chunk, nw, part0, count, length, n_roots) = _CONFIG.unpack_from(buf, _HEAD.size)
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.shape != (count, length):
        raise SnapshotError(
            f"snapshot indexes {count}x{length} series, dataset is {data.shape[0]}x{data.shape[1]}"
        )
    cfg = IndexConfig(w=w, max_card_bits=mb, leaf_capacity=cap, chunk_size=chunk,
                      n_workers=nw, initial_part_capacity=part0)
    table = breakpoint_table(mb)
    index = Index(data, cfg, table)
    index.buffers = None
    off = _HEAD.size + _CONFIG.size

    def read_node(key):
        nonlocal off
        tag = buf[off]
        off += 1
        if tag == 0:
            split = buf[off]
            off += 1
            k0, k1 = refine_segment(key, split, mb)
            node = IndexNode("inner", key, table)
            node.split = split
            left = read_node(k0)
            right = read_node(k1)
            node.children = (left, right)
            node.count = left.count + right.count
            return node
        if tag not in (1, 2):
            raise SnapshotError(f"corrupt node tag {tag}")
        (m,) = _U32.unpack_from(buf, off)
        off += 4
        pos = np.frombuffer(buf, dtype="<i8", count=m, offset=off).astype(np.int64)
        off += 8 * m
        words = np.frombuffer(buf, dtype=np.uint8, count=m * w, offset=off).reshape(m, w).copy()
        off += m * w
        node = _leaf(key, table, words, pos)
        node.overflow = tag == 2
        return node

    try:
        for _ in range(n_roots):
            (rid,) = _U64.unpack_from(buf, off)
            off += 8
            index.root.children[rid] = read_node(root_key(rid, w))
    except (struct.error, IndexError, ValueError) as exc:
        raise SnapshotError(f"snapshot is truncated or corrupt: {exc}") from exc
    if off != len(buf):
        raise SnapshotError("trailing bytes after the last subtree")
    index._phase = 2
    return index
