"""Synthetic data, z-normalization, the binary dataset format and query workloads.

Dataset file layout (all little-endian)::

    offset  size  field
    0       8     magic b"SERIESDS"
    8       2     format version (1)
    10      2     flags; bit 0 set when every series is z-normalized
    12      4     series length n (points)
    16      8     series count
    24      1     value encoding (1 = IEEE-754 float32)
    25      7     reserved, zero
    32      ...   count * n float32 values, series after series
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

MAGIC = b"SERIESDS"
VERSION = 1
ENCODING_F32 = 1
FLAG_NORMALIZED = 1
HEADER = struct.Struct("<8sHHIQB7x")
HEADER_SIZE = HEADER.size  # 32

# series per independent random substream; output does not depend on worker count
GEN_BLOCK = 1024


class DatasetFormatError(ValueError):
    pass


class TruncatedHeaderError(DatasetFormatError):
    pass


class MagicMismatchError(DatasetFormatError):
    pass


class SizeMismatchError(DatasetFormatError):
    pass


@dataclass(frozen=True)
class DatasetHeader:
    count: int
    length: int
    normalized: bool = False
    version: int = VERSION
    encoding: int = ENCODING_F32

    @property
    def payload_bytes(self) -> int:
        return self.count * self.length * 4

    def pack(self) -> bytes:
        flags = FLAG_NORMALIZED if self.normalized else 0
        return HEADER.pack(MAGIC, self.version, flags, self.length, self.count, self.encoding)

    @classmethod
    def unpack(cls, raw: bytes) -> "DatasetHeader":
        if len(raw) < HEADER_SIZE:
            raise TruncatedHeaderError(f"file holds {len(raw)} bytes, header needs {HEADER_SIZE}")
        magic, version, flags, length, count, encoding = HEADER.unpack(raw[:HEADER_SIZE])
        if magic != MAGIC:
            raise MagicMismatchError(f"bad magic {magic!r}")
        if version != VERSION:
            raise DatasetFormatError(f"unsupported format version {version}")
        if encoding != ENCODING_F32:
            raise DatasetFormatError(f"unsupported value encoding {encoding}")
        return cls(count, length, bool(flags & FLAG_NORMALIZED), version, encoding)


def _walk_block(seed: int, block: int, rows: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, block])))
    return np.cumsum(rng.standard_normal((rows, n)), axis=1)


def generate_random_walk(count: int, n: int, seed: int = 0, n_workers: int = 1) -> np.ndarray:
    """Random walks: a N(0,1) first point plus i.i.d. N(0,1) steps, as float32.

    Every block of GEN_BLOCK series draws from its own substream keyed by
    (seed, block), so the result is identical for any worker count.
    """
    if count <= 0 or n <= 0:
        raise ValueError("count and length must be positive")
    out = np.empty((count, n), dtype=np.float32)
    blocks = range((count + GEN_BLOCK - 1) // GEN_BLOCK)

    def fill(b):
        start = b * GEN_BLOCK
        stop = min(start + GEN_BLOCK, count)
        out[start:stop] = _walk_block(seed, b, stop - start, n)

    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            list(pool.map(fill, blocks))
    else:
        for b in blocks:
            fill(b)
    return out


def z_normalize(series) -> np.ndarray:
    """Mean 0 / std 1 per series (rows of a 2-D array).

    A constant series, or one whose spread is below 1e-10 of its magnitude,
    maps to all zeros. float32 input stays float32.
    """
    x = np.asarray(series)
    if x.size == 0:
        raise ValueError("cannot normalize an empty series")
    out_dtype = np.float32 if x.dtype == np.float32 else np.float64
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=-1, keepdims=True)
    std = x64.std(axis=-1, keepdims=True)
    flat = std <= 1e-10 * np.maximum(1.0, np.abs(mean))
    z = (x64 - mean) / np.where(flat, 1.0, std)
    z = np.where(flat, 0.0, z)
    return z.astype(out_dtype)


def normalize_blocks(data: np.ndarray, block: int = 65536) -> np.ndarray:
    """In-place row-wise z-normalization of a large float32 array, in blocks."""
    for start in range(0, data.shape[0], block):
        data[start:start + block] = z_normalize(data[start:start + block])
    return data


@dataclass
class Dataset:
    values: np.ndarray
    normalized: bool = False

    @property
    def header(self) -> DatasetHeader:
        return DatasetHeader(self.values.shape[0], self.values.shape[1], self.normalized)


def write_dataset(path, values, normalized: bool = False):
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("dataset must be 2-D (count, length)")
    header = DatasetHeader(values.shape[0], values.shape[1], normalized)
    payload = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header.pack())
        payload.tofile(fh)


def read_header(path) -> DatasetHeader:
    with open(path, "rb") as fh:
        return DatasetHeader.unpack(fh.read(HEADER_SIZE))


def read_dataset(path) -> Dataset:
    size = os.path.getsize(path)
    header = read_header(path)
    actual = size - HEADER_SIZE
    if actual != header.payload_bytes:
        raise SizeMismatchError(
            f"header promises {header.payload_bytes} payload bytes, file has {actual}"
        )
    values = np.fromfile(path, dtype="<f4", offset=HEADER_SIZE)
    values = values.astype(np.float32, copy=False).reshape(header.count, header.length)
    return Dataset(values, header.normalized)


# -- workloads -------------------------------------------------------------------

SOURCES = ("synthetic", "dataset", "holdout")


@dataclass(frozen=True)
class WorkloadSpec:
    """Query workload description.

    ``sigma`` is the std-dev of Gaussian noise added to every point; a
    (low, high) pair draws one sigma per query uniformly from that range.
    """

    source: str = "dataset"
    sigma: float | tuple = 0.0
    count: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        lo, hi = self.sigma_range
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid noise sigma {self.sigma}")
        if self.count <= 0:
            raise ValueError("workload count must be positive")

    @property
    def sigma_range(self) -> tuple[float, float]:
        if isinstance(self.sigma, (tuple, list)):
            return float(self.sigma[0]), float(self.sigma[1])
        return float(self.sigma), float(self.sigma)


@dataclass
class Workload:
    queries: np.ndarray
    dataset: np.ndarray
    sources: np.ndarray
    sigmas: np.ndarray
    spec: WorkloadSpec


def make_workload(dataset: np.ndarray, spec: WorkloadSpec, normalized: bool = True) -> Workload:
    """Queries for a dataset.

    ``dataset``: random members plus noise. ``holdout``: random members are
    removed and returned as queries together with the reduced dataset.
    ``synthetic``: fresh random walks (z-normalized when ``normalized``).
    ``sources`` holds the originating dataset position, or -1.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x51]))
    count = spec.count
    lo, hi = spec.sigma_range
    sigmas = rng.uniform(lo, hi, count) if hi > lo else np.full(count, lo)
    reduced = dataset
    n_series = dataset.shape[0]
    if spec.source == "synthetic":
        base = generate_random_walk(count, dataset.shape[1], seed=spec.seed + 0x9E3779B9)
        if normalized:
            base = z_normalize(base)
        sources = np.full(count, -1, dtype=np.int64)
    elif spec.source == "holdout":
        if count > n_series:
            raise ValueError(f"cannot hold out {count} of {n_series} series")
        sources = np.sort(rng.choice(n_series, count, replace=False))
        base = dataset[sources]
        keep = np.ones(n_series, dtype=bool)
        keep[sources] = False
        reduced = dataset[keep]
    else:
        sources = rng.choice(n_series, count, replace=count > n_series)
        base = dataset[sources]
    queries = base.astype(np.float64)
    noisy = sigmas > 0
    if noisy.any():
        queries[noisy] += rng.standard_normal((int(noisy.sum()), queries.shape[1])) * sigmas[noisy, None]
    return Workload(queries, reduced, sources, sigmas, spec)
