import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seriesindex.data import (HEADER_SIZE, DatasetFormatError, DatasetHeader, MagicMismatchError,
                              SizeMismatchError, TruncatedHeaderError, WorkloadSpec,
                              generate_random_walk, make_workload, normalize_blocks,
                              read_dataset, read_header, write_dataset, z_normalize)
from seriesindex.distance import squared_euclidean


class TestGenerate:
    def test_deterministic(self):
        a = generate_random_walk(3000, 32, seed=5)
        assert np.array_equal(a, generate_random_walk(3000, 32, seed=5))
        assert not np.array_equal(a, generate_random_walk(3000, 32, seed=6))

    def test_worker_count_independent(self):
        assert np.array_equal(generate_random_walk(5000, 16, seed=1, n_workers=1),
                              generate_random_walk(5000, 16, seed=1, n_workers=4))

    def test_prefix_stable(self):
        big = generate_random_walk(3000, 16, seed=2)
        assert np.array_equal(big[:1500], generate_random_walk(1500, 16, seed=2))

    def test_first_point_standard_normal(self):
        x = generate_random_walk(100000, 4, seed=9)[:, 0].astype(np.float64)
        assert abs(x.mean()) < 0.02 and abs(x.var() - 1) < 0.05

    def test_increments_standard_normal(self):
        steps = np.diff(generate_random_walk(20000, 64, seed=3).astype(np.float64), axis=1)
        assert abs(steps.mean()) < 0.01 and abs(steps.var() - 1) < 0.02
        lag = np.corrcoef(steps[:, :-1].ravel(), steps[:, 1:].ravel())[0, 1]
        assert abs(lag) < 0.01

    def test_dtype_and_errors(self):
        assert generate_random_walk(2, 3).dtype == np.float32
        with pytest.raises(ValueError):
            generate_random_walk(0, 3)


class TestNormalize:
    def test_definition(self):
        z = z_normalize(np.array([1.0, 2.0, 3.0]))
        assert abs(z.mean()) < 1e-12 and abs(z.std() - 1) < 1e-12

    def test_constant(self):
        assert np.all(z_normalize(np.full(10, 4.2)) == 0)
        assert np.all(z_normalize(np.full((3, 10), -1e6, dtype=np.float32)) == 0)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(2, 50),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_idempotent_and_moments(self, x):
        z = z_normalize(x)
        assert np.allclose(z_normalize(z), z, atol=1e-6)
        if np.any(z != 0):
            assert abs(z.mean()) < 1e-6 and abs(z.std() - 1) < 1e-6

    def test_rows_and_blocks(self):
        data = generate_random_walk(1000, 32, seed=0)
        want = z_normalize(data)
        assert want.dtype == np.float32
        got = normalize_blocks(data.copy(), block=77)
        assert np.array_equal(got, want)
        assert np.all(np.abs(want.mean(axis=1)) < 1e-5)

    def test_empty(self):
        with pytest.raises(ValueError):
            z_normalize([])


class TestFormat:
    def test_round_trip(self, tmp_path):
        data = generate_random_walk(10000, 64, seed=1)
        path = tmp_path / "d.bin"
        write_dataset(path, data, normalized=True)
        assert os.path.getsize(path) == HEADER_SIZE + 10000 * 64 * 4
        ds = read_dataset(path)
        assert ds.normalized and ds.values.dtype == np.float32
        assert ds.values.tobytes() == data.tobytes()

    def test_header_bytes(self, tmp_path):
        path = tmp_path / "h.bin"
        write_dataset(path, np.zeros((3, 5), dtype=np.float32))
        raw = path.read_bytes()[:HEADER_SIZE]
        assert raw[:8] == b"SERIESDS"
        assert int.from_bytes(raw[12:16], "little") == 5
        assert int.from_bytes(raw[16:24], "little") == 3
        assert raw[24] == 1 and raw[25:] == bytes(7)
        assert DatasetHeader.unpack(raw) == read_header(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.bin"
        write_dataset(path, np.ones((10, 8), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(SizeMismatchError):
            read_dataset(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "t.bin"
        path.write_bytes(b"SERIES")
        with pytest.raises(TruncatedHeaderError):
            read_dataset(path)

    def test_magic(self, tmp_path):
        path = tmp_path / "m.bin"
        write_dataset(path, np.ones((1, 2), dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[0] = ord("X")
        path.write_bytes(bytes(raw))
        with pytest.raises(MagicMismatchError):
            read_dataset(path)

    def test_errors_are_distinct(self):
        kinds = {TruncatedHeaderError, MagicMismatchError, SizeMismatchError}
        assert len(kinds) == 3 and all(issubclass(k, DatasetFormatError) for k in kinds)

    def test_header_only(self, tmp_path):
        path = tmp_path / "e.bin"
        path.write_bytes(DatasetHeader(0, 256).pack())
        ds = read_dataset(path)
        assert ds.values.shape == (0, 256)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v.bin"
        path.write_bytes(DatasetHeader(0, 4, version=9).pack())
        with pytest.raises(DatasetFormatError):
            read_dataset(path)


@pytest.fixture(scope="module")
def data():
    return z_normalize(generate_random_walk(3000, 64, seed=2))


class TestWorkload:
    def test_exact_members(self, data):
        wl = make_workload(data, WorkloadSpec("dataset", 0.0, 50, seed=1))
        for q, src in zip(wl.queries, wl.sources):
            assert squared_euclidean(q, data[src]) == 0.0

    def test_noise_level(self, data):
        wl = make_workload(data, WorkloadSpec("dataset", 0.1, 200, seed=1))
        resid = wl.queries - data[wl.sources]
        assert abs(resid.std() - 0.1) < 0.005

    def test_sigma_range(self, data):
        wl = make_workload(data, WorkloadSpec("dataset", (0.01, 0.1), 200, seed=1))
        assert wl.sigmas.min() >= 0.01 and wl.sigmas.max() <= 0.1 and wl.sigmas.std() > 0

    def test_holdout(self, data):
        wl = make_workload(data, WorkloadSpec("holdout", 0.0, 100, seed=1))
        assert wl.dataset.shape[0] == 2900
        kept = {r.tobytes() for r in wl.dataset}
        assert not any(q.astype(np.float32).tobytes() in kept for q in wl.queries)
        with pytest.raises(ValueError):
            make_workload(data, WorkloadSpec("holdout", 0.0, 3001))

    def test_synthetic(self, data):
        wl = make_workload(data, WorkloadSpec("synthetic", 0.0, 20, seed=1))
        assert np.all(wl.sources == -1) and wl.queries.shape == (20, 64)
        assert np.allclose(wl.queries.mean(axis=1), 0, atol=1e-5)

    def test_deterministic(self, data):
        a = make_workload(data, WorkloadSpec("dataset", (0.01, 0.1), 20, seed=4))
        b = make_workload(data, WorkloadSpec("dataset", (0.01, 0.1), 20, seed=4))
        assert np.array_equal(a.queries, b.queries)

    @pytest.mark.parametrize("kw", [{"source": "web"}, {"sigma": -0.1}, {"count": 0},
                                    {"sigma": (0.2, 0.1)}])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            WorkloadSpec(**kw)
