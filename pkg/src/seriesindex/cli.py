"""Command-line front end and benchmark harness.

    seriesindex generate  --count N --length n --seed S -o data.bin
    seriesindex build     data.bin [--segments --leaf-capacity --chunk-size --workers] [--snapshot f]
    seriesindex query     data.bin [--snapshot f] [workload] [--distance --reach-pct --k ...]
    seriesindex scan      data.bin [workload] [--distance --reach-pct --k --workers]
    seriesindex classify  data.bin --labels l.txt --objects o.bin [--k --distance ...]

Exit codes: 0 success, 1 usage, 2 IO / format error, 3 oracle mismatch.
The default thread count follows SERIESINDEX_THREADS, else the CPU count.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from ._sync import default_threads
from .data import (DatasetFormatError, WorkloadSpec, generate_random_walk, make_workload,
                   normalize_blocks, read_dataset, write_dataset)
from .distance import reach_from_percent
from .index import IndexConfig, build_index
from .report import RunReport, write_classify_csv
from .scan import same_answer, scan_search
from .search import QueryConfig, exact_search, knn_classify
from .snapshot import SnapshotError, load_snapshot, save_snapshot

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_ORACLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _build_flags(p):
    d = IndexConfig.__dataclass_fields__
    p.add_argument("--segments", type=_positive, default=d["w"].default,
                   help="PAA segments w (default %(default)s)")
    p.add_argument("--leaf-capacity", type=_positive, default=d["leaf_capacity"].default)
    p.add_argument("--chunk-size", type=_positive, default=d["chunk_size"].default)
    p.add_argument("--workers", type=_positive, default=None,
                   help="index workers (default: thread count)")


def _workload_flags(p):
    p.add_argument("--source", choices=("synthetic", "dataset", "holdout"), default="dataset")
    p.add_argument("--sigma", type=_nonneg_float, nargs="+", default=[0.0],
                   help="noise std-dev, or LOW HIGH for a per-query uniform draw")
    p.add_argument("--queries", type=_positive, default=100, help="workload size")
    p.add_argument("--seed", type=int, default=0)


def _distance_flags(p):
    p.add_argument("--distance", choices=("ed", "dtw"), default="ed")
    p.add_argument("--reach-pct", type=_nonneg_float, default=0.0,
                   help="DTW reach as a percentage of the series length (floored to points)")
    p.add_argument("--k", type=_positive, default=1)


def _search_flags(p):
    p.add_argument("--search-workers", type=_positive, default=None)
    p.add_argument("--queues", type=_positive, default=24)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seriesindex", description="Parallel in-memory series index")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a random-walk dataset")
    g.add_argument("--count", type=_positive, required=True)
    g.add_argument("--length", type=_positive, default=256)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    g.add_argument("--workers", type=_positive, default=None)
    g.add_argument("-o", "--output", required=True)

    b = sub.add_parser("build", help="build an index and print tree statistics")
    b.add_argument("dataset")
    _build_flags(b)
    b.add_argument("--snapshot", help="write an index snapshot here")

    q = sub.add_parser("query", help="run a query workload against the index")
    q.add_argument("dataset")
    _build_flags(q)
    q.add_argument("--snapshot", help="load the index from this snapshot instead of building")
    _workload_flags(q)
    _distance_flags(q)
    _search_flags(q)
    q.add_argument("--verify-oracle", action="store_true",
                   help="check every answer against the linear scan")
    q.add_argument("--csv", help="per-query CSV output path")

    s = sub.add_parser("scan", help="parallel linear scan baseline")
    s.add_argument("dataset")
    _workload_flags(s)
    _distance_flags(s)
    s.add_argument("--workers", type=_positive, default=None)
    s.add_argument("--csv")

    c = sub.add_parser("classify", help="k-NN classification of an object file")
    c.add_argument("dataset")
    c.add_argument("--labels", required=True, help="text file, one integer label per series")
    c.add_argument("--objects", required=True, help="dataset file of objects to classify")
    _build_flags(c)
    _distance_flags(c)
    _search_flags(c)
    c.add_argument("--csv", help="per-object prediction/latency CSV (default stdout)")
    return parser


def _echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())}


def _index_config(args) -> IndexConfig:
    return IndexConfig(w=args.segments, leaf_capacity=args.leaf_capacity,
                       chunk_size=args.chunk_size,
                       n_workers=args.workers or default_threads())


def _query_config(args, n: int) -> QueryConfig:
    cfg = QueryConfig(k=args.k, distance=args.distance,
                      reach=reach_from_percent(args.reach_pct, n) if args.distance == "dtw" else 0,
                      n_queues=getattr(args, "queues", 24))
    if getattr(args, "search_workers", None):
        cfg.n_search_workers = args.search_workers
    return cfg


def _workload(args, data):
    sigma = args.sigma
    if len(sigma) > 2:
        raise UsageError("--sigma takes one value or a LOW HIGH pair")
    spec = WorkloadSpec(args.source, sigma[0] if len(sigma) == 1 else tuple(sigma),
                        args.queries, args.seed)
    return make_workload(data, spec)


def cmd_generate(args, out):
    t0 = time.perf_counter()
    data = generate_random_walk(args.count, args.length, args.seed,
                                args.workers or default_threads())
    if args.normalize:
        normalize_blocks(data)
    write_dataset(args.output, data, normalized=args.normalize)
    print(f"wrote {args.count} x {args.length} series to {args.output} "
          f"(seed={args.seed}, normalized={args.normalize}) in {time.perf_counter() - t0:.2f}s",
          file=out)
    return EXIT_OK


def _print_build(index, cfg, out, seconds):
    print(f"index: w={cfg.w} leaf_capacity={cfg.leaf_capacity} chunk_size={cfg.chunk_size} "
          f"workers={cfg.n_workers}", file=out)
    print(f"build {seconds:.3f}s (summaries {index.stats.phase1_seconds:.3f}s, "
          f"subtrees {index.stats.phase2_seconds:.3f}s)", file=out)
    print("tree " + json.dumps(index.tree_stats()), file=out)


def cmd_build(args, out):
    data = read_dataset(args.dataset).values
    cfg = _index_config(args)
    t0 = time.perf_counter()
    index = build_index(data, cfg)
    _print_build(index, cfg, out, time.perf_counter() - t0)
    if args.snapshot:
        save_snapshot(index, args.snapshot)
        print(f"snapshot written to {args.snapshot}", file=out)
    return EXIT_OK


def _dump_mismatch(i, query, got, want, err):
    print(f"oracle mismatch on query {i}", file=err)
    print(f"  index: {got.pairs()}", file=err)
    print(f"  scan:  {want.pairs()}", file=err)
    print("  query: " + " ".join(repr(float(v)) for v in np.asarray(query).ravel()), file=err)


def cmd_query(args, out, err):
    data = read_dataset(args.dataset).values
    wl = _workload(args, data)
    data = wl.dataset
    if args.snapshot:
        if args.source == "holdout":
            raise UsageError("--snapshot cannot be combined with --source holdout")
        index = load_snapshot(args.snapshot, data)
        build_seconds = 0.0
    else:
        t0 = time.perf_counter()
        index = build_index(data, _index_config(args))
        build_seconds = time.perf_counter() - t0
    qcfg = _query_config(args, data.shape[1])
    report = RunReport("query", _echo(args), n_series=data.shape[0])
    ic = index.config
    report.extra["index"] = (f"w={ic.w} leaf_capacity={ic.leaf_capacity} "
                             f"chunk_size={ic.chunk_size} workers={ic.n_workers}")
    report.extra["build_seconds"] = f"{build_seconds:.3f}"
    report.extra["reach_points"] = qcfg.reach
    for i, q in enumerate(wl.queries):
        res = exact_search(index, q, qcfg)
        ok = None
        if args.verify_oracle:
            want = scan_search(data, q, qcfg.k, qcfg.distance, qcfg.reach)
            ok = same_answer(res, want)
            if not ok:
                _dump_mismatch(i, q, res, want, err)
        report.add(i, res, qcfg, ok)
    return _finish(report, args, out, err)


def cmd_scan(args, out, err):
    data = read_dataset(args.dataset).values
    wl = _workload(args, data)
    data = wl.dataset
    qcfg = _query_config(args, data.shape[1])
    report = RunReport("scan", _echo(args), n_series=data.shape[0])
    workers = args.workers or default_threads()
    for i, q in enumerate(wl.queries):
        res = scan_search(data, q, qcfg.k, qcfg.distance, qcfg.reach, workers)
        report.add(i, res, qcfg)
    return _finish(report, args, out, err)


def _finish(report, args, out, err):
    if args.csv:
        report.write_csv(args.csv)
    print(report.summary(), file=out)
    if report.oracle_agrees is False:
        print(f"oracle disagreed on queries {report.oracle_mismatches}", file=err)
        return EXIT_ORACLE
    return EXIT_OK


def _read_labels(path, count):
    try:
        labels = np.loadtxt(path, dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise DatasetFormatError(f"unreadable labels file {path}: {exc}") from exc
    if labels.shape[0] != count:
        raise DatasetFormatError(f"{labels.shape[0]} labels for {count} series")
    return labels


def cmd_classify(args, out, err):
    data = read_dataset(args.dataset).values
    labels = _read_labels(args.labels, data.shape[0])
    objects = read_dataset(args.objects).values
    if objects.shape[1] != data.shape[1]:
        raise DatasetFormatError(
            f"objects have length {objects.shape[1]}, dataset series {data.shape[1]}")
    index = build_index(data, _index_config(args))
    qcfg = _query_config(args, data.shape[1])
    rows = []
    for i, obj in enumerate(objects):
        t0 = time.perf_counter()
        pred = knn_classify(index, obj.astype(np.float64), labels, args.k, qcfg)
        rows.append((i, pred, f"{time.perf_counter() - t0:.6f}"))
    write_classify_csv(args.csv or out, rows)
    if args.csv:
        print(f"classified {len(rows)} objects -> {args.csv}", file=out)
    return EXIT_OK


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if args.command == "generate":
            return cmd_generate(args, out)
        if args.command == "build":
            return cmd_build(args, out)
        if args.command == "query":
            return cmd_query(args, out, err)
        if args.command == "scan":
            return cmd_scan(args, out, err)
        return cmd_classify(args, out, err)
    except UsageError as exc:
        print(f"seriesindex: error: {exc}", file=err)
        return EXIT_USAGE
    except (OSError, DatasetFormatError, SnapshotError) as exc:
        print(f"seriesindex: {exc}", file=err)
        return EXIT_IO
    except ValueError as exc:
        # bad parameter combinations caught by the config validators
        print(f"seriesindex: error: {exc}", file=err)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
