"""Run reports: a config echo, one record per query, aggregates, oracle flag.

CSV output carries a ``# schema=<name>/<version>`` first line so readers can
reject files they do not understand. Aggregates are recomputed from the
per-query records on every access.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field

QUERY_SCHEMA = ("query-stats", 1)
CLASSIFY_SCHEMA = ("classify-latency", 1)

QUERY_FIELDS = ("query", "k", "distance", "reach", "positions", "distances", "node_lb", "lb",
                "raw_lb", "rd", "queue_inserts", "queue_deletes", "abandoned", "bsf_updates",
                "approx_seconds", "traverse_seconds", "process_seconds", "total_seconds",
                "oracle_ok")
CLASSIFY_FIELDS = ("object", "prediction", "seconds")


class SchemaError(ValueError):
    pass


def _schema_line(schema) -> str:
    return f"# schema={schema[0]}/{schema[1]}\n"


def check_schema(line: str, schema=QUERY_SCHEMA):
    want = _schema_line(schema).strip()
    if line.strip() != want:
        raise SchemaError(f"expected {want!r}, found {line.strip()!r}")


@dataclass
class RunReport:
    command: str
    config: dict
    n_series: int = 0
    records: list = field(default_factory=list)
    oracle_checked: bool = False
    oracle_mismatches: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, idx: int, result, qconfig, oracle_ok=None):
        rec = {"query": idx, "k": qconfig.k, "distance": qconfig.distance,
               "reach": qconfig.reach,
               "positions": " ".join(map(str, result.positions.tolist())),
               "distances": " ".join(repr(float(d)) for d in result.distances)}
        rec.update(result.stats.as_record())
        rec["oracle_ok"] = "" if oracle_ok is None else int(bool(oracle_ok))
        self.records.append(rec)
        if oracle_ok is not None:
            self.oracle_checked = True
            if not oracle_ok:
                self.oracle_mismatches.append(idx)

    @property
    def oracle_agrees(self) -> bool | None:
        if not self.oracle_checked:
            return None
        return not self.oracle_mismatches

    def aggregates(self) -> dict:
        if not self.records:
            return {}
        times = [r["total_seconds"] for r in self.records]
        n = max(self.n_series, 1)
        mean = statistics.fmean
        return {
            "queries": len(self.records),
            "mean_seconds": mean(times),
            "median_seconds": statistics.median(times),
            "mean_rd": mean(r["rd"] for r in self.records),
            "rd_fraction": mean(r["rd"] for r in self.records) / n,
            "lb_fraction": mean(r["lb"] for r in self.records) / n,
            "raw_lb_fraction": mean(r["raw_lb"] for r in self.records) / n,
            "mean_bsf_updates": mean(r["bsf_updates"] for r in self.records),
        }

    def write_csv(self, path_or_fh):
        own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
        fh = open(path_or_fh, "w", newline="") if own else path_or_fh
        try:
            fh.write(_schema_line(QUERY_SCHEMA))
            writer = csv.DictWriter(fh, fieldnames=QUERY_FIELDS, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(self.records)
        finally:
            if own:
                fh.close()

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{self.command}: {json.dumps(self.config, sort_keys=True)}"]
        for key, val in self.extra.items():
            lines.append(f"  {key}: {val}")
        agg = self.aggregates()
        if agg:
            lines.append(
                f"  queries={agg['queries']} mean={agg['mean_seconds'] * 1e3:.2f}ms "
                f"median={agg['median_seconds'] * 1e3:.2f}ms"
            )
            lines.append(
                f"  real distances/query={agg['mean_rd']:.1f} ({agg['rd_fraction']:.4%}) "
                f"lb/query={agg['lb_fraction']:.4%} bsf updates={agg['mean_bsf_updates']:.2f}"
            )
        if self.oracle_checked:
            ok = len(self.records) - len(self.oracle_mismatches)
            lines.append(f"  oracle agreement {ok}/{len(self.records)}")
        return "\n".join(lines)


def read_query_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        check_schema(fh.readline(), QUERY_SCHEMA)
        return list(csv.DictReader(fh))


def write_classify_csv(path_or_fh, rows):
    own = isinstance(path_or_fh, str) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        fh.write(_schema_line(CLASSIFY_SCHEMA))
        writer = csv.writer(fh)
        writer.writerow(CLASSIFY_FIELDS)
        writer.writerows(rows)
    finally:
        if own:
            fh.close()
