"""Parallel in-memory iSAX index with exact k-NN search under ED and DTW."""

from .data import (Dataset, DatasetHeader, WorkloadSpec, generate_random_walk, make_workload,
                   read_dataset, write_dataset, z_normalize)
from .distance import (build_envelope, dtw, envelope_paa, lb_keogh_paa_sax, lb_keogh_raw,
                       mindist_paa_sax, reach_from_percent, squared_euclidean)
from .index import Index, IndexConfig, build_index
from .scan import scan_search
from .search import QueryConfig, QueryResult, approximate_search, exact_search, knn_classify
from .snapshot import load_snapshot, save_snapshot
from .summarization import (BreakpointTable, PaaSummary, SaxWord, build_breakpoints, compute_paa,
                            paa_to_sax)

__version__ = "0.1.0"

__all__ = [
    "BreakpointTable", "Dataset", "DatasetHeader", "Index", "IndexConfig", "PaaSummary",
    "QueryConfig", "QueryResult", "SaxWord", "WorkloadSpec", "approximate_search",
    "build_breakpoints", "build_envelope", "build_index", "compute_paa", "dtw", "envelope_paa",
    "exact_search", "generate_random_walk", "knn_classify", "lb_keogh_paa_sax", "lb_keogh_raw",
    "load_snapshot", "make_workload", "mindist_paa_sax", "paa_to_sax", "reach_from_percent",
    "read_dataset", "save_snapshot", "scan_search", "squared_euclidean", "write_dataset",
    "z_normalize",
]
