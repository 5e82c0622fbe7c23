"""Benchmark harness: synthetic feed, the two workflows, the capacity comparison and federation savings."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import IO, Iterable, Mapping

from .capacity import CapacityCheck, JobCluster, SlotsExhausted, run_sdeaas_vs_jobs, sdeaas_capacity_check
from .clustering import ClusteringConfig, kmeans, kmeans_cost, run_clustering_workflow
from .federation import federated_specs, run_federation_savings
from .correlation import CorrelationConfig, brute_force_pairs, run_workflow
from .generator import GeneratorConfig, generate, generate_lines
from .strategy import CSV_COLUMNS, Strategy, StrategyResult

__all__ = [
    "CSV_COLUMNS", "CapacityCheck", "ClusteringConfig", "CorrelationConfig", "GeneratorConfig", "JobCluster",
    "SlotsExhausted", "Strategy", "StrategyResult", "brute_force_pairs", "federated_specs", "generate",
    "generate_lines", "kmeans", "kmeans_cost", "run_clustering_workflow", "run_federation_savings",
    "run_sdeaas_vs_jobs", "run_workflow", "sdeaas_capacity_check", "write_rows",
]


def write_rows(rows: Iterable[Mapping], out: str | Path | IO[str], delimiter: str = ",") -> int:
    """Write result rows as CSV (or whitespace-separated for gnuplot with ``delimiter=" "``).

    The header is the union of the row keys in first-seen order. Returns the
    number of rows written.
    """
    rows = list(rows)
    header: list[str] = []
    for r in rows:
        header.extend(k for k in r if k not in header)
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="", encoding="utf-8") as fh:
            return write_rows(rows, fh, delimiter)
    if delimiter == " ":
        out.write("# " + " ".join(header) + "\n")
        for r in rows:
            # "?" marks a missing value (gnuplot: set datafile missing "?").
            cells = (r.get(k, "") for k in header)
            out.write(" ".join("?" if v == "" else str(v) for v in cells) + "\n")
        return len(rows)
    w = csv.DictWriter(out, fieldnames=header, delimiter=delimiter, extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return len(rows)
