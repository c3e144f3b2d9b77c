"""Batch post-processing: per-run metrics, cross-run statistics, CSV export.

Four reducers turn a record log into one number per run; aggregation folds
those into sample moments with a normal-approximation 95% interval (documented
as such - adequate at desk scale). Everything here is a pure function of the
record streams, so recomputation after a datastore restart is bit-identical.
"""

from __future__ import annotations

import csv
import hashlib
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .jsonutil import canonical_dumps

REDUCERS = ("count_by_tag", "time_of_first", "final_value", "survival_count")

_RECORD_KEYS = {"run_id", "step", "sim_time", "tag", "agent_id", "payload"}


class AnalysisError(Exception):
    pass


class MalformedRecord(Warning):
    pass


@dataclass(frozen=True)
class MetricSpec:
    name: str
    reducer: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reducer not in REDUCERS:
            raise AnalysisError(f"unknown reducer {self.reducer!r}")
        needed = {
            "count_by_tag": {"tag"},
            "time_of_first": {"tag"},
            "final_value": {"agent_id", "key"},
            "survival_count": {"side"},
        }[self.reducer]
        missing = needed - set(self.params)
        if missing:
            raise AnalysisError(f"metric {self.name!r}: reducer {self.reducer} needs {sorted(missing)}")

    def to_json(self) -> dict:
        return {"name": self.name, "reducer": self.reducer, "params": dict(self.params)}

    @staticmethod
    def from_json(doc: dict) -> "MetricSpec":
        try:
            return MetricSpec(doc["name"], doc["reducer"], dict(doc.get("params", {})))
        except (KeyError, TypeError) as exc:
            raise AnalysisError(f"malformed metric spec: {exc!r}") from None


def metric_set_hash(specs: Iterable[MetricSpec]) -> str:
    doc = canonical_dumps([s.to_json() for s in specs])
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()[:12]


def validate_metrics(specs: Iterable[MetricSpec], manifests: Iterable) -> list[str]:
    """Cross-check referenced tags/keys against manifests; warnings, not errors."""
    tags: set[str] = {"status", "position", "param_rejected", "detection", "launch", "hit", "miss"}
    keys: set[str] = {"alive", "side", "x", "y", "z", "heading", "speed"}
    for m in manifests:
        for t in m.emitted_tags:
            tags.add(t.tag)
            keys.update(t.keys)
    notes = []
    for spec in specs:
        tag = spec.params.get("tag")
        if tag is not None and tag not in tags:
            notes.append(f"metric {spec.name!r}: tag {tag!r} not emitted by any known model")
        key = spec.params.get("key")
        if key is not None and key not in keys:
            notes.append(f"metric {spec.name!r}: payload key {key!r} not declared by any known model")
    return notes


def _well_formed(rec: Any) -> bool:
    return (
        isinstance(rec, dict)
        and _RECORD_KEYS <= set(rec)
        and isinstance(rec.get("payload"), dict)
        and isinstance(rec.get("step"), int)
        and isinstance(rec.get("tag"), str)
        and isinstance(rec.get("agent_id"), str)
    )


def compute_metric(records: Iterable[dict], spec: MetricSpec):
    """Reduce one run's ordered records to a value; None when undefined."""
    p = spec.params
    count = 0
    first_time = None
    final_value = None
    final_step = -1
    survivors_at: dict[int, int] = {}
    for rec in records:
        if not _well_formed(rec):
            warnings.warn(f"metric {spec.name!r}: malformed record, value undefined", MalformedRecord)
            return None
        if spec.reducer == "count_by_tag":
            if rec["tag"] == p["tag"]:
                count += 1
        elif spec.reducer == "time_of_first":
            if rec["tag"] == p["tag"]:
                return rec["sim_time"]
        elif spec.reducer == "final_value":
            if rec["agent_id"] == p["agent_id"] and p["key"] in rec["payload"]:
                final_value = rec["payload"][p["key"]]
        elif spec.reducer == "survival_count":
            if rec["tag"] == "status" and rec["payload"].get("side") == p["side"]:
                step = rec["step"]
                if step > final_step:
                    final_step = step
                    survivors_at[step] = 0
                if rec["payload"].get("alive") is True:
                    survivors_at[step] = survivors_at.get(step, 0) + 1
    if spec.reducer == "count_by_tag":
        return count
    if spec.reducer == "time_of_first":
        return first_time  # no match seen
    if spec.reducer == "final_value":
        return final_value
    if spec.reducer == "survival_count":
        return survivors_at.get(final_step) if final_step >= 0 else None
    return None


@dataclass
class RunMetricRow:
    index: int
    bindings: dict
    values: dict

    def to_json(self) -> dict:
        return {"index": self.index, "bindings": self.bindings, "values": self.values}


@dataclass
class MetricStats:
    mean: float | None
    std: float | None
    min: float | None
    max: float | None
    n: int
    undefined: int
    ci95: tuple[float, float] | None

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "n": self.n,
            "undefined": self.undefined,
            "ci95": list(self.ci95) if self.ci95 is not None else None,
        }


@dataclass
class BatchSummary:
    metrics: dict[str, MetricStats]
    table: list[RunMetricRow]

    def to_json(self) -> dict:
        return {
            "metrics": {name: stats.to_json() for name, stats in sorted(self.metrics.items())},
            "table": [row.to_json() for row in self.table],
        }


def aggregate(rows: list[RunMetricRow]) -> BatchSummary:
    """Sample moments per metric over the defined values; n-1 denominator."""
    names = sorted({name for row in rows for name in row.values})
    metrics: dict[str, MetricStats] = {}
    for name in names:
        defined = [row.values[name] for row in rows if row.values.get(name) is not None]
        undefined = sum(1 for row in rows if row.values.get(name) is None)
        n = len(defined)
        if n == 0:
            metrics[name] = MetricStats(None, None, None, None, 0, undefined, None)
            continue
        arr = np.asarray(defined, dtype=float)
        mean = float(arr.mean())
        std = float(arr.std(ddof=1)) if n > 1 else None
        ci = None
        if std is not None:
            half = 1.96 * std / math.sqrt(n)
            ci = (mean - half, mean + half)
        metrics[name] = MetricStats(mean, std, float(arr.min()), float(arr.max()), n, undefined, ci)
    return BatchSummary(metrics=metrics, table=list(rows))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_table_csv(summary: BatchSummary, path: str | Path) -> None:
    """Per-run table: index, binding columns (sorted), metric columns (sorted)."""
    binding_names = sorted({k for row in summary.table for k in row.bindings})
    metric_names = sorted({k for row in summary.table for k in row.values})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", *binding_names, *metric_names])
        for row in summary.table:
            writer.writerow(
                [row.index]
                + [_cell(row.bindings.get(b)) for b in binding_names]
                + [_cell(row.values.get(m)) for m in metric_names]
            )


def export_summary_csv(summary: BatchSummary, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "std", "min", "max", "n", "undefined", "ci95_lo", "ci95_hi"])
        for name in sorted(summary.metrics):
            s = summary.metrics[name]
            lo, hi = s.ci95 if s.ci95 is not None else (None, None)
            writer.writerow(
                [name, _cell(s.mean), _cell(s.std), _cell(s.min), _cell(s.max), s.n, s.undefined, _cell(lo), _cell(hi)]
            )


def analyze_runs(
    per_run: Iterable[tuple[int, dict, Iterable[dict]]], specs: list[MetricSpec]
) -> BatchSummary:
    """Compute every metric for every run and aggregate.

    ``per_run`` yields (index, bindings, record stream) triples; streams are
    consumed once per run, so record lists are materialized internally only
    when more than one metric needs them.
    """
    rows = []
    for index, bindings, records in per_run:
        records = list(records) if len(specs) > 1 else records
        values = {spec.name: compute_metric(records, spec) for spec in specs}
        rows.append(RunMetricRow(index=index, bindings=dict(bindings), values=values))
    rows.sort(key=lambda r: r.index)
    return aggregate(rows)
