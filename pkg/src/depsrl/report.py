"""Evaluation reports, multi-seed aggregation and table formatting."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

from depsrl.errors import ConfigError, DataError

# column order used when printing tables; metrics stored as fractions
DP_COLUMNS = ["UAS", "LAS", "ROOT"]
SPAN_COLUMNS = ["micro_f1", "macro_f1", "macro_precision", "macro_recall"]
MORPHEME_COLUMNS = ["micro_f1", "micro_precision", "micro_recall", "macro_f1", "macro_precision", "macro_recall"]
COLUMN_TITLES = {
    "UAS": "UAS",
    "LAS": "LAS",
    "ROOT": "ROOT",
    "micro_f1": "micro F1",
    "micro_precision": "micro Precision",
    "micro_recall": "micro Recall",
    "macro_f1": "macro F1",
    "macro_precision": "macro Precision",
    "macro_recall": "macro Recall",
    "id_f1": "identification F1",
    "cls_accuracy": "classification accuracy",
    "accuracy": "accuracy",
}


@dataclass
class EvalReport:
    task: str
    setting: Optional[str]
    metrics: Dict[str, float]
    per_label: Dict[str, Dict[str, float]] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "setting": self.setting,
            "metrics": self.metrics,
            "per_label": self.per_label,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "EvalReport":
        return cls(obj["task"], obj.get("setting"), dict(obj["metrics"]), dict(obj.get("per_label", {})), dict(obj.get("meta", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def load(cls, path) -> "EvalReport":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: not an evaluation report ({exc})") from None

    def per_label_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "gold", "predicted", "correct", "precision", "recall", "f1"])
        for label in sorted(self.per_label):
            row = self.per_label[label]
            writer.writerow(
                [label, row["gold"], row["predicted"], row["correct"]]
                + [f"{row[k]:.6f}" for k in ("precision", "recall", "f1")]
            )
        return buf.getvalue()

    def columns(self) -> List[str]:
        if self.task == "dp":
            return DP_COLUMNS
        if self.setting == "span_given":
            return SPAN_COLUMNS
        return MORPHEME_COLUMNS


def mean_std(values: Sequence[float]):
    """Mean and sample (n - 1) standard deviation; std is 0 for one value."""
    n = len(values)
    if n == 0:
        raise DataError("cannot aggregate zero reports")
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


@dataclass
class AggregateReport:
    task: str
    setting: Optional[str]
    n_runs: int
    mean: Dict[str, float]
    std: Dict[str, float]

    def to_dict(self) -> dict:
        return {"task": self.task, "setting": self.setting, "n_runs": self.n_runs, "mean": self.mean, "std": self.std}


def aggregate_reports(reports: Sequence[EvalReport]) -> AggregateReport:
    if not reports:
        raise DataError("cannot aggregate zero reports")
    first = reports[0]
    for r in reports[1:]:
        if (r.task, r.setting) != (first.task, first.setting):
            raise ConfigError(f"cannot aggregate {r.task}/{r.setting} with {first.task}/{first.setting}")
    keys = [k for k in first.metrics if isinstance(first.metrics[k], float) and all(k in r.metrics for r in reports)]
    mean, std = {}, {}
    for k in keys:
        mean[k], std[k] = mean_std([r.metrics[k] for r in reports])
    return AggregateReport(first.task, first.setting, len(reports), mean, std)


def format_score(value: float) -> str:
    return f"{100.0 * value:.2f}"


def format_mean_std(mean: float, std: float) -> str:
    """``94.84(±0.28)``: percentages with two decimals."""
    return f"{format_score(mean)}(±{format_score(std)})"


def format_delta(value: float, base: float) -> str:
    """``51.50(-8.62)``: the score and its signed difference from the base."""
    delta = round(100.0 * value, 2) - round(100.0 * base, 2)
    if abs(delta) < 0.005:
        delta = 0.0
    return f"{format_score(value)}({delta:+.2f})"


def _render(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[c]) for r in [header, *rows]) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def format_aggregate_table(named: Mapping[str, AggregateReport], columns: Optional[Sequence[str]] = None) -> str:
    """One row per model with ``mean(±std)`` cells."""
    if not named:
        raise DataError("nothing to format")
    first = next(iter(named.values()))
    if columns is None:
        columns = EvalReport(first.task, first.setting, {}).columns()
    header = ["Model"] + [COLUMN_TITLES.get(c, c) for c in columns]
    rows = [[name] + [format_mean_std(agg.mean[c], agg.std[c]) for c in columns] for name, agg in named.items()]
    return _render(header, rows)


ABLATION_MATCH_FIELDS = ("task", "setting", "eval_data")


def report_ablation(named: Mapping[str, EvalReport], columns: Optional[Sequence[str]] = None) -> str:
    """Compare runs against the first one, ablation-table style.

    The first entry is the reference row (plain scores); every other row shows
    ``score(delta)``. Runs must agree on task, setting and evaluation data.
    """
    if len(named) < 2:
        raise ConfigError("an ablation report needs at least two runs")
    items = list(named.items())
    base_name, base = items[0]
    for name, rep in items[1:]:
        mismatched = []
        for f in ABLATION_MATCH_FIELDS:
            a = getattr(base, f) if f in ("task", "setting") else base.meta.get(f)
            b = getattr(rep, f) if f in ("task", "setting") else rep.meta.get(f)
            if a != b:
                mismatched.append(f"{f} ({a!r} vs {b!r})")
        if mismatched:
            raise ConfigError(f"run {name!r} is not comparable with {base_name!r}: " + ", ".join(mismatched))
    if columns is None:
        columns = ["UAS", "LAS"] if base.task == "dp" else ["micro_f1", "macro_f1"]
    header = ["Setting"] + [COLUMN_TITLES.get(c, c) for c in columns]
    rows = [[base_name] + [format_score(base.metrics[c]) for c in columns]]
    for name, rep in items[1:]:
        rows.append([name] + [format_delta(rep.metrics[c], base.metrics[c]) for c in columns])
    return _render(header, rows)
