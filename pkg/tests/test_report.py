import math
import statistics
from pathlib import Path

import pytest

from depsrl.corpus import PredicateFrame
from depsrl.errors import ConfigError, DataError
from depsrl.report import (
    EvalReport,
    aggregate_reports,
    format_aggregate_table,
    format_delta,
    format_mean_std,
    mean_std,
    report_ablation,
)
from depsrl.srl import evaluate_srl
from oracles import frame_sentence

GOLDEN = Path(__file__).parent / "golden"


def span_runs(rows):
    keys = ("micro_f1", "macro_f1", "macro_precision", "macro_recall")
    return [EvalReport("srl", "span_given", dict(zip(keys, r))) for r in rows]


def span_table():
    named = {
        "Baseline": aggregate_reports(span_runs([(0.75, 0.5, 0.52, 0.49), (0.7525, 0.505, 0.53, 0.5), (0.7605, 0.515, 0.51, 0.52)])),
        "Multitask": aggregate_reports(span_runs([(0.76, 0.52, 0.55, 0.5), (0.77, 0.53, 0.56, 0.51), (0.78, 0.54, 0.57, 0.52)])),
    }
    return format_aggregate_table(named)


def ablation_runs():
    meta = {"eval_data": "abc"}
    return {
        "Full model": EvalReport("srl", "morpheme", {"micro_f1": 0.6012, "macro_f1": 0.4511}, meta=meta),
        "- DP predicate": EvalReport("srl", "morpheme", {"micro_f1": 0.5150, "macro_f1": 0.4611}, meta=meta),
        "- BPE": EvalReport("srl", "morpheme", {"micro_f1": 0.6012, "macro_f1": 0.4400}, meta=meta),
    }


class TestMeanStd:
    def test_sample_std(self):
        values = [0.1, 0.4, 0.35, 0.2]
        mean, std = mean_std(values)
        assert mean == pytest.approx(statistics.mean(values))
        assert std == pytest.approx(statistics.stdev(values))

    def test_single_and_empty(self):
        assert mean_std([0.3]) == (0.3, 0.0)
        with pytest.raises(DataError):
            mean_std([])

    def test_formatting(self):
        assert format_mean_std(0.9484, 0.0028) == "94.84(±0.28)"
        assert format_delta(0.5150, 0.6012) == "51.50(-8.62)"
        assert format_delta(0.7, 0.7) == "70.00(+0.00)"


class TestGolden:
    def test_aggregate_table(self):
        assert span_table() == (GOLDEN / "span_given_table.txt").read_text(encoding="utf-8")

    def test_ablation_table(self):
        assert report_ablation(ablation_runs()) == (GOLDEN / "ablation_table.txt").read_text(encoding="utf-8")

    def test_per_label_csv(self):
        gold = [frame_sentence("s", 4, [PredicateFrame((3, 4), [("A", (0, 1)), ("A", (1, 2))])])]
        pred = [frame_sentence("s", 4, [PredicateFrame((3, 4), [("A", (0, 1)), ("B", (1, 2))])])]
        assert evaluate_srl(pred, gold).per_label_csv() == (GOLDEN / "per_label.csv").read_text(encoding="utf-8")


class TestChecks:
    def test_aggregate_mismatch(self):
        with pytest.raises(ConfigError):
            aggregate_reports([EvalReport("srl", "morpheme", {}), EvalReport("srl", "span_given", {})])

    def test_ablation_needs_comparable_runs(self):
        runs = ablation_runs()
        runs["- BPE"].meta = {"eval_data": "other"}
        with pytest.raises(ConfigError, match="eval_data"):
            report_ablation(runs)
        with pytest.raises(ConfigError):
            report_ablation({"one": runs["Full model"]})

    def test_json_round_trip(self, tmp_path):
        rep = ablation_runs()["Full model"]
        (tmp_path / "r.json").write_text(rep.to_json())
        assert EvalReport.load(tmp_path / "r.json") == rep

    def test_load_rejects_other_json(self, tmp_path):
        (tmp_path / "r.json").write_text("{}")
        with pytest.raises(DataError):
            EvalReport.load(tmp_path / "r.json")

    def test_default_columns(self):
        assert EvalReport("dp", "root_known", {}).columns() == ["UAS", "LAS", "ROOT"]
        assert math.isclose(aggregate_reports([EvalReport("dp", None, {"UAS": 0.5, "tokens": 3})]).mean["UAS"], 0.5)
