"""Acceptance suite: one test per criterion, at the stated tolerances."""

import itertools
import math
import time
import zlib
from pathlib import Path

import numpy as np
import pytest

from depsrl.corpus import SPLITS, PredicateFrame, Sentence, SplitSpec, SyntheticConfig, generate_synthetic, read_corpus, split_leak_safe, write_splits
from depsrl.dp import evaluate_dp
from depsrl.hpo import PruningConfig, SearchSpace, hpo_config, hpo_search
from depsrl.model import ModelConfig, MultitaskModel, stream
from depsrl.numerics import mul, reduce_sum
from depsrl.report import EvalReport, aggregate_reports, format_aggregate_table, report_ablation
from depsrl.srl import bio_decode, evaluate_srl, spans_to_tags
from depsrl.tokenize import learn_subwords
from depsrl.trainer import TaskSampler, TrainConfig, collect_labels, collect_roles, evaluate_checkpoint, train_multitask, train_single
from oracles import dp_counts, frame_sentence, gradcheck, random_spans, srl_counts, uniform_dp_loss
from test_numerics import OPS

GOLDEN = Path(__file__).parent / "golden"


def short_sentences(n, max_len=5, seed=0):
    pool = generate_synthetic(SyntheticConfig(n_sentences=200, vocab_size=60, n_roles=3, max_phrases=1), seed=seed)
    out = [s for s in pool if len(s) <= max_len and s.frames[0].arguments]
    return out[:n]


# ---------------------------------------------------------------- 1


def test_c1_gradient_correctness():
    start = time.perf_counter()
    worst = {}
    for name, make in sorted(OPS.items()):
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        fn, inputs = make(rng)
        w = rng.normal(size=fn(*inputs).shape)
        errs = gradcheck(lambda: reduce_sum(mul(fn(*inputs), w)), {f"x{k}": t for k, t in enumerate(inputs)}, eps=1e-5)
        worst[f"op:{name}"] = max(errs.values())

    sents = short_sentences(3)
    assert all(len(s) <= 5 for s in sents) and len(sents) == 3
    subwords = learn_subwords(sents, 20)
    dropouts = {"encoder": 0.1, "dp": 0.1, "lstm": 0.1}
    graphs = [
        ("dp_root_unknown", ModelConfig(embed_size=6, hidden_size=8, n_layers=2, dp_mode="root_unknown"), "dp"),
        ("dp_root_known", ModelConfig(embed_size=6, hidden_size=16, n_layers=1, dp_mode="root_known"), "dp"),
        ("srl_morpheme", ModelConfig(embed_size=6, hidden_size=8, n_layers=2), "srl"),
        ("srl_span_given", ModelConfig(embed_size=6, hidden_size=16, n_layers=1, srl_setting="span_given"), "srl"),
    ]
    for name, cfg, task in graphs:
        model = MultitaskModel(cfg, subwords, collect_labels(sents), collect_roles(sents), dropouts, seed=3)
        if task == "dp":
            batch = model.dp_examples(sents)
            # dropout masks are re-drawn identically on every evaluation
            loss = lambda: model.dp_loss(batch, True, np.random.default_rng(9))
        else:
            batch = model.srl_examples(sents)
            loss = lambda: model.srl_loss(batch, True, np.random.default_rng(9))
        errs = gradcheck(loss, model.parameters(task), eps=1e-5, max_entries=12)
        worst.update({f"{name}:{k}": v for k, v in errs.items()})
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    assert not bad, bad
    assert elapsed < 30.0


# ---------------------------------------------------------------- 2


def test_c2_loss_closed_forms():
    sents = short_sentences(6, max_len=9, seed=1)
    subwords = learn_subwords(sents, 30)
    labels, roles = collect_labels(sents), collect_roles(sents)
    for dp_mode, setting in [("root_unknown", "morpheme"), ("root_known", "span_given")]:
        model = MultitaskModel(ModelConfig(embed_size=8, hidden_size=8, n_layers=1, dp_mode=dp_mode, srl_setting=setting), subwords, labels, roles)
        model.dp.params["dp.v"].data[:] = 0.0
        model.dp.params["dp.u"].data[:] = 0.0
        model.srl.params["srl.mlp.w2"].data[:] = 0.0
        model.srl.params["srl.mlp.b2"].data[:] = 0.0
        k = len(model.srl.tagset)
        for s in sents:
            [ex] = model.dp_examples([s])
            got = float(model.dp_loss([ex], train=False).data)
            assert abs(got - uniform_dp_loss(len(s), len(labels))) < 1e-9
            for sex in model.srl_examples([s]):
                m = len(sex.targets)
                assert m == (s.n_luw if setting == "morpheme" else len(sex.frame.arguments))
                got = float(model.srl_loss([sex], train=False).data)
                assert abs(got - m * math.log(k)) < 1e-9


# ---------------------------------------------------------------- 3


def _random_tree(rng, n):
    order = list(rng.permutation(n))
    heads = [0] * n
    for pos, tok in enumerate(order[1:], 1):
        heads[tok] = int(order[int(rng.integers(pos))]) + 1
    return heads


def test_c3_metric_oracles():
    rng = np.random.default_rng(2024)
    dp_labels = ["nsubj", "obj", "case", "root"]
    roles = ["Agent", "Goal", "Time", "Cause"]
    for case in range(1000):
        golds, preds, sgold, spred = [], [], [], []
        for k in range(int(rng.integers(1, 4))):
            n = int(rng.integers(1, 7))
            gh = _random_tree(rng, n)
            ph = gh if rng.random() < 0.2 else [int(rng.integers(0, n + 1)) for _ in range(n)]
            gl = [dp_labels[int(i)] for i in rng.integers(0, 4, n)]
            pl = gl if rng.random() < 0.3 else [dp_labels[int(i)] for i in rng.integers(0, 4, n)]
            units = [(i, i + 1) for i in range(n)]
            golds.append(Sentence(f"s{k}", ["w"] * n, units, gh, gl))
            preds.append(Sentence(f"s{k}", ["w"] * n, units, ph, pl))

            m = int(rng.integers(2, 8))
            gframes, pframes = [], []
            for f in range(int(rng.integers(1, 3))):
                pred_unit = m - 1 - f
                gspans = random_spans(rng, m, roles, exclude={pred_unit})
                pspans = gspans if rng.random() < 0.15 else random_spans(rng, m, roles, exclude={pred_unit})
                gframes.append(PredicateFrame((pred_unit, pred_unit + 1), gspans))
                pframes.append(PredicateFrame((pred_unit, pred_unit + 1), pspans))
            sgold.append(frame_sentence(f"s{k}", m, gframes))
            spred.append(frame_sentence(f"s{k}", m, pframes))
        got_dp, want_dp = evaluate_dp(preds, golds), dp_counts(preds, golds)
        for key, value in want_dp.items():
            assert got_dp[key] == value, (case, key)
        got_srl, want_srl = evaluate_srl(spred, sgold).metrics, srl_counts(spred, sgold)
        for key, value in want_srl.items():
            assert got_srl[key] == value, (case, key)


# ---------------------------------------------------------------- 4


def _well_formed(spans, n):
    last = 0
    for _, (a, b) in sorted(spans, key=lambda s: s[1]):
        if not (last <= a < b <= n):
            return False
        last = b
    return True


def test_c4_bio_round_trip_and_repair():
    rng = np.random.default_rng(4)
    roles = ["A", "B", "C"]
    for _ in range(1000):
        n = int(rng.integers(0, 12))
        spans = random_spans(rng, n, roles)
        assert bio_decode(spans_to_tags(spans, n)) == spans

    alphabet = ["O", "B-A", "I-A", "B-B", "I-B", "X", "I-"]
    for n in range(0, 6):
        for tags in itertools.product(alphabet, repeat=n):
            spans = bio_decode(list(tags))
            assert _well_formed(spans, n)
            # the repaired spans encode to a clean sequence that decodes to themselves
            assert bio_decode(spans_to_tags(spans, n)) == spans
            for label, (a, b) in spans:
                assert tags[a].endswith("-" + label)


# ---------------------------------------------------------------- 5


@pytest.fixture(scope="module")
def overfit_corpus():
    return generate_synthetic(SyntheticConfig(n_sentences=50, vocab_size=200, n_roles=5), seed=0)


@pytest.mark.parametrize("task,threshold", [("dp", 0.99), ("srl", 0.95)])
def test_c5_overfit(overfit_corpus, task, threshold):
    config = TrainConfig(epochs=200)
    model_config = ModelConfig(srl_setting="morpheme")
    start = time.process_time()
    result = train_single(task, config, overfit_corpus, model_config=model_config, callback=lambda e, v: v >= threshold)
    elapsed = time.process_time() - start
    assert result.best_value >= threshold, result.history[-1]
    assert result.best_epoch <= 200
    assert elapsed < 300.0


# ---------------------------------------------------------------- 6


def test_c6_multitask_sampling():
    for seed in range(3):
        sampler = TaskSampler(0.720, stream(seed, 10))
        draws = [sampler.draw() for _ in range(10_000)]
        assert 0.70 <= draws.count("srl") / 10_000 <= 0.74

    data = generate_synthetic(SyntheticConfig(n_sentences=16, vocab_size=80, n_roles=3), seed=6)
    subwords = learn_subwords(data, 60)
    model_config = ModelConfig(embed_size=8, hidden_size=12, n_layers=1)
    config = TrainConfig(epochs=3, batch_size=4, srl_ratio=1.0, seed=7)
    multi = train_multitask(config, data, data, model_config=model_config, subwords=subwords)
    single = train_single("srl", config, data, model_config=model_config, subwords=subwords)
    assert multi.history == single.history
    assert all(h["dp_steps"] == 0 for h in multi.history)


# ---------------------------------------------------------------- 7


def test_c7_span_given_micro_f1_equals_accuracy():
    rng = np.random.default_rng(7)
    roles = ["Agent", "Goal", "Time"]
    for _ in range(300):
        golds, preds = [], []
        for k in range(int(rng.integers(1, 5))):
            m = int(rng.integers(2, 8))
            spans = random_spans(rng, m - 1, roles)
            relabeled = [(roles[int(rng.integers(3))] if rng.random() < 0.5 else lab, span) for lab, span in spans]
            golds.append(frame_sentence(f"s{k}", m, [PredicateFrame((m - 1, m), spans)]))
            preds.append(frame_sentence(f"s{k}", m, [PredicateFrame((m - 1, m), relabeled)]))
        metrics = evaluate_srl(preds, golds, "span_given").metrics
        assert abs(metrics["micro_f1"] - metrics["accuracy"]) <= np.finfo(float).eps

    data = generate_synthetic(SyntheticConfig(n_sentences=20, vocab_size=80, n_roles=4), seed=8)
    model = train_single(
        "srl", TrainConfig(epochs=2, batch_size=4), data[:14], model_config=ModelConfig(embed_size=8, hidden_size=12, n_layers=1, srl_setting="span_given")
    ).model
    metrics = evaluate_checkpoint(model, data[14:], "srl", "span_given").metrics
    assert abs(metrics["micro_f1"] - metrics["accuracy"]) <= np.finfo(float).eps


# ---------------------------------------------------------------- 8


def _corpus(ids):
    return [Sentence(i, ["w"], [(0, 1)], [0], ["root"]) for i in ids]


def test_c8_leak_safe_split(tmp_path):
    rng = np.random.default_rng(8)
    for trial in range(40):
        n_dp, n_srl = int(rng.integers(20, 120)), int(rng.integers(20, 120))
        n_shared = round(0.3 * min(n_dp, n_srl))
        shared = [f"x{k}" for k in range(n_shared)]
        dp_ids = shared + [f"d{k}" for k in range(n_dp - n_shared)]
        srl_ids = shared + [f"r{k}" for k in range(n_srl - n_shared)]
        rng.shuffle(dp_ids)
        rng.shuffle(srl_ids)
        ratios = tuple(rng.dirichlet([4, 1, 1]))
        forced = {}
        if trial % 2:
            forced = {f"r{k}": str(rng.choice(SPLITS)) for k in range(3)}
        dp, srl = split_leak_safe(_corpus(dp_ids), _corpus(srl_ids), SplitSpec(ratios, forced), seed=trial)
        if trial == 0:
            write_splits(dp, tmp_path / "dp.conllu", "conllu")
            write_splits(srl, tmp_path / "srl.jsonl", "jsonl")
            dp = {k: read_corpus(tmp_path / f"dp.conllu.{k}") for k in SPLITS}
            srl = {k: read_corpus(tmp_path / f"srl.jsonl.{k}") for k in SPLITS}
        where = {}
        for side, splits in (("dp", dp), ("srl", srl)):
            seen = [s.id for k in SPLITS for s in splits[k]]
            assert sorted(seen) == sorted(dp_ids if side == "dp" else srl_ids)
            for k in SPLITS:
                for s in splits[k]:
                    where.setdefault(s.id, set()).add(k)
        crossing = {i: ks for i, ks in where.items() if len(ks) > 1}
        assert crossing == {}
        for sid, split in forced.items():
            assert where[sid] == {split}


# ---------------------------------------------------------------- 9


def test_c9_hpo_determinism_and_pruning(tmp_path):
    data = generate_synthetic(SyntheticConfig(n_sentences=40), seed=5)
    train, dev = data[:32], data[32:]
    subwords = learn_subwords(train, 100)
    model_config = ModelConfig(embed_size=16, hidden_size=32, n_layers=1)
    base = hpo_config(TrainConfig(batch_size=8), "dp", epochs=5)

    def train_fn(config, callback):
        return train_single("dp", config, train, dev, model_config, subwords, callback=callback)

    logs, results = [], []
    for run in range(2):
        result = hpo_search(SearchSpace.default("dp"), 5, train_fn, base, PruningConfig(n_startup=1, force_complete=True), seed=0)
        result.write_log(tmp_path / f"trials{run}.jsonl")
        logs.append((tmp_path / f"trials{run}.jsonl").read_bytes())
        results.append(result)
    assert logs[0] == logs[1]
    result = results[0]
    pruned = [t for t in result.trials if t.pruned]
    assert pruned, "search never pruned, so the audit would be vacuous"
    for t in pruned:
        assert t.completed_value is not None
        assert t.completed_value <= result.best.value


# ---------------------------------------------------------------- 10


def test_c10_report_format_golden():
    keys = ("micro_f1", "macro_f1", "macro_precision", "macro_recall")

    def runs(rows):
        return aggregate_reports([EvalReport("srl", "span_given", dict(zip(keys, r))) for r in rows])

    table = format_aggregate_table(
        {
            "Baseline": runs([(0.75, 0.5, 0.52, 0.49), (0.7525, 0.505, 0.53, 0.5), (0.7605, 0.515, 0.51, 0.52)]),
            "Multitask": runs([(0.76, 0.52, 0.55, 0.5), (0.77, 0.53, 0.56, 0.51), (0.78, 0.54, 0.57, 0.52)]),
        }
    )
    assert table == (GOLDEN / "span_given_table.txt").read_text(encoding="utf-8")

    meta = {"eval_data": "abc"}
    ablation = report_ablation(
        {
            "Full model": EvalReport("srl", "morpheme", {"micro_f1": 0.6012, "macro_f1": 0.4511}, meta=meta),
            "- DP predicate": EvalReport("srl", "morpheme", {"micro_f1": 0.5150, "macro_f1": 0.4611}, meta=meta),
            "- BPE": EvalReport("srl", "morpheme", {"micro_f1": 0.6012, "macro_f1": 0.4400}, meta=meta),
        }
    )
    assert ablation == (GOLDEN / "ablation_table.txt").read_text(encoding="utf-8")
