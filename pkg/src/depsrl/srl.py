"""Semantic role labeling head, BIO span codec and span-level metrics."""

from __future__ import annotations

from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from depsrl.corpus import PredicateFrame, Sentence
from depsrl.encoder import init_lstm, run_bilstm
from depsrl.errors import ConfigError, DataError, ShapeError
from depsrl.numerics import (
    Tensor,
    add,
    concat,
    dropout,
    index,
    log_softmax,
    matmul,
    mean_over_sets,
    scale,
    reduce_sum as tsum,
    tanh,
)
from depsrl.report import EvalReport
from depsrl.tokenize import AssembledInput

LabeledSpan = Tuple[str, Tuple[int, int]]


def make_tagset(roles: Sequence[str], setting: str) -> List[str]:
    if setting == "span_given":
        return list(roles)
    tags = ["O"]
    for r in roles:
        tags += [f"B-{r}", f"I-{r}"]
    return tags


# ---------------------------------------------------------------- BIO codec


def spans_to_tags(spans: Iterable[LabeledSpan], n_units: int) -> List[str]:
    tags = ["O"] * n_units
    for label, (a, b) in spans:
        for k in range(a, b):
            if tags[k] != "O":
                raise DataError(f"overlapping spans at unit {k}")
            tags[k] = ("B-" if k == a else "I-") + label
    return tags


def bio_decode(tags: Sequence[str]) -> List[LabeledSpan]:
    """Collect maximal ``B-l I-l*`` runs into spans.

    An ``I-l`` that does not continue a run of label ``l`` opens a new span as
    if it were ``B-l``; ``O`` and anything that is not a B-/I- tag closes the
    current run.
    """
    spans: List[LabeledSpan] = []
    label, start = None, 0
    for k, tag in enumerate(tags):
        prefix, _, lab = tag.partition("-")
        if prefix not in ("B", "I") or not lab:
            if label is not None:
                spans.append((label, (start, k)))
            label = None
            continue
        if prefix == "B" or label != lab:
            if label is not None:
                spans.append((label, (start, k)))
            label, start = lab, k
    if label is not None:
        spans.append((label, (start, len(tags))))
    return spans


# ---------------------------------------------------------------- head


class SrlHead:
    """BiLSTM over encoder output plus predicate indicator, unit averaging,
    then an MLP on ``[unit ; predicate]``."""

    def __init__(
        self,
        hidden_size: int,
        tagset: Sequence[str],
        mlp_hidden: Optional[int] = None,
        use_bilstm: bool = True,
        dropout: float = 0.0,
        rng=None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        if not tagset:
            raise ConfigError("SRL head needs a non-empty tagset (no roles found?)")
        self.tagset = list(tagset)
        self.tag_index = {t: k for k, t in enumerate(self.tagset)}
        self.use_bilstm = use_bilstm
        self.dropout = dropout
        self.params: Dict[str, Tensor] = {}
        n_in = hidden_size + 1
        if use_bilstm:
            init_lstm(self.params, "srl.lstm", n_in, hidden_size // 2, rng)
            width = hidden_size
        else:
            width = n_in
        mh = mlp_hidden or hidden_size
        s1, s2 = 1.0 / np.sqrt(2 * width), 1.0 / np.sqrt(mh)
        self.params["srl.mlp.w1"] = Tensor(rng.uniform(-s1, s1, (2 * width, mh)), requires_grad=True)
        self.params["srl.mlp.b1"] = Tensor(np.zeros(mh), requires_grad=True)
        self.params["srl.mlp.w2"] = Tensor(rng.uniform(-s2, s2, (mh, len(self.tagset))), requires_grad=True)
        self.params["srl.mlp.b2"] = Tensor(np.zeros(len(self.tagset)), requires_grad=True)

    def logits(self, x: Tensor, flags: np.ndarray, mask: np.ndarray, unit_sets, pred_sets, train=False, rng=None) -> Tensor:
        """Tag scores (B, U, K) for a padded batch.

        ``unit_sets`` / ``pred_sets`` are per-row lists of position sets of
        equal length U; ``pred_sets`` repeats the predicate's positions so the
        predicate vector lines up with every unit.
        """
        if x.shape[:2] != flags.shape:
            raise ShapeError(f"srl head: hidden {x.shape} vs indicator {flags.shape}")
        p = self.params
        g = concat([x, Tensor(flags[..., None])], axis=-1)
        if self.use_bilstm:
            g = run_bilstm(g, mask, p, "srl.lstm")
        g = dropout(g, self.dropout, rng, train)
        units = mean_over_sets(g, unit_sets)
        pred = mean_over_sets(g, pred_sets)
        z = concat([units, pred], axis=-1)
        hid = tanh(add(matmul(z, p["srl.mlp.w1"]), p["srl.mlp.b1"]))
        return add(matmul(hid, p["srl.mlp.w2"]), p["srl.mlp.b2"])


def srl_unit_sets(inputs: Sequence[AssembledInput], setting: str):
    """Padded unit and predicate sets plus the number of classified units per input."""
    if setting == "span_given":
        counts = [len(inp.unit_map) - 1 for inp in inputs]
    else:
        counts = [len(inp.unit_map) for inp in inputs]
    width = max(1, max(counts))
    unit_sets, pred_sets = [], []
    for inp, n in zip(inputs, counts):
        if not inp.predicate_positions:
            raise DataError("SRL input has no predicate unit")
        rows = [list(u) for u in inp.unit_map[:n]] + [[0]] * (width - n)
        unit_sets.append(rows)
        pred_sets.append([list(inp.predicate_positions)] * width)
    return unit_sets, pred_sets, counts


def gold_tag_ids(sentence: Sentence, frame: PredicateFrame, setting: str, tag_index: Dict[str, int]) -> List[int]:
    if setting == "span_given":
        labels = [lab for lab, _ in frame.arguments]
    else:
        labels = spans_to_tags(frame.arguments, sentence.n_luw)
    try:
        return [tag_index[t] for t in labels]
    except KeyError as exc:
        raise DataError(f"sentence {sentence.id}: tag {exc.args[0]!r} not in tagset") from None


def srl_loss(logits: Tensor, counts: Sequence[int], targets: Sequence[Sequence[int]]) -> Tensor:
    """Sum of unit negative log-likelihoods divided by the number of instances."""
    logp = log_softmax(logits)
    b_idx = np.concatenate([np.full(n, b) for b, n in enumerate(counts)]).astype(np.int64)
    u_idx = np.concatenate([np.arange(n) for n in counts]).astype(np.int64)
    t_idx = np.concatenate([np.asarray(t, dtype=np.int64) for t in targets])
    if len(t_idx) != len(b_idx):
        raise DataError("gold tag count does not match the number of units")
    if len(t_idx) == 0:
        return scale(tsum(index(logp, (slice(0, 0),))), 0.0)
    return scale(tsum(index(logp, (b_idx, u_idx, t_idx))), -1.0 / len(counts))


def probabilities(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decode_frame(tag_ids: Sequence[int], tagset: Sequence[str], frame: PredicateFrame, setting: str) -> PredicateFrame:
    if setting == "span_given":
        args = [(tagset[t], span) for t, (_, span) in zip(tag_ids, frame.arguments)]
    else:
        args = bio_decode([tagset[t] for t in tag_ids])
    return PredicateFrame(frame.predicate, args)


# ---------------------------------------------------------------- metrics


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _macro(counts, fraction) -> float:
    """Unweighted mean of per-label ratios, summed exactly and rounded once."""
    counts = list(counts)
    if not counts:
        return 0.0
    total = Fraction(0)
    for c in counts:
        num, den = fraction(c)
        if den:
            total += Fraction(num, den)
    return float(total / len(counts))


def _frame_table(sentences: Sequence[Sentence]) -> Dict[tuple, set]:
    table: Dict[tuple, set] = {}
    for s in sentences:
        for f in s.frames:
            key = (s.id, tuple(f.predicate))
            if key in table:
                raise DataError(f"duplicate frame {key}")
            table[key] = {(a, b, lab) for lab, (a, b) in f.arguments}
    return table


def evaluate_srl(predicted: Sequence[Sentence], gold: Sequence[Sentence], setting: str = "morpheme") -> EvalReport:
    """Span-level precision/recall/F1 plus identification and classification scores.

    A predicted span counts as correct when its boundaries and label match a
    gold span of the same (sentence, predicate) frame. Macro averages run over
    every label seen in gold or predictions. Identification ignores labels;
    classification accuracy is measured over correctly identified spans.
    """
    pred_t, gold_t = _frame_table(predicted), _frame_table(gold)
    if set(pred_t) != set(gold_t):
        missing = sorted(set(gold_t) - set(pred_t))[:3]
        extra = sorted(set(pred_t) - set(gold_t))[:3]
        raise DataError(f"predicted and gold frames are not aligned (missing {missing}, unexpected {extra})")
    tp = n_pred = n_gold = id_tp = 0
    per: Dict[str, Dict[str, int]] = {}
    for key, gspans in gold_t.items():
        pspans = pred_t[key]
        n_pred += len(pspans)
        n_gold += len(gspans)
        hits = pspans & gspans
        tp += len(hits)
        id_tp += len({(a, b) for a, b, _ in pspans} & {(a, b) for a, b, _ in gspans})
        for _, _, lab in gspans:
            per.setdefault(lab, {"gold": 0, "predicted": 0, "correct": 0})["gold"] += 1
        for _, _, lab in pspans:
            per.setdefault(lab, {"gold": 0, "predicted": 0, "correct": 0})["predicted"] += 1
        for _, _, lab in hits:
            per[lab]["correct"] += 1
    per_label = {}
    for lab, c in per.items():
        per_label[lab] = {
            **c,
            "precision": _ratio(c["correct"], c["predicted"]),
            "recall": _ratio(c["correct"], c["gold"]),
            "f1": _ratio(2 * c["correct"], c["predicted"] + c["gold"]),
        }
    metrics = {
        "micro_precision": _ratio(tp, n_pred),
        "micro_recall": _ratio(tp, n_gold),
        "micro_f1": _ratio(2 * tp, n_pred + n_gold),
        "macro_precision": _macro(per.values(), lambda c: (c["correct"], c["predicted"])),
        "macro_recall": _macro(per.values(), lambda c: (c["correct"], c["gold"])),
        "macro_f1": _macro(per.values(), lambda c: (2 * c["correct"], c["predicted"] + c["gold"])),
        "id_precision": _ratio(id_tp, n_pred),
        "id_recall": _ratio(id_tp, n_gold),
        "id_f1": _ratio(2 * id_tp, n_pred + n_gold),
        "cls_accuracy": _ratio(tp, id_tp),
    }
    if setting == "span_given":
        metrics["accuracy"] = _ratio(tp, n_gold)
    counts = {"gold_spans": n_gold, "predicted_spans": n_pred, "correct_spans": tp, "frames": len(gold_t)}
    return EvalReport("srl", setting, metrics, per_label, {"counts": counts})
