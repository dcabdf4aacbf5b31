import math

import numpy as np
import pytest

from depsrl.corpus import PredicateFrame
from depsrl.errors import ConfigError, DataError, ShapeError
from depsrl.numerics import Tensor
from depsrl.srl import (
    SrlHead,
    bio_decode,
    decode_frame,
    evaluate_srl,
    make_tagset,
    probabilities,
    spans_to_tags,
    srl_loss,
)
from oracles import frame_sentence, gradcheck, random_spans, srl_counts

ROLES = ["Agent", "Goal", "Time"]


class TestBio:
    def test_encode(self):
        assert spans_to_tags([("A", (0, 2)), ("B", (3, 4))], 5) == ["B-A", "I-A", "O", "B-B", "O"]

    def test_encode_overlap(self):
        with pytest.raises(DataError):
            spans_to_tags([("A", (0, 2)), ("B", (1, 3))], 4)

    def test_decode_basic(self):
        assert bio_decode(["B-A", "I-A", "O", "B-B"]) == [("A", (0, 2)), ("B", (3, 4))]

    def test_adjacent_same_label(self):
        assert bio_decode(["B-A", "B-A", "I-A"]) == [("A", (0, 1)), ("A", (1, 3))]

    def test_orphan_inside_opens_span(self):
        assert bio_decode(["O", "I-A", "I-A"]) == [("A", (1, 3))]

    def test_label_switch_inside(self):
        assert bio_decode(["I-X", "I-Y"]) == [("X", (0, 1)), ("Y", (1, 2))]

    def test_junk_tags_close_runs(self):
        assert bio_decode(["B-A", "junk", "I-", "B-B"]) == [("A", (0, 1)), ("B", (3, 4))]

    def test_empty(self):
        assert bio_decode([]) == []

    def test_tagset(self):
        assert make_tagset(["A"], "morpheme") == ["O", "B-A", "I-A"]
        assert make_tagset(["A", "B"], "span_given") == ["A", "B"]


class TestLoss:
    @pytest.mark.parametrize("m,k", [(1, 2), (4, 7), (9, 11)])
    def test_uniform_logits(self, m, k):
        loss = srl_loss(Tensor(np.full((1, m, k), 0.3)), [m], [[0] * m]).data
        assert abs(loss - m * math.log(k)) < 1e-9

    def test_divides_by_instances(self):
        logits = Tensor(np.zeros((2, 3, 5)))
        loss = srl_loss(logits, [3, 1], [[0, 1, 2], [4]]).data
        assert loss == pytest.approx(4 * math.log(5) / 2)

    def test_mismatched_targets(self):
        with pytest.raises(DataError):
            srl_loss(Tensor(np.zeros((1, 3, 2))), [3], [[0]])

    def test_probabilities(self):
        p = probabilities(np.array([[1000.0, 1000.0, -1000.0]]))
        np.testing.assert_allclose(p, [[0.5, 0.5, 0.0]])


class TestHead:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.x = Tensor(rng.normal(size=(2, 6, 4)), requires_grad=True)
        self.flags = np.array([[0, 1, 1, 0, 1, 0], [0, 0, 1, 0, 0, 0]], dtype=float)
        self.mask = np.array([[1] * 6, [1] * 4 + [0, 0]], dtype=float)
        self.units = [[[1], [2, 3], [4]], [[1], [2], [0]]]
        self.preds = [[[2, 3]] * 3, [[2]] * 3]

    @pytest.mark.parametrize("bilstm", [True, False])
    def test_logits_shape_and_grad(self, bilstm):
        head = SrlHead(4, make_tagset(ROLES, "morpheme"), mlp_hidden=5, use_bilstm=bilstm, rng=np.random.default_rng(1))
        out = head.logits(self.x, self.flags, self.mask, self.units, self.preds)
        assert out.shape == (2, 3, 7)
        fn = lambda: srl_loss(head.logits(self.x, self.flags, self.mask, self.units, self.preds), [3, 2], [[1, 2, 0], [3, 4]])
        errors = gradcheck(fn, dict(head.params, x=self.x))
        assert max(errors.values()) < 1e-4

    def test_empty_tagset(self):
        with pytest.raises(ConfigError):
            SrlHead(4, make_tagset([], "span_given"))

    def test_indicator_shape(self):
        head = SrlHead(4, ROLES)
        with pytest.raises(ShapeError):
            head.logits(self.x, self.flags[:, :3], self.mask, self.units, self.preds)

    def test_padding_does_not_leak(self):
        head = SrlHead(4, ROLES, rng=np.random.default_rng(2))
        out = head.logits(self.x, self.flags, self.mask, self.units, self.preds).data
        x2 = self.x.data.copy()
        x2[1, 4:] = 99.0
        out2 = head.logits(Tensor(x2), self.flags, self.mask, self.units, self.preds).data
        np.testing.assert_allclose(out[1, :2], out2[1, :2], atol=1e-12)


def test_decode_frame_span_given():
    frame = PredicateFrame((3, 4), [("Agent", (0, 1)), ("Goal", (1, 3))])
    out = decode_frame([1, 1], ["Agent", "Goal"], frame, "span_given")
    assert out.arguments == [("Goal", (0, 1)), ("Goal", (1, 3))]
    assert out.predicate == (3, 4)


class TestMetrics:
    def pair(self, gold_args, pred_args, n=6):
        gold = frame_sentence("s", n, [PredicateFrame((n - 1, n), gold_args)])
        pred = frame_sentence("s", n, [PredicateFrame((n - 1, n), pred_args)])
        return [pred], [gold]

    def test_hand_example(self):
        pred, gold = self.pair([("A", (0, 2)), ("B", (2, 3))], [("A", (0, 2)), ("A", (2, 3)), ("C", (3, 4))])
        m = evaluate_srl(pred, gold).metrics
        assert m["micro_precision"] == pytest.approx(1 / 3)
        assert m["micro_recall"] == pytest.approx(1 / 2)
        assert m["micro_f1"] == pytest.approx(0.4)
        assert m["id_f1"] == pytest.approx(2 * 2 / 5)
        assert m["cls_accuracy"] == pytest.approx(0.5)
        # labels A, B, C: P = (1/2, 0, 0), R = (1, 0, 0)
        assert m["macro_precision"] == pytest.approx(1 / 6)
        assert m["macro_recall"] == pytest.approx(1 / 3)
        assert m["macro_f1"] == pytest.approx((2 / 3) / 3)

    def test_empty_is_zero(self):
        pred, gold = self.pair([], [])
        m = evaluate_srl(pred, gold).metrics
        assert m["micro_f1"] == 0.0 and m["macro_f1"] == 0.0

    def test_perfect(self):
        pred, gold = self.pair([("A", (0, 2))], [("A", (0, 2))])
        rep = evaluate_srl(pred, gold)
        assert rep.metrics["micro_f1"] == 1.0
        assert rep.per_label["A"]["f1"] == 1.0

    def test_span_given_accuracy(self):
        pred, gold = self.pair([("A", (0, 1)), ("B", (1, 2))], [("A", (0, 1)), ("A", (1, 2))])
        m = evaluate_srl(pred, gold, "span_given").metrics
        assert m["accuracy"] == 0.5 == m["micro_f1"]

    def test_misaligned_frames(self):
        gold = [frame_sentence("s", 3, [PredicateFrame((2, 3))])]
        pred = [frame_sentence("s", 3, [PredicateFrame((1, 2))])]
        with pytest.raises(DataError, match="not aligned"):
            evaluate_srl(pred, gold)

    def test_random_against_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            golds, preds = [], []
            for k in range(int(rng.integers(1, 4))):
                n = int(rng.integers(2, 8))
                gold_spans = random_spans(rng, n - 1, ROLES)
                pred_spans = gold_spans if rng.random() < 0.2 else random_spans(rng, n - 1, ROLES)
                golds.append(frame_sentence(f"s{k}", n, [PredicateFrame((n - 1, n), gold_spans)]))
                preds.append(frame_sentence(f"s{k}", n, [PredicateFrame((n - 1, n), pred_spans)]))
            got = evaluate_srl(preds, golds).metrics
            for key, value in srl_counts(preds, golds).items():
                assert got[key] == value, key
