import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from depsrl.corpus import Sentence, write_srl_jsonl
from depsrl.errors import DataError
from depsrl.estimators import (
    DependencyParser,
    MultitaskParser,
    SemanticRoleLabeler,
    check_root_tokens,
    check_sentences,
)

SMALL = dict(embed_size=8, hidden_size=12, n_layers=1, n_merges=80, epochs=2, batch_size=4, encoder_dropout=0.0)


@pytest.fixture
def data(synth):
    return synth[:10]


class TestValidation:
    def test_reads_paths(self, data, tmp_path):
        write_srl_jsonl(data, tmp_path / "x.jsonl")
        assert check_sentences(tmp_path / "x.jsonl") == data
        assert check_sentences(str(tmp_path / "x.jsonl")) == data

    def test_rejects(self, data):
        with pytest.raises(DataError, match="empty"):
            check_sentences([])
        with pytest.raises(DataError, match="not Sentence"):
            check_sentences(["text"])
        with pytest.raises(DataError, match="iterable"):
            check_sentences(3)
        bare = Sentence("b", ["a"], [(0, 1)])
        with pytest.raises(DataError, match="dependency tree"):
            check_sentences([bare], require_heads=True)
        with pytest.raises(DataError, match="no predicate frames"):
            check_sentences([bare], require_frames=True)

    def test_root_tokens(self, data):
        assert check_root_tokens(None, data) is None
        with pytest.raises(DataError):
            check_root_tokens([0], data)
        with pytest.raises(DataError):
            check_root_tokens([99] * len(data), data)


class TestApi:
    def test_params_and_clone(self):
        est = MultitaskParser(srl_ratio=0.72, hidden_size=16)
        params = est.get_params()
        assert params["srl_ratio"] == 0.72 and params["dp_mode"] is None
        twin = clone(est)
        assert twin.get_params() == params and twin is not est
        est.set_params(learning_rate=0.01)
        assert est.learning_rate == 0.01

    def test_not_fitted(self, data):
        with pytest.raises(NotFittedError):
            DependencyParser().predict(data)

    def test_multitask_needs_dp_data(self, data):
        with pytest.raises(DataError):
            MultitaskParser().fit(data)


class TestFit:
    def test_dependency_parser(self, data, tmp_path):
        est = DependencyParser(**SMALL).fit(data)
        assert len(est.history_) == 2
        preds = est.predict(data)
        assert [len(p.heads) for p in preds] == [len(s) for s in data]
        assert 0.0 <= est.score(data) <= 1.0
        assert len(est.predict_roots(data)) == len(data)
        est.save(tmp_path / "ckpt")
        again = DependencyParser.load(tmp_path / "ckpt")
        assert again.hidden_size == 12
        assert again.score(data) == est.score(data)

    def test_role_labeler(self, data):
        est = SemanticRoleLabeler(**SMALL).fit(data, X_val=data[:4])
        preds = est.predict(data)
        assert [len(p.frames) for p in preds] == [len(s.frames) for s in data]
        assert est.best_score_ == max(h["value"] for h in est.history_)

    def test_multitask(self, data):
        est = MultitaskParser(**SMALL, srl_ratio=0.6).fit(data, dp_data=data)
        assert est.model_.config.dp_mode == "root_known"
        assert set(est.score_dp(data)) >= {"UAS", "LAS", "ROOT"}
        roots = [s.root_index for s in data]
        assert est.score_dp(data, roots)["UAS"] == est.score_dp(data)["UAS"]
        assert 0.0 <= est.score(data) <= 1.0

    def test_multitask_root_unknown(self, data):
        est = MultitaskParser(**{**SMALL, "epochs": 1}, dp_mode="root_unknown").fit(data, dp_data=data)
        assert est.model_.config.dp_mode == "root_unknown"
