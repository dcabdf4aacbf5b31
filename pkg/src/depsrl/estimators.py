"""scikit-learn style estimators over the training and prediction code.

``X`` is always a sequence of :class:`~depsrl.corpus.Sentence` (or a path to
a corpus file); gold structure travels inside the sentences, so ``y`` is
accepted for API compatibility and ignored.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from depsrl.corpus import Sentence, read_corpus
from depsrl.dp import evaluate_dp
from depsrl.errors import DataError
from depsrl.model import ModelConfig, MultitaskModel
from depsrl.trainer import TrainConfig, dp_metrics, srl_report, train_multitask, train_single


def check_sentences(X, require_heads: bool = False, require_frames: bool = False, name: str = "X") -> List[Sentence]:
    """Materialize ``X`` as a validated list of sentences.

    Paths are read with :func:`read_corpus`. Raises :class:`DataError` on an
    empty input, foreign objects, or missing gold structure when required.
    """
    if isinstance(X, (str, Path)):
        X = read_corpus(X)
    try:
        X = list(X)
    except TypeError:
        raise DataError(f"{name} must be an iterable of Sentence, got {type(X).__name__}") from None
    if not X:
        raise DataError(f"{name} is empty")
    for k, s in enumerate(X):
        if not isinstance(s, Sentence):
            raise DataError(f"{name}[{k}] is {type(s).__name__}, not Sentence")
        s.validate()
        if require_heads and s.heads is None:
            raise DataError(f"{name}[{k}] ({s.id}) has no dependency tree")
    if require_frames and not any(s.frames for s in X):
        raise DataError(f"{name} contains no predicate frames")
    return X


def check_root_tokens(root_tokens, sentences: Sequence[Sentence]) -> Optional[List[int]]:
    if root_tokens is None:
        return None
    root_tokens = [int(r) for r in root_tokens]
    if len(root_tokens) != len(sentences):
        raise DataError(f"{len(root_tokens)} root tokens for {len(sentences)} sentences")
    for r, s in zip(root_tokens, sentences):
        if not 0 <= r < len(s):
            raise DataError(f"root token {r} outside sentence {s.id} of length {len(s)}")
    return root_tokens


_TRAIN_KEYS = tuple(k for k in TrainConfig.__dataclass_fields__ if k not in ("target_metric", "warmup"))
_MODEL_KEYS = tuple(k for k in ModelConfig.__dataclass_fields__ if k not in ("max_tokens",))


class _MultitaskEstimator(BaseEstimator):
    def __init__(
        self,
        learning_rate=2e-3,
        encoder_dropout=0.1,
        dp_dropout=0.1,
        lstm_dropout=0.1,
        dp_loss_scale=1.0,
        srl_ratio=0.5,
        batch_size=32,
        epochs=None,
        max_tokens=320,
        seed=0,
        weight_decay=0.01,
        embed_size=64,
        hidden_size=128,
        n_layers=2,
        head_size=None,
        mlp_hidden=None,
        n_merges=500,
        use_bpe=True,
        dp_mode=None,
        srl_setting="morpheme",
        srl_predicate=True,
        srl_bilstm=True,
    ):
        self.learning_rate = learning_rate
        self.encoder_dropout = encoder_dropout
        self.dp_dropout = dp_dropout
        self.lstm_dropout = lstm_dropout
        self.dp_loss_scale = dp_loss_scale
        self.srl_ratio = srl_ratio
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_tokens = max_tokens
        self.seed = seed
        self.weight_decay = weight_decay
        self.embed_size = embed_size
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.head_size = head_size
        self.mlp_hidden = mlp_hidden
        self.n_merges = n_merges
        self.use_bpe = use_bpe
        self.dp_mode = dp_mode
        self.srl_setting = srl_setting
        self.srl_predicate = srl_predicate
        self.srl_bilstm = srl_bilstm

    _default_dp_mode = "root_unknown"

    def _configs(self):
        params = self.get_params()
        if params["dp_mode"] is None:
            params["dp_mode"] = self._default_dp_mode
        train = TrainConfig(**{k: params[k] for k in _TRAIN_KEYS})
        model = ModelConfig(**{k: params[k] for k in _MODEL_KEYS})
        return train, model

    def _set_fitted(self, result):
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_score_ = result.best_value
        return self

    def save(self, directory) -> str:
        """Write the fitted model as a checkpoint directory; returns its content hash."""
        check_is_fitted(self, "model_")
        return self.model_.save(directory)

    @classmethod
    def load(cls, directory):
        model = MultitaskModel.load(directory)
        params = {k: getattr(model.config, k) for k in _MODEL_KEYS}
        est = cls(**params, max_tokens=model.config.max_tokens, seed=model.seed)
        est.model_ = model
        est.history_, est.best_epoch_, est.best_score_ = [], None, None
        return est


class DependencyParser(_MultitaskEstimator):
    """Single-task head-selection parser."""

    def fit(self, X, y=None, X_val=None, callback=None):
        X = check_sentences(X, require_heads=True)
        dev = check_sentences(X_val, require_heads=True, name="X_val") if X_val is not None else None
        train, model = self._configs()
        return self._set_fitted(train_single("dp", train, X, dev, model, callback=callback))

    def predict(self, X, root_tokens=None) -> List[Sentence]:
        check_is_fitted(self, "model_")
        X = check_sentences(X)
        return self.model_.predict_dp(X, check_root_tokens(root_tokens, X))

    def predict_roots(self, X) -> List[int]:
        check_is_fitted(self, "model_")
        return self.model_.predict_roots(check_sentences(X))

    def score(self, X, y=None, root_tokens=None) -> float:
        """UAS on ``X``; a root-known parser falls back to the gold roots."""
        check_is_fitted(self, "model_")
        X = check_sentences(X, require_heads=True)
        roots = check_root_tokens(root_tokens, X)
        if roots is None and self.model_.config.dp_mode == "root_known":
            roots = [s.root_index for s in X]
        return evaluate_dp(self.model_.predict_dp(X, roots), X)["UAS"]


class SemanticRoleLabeler(_MultitaskEstimator):
    """Single-task SRL tagger (morpheme setting) or span classifier (span_given)."""

    def fit(self, X, y=None, X_val=None, roles=None, callback=None):
        X = check_sentences(X, require_frames=True)
        dev = check_sentences(X_val, require_frames=True, name="X_val") if X_val is not None else None
        train, model = self._configs()
        return self._set_fitted(train_single("srl", train, X, dev, model, roles=roles, callback=callback))

    def predict(self, X) -> List[Sentence]:
        check_is_fitted(self, "model_")
        return self.model_.predict_srl(check_sentences(X))

    def score(self, X, y=None) -> float:
        """Span-level micro F1."""
        check_is_fitted(self, "model_")
        return srl_report(self.model_, check_sentences(X, require_frames=True)).metrics["micro_f1"]


class MultitaskParser(_MultitaskEstimator):
    """Shared-encoder DP + SRL model trained with alternating task batches.

    ``fit`` takes the SRL corpus as ``X`` and the DP corpus as ``dp_data``.
    The DP side defaults to the root-known input (``dp_mode=None``); pass
    ``dp_mode='root_unknown'`` to drop the root segment.
    """

    _default_dp_mode = "root_known"

    def fit(self, X, y=None, dp_data=None, X_val=None, roles=None, callback=None):
        if dp_data is None:
            raise DataError("MultitaskParser.fit needs dp_data")
        X = check_sentences(X, require_frames=True)
        dp = check_sentences(dp_data, require_heads=True, name="dp_data")
        dev = check_sentences(X_val, require_frames=True, name="X_val") if X_val is not None else None
        train, model = self._configs()
        return self._set_fitted(train_multitask(train, dp, X, dev, model, roles=roles, callback=callback))

    def predict(self, X) -> List[Sentence]:
        check_is_fitted(self, "model_")
        return self.model_.predict_srl(check_sentences(X))

    def predict_dp(self, X, root_tokens=None) -> List[Sentence]:
        check_is_fitted(self, "model_")
        X = check_sentences(X)
        return self.model_.predict_dp(X, check_root_tokens(root_tokens, X))

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "model_")
        return srl_report(self.model_, check_sentences(X, require_frames=True)).metrics["micro_f1"]

    def score_dp(self, X, root_tokens=None) -> dict:
        """DP metrics; a root-known model uses gold roots unless given others."""
        check_is_fitted(self, "model_")
        X = check_sentences(X, require_heads=True)
        roots = check_root_tokens(root_tokens, X)
        if roots is None:
            return dp_metrics(self.model_, X)
        return evaluate_dp(self.model_.predict_dp(X, roots), X)
