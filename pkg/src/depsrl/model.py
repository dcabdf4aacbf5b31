"""The multitask network: one shared encoder with optional DP and SRL heads."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from depsrl import __version__
from depsrl.corpus import PredicateFrame, Sentence
from depsrl.dp import DpHead, decode, dp_loss, dp_unit_sets, gold_arrays, root_scores
from depsrl.encoder import Encoder, EncoderConfig, pad_batch
from depsrl.errors import ConfigError, DataError, LengthError
from depsrl.numerics import Tensor, load_tensors, mean_over_sets, save_tensors
from depsrl.srl import SrlHead, decode_frame, gold_tag_ids, make_tagset, srl_loss, srl_unit_sets
from depsrl.tokenize import AssembledInput, SubwordModel, assemble_dp, assemble_srl

logger = logging.getLogger(__name__)

# independent generator streams so that adding a head never perturbs another
_STREAM_ENCODER, _STREAM_DP, _STREAM_SRL = 1, 2, 3


def stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), key])


@dataclass
class ModelConfig:
    """Architecture and input-format switches.

    ``srl_predicate=False`` drops the predicate segment from SRL inputs,
    ``srl_bilstm=False`` feeds encoder output straight to unit averaging,
    ``use_bpe=False`` treats whole SUWs as tokens; the DP input format is
    chosen by ``dp_mode``.
    """

    embed_size: int = 64
    hidden_size: int = 128
    n_layers: int = 2
    head_size: Optional[int] = None
    mlp_hidden: Optional[int] = None
    max_tokens: int = 320
    n_merges: int = 500
    use_bpe: bool = True
    dp_mode: str = "root_unknown"
    srl_setting: str = "morpheme"
    srl_predicate: bool = True
    srl_bilstm: bool = True

    def __post_init__(self):
        if self.dp_mode not in ("root_unknown", "root_known"):
            raise ConfigError(f"dp_mode must be root_unknown or root_known, got {self.dp_mode!r}")
        if self.srl_setting not in ("morpheme", "span_given"):
            raise ConfigError(f"srl_setting must be morpheme or span_given, got {self.srl_setting!r}")
        if self.hidden_size % 2:
            raise ConfigError("hidden_size must be even")

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class DpExample:
    sentence: Sentence
    inp: AssembledInput


@dataclass
class SrlExample:
    sentence: Sentence
    frame: PredicateFrame
    inp: AssembledInput
    targets: List[int] = field(default_factory=list)


class MultitaskModel:
    def __init__(
        self,
        config: ModelConfig,
        subwords: SubwordModel,
        dp_labels: Optional[Sequence[str]] = None,
        roles: Optional[Sequence[str]] = None,
        dropouts: Optional[Dict[str, float]] = None,
        seed: int = 0,
    ):
        if dp_labels is None and roles is None:
            raise ConfigError("model needs at least one of a DP label set or an SRL role set")
        self.config = config
        self.subwords = subwords
        self.seed = seed
        dropouts = dict(dropouts or {})
        self.encoder = Encoder(
            EncoderConfig(
                vocab_size=len(subwords),
                embed_size=config.embed_size,
                hidden_size=config.hidden_size,
                n_layers=config.n_layers,
                max_tokens=config.max_tokens,
                dropout=dropouts.get("encoder", 0.0),
            ),
            stream(seed, _STREAM_ENCODER),
        )
        self.dp = None
        self.srl = None
        if dp_labels is not None:
            self.dp = DpHead(config.hidden_size, dp_labels, config.head_size, dropouts.get("dp", 0.0), stream(seed, _STREAM_DP))
        if roles is not None:
            self.roles = list(roles)
            self.srl = SrlHead(
                config.hidden_size,
                make_tagset(self.roles, config.srl_setting),
                config.mlp_hidden,
                config.srl_bilstm,
                dropouts.get("lstm", 0.0),
                stream(seed, _STREAM_SRL),
            )
        else:
            self.roles = None

    # ------------------------------------------------------------ parameters

    def parameters(self, task: Optional[str] = None) -> Dict[str, Tensor]:
        """Shared encoder parameters plus those of the given head (or all heads)."""
        out = dict(self.encoder.params)
        if task in (None, "dp") and self.dp is not None:
            out.update(self.dp.params)
        if task in (None, "srl") and self.srl is not None:
            out.update(self.srl.params)
        return out

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            raise DataError(f"parameter names differ: {sorted(set(state) ^ set(params))[:5]}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise DataError(f"parameter {k} has shape {state[k].shape}, model expects {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def set_dropouts(self, encoder: float, dp: float, lstm: float) -> None:
        self.encoder.config.dropout = encoder
        if self.dp is not None:
            self.dp.dropout = dp
        if self.srl is not None:
            self.srl.dropout = lstm

    # ------------------------------------------------------------ examples

    def dp_inputs(self, sentence: Sentence, root_token: Optional[int] = None, mode: Optional[str] = None) -> AssembledInput:
        mode = mode or self.config.dp_mode
        return assemble_dp(sentence, mode, self.subwords, root_token, self.config.max_tokens)

    def dp_examples(self, sentences: Sequence[Sentence], train: bool = True) -> List[DpExample]:
        out = []
        for s in sentences:
            if s.heads is None:
                raise DataError(f"sentence {s.id}: DP training needs gold heads")
            try:
                out.append(DpExample(s, self.dp_inputs(s, s.root_index)))
            except LengthError as exc:
                if not train:
                    raise
                logger.warning("skipping %s", exc)
        return out

    def srl_examples(self, sentences: Sequence[Sentence], train: bool = True) -> List[SrlExample]:
        out = []
        setting = self.config.srl_setting
        for s in sentences:
            for f in s.frames:
                try:
                    inp = assemble_srl(s, f, setting, self.subwords, self.config.max_tokens, self.config.srl_predicate)
                except LengthError as exc:
                    if not train:
                        raise
                    logger.warning("skipping %s", exc)
                    continue
                out.append(SrlExample(s, f, inp, gold_tag_ids(s, f, setting, self.srl.tag_index)))
        return out

    # ------------------------------------------------------------ forward passes

    def _encode(self, inputs: Sequence[AssembledInput], train: bool, rng):
        ids, segs, flags, mask = pad_batch(inputs)
        return self.encoder.encode_batch(ids, segs, mask, train, rng), flags, mask

    def _x_dp(self, inputs: Sequence[AssembledInput], train: bool, rng):
        hidden, _, _ = self._encode(inputs, train, rng)
        sets, lengths = dp_unit_sets(inputs)
        return mean_over_sets(hidden, sets), lengths

    def dp_loss(self, batch: Sequence[DpExample], train: bool = True, rng=None) -> Tensor:
        x_dp, lengths = self._x_dp([e.inp for e in batch], train, rng)
        heads, labels = gold_arrays([e.sentence for e in batch], self.dp.label_index, x_dp.shape[1])
        return dp_loss(self.dp, x_dp, lengths, heads, labels, train, rng)

    def srl_logits(self, batch: Sequence[SrlExample], train: bool = False, rng=None):
        inputs = [e.inp for e in batch]
        hidden, flags, mask = self._encode(inputs, train, rng)
        unit_sets, pred_sets, counts = srl_unit_sets(inputs, self.config.srl_setting)
        return self.srl.logits(hidden, flags, mask, unit_sets, pred_sets, train, rng), counts

    def srl_loss(self, batch: Sequence[SrlExample], train: bool = True, rng=None) -> Tensor:
        logits, counts = self.srl_logits(batch, train, rng)
        return srl_loss(logits, counts, [e.targets for e in batch])

    # ------------------------------------------------------------ prediction

    def predict_dp(self, sentences: Sequence[Sentence], root_tokens: Optional[Sequence[int]] = None, batch_size: int = 64) -> List[Sentence]:
        if self.dp is None:
            raise ConfigError("this model has no DP head")
        if self.config.dp_mode == "root_known" and root_tokens is None:
            raise ConfigError("a root_known parser needs root tokens (gold or from a root-unknown parser)")
        out = []
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start : start + batch_size]
            roots = None if root_tokens is None else root_tokens[start : start + batch_size]
            inputs = [self.dp_inputs(s, None if roots is None else roots[k]) for k, s in enumerate(chunk)]
            x_dp, lengths = self._x_dp(inputs, False, None)
            for s, pred in zip(chunk, decode(self.dp, x_dp, lengths)):
                t = copy.copy(s)
                t.heads, t.dep_labels = pred.heads, pred.labels
                out.append(t)
        return out

    def predict_roots(self, sentences: Sequence[Sentence], batch_size: int = 64) -> List[int]:
        """0-based index of the token most likely attached to [ROOT], per sentence."""
        if self.dp is None:
            raise ConfigError("this model has no DP head")
        if self.config.dp_mode != "root_unknown":
            raise ConfigError("root prediction needs a root_unknown parser")
        out = []
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start : start + batch_size]
            x_dp, lengths = self._x_dp([self.dp_inputs(s) for s in chunk], False, None)
            out.extend(int(np.argmax(p)) for p in root_scores(self.dp, x_dp, lengths))
        return out

    def predict_srl(self, sentences: Sequence[Sentence], batch_size: int = 64) -> List[Sentence]:
        """Copies of ``sentences`` whose frames carry predicted arguments.

        In the span-given setting the input frames' argument spans are kept
        and only their labels are predicted.
        """
        if self.srl is None:
            raise ConfigError("this model has no SRL head")
        setting = self.config.srl_setting
        examples = []
        for s in sentences:
            for f in s.frames:
                inp = assemble_srl(s, f, setting, self.subwords, self.config.max_tokens, self.config.srl_predicate)
                examples.append(SrlExample(s, f, inp))
        predicted: Dict[int, List[PredicateFrame]] = {}
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            logits, counts = self.srl_logits(chunk)
            best = logits.data.argmax(axis=-1)
            for k, (e, n) in enumerate(zip(chunk, counts)):
                frame = decode_frame(best[k, :n].tolist(), self.srl.tagset, e.frame, setting)
                predicted.setdefault(id(e.sentence), []).append(frame)
        out = []
        for s in sentences:
            t = copy.copy(s)
            t.frames = predicted.get(id(s), [])
            out.append(t)
        return out

    # ------------------------------------------------------------ persistence

    def hyperparameters(self) -> dict:
        return {
            "toolkit_version": __version__,
            "model": asdict(self.config),
            "seed": self.seed,
            "dp_labels": None if self.dp is None else self.dp.labels,
            "roles": self.roles,
            "vocab_size": len(self.subwords),
        }

    def save(self, directory) -> str:
        directory = Path(directory)
        content_hash = save_tensors(directory, self.state_dict(), self.hyperparameters())
        self.subwords.save(directory / "subwords.txt")
        return content_hash

    @classmethod
    def load(cls, directory, expected: Optional[ModelConfig] = None) -> "MultitaskModel":
        directory = Path(directory)
        tensors, manifest = load_tensors(directory)
        hp = manifest["hyperparameters"]
        config = ModelConfig.from_dict(hp["model"])
        if expected is not None and asdict(expected) != asdict(config):
            diff = {k: (v, getattr(config, k)) for k, v in asdict(expected).items() if getattr(config, k) != v}
            raise ConfigError(f"checkpoint manifest does not match the requested config: {diff}")
        subwords = SubwordModel.load(directory / "subwords.txt")
        if len(subwords) != hp["vocab_size"]:
            raise DataError(f"{directory}: subword table size {len(subwords)} != manifest {hp['vocab_size']}")
        model = cls(config, subwords, hp["dp_labels"], hp["roles"], seed=hp["seed"])
        model.load_state_dict(tensors)
        model.content_hash = manifest["content_hash"]
        return model
