"""Single-task and multitask training, checkpoint selection and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from depsrl.corpus import Sentence
from depsrl.dp import evaluate_dp
from depsrl.errors import ConfigError, DataError, NumericError
from depsrl.model import ModelConfig, MultitaskModel, stream
from depsrl.numerics import AdamW, Tape, backward, scale
from depsrl.report import EvalReport
from depsrl.srl import evaluate_srl
from depsrl.tokenize import SubwordModel, learn_subwords

logger = logging.getLogger(__name__)

_STREAM_TASK, _STREAM_SRL_BATCH, _STREAM_DP_BATCH, _STREAM_DROPOUT = 10, 11, 12, 13

TARGET_METRICS = ("UAS", "micro_f1")

# full-training epoch counts when the config leaves ``epochs`` unset
DEFAULT_EPOCHS = {"dp": 10, "srl": 30, "multi": 30}


@dataclass
class TrainConfig:
    """Optimization settings.

    ``dp_loss_scale`` multiplies the DP loss before backpropagation, also in
    single-task DP training; ``srl_ratio`` is the probability that a
    multitask step draws an SRL batch.
    """

    learning_rate: float = 2e-3
    encoder_dropout: float = 0.1
    dp_dropout: float = 0.1
    lstm_dropout: float = 0.1
    dp_loss_scale: float = 1.0
    srl_ratio: float = 0.5
    batch_size: int = 32
    epochs: Optional[int] = None
    max_tokens: int = 320
    seed: int = 0
    target_metric: Optional[str] = None
    weight_decay: float = 0.01
    warmup: bool = True

    def __post_init__(self):
        if not 0.0 <= self.srl_ratio <= 1.0:
            raise ConfigError(f"srl_ratio must lie in [0, 1], got {self.srl_ratio}")
        if self.dp_loss_scale < 0:
            raise ConfigError(f"dp_loss_scale must be >= 0, got {self.dp_loss_scale}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        for name in ("encoder_dropout", "dp_dropout", "lstm_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.target_metric is not None and self.target_metric not in TARGET_METRICS:
            raise ConfigError(f"target_metric must be one of {TARGET_METRICS}")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**obj)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})


@dataclass
class TrainResult:
    model: MultitaskModel
    history: List[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_value: Optional[float] = None
    pruned_at: Optional[int] = None


class BatchCycler:
    """Endless stream of shuffled mini-batches; reshuffles on every pass."""

    def __init__(self, items: Sequence, batch_size: int, rng: np.random.Generator):
        if not items:
            raise ConfigError("cannot draw batches from an empty training set")
        self.items = list(items)
        self.batch_size = batch_size
        self.rng = rng
        self._order: List[int] = []
        self._pos = 0

    @property
    def batches_per_pass(self) -> int:
        return math.ceil(len(self.items) / self.batch_size)

    def next(self) -> list:
        if self._pos >= len(self._order):
            self._order = list(self.rng.permutation(len(self.items)))
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return [self.items[k] for k in idx]


class TaskSampler:
    """Independent Bernoulli draw per step: SRL with probability ``srl_ratio``."""

    def __init__(self, srl_ratio: float, rng: np.random.Generator):
        self.srl_ratio = srl_ratio
        self.rng = rng

    def draw(self) -> str:
        return "srl" if self.rng.random() < self.srl_ratio else "dp"


# ---------------------------------------------------------------- model construction


def collect_labels(sentences: Sequence[Sentence]) -> List[str]:
    return sorted({l for s in sentences if s.dep_labels for l in s.dep_labels})


def collect_roles(sentences: Sequence[Sentence]) -> List[str]:
    return sorted({lab for s in sentences for f in s.frames for lab, _ in f.arguments})


def build_model(
    model_config: ModelConfig,
    config: TrainConfig,
    dp_train: Optional[Sequence[Sentence]] = None,
    srl_train: Optional[Sequence[Sentence]] = None,
    subwords: Optional[SubwordModel] = None,
    roles: Optional[Sequence[str]] = None,
) -> MultitaskModel:
    corpus = list(dp_train or []) + list(srl_train or [])
    if subwords is None:
        subwords = learn_subwords(corpus, model_config.n_merges, atomic=not model_config.use_bpe)
    model_config = ModelConfig(**{**asdict(model_config), "max_tokens": config.max_tokens})
    dp_labels = collect_labels(dp_train) if dp_train is not None else None
    if srl_train is not None:
        roles = list(roles) if roles is not None else collect_roles(srl_train)
    else:
        roles = None
    return MultitaskModel(
        model_config,
        subwords,
        dp_labels,
        roles,
        {"encoder": config.encoder_dropout, "dp": config.dp_dropout, "lstm": config.lstm_dropout},
        seed=config.seed,
    )


# ---------------------------------------------------------------- validation


def dp_metrics(model: MultitaskModel, sentences: Sequence[Sentence], root_predictor: Optional[MultitaskModel] = None) -> Dict[str, float]:
    roots = None
    if model.config.dp_mode == "root_known":
        if root_predictor is not None:
            roots = root_predictor.predict_roots(sentences)
        else:
            roots = [s.root_index for s in sentences]
    return evaluate_dp(model.predict_dp(sentences, roots), sentences)


def srl_report(model: MultitaskModel, sentences: Sequence[Sentence]) -> EvalReport:
    return evaluate_srl(model.predict_srl(sentences), sentences, model.config.srl_setting)


# ---------------------------------------------------------------- the loop


EpochCallback = Callable[[int, float], bool]


def _train_loop(
    model: MultitaskModel,
    config: TrainConfig,
    examples: Dict[str, list],
    srl_ratio: float,
    validate: Callable[[], float],
    target: str,
    callback: Optional[EpochCallback] = None,
) -> TrainResult:
    seed = config.seed
    task_rng = stream(seed, _STREAM_TASK)
    dropout_rng = stream(seed, _STREAM_DROPOUT)
    cyclers = {}
    if "srl" in examples:
        cyclers["srl"] = BatchCycler(examples["srl"], config.batch_size, stream(seed, _STREAM_SRL_BATCH))
    if "dp" in examples:
        cyclers["dp"] = BatchCycler(examples["dp"], config.batch_size, stream(seed, _STREAM_DP_BATCH))
    epoch_task = "srl" if "srl" in cyclers else "dp"
    steps_per_epoch = cyclers[epoch_task].batches_per_pass
    # epochs count passes over the epoch task's batches; the other task's
    # steps are interleaved on top
    paced = epoch_task == "srl" and "dp" in cyclers and srl_ratio > 0
    expected_steps = math.ceil(steps_per_epoch / srl_ratio) if paced else steps_per_epoch
    sampler = TaskSampler(srl_ratio, task_rng)
    opt = AdamW(
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
        warmup_steps=expected_steps if config.warmup else 0,
    )
    result = TrainResult(model)
    best_state = None
    for epoch in range(1, config.epochs + 1):
        losses: Dict[str, List[float]] = {"srl": [], "dp": []}
        step = 0
        while (len(losses[epoch_task]) if paced else step) < steps_per_epoch:
            step += 1
            task = sampler.draw()
            if task not in cyclers:
                task = epoch_task
            batch = cyclers[task].next()
            params = model.parameters(task)
            AdamW.zero_grad(params.values())
            with Tape():
                if task == "dp":
                    loss = scale(model.dp_loss(batch, True, dropout_rng), config.dp_loss_scale)
                else:
                    loss = model.srl_loss(batch, True, dropout_rng)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NumericError(f"non-finite {task} loss at epoch {epoch}, step {step}")
                backward(loss)
            try:
                opt.step(params)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {step}: {exc}") from None
            losses[task].append(value)
        metric = float(validate())
        record = {
            "epoch": epoch,
            "steps": step,
            "srl_steps": len(losses["srl"]),
            "dp_steps": len(losses["dp"]),
            "srl_loss": float(np.mean(losses["srl"])) if losses["srl"] else None,
            "dp_loss": float(np.mean(losses["dp"])) if losses["dp"] else None,
            "metric": target,
            "value": metric,
        }
        result.history.append(record)
        logger.info("epoch %d: %s=%.4f", epoch, target, metric)
        if result.best_value is None or metric > result.best_value:
            result.best_value, result.best_epoch = metric, epoch
            best_state = model.state_dict()
        if callback is not None and callback(epoch, metric):
            result.pruned_at = epoch
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    return result


def train_single(
    task: str,
    config: TrainConfig,
    train: Sequence[Sentence],
    dev: Optional[Sequence[Sentence]] = None,
    model_config: Optional[ModelConfig] = None,
    subwords: Optional[SubwordModel] = None,
    roles: Optional[Sequence[str]] = None,
    callback: Optional[EpochCallback] = None,
) -> TrainResult:
    """Train one task; validation runs on ``dev`` (or the training data) each
    epoch and the best-scoring parameters are kept."""
    if task not in ("dp", "srl"):
        raise ConfigError(f"unknown task {task!r}")
    if not train:
        raise ConfigError("empty training corpus")
    model_config = model_config or ModelConfig()
    dev = list(dev) if dev else list(train)
    if task == "dp":
        model = build_model(model_config, config, dp_train=train, subwords=subwords)
        examples = {"dp": model.dp_examples(train)}
        target = config.target_metric or "UAS"
        ratio = 0.0
    else:
        model = build_model(model_config, config, srl_train=train, subwords=subwords, roles=roles)
        examples = {"srl": model.srl_examples(train)}
        target = config.target_metric or "micro_f1"
        ratio = 1.0
    if not examples[task]:
        raise DataError(f"no usable {task} training instances")
    validate = _validator(model, dev, None, target)
    config = _with_epochs(config, task)
    return _train_loop(model, config, examples, ratio, validate, target, callback)


def train_multitask(
    config: TrainConfig,
    dp_train: Sequence[Sentence],
    srl_train: Sequence[Sentence],
    srl_dev: Optional[Sequence[Sentence]] = None,
    model_config: Optional[ModelConfig] = None,
    subwords: Optional[SubwordModel] = None,
    roles: Optional[Sequence[str]] = None,
    callback: Optional[EpochCallback] = None,
) -> TrainResult:
    """Alternate DP and SRL batches over one shared encoder.

    Each step draws SRL with probability ``srl_ratio`` and DP otherwise; an
    epoch is one pass worth of SRL batches. Validation uses SRL micro F1
    unless ``target_metric`` says otherwise.
    """
    if not dp_train or not srl_train:
        raise ConfigError("multitask training needs non-empty DP and SRL corpora")
    model_config = model_config or ModelConfig(dp_mode="root_known")
    model = build_model(model_config, config, dp_train=dp_train, srl_train=srl_train, subwords=subwords, roles=roles)
    examples = {"dp": model.dp_examples(dp_train), "srl": model.srl_examples(srl_train)}
    if not examples["dp"] or not examples["srl"]:
        raise DataError("multitask training needs usable DP and SRL instances")
    target = config.target_metric or "micro_f1"
    dev = list(srl_dev) if srl_dev else list(srl_train)
    if target == "UAS":
        dev = [s for s in dev if s.heads is not None] or list(dp_train)
    validate = _validator(model, dev, None, target)
    config = _with_epochs(config, "multi")
    return _train_loop(model, config, examples, config.srl_ratio, validate, target, callback)


def _with_epochs(config: TrainConfig, task: str) -> TrainConfig:
    return config if config.epochs is not None else config.replace(epochs=DEFAULT_EPOCHS[task])


def _validator(model: MultitaskModel, dev: Sequence[Sentence], root_predictor, target: str):
    if target == "UAS":
        return lambda: dp_metrics(model, dev, root_predictor)["UAS"]
    return lambda: srl_report(model, dev).metrics["micro_f1"]


# ---------------------------------------------------------------- evaluation


def evaluate_checkpoint(
    checkpoint,
    data: Sequence[Sentence],
    task: str,
    setting: Optional[str] = None,
    root_predictor=None,
    expected_config: Optional[ModelConfig] = None,
) -> EvalReport:
    """Full metric suite of a model (or checkpoint directory) on ``data``.

    ``setting`` is the DP input mode for ``task='dp'`` and the SRL setting for
    ``task='srl'``; it must agree with the checkpoint.
    """
    model = checkpoint if isinstance(checkpoint, MultitaskModel) else MultitaskModel.load(checkpoint, expected_config)
    if root_predictor is not None and not isinstance(root_predictor, MultitaskModel):
        root_predictor = MultitaskModel.load(root_predictor)
    if task == "dp":
        if model.dp is None:
            raise ConfigError("checkpoint has no DP head")
        if setting is not None and setting != model.config.dp_mode:
            raise ConfigError(f"checkpoint was trained in {model.config.dp_mode}, not {setting}")
        metrics = dp_metrics(model, data, root_predictor)
        counts = {k: metrics.pop(k) for k in ("tokens", "sentences", "cycles")}
        return EvalReport("dp", model.config.dp_mode, metrics, meta={"counts": counts})
    if task == "srl":
        if model.srl is None:
            raise ConfigError("checkpoint has no SRL head")
        if setting is not None and setting != model.config.srl_setting:
            raise ConfigError(f"checkpoint was trained in the {model.config.srl_setting} setting, not {setting}")
        return srl_report(model, data)
    raise ConfigError(f"unknown task {task!r}")
