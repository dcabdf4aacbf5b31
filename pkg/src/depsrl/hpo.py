"""Random hyperparameter search with median pruning."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import median
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from depsrl.errors import ConfigError
from depsrl.trainer import TrainConfig, TrainResult

HPO_EPOCHS = {"dp": 3, "srl": 10, "multi": 10}
HPO_MAX_TOKENS = 270

_SCALES = ("log", "linear")


@dataclass(frozen=True)
class Dimension:
    name: str
    scale: str
    low: float
    high: float

    def __post_init__(self):
        if self.scale not in _SCALES:
            raise ConfigError(f"{self.name}: scale must be one of {_SCALES}")
        if self.low > self.high:
            raise ConfigError(f"{self.name}: low {self.low} exceeds high {self.high}")
        if self.scale == "log" and self.low <= 0:
            raise ConfigError(f"{self.name}: a logarithmic range needs low > 0")

    def sample(self, rng: np.random.Generator) -> float:
        u = rng.random()
        if self.low == self.high:
            return float(self.low)
        if self.scale == "log":
            lo, hi = math.log(self.low), math.log(self.high)
            return float(math.exp(lo + u * (hi - lo)))
        return float(self.low + u * (self.high - self.low))


class SearchSpace:
    """Named ranges over :class:`TrainConfig` fields."""

    def __init__(self, dims: Sequence[Dimension]):
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate hyperparameter in search space")
        known = set(TrainConfig.__dataclass_fields__)
        bad = [n for n in names if n not in known]
        if bad:
            raise ConfigError(f"search space names unknown training fields: {bad}")
        self.dims = list(dims)

    @classmethod
    def from_dict(cls, obj: Dict[str, dict]) -> "SearchSpace":
        try:
            return cls([Dimension(name, spec["scale"], float(spec["low"]), float(spec["high"])) for name, spec in obj.items()])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed search space entry: {exc}") from None

    def to_dict(self) -> Dict[str, dict]:
        return {d.name: {"scale": d.scale, "low": d.low, "high": d.high} for d in self.dims}

    def sample(self, rng: np.random.Generator) -> Dict[str, float]:
        return {d.name: d.sample(rng) for d in self.dims}

    @classmethod
    def default(cls, task: str) -> "SearchSpace":
        """Default ranges per task; the learning rate and DP loss scale are
        searched on a log scale, dropouts and the SRL ratio linearly."""
        lr = Dimension("learning_rate", "log", 3e-4, 1e-2)
        enc = Dimension("encoder_dropout", "linear", 0.0, 0.5)
        dp = Dimension("dp_dropout", "linear", 0.0, 0.5)
        lstm = Dimension("lstm_dropout", "linear", 0.0, 0.5)
        lam = Dimension("dp_loss_scale", "log", 1e-2, 10.0)
        beta = Dimension("srl_ratio", "linear", 0.1, 0.9)
        spaces = {
            "dp": [lr, enc, dp, lam],
            "srl": [lr, enc, lstm],
            "multi": [lr, enc, dp, lstm, lam, beta],
        }
        if task not in spaces:
            raise ConfigError(f"unknown task {task!r}")
        return cls(spaces[task])


@dataclass
class PruningConfig:
    """Median pruning.

    A running trial stops at epoch ``e`` when its validation value is below
    the median of completed trials at that epoch, once ``n_startup``
    completed trials exist. ``force_complete`` keeps pruned trials running
    (without changing any pruning decision) so their final value can be
    audited.
    """

    enabled: bool = True
    n_startup: int = 2
    min_epoch: int = 1
    force_complete: bool = False


@dataclass
class Trial:
    trial: int
    seed: int
    params: Dict[str, float]
    values: List[float] = field(default_factory=list)
    pruned: bool = False
    pruned_at: Optional[int] = None
    value: Optional[float] = None
    completed_value: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class HpoResult:
    best: Trial
    best_config: TrainConfig
    trials: List[Trial]

    def log_lines(self) -> List[str]:
        return [t.to_json() for t in self.trials]

    def write_log(self, path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.log_lines()), encoding="utf-8")


TrainFn = Callable[[TrainConfig, Callable[[int, float], bool]], TrainResult]


def hpo_search(
    space: SearchSpace,
    n_trials: int,
    train_fn: TrainFn,
    base_config: TrainConfig,
    pruning: Optional[PruningConfig] = None,
    seed: int = 0,
    on_trial: Optional[Callable[[Trial], None]] = None,
) -> HpoResult:
    """Run ``n_trials`` sampled configurations through ``train_fn``.

    ``train_fn(config, callback)`` trains one model and calls
    ``callback(epoch, value)`` after each validation; a True return asks it
    to stop. Trial ``k`` trains with seed ``base_config.seed + k``.
    """
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    pruning = pruning or PruningConfig()
    rng = np.random.default_rng([int(seed), 7])
    trials: List[Trial] = []
    completed: List[Trial] = []
    for k in range(n_trials):
        params = space.sample(rng)
        config = base_config.replace(**params, seed=base_config.seed + k)
        trial = Trial(k, config.seed, params)

        def callback(epoch: int, value: float, trial=trial) -> bool:
            trial.values.append(value)
            if trial.pruned:
                return False
            if not pruning.enabled or epoch < pruning.min_epoch:
                return False
            pool = [t.values[epoch - 1] for t in completed if len(t.values) >= epoch]
            if len(pool) < pruning.n_startup or value >= median(pool):
                return False
            trial.pruned, trial.pruned_at = True, epoch
            return not pruning.force_complete

        train_fn(config, callback)
        if trial.pruned:
            trial.value = max(trial.values[: trial.pruned_at])
            if pruning.force_complete:
                trial.completed_value = max(trial.values)
        else:
            trial.value = max(trial.values) if trial.values else None
            completed.append(trial)
        trials.append(trial)
        if on_trial is not None:
            on_trial(trial)
    ranked = [t for t in completed if t.value is not None]
    if not ranked:
        raise ConfigError("no trial completed; loosen pruning or add trials")
    best = max(ranked, key=lambda t: (t.value, -t.trial))
    best_config = base_config.replace(**best.params, seed=base_config.seed)
    return HpoResult(best, best_config, trials)


def hpo_config(config: TrainConfig, task: str, epochs: Optional[int] = None, max_tokens: Optional[int] = None) -> TrainConfig:
    """Reduced-budget variant of ``config`` used during search."""
    return config.replace(
        epochs=epochs if epochs is not None else HPO_EPOCHS[task],
        max_tokens=max_tokens if max_tokens is not None else HPO_MAX_TOKENS,
    )
