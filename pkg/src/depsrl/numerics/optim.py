"""AdamW with decoupled weight decay and a linear warmup schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Tuple

import numpy as np

from depsrl.errors import NumericError
from depsrl.numerics.tensor import Tensor


def linear_warmup(step: int, warmup_steps: int) -> float:
    """Learning-rate multiplier for 1-based ``step``: ramps 0 -> 1, then stays at 1."""
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, step / warmup_steps)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adamw_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: Dict[str, AdamState],
    lr: float,
    weight_decay: float = 0.0,
    betas: Tuple[float, float] = (0.9, 0.999),
    step_count: int = 1,
    warmup_steps: int = 0,
    eps: float = 1e-8,
) -> Dict[str, np.ndarray]:
    """Return updated copies of ``params``; ``state`` is updated in place.

    Only names present in ``grads`` are touched, so a parameter group that did
    not take part in the loss keeps both its values and its moments.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise NumericError(f"non-finite gradient for {name!r} ({bad} entries) at step {step_count}; step aborted")
    lr_t = lr * linear_warmup(step_count, warmup_steps)
    b1, b2 = betas
    updated = dict(params)
    for name, g in grads.items():
        p = params[name]
        st = state.get(name)
        if st is None:
            st = state[name] = AdamState(np.zeros_like(p), np.zeros_like(p))
        if st.m.shape != p.shape:
            raise NumericError(f"optimizer state for {name!r} has shape {st.m.shape}, parameter {p.shape}")
        st.t += 1
        st.m = b1 * st.m + (1.0 - b1) * g
        st.v = b2 * st.v + (1.0 - b2) * g * g
        m_hat = st.m / (1.0 - b1**st.t)
        v_hat = st.v / (1.0 - b2**st.t)
        updated[name] = p - lr_t * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)
    return updated


@dataclass
class AdamW:
    """Stateful wrapper around :func:`adamw_step` for named :class:`Tensor` parameters."""

    lr: float
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_steps: int = 0
    step_count: int = 0
    state: Dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: Dict[str, Tensor]) -> None:
        live = {k: p for k, p in params.items() if p.grad is not None}
        self.step_count += 1
        try:
            new = adamw_step(
                {k: p.data for k, p in live.items()},
                {k: p.grad for k, p in live.items()},
                self.state,
                self.lr,
                self.weight_decay,
                self.betas,
                self.step_count,
                self.warmup_steps,
                self.eps,
            )
        except NumericError:
            self.step_count -= 1
            raise
        for k, p in live.items():
            p.data = new[k]

    @staticmethod
    def zero_grad(params: Iterable[Tensor]) -> None:
        for p in params:
            p.grad = None
