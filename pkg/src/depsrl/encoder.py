"""Shared encoder: summed token/segment/position embeddings into a BiLSTM stack."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from depsrl.errors import ConfigError, LengthError, ShapeError
from depsrl.numerics import Tensor, add, concat, dropout, embedding, index, lstm_cell, stack
from depsrl.tokenize import PAD_ID, AssembledInput


def init_lstm(params: Dict[str, Tensor], prefix: str, n_in: int, hidden: int, rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(hidden)
    for direction in ("fwd", "bwd"):
        w = rng.uniform(-bound, bound, size=(n_in + hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0  # forget gate starts open
        params[f"{prefix}.{direction}.weight"] = Tensor(w, requires_grad=True)
        params[f"{prefix}.{direction}.bias"] = Tensor(b, requires_grad=True)


def run_lstm(x: Tensor, mask: np.ndarray, weight: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Unroll one direction over a padded batch ``x`` (B, T, in) -> (B, T, H)."""
    n_batch, n_steps, _ = x.shape
    hidden = bias.shape[0] // 4
    state = Tensor(np.zeros((n_batch, 2 * hidden)))
    states = [None] * n_steps
    steps = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    for t in steps:
        state = lstm_cell(index(x, (slice(None), t)), state, weight, bias, mask[:, t])
        states[t] = state
    return index(stack(states, axis=1), (Ellipsis, slice(0, hidden)))


def run_bilstm(x: Tensor, mask: np.ndarray, params: Dict[str, Tensor], prefix: str) -> Tensor:
    fwd = run_lstm(x, mask, params[f"{prefix}.fwd.weight"], params[f"{prefix}.fwd.bias"])
    bwd = run_lstm(x, mask, params[f"{prefix}.bwd.weight"], params[f"{prefix}.bwd.bias"], reverse=True)
    return concat([fwd, bwd], axis=-1)


@dataclass
class EncoderConfig:
    vocab_size: int
    embed_size: int = 64
    hidden_size: int = 128
    n_layers: int = 2
    max_tokens: int = 320
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_size % 2:
            raise ConfigError(f"hidden_size must be even, got {self.hidden_size}")
        if min(self.vocab_size, self.embed_size, self.n_layers, self.max_tokens) < 1:
            raise ConfigError("encoder sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"encoder dropout must be in [0, 1), got {self.dropout}")


def pad_batch(inputs: Sequence[AssembledInput]):
    """Stack variable-length inputs into padded id, segment and mask arrays."""
    width = max(len(inp) for inp in inputs)
    ids = np.full((len(inputs), width), PAD_ID, dtype=np.int64)
    segs = np.zeros((len(inputs), width), dtype=np.int64)
    flags = np.zeros((len(inputs), width))
    mask = np.zeros((len(inputs), width))
    for k, inp in enumerate(inputs):
        n = len(inp)
        ids[k, :n] = inp.token_ids
        segs[k, :n] = inp.segment_ids
        flags[k, :n] = inp.predicate_indicator
        mask[k, :n] = 1.0
    return ids, segs, flags, mask


class Encoder:
    """Maps assembled inputs to one ``hidden_size`` vector per subword position."""

    def __init__(self, config: EncoderConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        e, h = config.embed_size, config.hidden_size
        self.params: Dict[str, Tensor] = {
            "encoder.token_embedding": Tensor(rng.normal(0.0, 0.1, (config.vocab_size, e)), requires_grad=True),
            "encoder.segment_embedding": Tensor(rng.normal(0.0, 0.1, (2, e)), requires_grad=True),
            "encoder.position_embedding": Tensor(rng.normal(0.0, 0.1, (config.max_tokens, e)), requires_grad=True),
        }
        n_in = e
        for layer in range(config.n_layers):
            init_lstm(self.params, f"encoder.lstm{layer}", n_in, h // 2, rng)
            n_in = h

    @property
    def output_size(self) -> int:
        return self.config.hidden_size

    def encode_batch(self, ids, segs, mask, train: bool = False, rng=None) -> Tensor:
        """Encode padded arrays of shape (B, T) into a (B, T, h) tensor."""
        n_batch, width = ids.shape
        if width > self.config.max_tokens:
            raise LengthError(f"input of {width} positions exceeds max_tokens={self.config.max_tokens}")
        if ids.size and ids.max() >= self.config.vocab_size:
            raise ShapeError(f"token id {int(ids.max())} outside vocabulary of size {self.config.vocab_size}")
        p = self.params
        positions = np.broadcast_to(np.arange(width), (n_batch, width))
        x = add(
            add(embedding(p["encoder.token_embedding"], ids), embedding(p["encoder.segment_embedding"], segs)),
            embedding(p["encoder.position_embedding"], positions),
        )
        for layer in range(self.config.n_layers):
            x = run_bilstm(x, mask, p, f"encoder.lstm{layer}")
        return dropout(x, self.config.dropout, rng, train)

    def encode(self, inp: AssembledInput, train: bool = False, rng=None) -> Tensor:
        """Encode a single assembled input to a (positions, h) tensor."""
        ids, segs, _, mask = pad_batch([inp])
        out = self.encode_batch(ids, segs, mask, train, rng)
        return index(out, 0)

    def to_dict(self) -> dict:
        return asdict(self.config)
