"""Head-selection dependency parsing over encoder outputs.

Units are indexed with the root first: row 0 of ``x_dp`` is the [ROOT]
vector and rows 1..n are the SUWs, so a CoNLL-U head index is directly a
row index. The score of head ``j`` for dependent ``i`` is
``v . tanh(U x_j + W x_i)``; the label score reuses the same hidden layer
with one vector ``u_l`` per label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from depsrl.corpus import Sentence
from depsrl.errors import DataError, ShapeError
from depsrl.numerics import (
    Tensor,
    add,
    dropout,
    index,
    log_softmax,
    matmul,
    reshape,
    scale,
    reduce_sum as tsum,
    tanh,
    transpose,
)
from depsrl.tokenize import AssembledInput


@dataclass
class DpPrediction:
    heads: List[int]
    labels: List[str]


class DpHead:
    def __init__(self, hidden_size: int, labels: Sequence[str], head_size: Optional[int] = None, dropout: float = 0.0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        d = head_size or hidden_size
        self.labels = list(labels)
        self.label_index = {l: k for k, l in enumerate(self.labels)}
        self.dropout = dropout
        s = 1.0 / np.sqrt(hidden_size)
        self.params: Dict[str, Tensor] = {
            "dp.U": Tensor(rng.uniform(-s, s, (d, hidden_size)), requires_grad=True),
            "dp.W": Tensor(rng.uniform(-s, s, (d, hidden_size)), requires_grad=True),
            "dp.v": Tensor(rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), d), requires_grad=True),
            "dp.u": Tensor(rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), (len(self.labels), d)), requires_grad=True),
        }

    def hidden(self, x_dp: Tensor, train: bool = False, rng=None) -> Tensor:
        """``tanh(U x_j + W x_i)`` for every (dependent i, head j): shape (..., N, N, d)."""
        p = self.params
        if x_dp.shape[-1] != p["dp.U"].shape[1]:
            raise ShapeError(f"dp head: input {x_dp.shape} vs U {p['dp.U'].shape}")
        x_dp = dropout(x_dp, self.dropout, rng, train)
        head_side = matmul(x_dp, transpose(p["dp.U"]))
        dep_side = matmul(x_dp, transpose(p["dp.W"]))
        lead, n, d = head_side.shape[:-2], head_side.shape[-2], head_side.shape[-1]
        pre = add(reshape(dep_side, lead + (n, 1, d)), reshape(head_side, lead + (1, n, d)))
        return tanh(pre)

    def head_scores(self, act: Tensor) -> Tensor:
        return matmul(act, self.params["dp.v"])

    def label_scores(self, act_pairs: Tensor) -> Tensor:
        return matmul(act_pairs, transpose(self.params["dp.u"]))


# ---------------------------------------------------------------- unit maps and masks


def dp_unit_sets(inputs: Sequence[AssembledInput]) -> Tuple[List[List[List[int]]], np.ndarray]:
    """Per-input averaging sets (root first, padded) and the SUW counts."""
    lengths = np.array([len(inp.unit_map) for inp in inputs])
    n_units = int(lengths.max()) + 1
    sets = []
    for inp in inputs:
        rows = [[inp.root_position]] + [list(u) for u in inp.unit_map]
        rows += [[0]] * (n_units - len(rows))
        sets.append(rows)
    return sets, lengths


def candidate_mask(lengths: Sequence[int], n_units: int, fill_invalid: bool = True) -> np.ndarray:
    """Boolean (B, N, N) mask of allowed (dependent, head) pairs.

    Rows that are not real dependents (the root row and padding) are left
    fully open when ``fill_invalid`` so softmax stays finite; they never enter
    the loss.
    """
    lengths = np.asarray(lengths)
    j = np.arange(n_units)
    valid_head = j[None, None, :] <= lengths[:, None, None]
    not_self = j[None, :, None] != j[None, None, :]
    is_dep = (j[None, :] >= 1) & (j[None, :] <= lengths[:, None])
    mask = valid_head & not_self
    if fill_invalid:
        mask = np.where(is_dep[:, :, None], mask, True)
    else:
        mask = mask & is_dep[:, :, None]
    return mask


# ---------------------------------------------------------------- single-sentence functional forms


def score_heads(x_dp, head: DpHead) -> np.ndarray:
    """Score matrix ``s[i, j]`` of head j for dependent i; self pairs and the
    root row are -inf."""
    x = x_dp if isinstance(x_dp, Tensor) else Tensor(x_dp)
    scores = head.head_scores(head.hidden(x)).data
    n = scores.shape[-1]
    mask = candidate_mask([n - 1], n, fill_invalid=False)[0]
    return np.where(mask, scores, -np.inf)


def head_distribution(scores: np.ndarray, i: int) -> np.ndarray:
    row = np.asarray(scores[i], dtype=np.float64)
    finite = np.isfinite(row)
    if not finite.any():
        raise DataError(f"dependent {i} has no unmasked head candidate")
    m = row[finite].max()
    e = np.where(finite, np.exp(row - m), 0.0)
    return e / e.sum()


def label_distribution(x_j, x_i, head: DpHead) -> np.ndarray:
    p = head.params
    x_j, x_i = np.asarray(x_j, dtype=np.float64), np.asarray(x_i, dtype=np.float64)
    if x_j.shape != (p["dp.U"].shape[1],) or x_i.shape != x_j.shape:
        raise ShapeError(f"label_distribution: vectors {x_j.shape}/{x_i.shape} vs U {p['dp.U'].shape}")
    act = np.tanh(p["dp.U"].data @ x_j + p["dp.W"].data @ x_i)
    g = p["dp.u"].data @ act
    e = np.exp(g - g.max())
    return e / e.sum()


# ---------------------------------------------------------------- loss and decoding


def gold_arrays(sentences: Sequence[Sentence], label_index: Dict[str, int], n_units: int):
    heads = np.full((len(sentences), n_units), -1, dtype=np.int64)
    labels = np.full((len(sentences), n_units), -1, dtype=np.int64)
    for b, s in enumerate(sentences):
        if s.heads is None:
            raise DataError(f"sentence {s.id}: no gold dependency tree")
        heads[b, 1 : len(s) + 1] = s.heads
        try:
            labels[b, 1 : len(s) + 1] = [label_index[l] for l in s.dep_labels]
        except KeyError as exc:
            raise DataError(f"sentence {s.id}: dependency label {exc.args[0]!r} not in inventory") from None
    return heads, labels


def dp_loss(head: DpHead, x_dp: Tensor, lengths, gold_heads: np.ndarray, gold_labels: np.ndarray, train=False, rng=None) -> Tensor:
    """Mean over all dependents of -(log P_head(gold) + log P_label(gold | gold head))."""
    act = head.hidden(x_dp, train, rng)
    scores = head.head_scores(act)
    n_units = scores.shape[-1]
    logp = log_softmax(scores, candidate_mask(lengths, n_units))
    b_idx, i_idx = np.nonzero(gold_heads >= 0)
    h_idx = gold_heads[b_idx, i_idx]
    head_ll = tsum(index(logp, (b_idx, i_idx, h_idx)))
    label_logp = log_softmax(head.label_scores(index(act, (b_idx, i_idx, h_idx))))
    label_ll = tsum(index(label_logp, (np.arange(len(b_idx)), gold_labels[b_idx, i_idx])))
    return scale(add(head_ll, label_ll), -1.0 / len(b_idx))


def decode(head: DpHead, x_dp: Tensor, lengths) -> List[DpPrediction]:
    """Greedy per-token head argmax, then the label argmax for the chosen edge.

    Ties go to the lowest unit index, i.e. [ROOT] first, then earlier tokens.
    """
    act = head.hidden(x_dp).data
    scores = act @ head.params["dp.v"].data
    n_units = scores.shape[-1]
    masked = np.where(candidate_mask(lengths, n_units), scores, -np.inf)
    best = masked.argmax(axis=-1)
    out = []
    for b, n in enumerate(lengths):
        heads = [int(best[b, i]) for i in range(1, n + 1)]
        pair_act = act[b, np.arange(1, n + 1), heads]
        lab = (pair_act @ head.params["dp.u"].data.T).argmax(axis=-1)
        out.append(DpPrediction(heads, [head.labels[k] for k in lab]))
    return out


def root_scores(head: DpHead, x_dp: Tensor, lengths) -> List[np.ndarray]:
    """Per sentence, P_head([ROOT] | w_i) for each token i."""
    act = head.hidden(x_dp).data
    scores = act @ head.params["dp.v"].data
    n_units = scores.shape[-1]
    masked = np.where(candidate_mask(lengths, n_units), scores, -np.inf)
    masked = masked - masked.max(axis=-1, keepdims=True)
    probs = np.exp(masked)
    probs /= probs.sum(axis=-1, keepdims=True)
    return [probs[b, 1 : n + 1, 0] for b, n in enumerate(lengths)]


def has_cycle(heads: Sequence[int]) -> bool:
    n = len(heads)
    state = [0] * (n + 1)  # 0 unvisited, 1 on current path, 2 done
    for start in range(1, n + 1):
        path = []
        node = start
        while node != 0 and state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if node != 0 and state[node] == 1:
            return True
        for p in path:
            state[p] = 2
    return False


def evaluate_dp(predicted: Sequence[Sentence], gold: Sequence[Sentence]) -> Dict[str, float]:
    """UAS, LAS and ROOT over aligned sentence lists.

    ROOT is the fraction of sentences whose gold root token is predicted to
    attach to [ROOT]. ``cycles`` counts predicted graphs containing a cycle.
    """
    if len(predicted) != len(gold):
        raise DataError(f"{len(predicted)} predicted vs {len(gold)} gold sentences")
    tokens = correct_heads = correct_labeled = root_hits = cycles = 0
    for p, g in zip(predicted, gold):
        if p.id != g.id or len(p) != len(g):
            raise DataError(f"sentence mismatch: predicted {p.id} vs gold {g.id}")
        if g.heads is None or p.heads is None:
            raise DataError(f"sentence {g.id}: missing heads")
        for ph, pl, gh, gl in zip(p.heads, p.dep_labels, g.heads, g.dep_labels):
            tokens += 1
            if ph == gh:
                correct_heads += 1
                if pl == gl:
                    correct_labeled += 1
        if p.heads[g.heads.index(0)] == 0:
            root_hits += 1
        cycles += has_cycle(p.heads)
    return {
        "UAS": correct_heads / tokens if tokens else 0.0,
        "LAS": correct_labeled / tokens if tokens else 0.0,
        "ROOT": root_hits / len(gold) if gold else 0.0,
        "tokens": tokens,
        "sentences": len(gold),
        "cycles": cycles,
    }
