"""Subword learning and task-specific input assembly.

Inputs follow three templates (``w`` are SUW subwords, ``p`` the predicate's):

* DP, root unknown:  [CLS] w1 .. wn [SEP] [ROOT]
* DP, root known:    [CLS] w1 .. wn [SEP] w_root [SEP] [ROOT]
* SRL:               [CLS] w1 .. wn [SEP] p [SEP]

Every assembled input carries the map from output units (SUWs, LUWs or
argument spans) to the subword positions whose vectors get averaged.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from depsrl.corpus import PredicateFrame, Sentence
from depsrl.errors import ConfigError, DataError, LengthError, ParseError
from depsrl.numerics import Tensor, mean_over_sets

PAD, UNK, CLS, SEP, ROOT = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[ROOT]"
SPECIALS = (PAD, UNK, CLS, SEP, ROOT)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, ROOT_ID = range(len(SPECIALS))

DEFAULT_MAX_TOKENS = 320


class SubwordModel:
    """Byte-pair merges learned inside SUW boundaries.

    With ``atomic=True`` whole SUWs are vocabulary entries and no merging
    happens (the no-BPE configuration).
    """

    def __init__(self, merges: Sequence[Tuple[str, str]], tokens: Sequence[str], atomic: bool = False):
        self.merges = [tuple(m) for m in merges]
        self.tokens = list(tokens)
        self.atomic = atomic
        if tuple(self.tokens[: len(SPECIALS)]) != SPECIALS:
            raise DataError("subword table must start with the special tokens")
        self.token_to_id: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        self._ranks = {m: r for r, m in enumerate(self.merges)}
        self._cache: Dict[str, Tuple[str, ...]] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SubwordModel)
            and self.merges == other.merges
            and self.tokens == other.tokens
            and self.atomic == other.atomic
        )

    def segment(self, word: str) -> Tuple[str, ...]:
        """Split one SUW into subword strings; unknown pieces stay as raw text."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        if self.atomic:
            pieces: Tuple[str, ...] = (word,)
        else:
            symbols = list(word)
            while len(symbols) > 1:
                best = None
                for k in range(len(symbols) - 1):
                    r = self._ranks.get((symbols[k], symbols[k + 1]))
                    if r is not None and (best is None or r < best[0]):
                        best = (r, k)
                if best is None:
                    break
                pair = self.merges[best[0]]
                symbols = _merge_symbols(symbols, pair)
            pieces = tuple(symbols)
        self._cache[word] = pieces
        return pieces

    def encode_word(self, word: str) -> List[int]:
        return [self.token_to_id.get(p, UNK_ID) for p in self.segment(word)]

    def to_text(self) -> str:
        lines = [f"#depsrl-subwords mode={'atomic' if self.atomic else 'bpe'}", f"merges {len(self.merges)}"]
        lines += [json.dumps(list(m), ensure_ascii=False) for m in self.merges]
        lines.append(f"tokens {len(self.tokens)}")
        lines += [json.dumps(t, ensure_ascii=False) for t in self.tokens]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SubwordModel":
        lines = text.splitlines()
        try:
            header = lines[0]
            if not header.startswith("#depsrl-subwords"):
                raise ParseError("missing subword model header", 1)
            atomic = "mode=atomic" in header
            n_merges = int(lines[1].split()[1])
            merges = [tuple(json.loads(l)) for l in lines[2 : 2 + n_merges]]
            pos = 2 + n_merges
            n_tokens = int(lines[pos].split()[1])
            tokens = [json.loads(l) for l in lines[pos + 1 : pos + 1 + n_tokens]]
        except (IndexError, ValueError) as exc:
            raise ParseError(f"malformed subword model: {exc}") from None
        return cls(merges, tokens, atomic)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SubwordModel":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _merge_symbols(symbols: List[str], pair: Tuple[str, str]) -> List[str]:
    out = []
    k = 0
    while k < len(symbols):
        if k + 1 < len(symbols) and symbols[k] == pair[0] and symbols[k + 1] == pair[1]:
            out.append(pair[0] + pair[1])
            k += 2
        else:
            out.append(symbols[k])
            k += 1
    return out


def learn_subwords(corpus: Sequence[Sentence], n_merges: int, atomic: bool = False) -> SubwordModel:
    """Learn ``n_merges`` greedy most-frequent-pair merges over SUW types.

    Ties in pair frequency go to the lexicographically smallest merged string
    (then to the smaller pair). Learning stops early once no pair is left.
    """
    if n_merges < 0:
        raise ConfigError("n_merges must be >= 0")
    freqs = Counter(w for sent in corpus for w in sent.suw)
    if not freqs:
        raise DataError("cannot learn subwords from an empty corpus")
    if atomic:
        return SubwordModel([], list(SPECIALS) + sorted(freqs), atomic=True)
    words = {w: list(w) for w in freqs}
    chars = sorted({c for w in freqs for c in w})
    merges: List[Tuple[str, str]] = []
    for _ in range(n_merges):
        pairs: Counter = Counter()
        for w, syms in words.items():
            f = freqs[w]
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += f
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0][0] + kv[0][1], kv[0]))[0]
        merges.append(best)
        for w, syms in words.items():
            if len(syms) > 1:
                words[w] = _merge_symbols(syms, best)
    tokens = list(SPECIALS) + [c for c in chars if c not in SPECIALS]
    seen = set(tokens)
    for a, b in merges:
        if a + b not in seen:
            seen.add(a + b)
            tokens.append(a + b)
    return SubwordModel(merges, tokens)


# ---------------------------------------------------------------- assembly


@dataclass
class AssembledInput:
    token_ids: List[int]
    segment_ids: List[int]
    pieces: List[str]
    unit_map: List[List[int]]
    predicate_indicator: List[int]
    root_position: Optional[int] = None
    candidate_positions: List[int] = field(default_factory=list)
    predicate_positions: List[int] = field(default_factory=list)
    predicate_unit: Optional[int] = None
    suw_positions: List[List[int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.token_ids)


class _Builder:
    def __init__(self, model: SubwordModel):
        self.model = model
        self.ids: List[int] = []
        self.segs: List[int] = []
        self.pieces: List[str] = []
        self.flags: List[int] = []

    def special(self, tok: str, seg: int) -> int:
        self.ids.append(self.model.token_to_id[tok])
        self.segs.append(seg)
        self.pieces.append(tok)
        self.flags.append(0)
        return len(self.ids) - 1

    def word(self, w: str, seg: int, flag: int = 0) -> List[int]:
        start = len(self.ids)
        pieces = self.model.segment(w)
        for p in pieces:
            self.ids.append(self.model.token_to_id.get(p, UNK_ID))
            self.segs.append(seg)
            self.pieces.append(p)
            self.flags.append(flag)
        return list(range(start, len(self.ids)))

    def check(self, max_tokens: int, sid: str) -> None:
        if len(self.ids) > max_tokens:
            raise LengthError(f"sentence {sid}: assembled input has {len(self.ids)} tokens > max_tokens={max_tokens}")


def assemble_dp(
    sentence: Sentence,
    mode: str,
    model: SubwordModel,
    root_token: Optional[int] = None,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> AssembledInput:
    """Build the DP input; ``root_token`` is the 0-based SUW index of w_root."""
    if mode not in ("root_unknown", "root_known"):
        raise ConfigError(f"unknown DP mode {mode!r}")
    b = _Builder(model)
    b.special(CLS, 0)
    suw_pos = [b.word(w, 0) for w in sentence.suw]
    b.special(SEP, 0)
    if mode == "root_known":
        if root_token is None:
            raise ConfigError(f"sentence {sentence.id}: root_known input needs a root token")
        if not 0 <= root_token < len(sentence.suw):
            raise DataError(f"sentence {sentence.id}: root token {root_token} out of range")
        b.word(sentence.suw[root_token], 1)
        b.special(SEP, 1)
    root = b.special(ROOT, 1)
    b.check(max_tokens, sentence.id)
    return AssembledInput(
        token_ids=b.ids,
        segment_ids=b.segs,
        pieces=b.pieces,
        unit_map=suw_pos,
        predicate_indicator=b.flags,
        root_position=root,
        candidate_positions=list(range(len(suw_pos) + 1)),
        suw_positions=suw_pos,
    )


def assemble_srl(
    sentence: Sentence,
    frame: PredicateFrame,
    setting: str,
    model: SubwordModel,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    predicate_segment: bool = True,
) -> AssembledInput:
    """Build the SRL input for one predicate frame.

    ``unit_map`` lists LUW units in the morpheme setting, and the argument
    spans followed by the predicate span in the span-given setting. With
    ``predicate_segment=False`` the trailing ``p [SEP]`` is left out.
    """
    if setting not in ("morpheme", "span_given"):
        raise ConfigError(f"unknown SRL setting {setting!r}")
    p0, p1 = sentence.luw_to_suw(frame.predicate)
    b = _Builder(model)
    b.special(CLS, 0)
    suw_pos = [b.word(w, 0, flag=int(p0 <= i < p1)) for i, w in enumerate(sentence.suw)]
    b.special(SEP, 0)
    if predicate_segment:
        for w in sentence.suw[p0:p1]:
            b.word(w, 1, flag=1)
        b.special(SEP, 1)
    b.check(max_tokens, sentence.id)

    def positions(suw_range):
        return [p for i in range(*suw_range) for p in suw_pos[i]]

    pred_positions = positions((p0, p1))
    if setting == "morpheme":
        unit_map = [positions(span) for span in sentence.luw_spans]
        pred_unit = frame.predicate[0] if frame.predicate[1] - frame.predicate[0] == 1 else None
    else:
        unit_map = [positions(sentence.luw_to_suw(span)) for _, span in frame.arguments]
        unit_map.append(pred_positions)
        pred_unit = len(unit_map) - 1
    return AssembledInput(
        token_ids=b.ids,
        segment_ids=b.segs,
        pieces=b.pieces,
        unit_map=unit_map,
        predicate_indicator=b.flags,
        predicate_positions=pred_positions,
        predicate_unit=pred_unit,
        suw_positions=suw_pos,
    )


def average_units(hidden, unit_map: Sequence[Sequence[int]]):
    """Mean of ``hidden`` rows over each unit's positions.

    Accepts a numpy array (returns an array) or a :class:`Tensor` (returns a
    differentiable Tensor).
    """
    if isinstance(hidden, Tensor):
        return mean_over_sets(hidden, [list(u) for u in unit_map])
    return mean_over_sets(Tensor(hidden), [list(u) for u in unit_map]).data


def detokenize_units(inp: AssembledInput) -> List[str]:
    """Concatenate the subword pieces of each SUW back into its surface."""
    return ["".join(inp.pieces[p] for p in positions) for positions in inp.suw_positions]
