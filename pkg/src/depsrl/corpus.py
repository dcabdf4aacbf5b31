"""Corpus types, readers/writers, leak-safe splitting and a synthetic generator."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from depsrl.errors import ConfigError, ParseError, ValidationError

logger = logging.getLogger(__name__)

Span = Tuple[int, int]
SPLITS = ("train", "dev", "test")


@dataclass
class PredicateFrame:
    """A predicate and its labeled arguments; spans are half-open LUW ranges."""

    predicate: Span
    arguments: List[Tuple[str, Span]] = field(default_factory=list)

    def __post_init__(self):
        self.predicate = tuple(self.predicate)
        self.arguments = [(str(lab), tuple(span)) for lab, span in self.arguments]

    def validate(self, n_luw: int, roles: Optional[Iterable[str]] = None, where: str = "") -> None:
        spans = [("predicate", self.predicate)] + [(lab, span) for lab, span in self.arguments]
        for lab, (a, b) in spans:
            if not 0 <= a < b <= n_luw:
                raise ValidationError(f"{where}frame {self.predicate}: span {lab}@[{a},{b}) outside [0,{n_luw})")
        ordered = sorted(spans, key=lambda s: s[1])
        for (l1, s1), (l2, s2) in zip(ordered, ordered[1:]):
            if s2[0] < s1[1]:
                raise ValidationError(
                    f"{where}frame {self.predicate}: overlapping spans {l1}@[{s1[0]},{s1[1]}) and {l2}@[{s2[0]},{s2[1]})"
                )
        if roles is not None:
            roles = set(roles)
            for lab, _ in self.arguments:
                if lab not in roles:
                    raise ValidationError(f"{where}frame {self.predicate}: role {lab!r} not in inventory")


@dataclass
class Sentence:
    id: str
    suw: List[str]
    luw_spans: List[Span]
    heads: Optional[List[int]] = None
    dep_labels: Optional[List[str]] = None
    frames: List[PredicateFrame] = field(default_factory=list)

    def __post_init__(self):
        self.luw_spans = [tuple(s) for s in self.luw_spans]

    def __len__(self) -> int:
        return len(self.suw)

    @property
    def n_luw(self) -> int:
        return len(self.luw_spans)

    @property
    def root_index(self) -> Optional[int]:
        """0-based SUW index of the token attached to the root, if known."""
        if self.heads is None:
            return None
        return self.heads.index(0)

    def luw_to_suw(self, span: Span) -> Span:
        """Convert a LUW range to the SUW range it covers."""
        a, b = span
        return self.luw_spans[a][0], self.luw_spans[b - 1][1]

    def validate(self, roles: Optional[Iterable[str]] = None, trees: bool = True) -> None:
        """Check structure; ``trees=False`` accepts any in-range head graph
        (parser output is not guaranteed to be a tree)."""
        where = f"sentence {self.id}: "
        n = len(self.suw)
        if n == 0:
            raise ValidationError(f"{where}no tokens")
        pos = 0
        for a, b in self.luw_spans:
            if a != pos or b <= a:
                raise ValidationError(f"{where}luw_spans do not partition [0,{n}) at [{a},{b})")
            pos = b
        if pos != n:
            raise ValidationError(f"{where}luw_spans cover [0,{pos}) but sentence has {n} SUWs")
        if self.heads is not None:
            validate_tree(self.heads, where, strict=trees)
            if self.dep_labels is None or len(self.dep_labels) != n:
                raise ValidationError(f"{where}need one dependency label per SUW")
        for frame in self.frames:
            frame.validate(self.n_luw, roles, where)


def validate_tree(heads: Sequence[int], where: str = "", strict: bool = True) -> None:
    """Heads must be in range and not self-loops; ``strict`` also demands a
    single root and no cycles."""
    n = len(heads)
    roots = [i for i, h in enumerate(heads) if h == 0]
    if strict and len(roots) != 1:
        raise ValidationError(f"{where}expected exactly one root, found {len(roots)}")
    for i, h in enumerate(heads):
        if not 0 <= h <= n:
            raise ValidationError(f"{where}head {h} of token {i + 1} out of range [0,{n}]")
        if h == i + 1:
            raise ValidationError(f"{where}token {i + 1} is its own head")
    if not strict:
        return
    for start in range(n):
        seen = set()
        node = start + 1
        while node != 0:
            if node in seen:
                raise ValidationError(f"{where}cycle through token {node}")
            seen.add(node)
            node = heads[node - 1]


def _trivial_luw(n: int) -> List[Span]:
    return [(i, i + 1) for i in range(n)]


# ---------------------------------------------------------------- CoNLL-U


def read_conllu(path, trees: bool = True) -> List[Sentence]:
    """Read a CoNLL-U file, keeping ID, FORM, HEAD and DEPREL.

    Long-unit-word boundaries are taken from ``LUWBILabel=B|I`` in MISC when
    present; otherwise every SUW is its own LUW. ``trees=False`` reads
    parser output whose head graphs may have cycles or several roots.
    """
    path = Path(path)
    sentences: List[Sentence] = []
    rows: list = []
    sent_id = None
    start_line = 0

    def flush():
        nonlocal rows, sent_id
        if not rows:
            sent_id = None
            return
        sid = sent_id if sent_id is not None else f"{path.stem}-{len(sentences) + 1}"
        sentences.append(_build_conllu_sentence(sid, rows, path, start_line, trees))
        rows = []
        sent_id = None

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                if line.startswith("# sent_id") and "=" in line:
                    sent_id = line.split("=", 1)[1].strip()
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise ParseError(f"expected 10 tab-separated columns, got {len(cols)}", lineno, path)
            if "-" in cols[0] or "." in cols[0]:
                continue
            try:
                tid = int(cols[0])
            except ValueError:
                raise ParseError(f"bad token id {cols[0]!r}", lineno, path) from None
            if not rows:
                start_line = lineno
            if tid != len(rows) + 1:
                raise ParseError(f"token id {tid} out of sequence", lineno, path)
            if cols[6] == "_":
                head = None
            else:
                try:
                    head = int(cols[6])
                except ValueError:
                    raise ParseError(f"bad head {cols[6]!r}", lineno, path) from None
            rows.append((cols[1], head, cols[7], cols[9]))
    flush()
    return sentences


def _build_conllu_sentence(sid, rows, path, lineno, trees=True) -> Sentence:
    suw = [r[0] for r in rows]
    heads = [r[1] for r in rows]
    labels = [r[2] for r in rows]
    luw_flags = []
    for r in rows:
        flag = None
        for item in r[3].split("|"):
            if item.startswith("LUWBILabel="):
                flag = item.split("=", 1)[1]
        luw_flags.append(flag)
    if all(f is not None for f in luw_flags):
        spans, start = [], 0
        for i, f in enumerate(luw_flags):
            if f == "B" and i > 0:
                spans.append((start, i))
                start = i
        spans.append((start, len(rows)))
    else:
        spans = _trivial_luw(len(rows))
    if any(h is None for h in heads):
        heads, labels = None, None
    sent = Sentence(sid, suw, spans, heads, labels)
    try:
        sent.validate(trees=trees)
    except ValidationError as exc:
        raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return sent


def write_conllu(sentences: Iterable[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in sentences:
            fh.write(f"# sent_id = {sent.id}\n")
            starts = {a for a, _ in sent.luw_spans}
            for i, form in enumerate(sent.suw):
                head = "_" if sent.heads is None else str(sent.heads[i])
                label = "_" if sent.dep_labels is None else sent.dep_labels[i]
                misc = "LUWBILabel=" + ("B" if i in starts else "I")
                fh.write("\t".join([str(i + 1), form, "_", "_", "_", "_", head, label, "_", misc]) + "\n")
            fh.write("\n")


# ---------------------------------------------------------------- SRL JSONL


def sentence_to_json(sent: Sentence) -> dict:
    obj = {
        "sentence_id": sent.id,
        "suw": list(sent.suw),
        "luw_spans": [list(s) for s in sent.luw_spans],
        "frames": [
            {
                "predicate": list(f.predicate),
                "arguments": [{"label": lab, "span": list(span)} for lab, span in f.arguments],
            }
            for f in sent.frames
        ],
    }
    if sent.heads is not None:
        obj["dp"] = {"heads": list(sent.heads), "labels": list(sent.dep_labels)}
    return obj


def sentence_from_json(obj: dict, roles=None, trees: bool = True) -> Sentence:
    dp = obj.get("dp") or {}
    frames = [
        PredicateFrame(f["predicate"], [(a["label"], a["span"]) for a in f.get("arguments", [])])
        for f in obj.get("frames", [])
    ]
    sent = Sentence(
        id=str(obj["sentence_id"]),
        suw=list(obj["suw"]),
        luw_spans=obj["luw_spans"],
        heads=list(dp["heads"]) if "heads" in dp else None,
        dep_labels=list(dp["labels"]) if "labels" in dp else None,
        frames=frames,
    )
    sent.validate(roles, trees)
    return sent


def read_srl_jsonl(path, roles: Optional[Iterable[str]] = None, trees: bool = True) -> List[Sentence]:
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno, path) from None
            try:
                out.append(sentence_from_json(obj, roles, trees))
            except KeyError as exc:
                raise ParseError(f"missing field {exc.args[0]!r}", lineno, path) from None
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ValidationError):
                    raise ValidationError(f"{path}:{lineno}: {exc}") from None
                raise ParseError(f"malformed record: {exc}", lineno, path) from None
    return out


def write_srl_jsonl(sentences: Iterable[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in sentences:
            fh.write(json.dumps(sentence_to_json(sent), ensure_ascii=False) + "\n")


def read_corpus(path, trees: bool = True) -> List[Sentence]:
    """Dispatch on extension: ``.jsonl`` (and split suffixes of it) vs CoNLL-U."""
    name = Path(path).name
    if ".jsonl" in name:
        return read_srl_jsonl(path, trees=trees)
    return read_conllu(path, trees)


def write_corpus(sentences, path, fmt: str) -> None:
    if fmt == "jsonl":
        write_srl_jsonl(sentences, path)
    elif fmt == "conllu":
        write_conllu(sentences, path)
    else:
        raise ConfigError(f"unknown corpus format {fmt!r}")


# ---------------------------------------------------------------- splitting


@dataclass
class SplitSpec:
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    shared_sentence_map: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.ratios, str):
            self.ratios = parse_ratios(self.ratios)
        self.ratios = tuple(float(r) for r in self.ratios)
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ConfigError(f"split ratios must be three non-negative numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {sum(self.ratios)}")
        for sid, split in self.shared_sentence_map.items():
            if split not in SPLITS:
                raise ConfigError(f"shared id {sid!r} maps to unknown split {split!r}")


def parse_ratios(text: str) -> Tuple[float, float, float]:
    parts = [float(p) for p in text.replace(",", ":").split(":")]
    total = sum(parts)
    if len(parts) != 3 or total <= 0:
        raise ConfigError(f"bad ratio string {text!r}")
    return tuple(p / total for p in parts)


def _apportion(total: int, weights: Sequence[float]) -> List[int]:
    """Largest-remainder integer apportionment of ``total`` by ``weights``."""
    wsum = float(sum(weights))
    if total == 0 or wsum <= 0:
        return [0] * len(weights)
    exact = [total * w / wsum for w in weights]
    counts = [int(np.floor(x)) for x in exact]
    order = sorted(range(len(weights)), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[: total - sum(counts)]:
        counts[k] += 1
    return counts


def _assign(corpus: Sequence[Sentence], ratios, forced: Mapping[str, str], rng) -> Dict[str, str]:
    assignment = {s.id: forced[s.id] for s in corpus if s.id in forced}
    free = [s.id for s in corpus if s.id not in forced]
    targets = _apportion(len(corpus), ratios)
    forced_counts = [sum(1 for v in assignment.values() if v == name) for name in SPLITS]
    room = [max(0, t - c) for t, c in zip(targets, forced_counts)]
    if sum(room) == len(free):
        counts = room
    else:
        counts = _apportion(len(free), room if sum(room) else ratios)
    order = rng.permutation(len(free))
    pos = 0
    for name, cnt in zip(SPLITS, counts):
        for k in order[pos : pos + cnt]:
            assignment[free[k]] = name
        pos += cnt
    return assignment


def split_leak_safe(
    dp_corpus: Sequence[Sentence],
    srl_corpus: Sequence[Sentence],
    spec: SplitSpec,
    seed: int = 0,
) -> Tuple[Dict[str, List[Sentence]], Dict[str, List[Sentence]]]:
    """Split both corpora so that a sentence shared between them lands in the
    same split on both sides.

    The DP corpus is split first (honoring ``spec.shared_sentence_map``); SRL
    sentences whose id also appears in the DP corpus inherit its split, and the
    rest fill the SRL splits toward the configured ratios.
    """
    for corpus, name in ((dp_corpus, "dp"), (srl_corpus, "srl")):
        ids = [s.id for s in corpus]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"{name} corpus has duplicate sentence ids")
    rng = np.random.default_rng(seed)
    dp_assign = _assign(dp_corpus, spec.ratios, spec.shared_sentence_map, rng)
    forced = dict(spec.shared_sentence_map)
    forced.update(dp_assign)
    srl_assign = _assign(srl_corpus, spec.ratios, forced, rng)

    def bucket(corpus, assign):
        out = {name: [] for name in SPLITS}
        for s in corpus:
            out[assign[s.id]].append(s)
        return out

    return bucket(dp_corpus, dp_assign), bucket(srl_corpus, srl_assign)


def write_splits(splits: Mapping[str, Sequence[Sentence]], prefix, fmt: str) -> List[Path]:
    paths = []
    for name in SPLITS:
        p = Path(f"{prefix}.{name}")
        write_corpus(splits[name], p, fmt)
        paths.append(p)
    return paths


# ---------------------------------------------------------------- synthetic data

ROLE_NAMES = [
    "Agent",
    "Object",
    "Goal",
    "Location",
    "Time",
    "Source",
    "Instrument",
    "Cause",
    "Manner",
    "Purpose",
    "Experiencer",
    "Theme",
]
_ROLE_DEPRELS = ["nsubj", "obj", "iobj"]
_CONSONANTS = "kstnhmrgzbdp"
_VOWELS = "aiueo"


@dataclass
class SyntheticConfig:
    """Size parameters of the template grammar.

    Sentence length is controlled by the number of phrases (arguments and
    adverbials) placed before the predicate.
    """

    n_sentences: int = 100
    vocab_size: int = 200
    n_roles: int = 5
    min_phrases: int = 1
    max_phrases: int = 4

    def __post_init__(self):
        if self.n_sentences < 0:
            raise ConfigError("n_sentences must be >= 0")
        if self.n_roles < 1:
            raise ConfigError("n_roles must be >= 1")
        if self.vocab_size < self.n_roles + 25:
            raise ConfigError(f"vocab_size must be at least n_roles + 25 = {self.n_roles + 25}")
        if not 1 <= self.min_phrases <= self.max_phrases:
            raise ConfigError("need 1 <= min_phrases <= max_phrases")

    @property
    def roles(self) -> List[str]:
        return [ROLE_NAMES[k] if k < len(ROLE_NAMES) else f"Role{k}" for k in range(self.n_roles)]


def role_deprel(k: int) -> str:
    return _ROLE_DEPRELS[k] if k < len(_ROLE_DEPRELS) else "obl"


def _make_lexicon(cfg: SyntheticConfig, rng) -> Dict[str, List[str]]:
    words: List[str] = []
    seen = set()
    while len(words) < cfg.vocab_size:
        n_syll = int(rng.integers(1, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syll))
        if w not in seen:
            seen.add(w)
            words.append(w)
    # short words make the best function words
    words.sort(key=len)
    lex: Dict[str, List[str]] = {}
    pos = 0

    def take(name, k):
        nonlocal pos
        lex[name] = words[pos : pos + k]
        pos += k

    take("particle", cfg.n_roles)
    take("genitive", 1)
    take("punct", 1)
    take("aux", 3)
    take("det", 4)
    rest = words[pos:]
    rng.shuffle(rest)
    n_rest = len(rest)
    n_verb = max(3, n_rest // 5)
    n_adv = max(3, n_rest // 10)
    lex["verb"] = rest[:n_verb]
    lex["adverb"] = rest[n_verb : n_verb + n_adv]
    lex["noun"] = rest[n_verb + n_adv :]
    return lex


def generate_synthetic(config: SyntheticConfig, seed: int = 0) -> List[Sentence]:
    """Generate sentences with gold dependency trees and one predicate frame each.

    Arguments are noun phrases closed by a role-specific particle; the phrase
    head attaches to the predicate verb with a role-specific relation, so the
    dependency edge into the predicate predicts the semantic role.
    """
    rng = np.random.default_rng(seed)
    lex = _make_lexicon(config, rng)
    roles = config.roles

    def pick(kind):
        options = lex[kind]
        return options[int(rng.integers(len(options)))]

    out = []
    for k in range(config.n_sentences):
        n_phr = int(rng.integers(config.min_phrases, config.max_phrases + 1))
        role_ids = list(rng.permutation(config.n_roles))
        phrases = []
        for _ in range(n_phr):
            if role_ids and rng.random() < 0.75:
                phrases.append(("arg", int(role_ids.pop())))
            else:
                phrases.append(("adv", None))

        suw: List[str] = []
        heads: List[Optional[int]] = []
        labels: List[str] = []
        luw: List[Span] = []
        to_verb: List[Tuple[int, str]] = []  # (suw index, label) attached to the verb later
        arg_luw_spans: List[Tuple[str, Span]] = []

        def add(word, head, label, new_luw=True):
            if new_luw:
                luw.append((len(suw), len(suw) + 1))
            else:
                a, _ = luw[-1]
                luw[-1] = (a, len(suw) + 1)
            suw.append(word)
            heads.append(head)
            labels.append(label)
            return len(suw)  # 1-based position of the word just added

        for kind, role in phrases:
            if kind == "adv":
                pos = add(pick("adverb"), None, "advmod")
                to_verb.append((pos, "advmod"))
                continue
            luw_start = len(luw)
            pending: List[Tuple[int, str]] = []  # positions awaiting the head noun
            if rng.random() < 0.3:
                pending.append((add(pick("det"), None, "det"), "det"))
            if rng.random() < 0.2:
                gen_noun = add(pick("noun"), None, "nmod")
                pending.append((gen_noun, "nmod"))
                add(pick("genitive"), gen_noun, "case")
            if rng.random() < 0.3:
                first = add(pick("noun"), None, "compound")
                head_noun = add(pick("noun"), None, "", new_luw=False)
                heads[first - 1] = head_noun
            else:
                head_noun = add(pick("noun"), None, "")
            for p, _ in pending:
                heads[p - 1] = head_noun
            add(lex["particle"][role], head_noun, "case")
            to_verb.append((head_noun, role_deprel(role)))
            arg_luw_spans.append((roles[role], (luw_start, len(luw))))

        verb = add(pick("verb"), 0, "root")
        pred_luw = len(luw) - 1
        if rng.random() < 0.5:
            add(pick("aux"), verb, "aux", new_luw=False)
        add(lex["punct"][0], verb, "punct")
        for p, lab in to_verb:
            heads[p - 1] = verb
            labels[p - 1] = lab
        frame = PredicateFrame((pred_luw, pred_luw + 1), sorted(arg_luw_spans, key=lambda a: a[1]))
        sent = Sentence(f"syn-{seed}-{k:05d}", suw, luw, list(heads), labels, [frame])
        sent.validate(roles)
        out.append(sent)
    return out
