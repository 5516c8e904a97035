"""Corpus ingestion: dialogues, VAD lexicon, keyword extraction, emotion labels, splits.

The corpus is JSONL, one dialogue per line:
``{"id": str, "situation": str, "turns": [{"speaker": "seeker"|"supporter", "text": str}]}``
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

SEEKER = "seeker"
SUPPORTER = "supporter"

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Keywords must be content tokens: not a stopword and at least this long.
MIN_KEYWORD_LEN = 3


class CorpusError(ValueError):
    """Malformed corpus, lexicon, or sidecar input."""


class Polarity(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NON_EMOTIONAL = "non_emotional"


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    tokens: tuple[str, ...]
    turn_index: int  # 1-based within the dialogue

    @classmethod
    def make(cls, speaker: str, text: str, turn_index: int) -> "Utterance":
        return cls(speaker, text, tuple(tokenize(text)), turn_index)


@dataclass(frozen=True)
class Dialogue:
    id: str
    situation: str
    turns: tuple[Utterance, ...]

    def seeker_turns(self) -> list[Utterance]:
        return [u for u in self.turns if u.speaker == SEEKER]

    def supporter_turns(self) -> list[Utterance]:
        return [u for u in self.turns if u.speaker == SUPPORTER]


def _require(obj: dict, name: str, kind: type, where: str):
    if name not in obj:
        raise CorpusError(f"{where}: missing field '{name}'")
    value = obj[name]
    if not isinstance(value, kind):
        raise CorpusError(f"{where}: field '{name}' must be {kind.__name__}")
    return value


def _validate_dialogue(d: Dialogue, where: str) -> None:
    if len(d.turns) < 2:
        raise CorpusError(f"{where}: dialogue needs at least 2 turns")
    if d.turns[0].speaker != SEEKER:
        raise CorpusError(f"{where}: first turn must be '{SEEKER}'")
    # Leading seeker turns may repeat; once a supporter speaks, speakers alternate.
    supporter_seen = False
    for prev, cur in zip(d.turns, d.turns[1:]):
        if prev.speaker == SUPPORTER:
            supporter_seen = True
        if supporter_seen and cur.speaker == prev.speaker:
            raise CorpusError(
                f"{where}: speakers must alternate (turn {cur.turn_index})"
            )


def dialogue_from_dict(obj: dict, where: str = "dialogue") -> Dialogue:
    did = _require(obj, "id", str, where)
    situation = _require(obj, "situation", str, where)
    raw_turns = _require(obj, "turns", list, where)
    turns = []
    for i, t in enumerate(raw_turns):
        turn_where = f"{where}: turn {i + 1}"
        if not isinstance(t, dict):
            raise CorpusError(f"{turn_where}: turn must be an object")
        speaker = _require(t, "speaker", str, turn_where)
        if speaker not in (SEEKER, SUPPORTER):
            raise CorpusError(
                f"{turn_where}: field 'speaker' must be '{SEEKER}' or '{SUPPORTER}'"
            )
        text = _require(t, "text", str, turn_where)
        turns.append(Utterance.make(speaker, text, i + 1))
    dialogue = Dialogue(did, situation, tuple(turns))
    _validate_dialogue(dialogue, where)
    return dialogue


def load_corpus(path: str | Path) -> list[Dialogue]:
    """Load a JSONL corpus; malformed lines are reported with their line number."""
    dialogues = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"line {lineno}: invalid JSON ({e.msg})") from e
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            dialogues.append(dialogue_from_dict(obj, where=f"line {lineno}"))
    return dialogues


def save_corpus(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in dialogues:
            obj = {
                "id": d.id,
                "situation": d.situation,
                "turns": [{"speaker": u.speaker, "text": u.text} for u in d.turns],
            }
            f.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# VAD lexicon


@dataclass(frozen=True)
class VadLexicon:
    """Word -> valence in [0, 1]; words at or above `tau` count as positive."""

    valence: dict[str, float]
    tau: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise CorpusError(f"tau must be in (0, 1), got {self.tau}")
        for word, v in self.valence.items():
            if not 0.0 <= v <= 1.0:
                raise CorpusError(f"valence of '{word}' out of [0, 1]: {v}")

    @classmethod
    def load(cls, path: str | Path, tau: float = 0.5) -> "VadLexicon":
        values: dict[str, float] = {}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise CorpusError(
                        f"{path}: line {lineno}: expected 'word<TAB>valence'"
                    )
                try:
                    values[parts[0]] = float(parts[1])
                except ValueError as e:
                    raise CorpusError(
                        f"{path}: line {lineno}: bad valence '{parts[1]}'"
                    ) from e
        return cls(values, tau)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for word in sorted(self.valence):
                f.write(f"{word}\t{self.valence[word]}\n")

    def polarity(self, word: str) -> Polarity:
        return polarity(word, self)


def polarity(word: str, lex: VadLexicon) -> Polarity:
    """Positive iff valence >= tau, negative below, non-emotional if absent."""
    v = lex.valence.get(word)
    if v is None:
        return Polarity.NON_EMOTIONAL
    return Polarity.POSITIVE if v >= lex.tau else Polarity.NEGATIVE


# ---------------------------------------------------------------------------
# Keywords


@dataclass(frozen=True)
class KeywordSet:
    """Keywords in first-occurrence order, optionally tagged with polarity."""

    words: tuple[str, ...]
    tags: Optional[tuple[Polarity, ...]] = None

    def __iter__(self):
        return iter(self.words)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.words


def extract_keywords(
    tokens_or_utterance: Utterance | Sequence[str],
    stopwords: frozenset[str] | set[str],
    lex: Optional[VadLexicon] = None,
) -> KeywordSet:
    """Content tokens of an utterance: stopwords and tokens shorter than
    MIN_KEYWORD_LEN removed, de-duplicated, first occurrence first."""
    if isinstance(tokens_or_utterance, Utterance):
        tokens = tokens_or_utterance.tokens
    else:
        tokens = tokens_or_utterance
    seen = []
    for tok in tokens:
        if len(tok) < MIN_KEYWORD_LEN or tok in stopwords:
            continue
        if tok not in seen:
            seen.append(tok)
    words = tuple(seen)
    tags = tuple(polarity(w, lex) for w in words) if lex is not None else None
    return KeywordSet(words, tags)


def load_stopwords(path: str | Path) -> frozenset[str]:
    with open(path, "r", encoding="utf-8") as f:
        return frozenset(line.strip() for line in f if line.strip())


# ---------------------------------------------------------------------------
# Emotion labels


@dataclass(frozen=True)
class LabelVocabulary:
    """Top-V most frequent emotional words per polarity in a training split."""

    positive: tuple[str, ...]
    negative: tuple[str, ...]
    pos_index: dict[str, int] = field(repr=False, default_factory=dict)
    neg_index: dict[str, int] = field(repr=False, default_factory=dict)

    @classmethod
    def make(cls, positive: Sequence[str], negative: Sequence[str]) -> "LabelVocabulary":
        pos = tuple(positive)
        neg = tuple(negative)
        return cls(pos, neg, {w: i for i, w in enumerate(pos)}, {w: i for i, w in enumerate(neg)})


@dataclass(frozen=True)
class EmotionLabelSet:
    """One utterance's emotion labels, restricted to a label vocabulary."""

    positive: frozenset[str]
    negative: frozenset[str]
    vocabulary: LabelVocabulary


def _reaction_words(
    u: Utterance,
    sidecar_reactions: Optional[Sequence[str]],
    max_reactions: int,
) -> list[str]:
    if sidecar_reactions is not None:
        return [w.lower() for w in sidecar_reactions[:max_reactions]]
    return list(u.tokens)


def _split_by_polarity(words: Iterable[str], lex: VadLexicon) -> tuple[set[str], set[str]]:
    pos, neg = set(), set()
    for w in words:
        p = polarity(w, lex)
        if p is Polarity.POSITIVE:
            pos.add(w)
        elif p is Polarity.NEGATIVE:
            neg.add(w)
    return pos, neg


def load_reaction_sidecar(path: str | Path) -> dict[tuple[str, int], list[str]]:
    """Sidecar JSONL: {"dialogue_id": str, "turn_index": int, "reactions": [str]}."""
    sidecar: dict[tuple[str, int], list[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"line {lineno}: invalid JSON ({e.msg})") from e
            where = f"line {lineno}"
            did = _require(obj, "dialogue_id", str, where)
            turn = _require(obj, "turn_index", int, where)
            reactions = _require(obj, "reactions", list, where)
            sidecar[(did, turn)] = [str(r) for r in reactions]
    return sidecar


def validate_sidecar(
    dialogues: Sequence[Dialogue], sidecar: dict[tuple[str, int], list[str]]
) -> None:
    """Every sidecar entry must point at an existing utterance."""
    lengths = {d.id: len(d.turns) for d in dialogues}
    for did, turn in sidecar:
        if did not in lengths:
            raise CorpusError(f"sidecar references unknown dialogue '{did}'")
        if not 1 <= turn <= lengths[did]:
            raise CorpusError(
                f"sidecar/utterance mismatch: dialogue '{did}' has "
                f"{lengths[did]} turns, sidecar names turn {turn}"
            )


def build_label_vocabulary(
    dialogues: Sequence[Dialogue],
    lex: VadLexicon,
    max_reactions: int = 10,
    vocab_size: int = 50,
    sidecar: Optional[dict[tuple[str, int], list[str]]] = None,
) -> LabelVocabulary:
    """Count emotional words over all utterances (sidecar reactions when present,
    the utterance's own tokens otherwise) and keep the top `vocab_size` per polarity."""
    if sidecar:
        validate_sidecar(dialogues, sidecar)
    pos_counts: Counter[str] = Counter()
    neg_counts: Counter[str] = Counter()
    for d in dialogues:
        for u in d.turns:
            reactions = sidecar.get((d.id, u.turn_index)) if sidecar else None
            words = _reaction_words(u, reactions, max_reactions)
            pos, neg = _split_by_polarity(words, lex)
            pos_counts.update(pos)  # presence per utterance, not token frequency
            neg_counts.update(neg)

    def top(counts: Counter[str]) -> tuple[str, ...]:
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return tuple(w for w, _ in ranked[:vocab_size])

    return LabelVocabulary.make(top(pos_counts), top(neg_counts))


def derive_emotion_labels(
    u: Utterance,
    lex: VadLexicon,
    vocabulary: LabelVocabulary,
    sidecar_reactions: Optional[Sequence[str]] = None,
    max_reactions: int = 10,
) -> EmotionLabelSet:
    """Emotion labels of one utterance, by polarity, restricted to the vocabulary.

    Both sets may be empty (the utterance is then skipped for emotion loss)."""
    words = _reaction_words(u, sidecar_reactions, max_reactions)
    pos, neg = _split_by_polarity(words, lex)
    return EmotionLabelSet(
        frozenset(w for w in pos if w in vocabulary.pos_index),
        frozenset(w for w in neg if w in vocabulary.neg_index),
        vocabulary,
    )


# ---------------------------------------------------------------------------
# Splitting


def split_corpus(
    dialogues: Sequence[Dialogue],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[Dialogue], ...]:
    """Partition whole dialogues by seeded shuffle; part sizes are within +-1
    of ratio * N (cumulative rounding)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(dialogues)
    n_parts = sum(1 for r in ratios if r > 0)
    if n < n_parts:
        raise CorpusError(f"cannot split {n} dialogues into {n_parts} non-empty parts")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [dialogues[i] for i in order]
    bounds = [0]
    acc = 0.0
    for r in ratios:
        acc += r
        bounds.append(int(round(acc * n)))
    bounds[-1] = n
    return tuple(shuffled[bounds[i] : bounds[i + 1]] for i in range(len(ratios)))
