"""Bidirectional emotion keyword graph: PMI-scored edges tagged by relation
(forward: context -> response, backward: future utterance -> response) and by
the tail keyword's polarity, with one-hop and multi-hop neighbor queries."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .corpus import (
    Dialogue,
    Polarity,
    SEEKER,
    SUPPORTER,
    VadLexicon,
    extract_keywords,
)

GRAPH_FORMAT_VERSION = 1

DEFAULT_TOP_K = 25


class GraphFormatError(ValueError):
    """Unreadable or wrong-version graph file."""


class Relation(Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class KeywordVertex:
    word: str
    valence: Optional[float]  # None for words absent from the lexicon
    polarity: Polarity


@dataclass(frozen=True)
class Edge:
    head: str
    tail: str
    relation: Relation
    polarity: Polarity  # polarity of the tail vertex
    pmi: float


@dataclass
class CooccurrenceCounts:
    """Per-relation counts over (source keyword set, target keyword set) events."""

    source: Counter
    target: Counter
    joint: Counter  # keyed by (source word, target word)
    total: int  # number of counted events


def _pair_events(
    dialogues: Iterable[Dialogue],
    relation: Relation,
    stopwords: frozenset[str],
) -> Iterator[tuple[tuple[str, ...], tuple[str, ...]]]:
    """Yield (source keywords, target keywords) once per qualifying turn pair.

    Forward: source = keywords of all utterances preceding a supporter turn,
    target = keywords of that turn. Backward: source = keywords of the next
    seeker utterance, target = keywords of the supporter turn; the dialogue's
    last supporter turn yields no backward pair."""
    for d in dialogues:
        for i, u in enumerate(d.turns):
            if u.speaker != SUPPORTER or i == 0:
                continue
            target = extract_keywords(u, stopwords).words
            if relation is Relation.FORWARD:
                context_tokens = [t for prev in d.turns[:i] for t in prev.tokens]
                source = extract_keywords(context_tokens, stopwords).words
            else:
                future = next(
                    (v for v in d.turns[i + 1 :] if v.speaker == SEEKER), None
                )
                if future is None:
                    continue
                source = extract_keywords(future, stopwords).words
            if source and target:
                yield source, target


def count_cooccurrences(
    dialogues: Sequence[Dialogue],
    relation: Relation,
    stopwords: frozenset[str] = frozenset(),
) -> CooccurrenceCounts:
    counts = CooccurrenceCounts(Counter(), Counter(), Counter(), 0)
    for source, target in _pair_events(dialogues, relation, stopwords):
        counts.total += 1
        counts.source.update(source)
        counts.target.update(target)
        for x in source:
            for y in target:
                counts.joint[(x, y)] += 1
    return counts


def pmi(x: str, y: str, counts: CooccurrenceCounts) -> float:
    """ln( p(x,y) / (p(x) p(y)) ) over the counted events; -inf if never joint."""
    n_x, n_y = counts.source[x], counts.target[y]
    if n_x == 0 or n_y == 0:
        raise ValueError(f"zero marginal count for pair ({x!r}, {y!r})")
    n_xy = counts.joint[(x, y)]
    if n_xy == 0:
        return -math.inf
    return math.log(n_xy * counts.total / (n_x * n_y))


class EmotionKeywordGraph:
    """Vertices with valence polarity; per-(head, relation) buckets of at most
    top_k tails sorted by PMI descending, ties broken by tail word."""

    def __init__(self, top_k: int = DEFAULT_TOP_K):
        self.top_k = top_k
        self.vertices: dict[str, KeywordVertex] = {}
        # (head, relation, tail polarity) -> [(tail, pmi)] in bucket order
        self._adj: dict[tuple[str, Relation, Polarity], list[tuple[str, float]]] = (
            defaultdict(list)
        )

    def add_vertex(self, vertex: KeywordVertex) -> None:
        self.vertices[vertex.word] = vertex

    def add_edge(self, edge: Edge) -> None:
        if edge.head == edge.tail:
            raise ValueError(f"self-loop on {edge.head!r}")
        if edge.polarity is Polarity.NON_EMOTIONAL:
            raise ValueError(f"edge tail {edge.tail!r} must be emotional")
        bucket = self._adj[(edge.head, edge.relation, edge.polarity)]
        bucket.append((edge.tail, edge.pmi))
        bucket.sort(key=lambda tp: (-tp[1], tp[0]))

    def neighbors(
        self, head: str, relation: Relation, pol: Optional[Polarity] = None
    ) -> list[tuple[str, float]]:
        """Tails of `head` under `relation`; pol=None merges both polarities."""
        if pol is not None:
            return list(self._adj.get((head, relation, pol), ()))
        merged = self._adj.get((head, relation, Polarity.POSITIVE), []) + self._adj.get(
            (head, relation, Polarity.NEGATIVE), []
        )
        return sorted(merged, key=lambda tp: (-tp[1], tp[0]))

    def edges(self) -> Iterator[Edge]:
        for (head, relation, pol), bucket in sorted(
            self._adj.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2].value)
        ):
            for tail, score in bucket:
                yield Edge(head, tail, relation, pol, score)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmotionKeywordGraph):
            return NotImplemented
        return (
            self.top_k == other.top_k
            and self.vertices == other.vertices
            and dict(self._adj) == dict(other._adj)
        )


def build_graph(
    dialogues: Sequence[Dialogue],
    lex: VadLexicon,
    top_k: int = DEFAULT_TOP_K,
    stopwords: frozenset[str] = frozenset(),
) -> EmotionKeywordGraph:
    """PMI graph over both relations. Per (head, relation) the top_k tails by
    PMI are kept (ties lexicographic); non-emotional tails and self-loops are
    dropped before ranking. Non-emotional words may still serve as heads."""
    if not dialogues:
        raise ValueError("cannot build a graph from an empty corpus")
    g = EmotionKeywordGraph(top_k)
    for relation in Relation:
        counts = count_cooccurrences(dialogues, relation, stopwords)
        for word in counts.source.keys() | counts.target.keys():
            if word not in g.vertices:
                v = lex.valence.get(word)
                g.add_vertex(KeywordVertex(word, v, lex.polarity(word)))
        by_head: dict[str, list[tuple[str, float]]] = defaultdict(list)
        for (x, y), _ in counts.joint.items():
            if x == y or g.vertices[y].polarity is Polarity.NON_EMOTIONAL:
                continue
            by_head[x].append((y, pmi(x, y, counts)))
        for head in sorted(by_head):
            ranked = sorted(by_head[head], key=lambda tp: (-tp[1], tp[0]))[:top_k]
            for tail, score in ranked:
                g.add_edge(Edge(head, tail, relation, g.vertices[tail].polarity, score))
    return g


def one_hop(
    g: EmotionKeywordGraph,
    seeds: Iterable[str],
    relation: Relation,
    pol: Optional[Polarity] = None,
) -> set[str]:
    """Union of tails over all seed heads; pol=None means both polarities.
    Unknown seeds contribute nothing."""
    out: set[str] = set()
    for seed in seeds:
        out.update(tail for tail, _ in g.neighbors(seed, relation, pol))
    return out


def multi_hop(
    g: EmotionKeywordGraph,
    seeds: Iterable[str],
    path: Sequence[tuple[Relation, Optional[Polarity]]],
) -> set[str]:
    """Left fold of one_hop along `path`; hop i's result seeds hop i+1."""
    if not path:
        raise ValueError("multi_hop path must be non-empty")
    current = set(seeds)
    for relation, pol in path:
        current = one_hop(g, current, relation, pol)
    return current


# ---------------------------------------------------------------------------
# Persistence (canonical JSON; byte-identical for identical graphs)


def save_graph(g: EmotionKeywordGraph, path: str | Path) -> None:
    doc = {
        "version": GRAPH_FORMAT_VERSION,
        "top_k": g.top_k,
        "vertices": [
            {
                "word": v.word,
                "valence": v.valence,
                "polarity": v.polarity.value,
            }
            for v in sorted(g.vertices.values(), key=lambda v: v.word)
        ],
        "edges": [
            {
                "head": e.head,
                "tail": e.tail,
                "relation": e.relation.value,
                "polarity": e.polarity.value,
                "pmi": e.pmi,
            }
            for e in g.edges()
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_graph(path: str | Path) -> EmotionKeywordGraph:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise GraphFormatError(
            f"{path}: not a version-{GRAPH_FORMAT_VERSION} graph file ({e.msg})"
        ) from e
    if not isinstance(doc, dict) or doc.get("version") != GRAPH_FORMAT_VERSION:
        raise GraphFormatError(
            f"{path}: expected graph format version {GRAPH_FORMAT_VERSION}, "
            f"got {doc.get('version') if isinstance(doc, dict) else type(doc).__name__}"
        )
    g = EmotionKeywordGraph(doc["top_k"])
    try:
        for v in doc["vertices"]:
            g.add_vertex(KeywordVertex(v["word"], v["valence"], Polarity(v["polarity"])))
        for e in doc["edges"]:
            g.add_edge(
                Edge(e["head"], e["tail"], Relation(e["relation"]), Polarity(e["polarity"]), e["pmi"])
            )
    except (KeyError, TypeError, ValueError) as e:
        raise GraphFormatError(f"{path}: malformed graph payload ({e})") from e
    return g


# ---------------------------------------------------------------------------
# Summary statistics (printed by the CLI after a build)


def graph_summary(g: EmotionKeywordGraph) -> dict[str, float]:
    """Vertex/edge counts plus mean neighbor counts per head, by relation and
    by tail polarity (polarity means pool both relations)."""
    per_head: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    n_edges = 0
    for (head, relation, pol), bucket in g._adj.items():
        per_head[head][relation.value] += len(bucket)
        per_head[head][pol.value] += len(bucket)
        n_edges += len(bucket)

    def mean_over_heads(key: str) -> float:
        sizes = [c[key] for c in per_head.values() if c[key] > 0]
        return sum(sizes) / len(sizes) if sizes else 0.0

    return {
        "keywords": float(len(g.vertices)),
        "edges": float(n_edges),
        "avg_forward_neighbors": mean_over_heads(Relation.FORWARD.value),
        "avg_backward_neighbors": mean_over_heads(Relation.BACKWARD.value),
        "avg_positive_neighbors": mean_over_heads(Polarity.POSITIVE.value),
        "avg_negative_neighbors": mean_over_heads(Polarity.NEGATIVE.value),
    }
