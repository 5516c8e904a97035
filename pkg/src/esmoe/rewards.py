"""Reward functions for emotional support and dialogue coherence.

Two emotional-support rewards schedule elicitation over the conversation with a
cosine turn weight; two coherence rewards multiply a scorer probability by an
exponential bonus for response keywords that are graph neighbors of the context
(forward) or of the user's next utterance (backward). Scorers are pluggable;
the reference implementations are lexicon- and graph-based.
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .corpus import VadLexicon, tokenize
from .graph import EmotionKeywordGraph, Relation, one_hop


class EmotionScorer(Protocol):
    def score(self, text: str) -> float: ...


class CoherenceScorer(Protocol):
    def score(self, a_text: str, a_kws: Sequence[str], b_text: str, b_kws: Sequence[str]) -> float: ...


class LexiconEmotionScorer:
    """Mean valence of the text's emotional words; 0.5 (neutral) when none."""

    def __init__(self, lex: VadLexicon):
        self.lex = lex

    def score(self, text: str) -> float:
        valences = [self.lex.valence[t] for t in tokenize(text) if t in self.lex.valence]
        return sum(valences) / len(valences) if valences else 0.5


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


class ReferenceCoherenceScorer:
    """sigma(c0 + c1 * J) where J is the Jaccard overlap between the response
    keywords and the one-hop neighborhood of the other side's keywords.

    relation is FORWARD for the contextual scorer, BACKWARD for the future one.
    With the defaults, J=0 scores ~0.27 and J=1 scores ~0.95."""

    def __init__(
        self,
        graph: EmotionKeywordGraph,
        relation: Relation,
        c0: float = -1.0,
        c1: float = 4.0,
    ):
        self.graph = graph
        self.relation = relation
        self.c0 = c0
        self.c1 = c1

    def score(self, a_text: str, a_kws: Sequence[str], b_text: str, b_kws: Sequence[str]) -> float:
        neighborhood = one_hop(self.graph, a_kws, self.relation, None)
        b = set(b_kws)
        union = b | neighborhood
        j = len(b & neighborhood) / len(union) if union else 0.0
        return _sigmoid(self.c0 + self.c1 * j)


class ExternalProcessScorer:
    """Bridge to an external scorer process speaking line-delimited JSON:
    one request object per line in, one {"score": float} per line out."""

    def __init__(self, command: Sequence[str]):
        self.proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def request(self, payload: dict) -> float:
        assert self.proc.stdin is not None and self.proc.stdout is not None
        self.proc.stdin.write(json.dumps(payload) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("external scorer closed its output")
        return float(json.loads(line)["score"])

    def emotion_scorer(self) -> "ExternalEmotionScorer":
        return ExternalEmotionScorer(self)

    def coherence_scorer(self, op: str) -> "ExternalCoherenceScorer":
        return ExternalCoherenceScorer(self, op)

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)


class ExternalEmotionScorer:
    def __init__(self, bridge: ExternalProcessScorer):
        self.bridge = bridge

    def score(self, text: str) -> float:
        return self.bridge.request({"op": "es", "text": text})


class ExternalCoherenceScorer:
    def __init__(self, bridge: ExternalProcessScorer, op: str):
        if op not in ("cdc", "fdc"):
            raise ValueError(f"coherence op must be 'cdc' or 'fdc', got {op!r}")
        self.bridge = bridge
        self.op = op

    def score(self, a_text: str, a_kws: Sequence[str], b_text: str, b_kws: Sequence[str]) -> float:
        return self.bridge.request(
            {
                "op": self.op,
                "a_text": a_text,
                "a_kws": list(a_kws),
                "b_text": b_text,
                "b_kws": list(b_kws),
            }
        )


# ---------------------------------------------------------------------------
# Reward functions


@dataclass(frozen=True)
class RewardWeights:
    w_ces: float = 0.1
    w_tes: float = 1.0
    w_cdc: float = 0.1
    w_fdc: float = 1.0

    def __post_init__(self):
        for name in ("w_ces", "w_tes", "w_cdc", "w_fdc"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class RewardInputs:
    """Everything the four rewards read for one scored response."""

    response_text: str
    response_kws: tuple[str, ...]
    posts: tuple[str, ...]  # seeker posts c_1..c_T, oldest first
    context_text: str  # full dialogue context C
    context_kws: tuple[str, ...]  # C_kws
    future_text: str  # the seeker's next utterance c_f
    future_kws: tuple[str, ...]
    turn: int  # current turn T
    max_turns: int = 10  # MT

    def __post_init__(self):
        if not 1 <= self.turn <= self.max_turns:
            raise ValueError(f"turn must be in [1, {self.max_turns}], got {self.turn}")
        if len(self.posts) != self.turn:
            raise ValueError(f"expected {self.turn} posts, got {len(self.posts)}")


def _turn_weight(t: int, max_turns: int) -> float:
    return math.cos(math.pi / 2 * t / max_turns)


def conversation_es_reward(inputs: RewardInputs, f_es: EmotionScorer) -> float:
    """Sum over past turns of the cosine-scheduled positive emotion distance
    between the response and each seeker post; may be negative."""
    y_score = f_es.score(inputs.response_text)
    return sum(
        _turn_weight(t, inputs.max_turns) * (y_score - f_es.score(post))
        for t, post in enumerate(inputs.posts, start=1)
    )


def turn_es_reward(inputs: RewardInputs, f_es: EmotionScorer) -> float:
    """cos-scheduled closeness between the response's emotion score and the
    user's next utterance's; in [0, 1], zero at T = MT."""
    ped = abs(f_es.score(inputs.response_text) - f_es.score(inputs.future_text))
    return _turn_weight(inputs.turn, inputs.max_turns) * math.cos(math.pi / 2 * ped)


def _keyword_bonus(n_hits: int, n_kws: int) -> float:
    # No response keywords means no neighbor evidence: minimum bonus e^-1.
    if n_kws == 0:
        return math.exp(-1.0)
    return math.exp(n_hits / n_kws - 1.0)


def contextual_coherence_reward(
    inputs: RewardInputs, f_cdc: CoherenceScorer, graph: EmotionKeywordGraph
) -> float:
    """Scorer probability times the bonus for response keywords that are
    forward neighbors of the context keywords."""
    score = f_cdc.score(
        inputs.context_text, inputs.context_kws, inputs.response_text, inputs.response_kws
    )
    forward = one_hop(graph, inputs.context_kws, Relation.FORWARD, None)
    hits = sum(1 for k in inputs.response_kws if k in forward)
    return score * _keyword_bonus(hits, len(inputs.response_kws))


def future_coherence_reward(
    inputs: RewardInputs, f_fdc: CoherenceScorer, graph: EmotionKeywordGraph
) -> float:
    """Scorer probability times the bonus for response keywords reachable by a
    backward edge from the user's next utterance's keywords."""
    score = f_fdc.score(
        inputs.future_text, inputs.future_kws, inputs.response_text, inputs.response_kws
    )
    backward = one_hop(graph, inputs.future_kws, Relation.BACKWARD, None)
    hits = sum(1 for k in inputs.response_kws if k in backward)
    return score * _keyword_bonus(hits, len(inputs.response_kws))


@dataclass(frozen=True)
class RewardComponents:
    ces: float
    tes: float
    cdc: float
    fdc: float

    def as_dict(self) -> dict[str, float]:
        return {"cES": self.ces, "tES": self.tes, "cDC": self.cdc, "fDC": self.fdc}


def total_reward(components: RewardComponents, weights: RewardWeights) -> float:
    return (
        weights.w_ces * components.ces
        + weights.w_tes * components.tes
        + weights.w_cdc * components.cdc
        + weights.w_fdc * components.fdc
    )


def ped_metric(response_text: str, posts: Sequence[str], f_es: EmotionScorer) -> float:
    """Response emotion score minus the mean over the seeker posts so far."""
    if not posts:
        raise ValueError("ped_metric needs at least one seeker post")
    post_mean = sum(f_es.score(p) for p in posts) / len(posts)
    return f_es.score(response_text) - post_mean


class RewardEngine:
    """Bundles the scorers, graph, and weights; scores one response."""

    def __init__(
        self,
        f_es: EmotionScorer,
        f_cdc: CoherenceScorer,
        f_fdc: CoherenceScorer,
        graph: EmotionKeywordGraph,
        weights: Optional[RewardWeights] = None,
    ):
        self.f_es = f_es
        self.f_cdc = f_cdc
        self.f_fdc = f_fdc
        self.graph = graph
        self.weights = weights or RewardWeights()

    @classmethod
    def reference(
        cls,
        lex: VadLexicon,
        graph: EmotionKeywordGraph,
        weights: Optional[RewardWeights] = None,
    ) -> "RewardEngine":
        return cls(
            LexiconEmotionScorer(lex),
            ReferenceCoherenceScorer(graph, Relation.FORWARD),
            ReferenceCoherenceScorer(graph, Relation.BACKWARD),
            graph,
            weights,
        )

    def components(self, inputs: RewardInputs) -> RewardComponents:
        return RewardComponents(
            ces=conversation_es_reward(inputs, self.f_es),
            tes=turn_es_reward(inputs, self.f_es),
            cdc=contextual_coherence_reward(inputs, self.f_cdc, self.graph),
            fdc=future_coherence_reward(inputs, self.f_fdc, self.graph),
        )

    def score(self, inputs: RewardInputs) -> tuple[float, RewardComponents]:
        components = self.components(inputs)
        return total_reward(components, self.weights), components
