"""Reference sequence encoder and the eight multi-task expert heads.

The encoder is a single self-attention block over token+position embeddings
with a summary slot at row 0 (stand-in for a pretrained backbone). Experts come
in a fixed canonical order: contextual/future x positive/negative x
emotion/keyword. Keyword experts attend over graph-neighbor embeddings and fuse
them into every token row before predicting. All tensors are float64.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
from torch import nn

from .corpus import (
    Dialogue,
    LabelVocabulary,
    Polarity,
    SEEKER,
    SUPPORTER,
    VadLexicon,
    derive_emotion_labels,
    extract_keywords,
)
from .graph import EmotionKeywordGraph, Relation, multi_hop, one_hop

logger = logging.getLogger(__name__)

HEAD_IDS = (
    "ctx-pos-emo",
    "ctx-neg-emo",
    "ftr-pos-emo",
    "ftr-neg-emo",
    "ctx-pos-kws",
    "ctx-neg-kws",
    "ftr-pos-kws",
    "ftr-neg-kws",
)

N_EXPERTS = len(HEAD_IDS)

CLS_TOKEN = "<cls>"
UNK_TOKEN = "<unk>"
MARKER_TOKENS = tuple(f"<{h}>" for h in HEAD_IDS)

INIT_RANGE = 0.08


def head_polarity(head_id: str) -> Polarity:
    return Polarity.POSITIVE if "-pos-" in head_id else Polarity.NEGATIVE


def head_is_contextual(head_id: str) -> bool:
    return head_id.startswith("ctx-")


def head_is_keyword(head_id: str) -> bool:
    return head_id.endswith("-kws")


class Vocabulary:
    """Token ids: 0 = summary slot, 1 = unknown, then expert markers, then
    the corpus tokens in sorted order."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = tuple(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if self.tokens[:2] != (CLS_TOKEN, UNK_TOKEN):
            raise ValueError("vocabulary must start with the reserved tokens")

    @classmethod
    def build(cls, corpus_tokens) -> "Vocabulary":
        words = sorted(
            {t for t in corpus_tokens} - {CLS_TOKEN, UNK_TOKEN, *MARKER_TOKENS}
        )
        return cls((CLS_TOKEN, UNK_TOKEN, *MARKER_TOKENS, *words))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, 1)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._index.get(t, 1) for t in tokens]

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def uniform_param(*shape: int, generator: Optional[torch.Generator]) -> nn.Parameter:
    t = torch.empty(*shape, dtype=torch.float64)
    t.uniform_(-INIT_RANGE, INIT_RANGE, generator=generator)
    return nn.Parameter(t)


class Encoder(nn.Module):
    """Token + position embeddings followed by one residual self-attention block.

    forward() takes ids that already include the summary slot at position 0 and
    returns the hidden matrix; row 0 is the sequence summary."""

    def __init__(
        self,
        vocab_size: int,
        d_h: int = 64,
        max_len: int = 128,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.d_h = d_h
        self.max_len = max_len
        self.emb = uniform_param(vocab_size, d_h, generator=generator)
        self.pos = uniform_param(max_len, d_h, generator=generator)
        self.w_q = uniform_param(d_h, d_h, generator=generator)
        self.w_k = uniform_param(d_h, d_h, generator=generator)
        self.w_v = uniform_param(d_h, d_h, generator=generator)
        self.w_o = uniform_param(d_h, d_h, generator=generator)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.emb[ids] + self.pos[: ids.shape[0]]
        scores = (x @ self.w_q) @ (x @ self.w_k).T / self.d_h**0.5
        attn = torch.softmax(scores, dim=-1)
        return x + (attn @ (x @ self.w_v)) @ self.w_o


class ExpertHead(nn.Module):
    """One expert: a 2-layer MLP transform plus a label projection; keyword
    experts additionally carry neighbor-attention and fusion parameters."""

    def __init__(
        self,
        head_id: str,
        d_h: int,
        n_labels: int,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        if head_id not in HEAD_IDS:
            raise ValueError(f"unknown expert id {head_id!r}")
        self.head_id = head_id
        self.mlp_w1 = uniform_param(d_h, d_h, generator=generator)
        self.mlp_b1 = uniform_param(d_h, generator=generator)
        self.mlp_w2 = uniform_param(d_h, d_h, generator=generator)
        self.mlp_b2 = uniform_param(d_h, generator=generator)
        self.out_w = uniform_param(n_labels, d_h, generator=generator)
        if head_is_keyword(head_id):
            self.attn_wq = uniform_param(d_h, d_h, generator=generator)
            self.attn_wk = uniform_param(d_h, d_h, generator=generator)
            self.attn_v = uniform_param(d_h, generator=generator)
            self.fuse_w = uniform_param(d_h, 2 * d_h, generator=generator)
            self.fuse_b = uniform_param(d_h, generator=generator)


def expert_transform(hidden: torch.Tensor, head: ExpertHead) -> torch.Tensor:
    """Row-wise 2-layer MLP; output shape equals input shape."""
    h = torch.relu(hidden @ head.mlp_w1.T + head.mlp_b1)
    return h @ head.mlp_w2.T + head.mlp_b2


def label_logits(summary: torch.Tensor, head: ExpertHead) -> torch.Tensor:
    return head.out_w @ summary


def predict_labels(summary: torch.Tensor, head: ExpertHead) -> torch.Tensor:
    """Probability vector over the head's label vocabulary."""
    return torch.softmax(label_logits(summary, head), dim=-1)


def label_set_loss(log_probs: torch.Tensor, label_ids: Sequence[int]) -> torch.Tensor:
    """Cross entropy against a label set: mean negative log-probability."""
    if len(label_ids) == 0:
        raise ValueError("label set must be non-empty (skip the utterance upstream)")
    idx = torch.as_tensor(list(label_ids), dtype=torch.long)
    if idx.max() >= log_probs.shape[0]:
        raise ValueError("label outside the head vocabulary")
    return -log_probs[idx].mean()


def neighbor_attention(
    summary: torch.Tensor, neighbors: torch.Tensor, head: ExpertHead
) -> torch.Tensor:
    """Additive attention over neighbor embeddings; zero neighbors -> zeros."""
    if neighbors.shape[0] == 0:
        return torch.zeros_like(summary)
    scored = torch.tanh(summary @ head.attn_wq.T + neighbors @ head.attn_wk.T)
    weights = torch.softmax(scored @ head.attn_v, dim=-1)
    return weights @ neighbors


def keyword_enhance(
    hidden: torch.Tensor, fused: torch.Tensor, head: ExpertHead
) -> torch.Tensor:
    """Fuse the attended neighbor vector into every token row."""
    expanded = fused.expand(hidden.shape[0], -1)
    return torch.cat([hidden, expanded], dim=-1) @ head.fuse_w.T + head.fuse_b


def experts_mse(
    summary: torch.Tensor, expert_summaries: Sequence[torch.Tensor], alpha: float
) -> torch.Tensor:
    """(alpha / d_h) * squared distance between the sequence summary and the
    mean of the expert summaries."""
    mean = torch.stack(tuple(expert_summaries)).mean(dim=0)
    return alpha / summary.shape[0] * ((summary - mean) ** 2).sum()


# ---------------------------------------------------------------------------
# Neighbor sets for keyword experts

FUTURE_HOP_PREFIX = ((Relation.FORWARD, None), (Relation.FORWARD, None))


class NeighborCache:
    """Graph neighborhoods per (expert, context keywords), cached.

    Contextual keyword experts see forward one-hop neighbors of the context
    keywords; future keyword experts see forward -> forward -> backward
    multi-hop neighbors, polarity fixed by the expert."""

    def __init__(self, graph: Optional[EmotionKeywordGraph]):
        self.graph = graph
        self._cache: dict[tuple[str, tuple[str, ...]], tuple[str, ...]] = {}
        self._warned = False

    def neighbor_words(self, head_id: str, c_kws: tuple[str, ...]) -> tuple[str, ...]:
        if self.graph is None:
            if not self._warned:
                logger.warning("no keyword graph: keyword experts see empty neighbor sets")
                self._warned = True
            return ()
        key = (head_id, c_kws)
        hit = self._cache.get(key)
        if hit is None:
            pol = head_polarity(head_id)
            if head_is_contextual(head_id):
                words = one_hop(self.graph, c_kws, Relation.FORWARD, pol)
            else:
                words = multi_hop(
                    self.graph, c_kws, (*FUTURE_HOP_PREFIX, (Relation.BACKWARD, pol))
                )
            hit = tuple(sorted(words))
            self._cache[key] = hit
        return hit


# ---------------------------------------------------------------------------
# Expert bank


class ExpertBank(nn.Module):
    """Shared encoder plus the eight expert heads in canonical order."""

    def __init__(
        self,
        vocab: Vocabulary,
        head_vocabs: dict[str, tuple[str, ...]],
        d_h: int = 64,
        max_len: int = 128,
        alpha: float = 1e-5,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        missing = set(HEAD_IDS) - set(head_vocabs)
        if missing:
            raise ValueError(f"missing head vocabularies: {sorted(missing)}")
        self.vocab = vocab
        self.head_vocabs = {h: tuple(head_vocabs[h]) for h in HEAD_IDS}
        self.head_label_index = {
            h: {w: i for i, w in enumerate(self.head_vocabs[h])} for h in HEAD_IDS
        }
        self.alpha = alpha
        self.d_h = d_h
        self.max_len = max_len
        self.encoder = Encoder(len(vocab), d_h, max_len, generator)
        self.heads = nn.ModuleDict(
            {
                h: ExpertHead(h, d_h, max(1, len(self.head_vocabs[h])), generator)
                for h in HEAD_IDS
            }
        )

    def token_ids(self, words: Sequence[str]) -> torch.Tensor:
        ids = self.vocab.encode(words)
        if len(ids) > self.max_len - 1:  # truncate from the left, keep the summary slot
            ids = ids[-(self.max_len - 1) :]
        return torch.as_tensor([0, *ids], dtype=torch.long)

    def encode(self, words: Sequence[str]) -> torch.Tensor:
        """Hidden matrix for a word sequence; row 0 is the summary."""
        return self.encoder(self.token_ids(words))

    def embed_words(self, words: Sequence[str]) -> torch.Tensor:
        """Embedding rows for known words (unknowns are dropped, not UNK-mapped)."""
        ids = [self.vocab.id(w) for w in words if w in self.vocab]
        if not ids:
            return torch.zeros((0, self.d_h), dtype=torch.float64)
        return self.encoder.emb[torch.as_tensor(ids, dtype=torch.long)]

    def head_summary(
        self,
        head_id: str,
        enc_hidden: torch.Tensor,
        neighbor_words: tuple[str, ...] = (),
    ) -> torch.Tensor:
        """The head's final summary representation on an encoded sequence."""
        head = self.heads[head_id]
        transformed = expert_transform(enc_hidden, head)
        if not head_is_keyword(head_id):
            return transformed[0]
        fused = neighbor_attention(transformed[0], self.embed_words(neighbor_words), head)
        return keyword_enhance(transformed, fused, head)[0]

    def head_probs(
        self,
        head_id: str,
        enc_hidden: torch.Tensor,
        neighbor_words: tuple[str, ...] = (),
    ) -> torch.Tensor:
        return predict_labels(self.head_summary(head_id, enc_hidden, neighbor_words), self.heads[head_id])

    def top_labels(
        self,
        head_id: str,
        enc_hidden: torch.Tensor,
        neighbor_words: tuple[str, ...] = (),
        n: int = 3,
    ) -> list[str]:
        """Top-n predicted label words, ties broken lexicographically."""
        if n <= 0:
            return []
        probs = self.head_probs(head_id, enc_hidden, neighbor_words).detach()
        words = self.head_vocabs[head_id]
        ranked = sorted(zip(probs.tolist(), words), key=lambda pw: (-pw[0], pw[1]))
        return [w for _, w in ranked[:n]]

    def multitask_loss(
        self,
        examples: Sequence["TrainingExample"],
        cache: NeighborCache,
    ) -> tuple[torch.Tensor, dict[str, float]]:
        """Mean over the batch of L_emo + L_kws + L_mse; heads without a target
        contribute zero. Returns the loss tensor and a per-term breakdown."""
        if not examples:
            raise ValueError("empty batch")
        total = torch.zeros((), dtype=torch.float64)
        breakdown = {"emo": 0.0, "kws": 0.0, "mse": 0.0}
        for h in HEAD_IDS:
            breakdown[h] = 0.0
        for ex in examples:
            enc_hidden = self.encode(ex.context_tokens)
            summaries = []
            ex_loss = torch.zeros((), dtype=torch.float64)
            for h in HEAD_IDS:
                neighbors = (
                    cache.neighbor_words(h, ex.context_kws) if head_is_keyword(h) else ()
                )
                summary = self.head_summary(h, enc_hidden, neighbors)
                summaries.append(summary)
                targets = ex.targets.get(h, ())
                if not targets:
                    continue
                index = self.head_label_index[h]
                log_probs = torch.log_softmax(label_logits(summary, self.heads[h]), dim=-1)
                head_loss = label_set_loss(log_probs, [index[w] for w in targets])
                ex_loss = ex_loss + head_loss
                term = "kws" if head_is_keyword(h) else "emo"
                breakdown[term] += float(head_loss.detach()) / len(examples)
                breakdown[h] += float(head_loss.detach()) / len(examples)
            mse = experts_mse(enc_hidden[0], summaries, self.alpha)
            breakdown["mse"] += float(mse.detach()) / len(examples)
            total = total + (ex_loss + mse) / len(examples)
        breakdown["total"] = float(total.detach())
        return total, breakdown


# ---------------------------------------------------------------------------
# Training examples


@dataclass(frozen=True)
class TrainingExample:
    """One supervised example: the context before a supporter turn, its
    keywords, and per-expert target label sets (possibly empty)."""

    context_tokens: tuple[str, ...]
    context_kws: tuple[str, ...]
    targets: dict[str, tuple[str, ...]] = field(default_factory=dict)


def head_vocabularies(
    label_vocab: LabelVocabulary, graph: EmotionKeywordGraph
) -> dict[str, tuple[str, ...]]:
    """Emotion heads predict over the emotion label vocabulary; keyword heads
    predict over the graph's vertices of their polarity."""
    kw_pos = tuple(
        sorted(w for w, v in graph.vertices.items() if v.polarity is Polarity.POSITIVE)
    )
    kw_neg = tuple(
        sorted(w for w, v in graph.vertices.items() if v.polarity is Polarity.NEGATIVE)
    )
    out = {}
    for h in HEAD_IDS:
        if head_is_keyword(h):
            out[h] = kw_pos if head_polarity(h) is Polarity.POSITIVE else kw_neg
        else:
            out[h] = (
                label_vocab.positive
                if head_polarity(h) is Polarity.POSITIVE
                else label_vocab.negative
            )
    return out


def _keyword_targets(
    utterance,
    lex: VadLexicon,
    stopwords: frozenset[str],
    vocab_by_polarity: dict[Polarity, frozenset[str]],
) -> dict[Polarity, tuple[str, ...]]:
    kws = extract_keywords(utterance, stopwords)
    out = {}
    for pol in (Polarity.POSITIVE, Polarity.NEGATIVE):
        out[pol] = tuple(
            w for w in kws if lex.polarity(w) is pol and w in vocab_by_polarity[pol]
        )
    return out


def build_examples(
    dialogues: Sequence[Dialogue],
    lex: VadLexicon,
    stopwords: frozenset[str],
    label_vocab: LabelVocabulary,
    head_vocabs: dict[str, tuple[str, ...]],
    max_reactions: int = 10,
    sidecar: Optional[dict[tuple[str, int], list[str]]] = None,
) -> list[TrainingExample]:
    """One example per supporter turn: contextual targets from the last seeker
    utterance, future targets from the next one, keyword targets from the
    supporter response and the future utterance."""
    kw_vocab = {
        Polarity.POSITIVE: frozenset(head_vocabs["ctx-pos-kws"]),
        Polarity.NEGATIVE: frozenset(head_vocabs["ctx-neg-kws"]),
    }
    examples = []
    for d in dialogues:
        for i, u in enumerate(d.turns):
            if u.speaker != SUPPORTER or i == 0:
                continue
            context = d.turns[:i]
            context_tokens = tuple(t for turn in context for t in turn.tokens)
            c_kws = extract_keywords(context_tokens, stopwords).words
            last_seeker = next(t for t in reversed(context) if t.speaker == SEEKER)
            future = next((t for t in d.turns[i + 1 :] if t.speaker == SEEKER), None)

            def emo_labels(utt):
                reactions = sidecar.get((d.id, utt.turn_index)) if sidecar else None
                return derive_emotion_labels(utt, lex, label_vocab, reactions, max_reactions)

            ctx_emo = emo_labels(last_seeker)
            ftr_emo = emo_labels(future) if future is not None else None
            resp_kws = _keyword_targets(u, lex, stopwords, kw_vocab)
            ftr_kws = (
                _keyword_targets(future, lex, stopwords, kw_vocab)
                if future is not None
                else {Polarity.POSITIVE: (), Polarity.NEGATIVE: ()}
            )
            targets = {
                "ctx-pos-emo": tuple(sorted(ctx_emo.positive)),
                "ctx-neg-emo": tuple(sorted(ctx_emo.negative)),
                "ftr-pos-emo": tuple(sorted(ftr_emo.positive)) if ftr_emo else (),
                "ftr-neg-emo": tuple(sorted(ftr_emo.negative)) if ftr_emo else (),
                "ctx-pos-kws": resp_kws[Polarity.POSITIVE],
                "ctx-neg-kws": resp_kws[Polarity.NEGATIVE],
                "ftr-pos-kws": ftr_kws[Polarity.POSITIVE],
                "ftr-neg-kws": ftr_kws[Polarity.NEGATIVE],
            }
            examples.append(TrainingExample(context_tokens, c_kws, targets))
    return examples
