"""Shared fixtures: a tiny lexicon, the hand-built keyword-graph fixtures, the
synthetic data kit on disk, and a finite-difference gradient oracle."""

import numpy as np
import pytest
import torch

from esmoe.corpus import Dialogue, Polarity, Utterance, VadLexicon
from esmoe.experts import HEAD_IDS, ExpertBank, Vocabulary
from esmoe.graph import Edge, EmotionKeywordGraph, KeywordVertex, Relation
from esmoe import synth


def dialogue(did, turns, situation="test situation"):
    """turns: list of (speaker, text)."""
    return Dialogue(
        did,
        situation,
        tuple(Utterance.make(s, t, i + 1) for i, (s, t) in enumerate(turns)),
    )


@pytest.fixture
def lex():
    return VadLexicon(
        {
            "hopeful": 0.9,
            "calm": 0.7,
            "understand": 0.8,
            "glad": 0.85,
            "sad": 0.1,
            "angry": 0.15,
            "frustrated": 0.1,
            "worried": 0.2,
            "close": 0.3,
            "warning": 0.2,
            "pandemic": 0.15,
        }
    )


def make_appendix_graph():
    """Figure-5-style fixture: 6 vertices; 'close' reasons forward to
    'understand' (positive) and 'frustrated' (negative); 'frustrated' reasons
    backward only through negative edges to close/warning/pandemic."""
    g = EmotionKeywordGraph(top_k=5)
    for word, valence, pol in [
        ("school", None, Polarity.NON_EMOTIONAL),
        ("close", 0.3, Polarity.NEGATIVE),
        ("understand", 0.8, Polarity.POSITIVE),
        ("frustrated", 0.1, Polarity.NEGATIVE),
        ("warning", 0.2, Polarity.NEGATIVE),
        ("pandemic", 0.15, Polarity.NEGATIVE),
    ]:
        g.add_vertex(KeywordVertex(word, valence, pol))
    F, B = Relation.FORWARD, Relation.BACKWARD
    P, N = Polarity.POSITIVE, Polarity.NEGATIVE
    for head, tail, rel, pol, score in [
        ("close", "understand", F, P, 1.10),
        ("close", "frustrated", F, N, 0.85),
        ("school", "understand", F, P, 0.60),
        ("school", "frustrated", F, N, 0.40),
        ("understand", "warning", F, N, 0.35),
        ("frustrated", "close", B, N, 0.90),
        ("frustrated", "warning", B, N, 0.70),
        ("frustrated", "pandemic", B, N, 0.50),
        ("warning", "understand", B, P, 0.55),
    ]:
        g.add_edge(Edge(head, tail, rel, pol, score))
    return g


@pytest.fixture
def appendix_graph():
    return make_appendix_graph()


@pytest.fixture(scope="session")
def synth_data(tmp_path_factory):
    """The synthetic data kit written once per session."""
    root = tmp_path_factory.mktemp("synthdata")
    paths = synth.write_all(root, n_dialogues=120, seed=0)
    return paths


@pytest.fixture(scope="session")
def pipeline_parts(synth_data):
    """Untrained bank/net plus graph, engine, and environment pieces over the
    synthetic world (shared; tests must not mutate the parts in place)."""
    from esmoe.corpus import (
        build_label_vocabulary,
        load_corpus,
        load_stopwords,
        split_corpus,
    )
    from esmoe.env import TemplateRealizer, load_profiles, TemplatePools
    from esmoe.experts import NeighborCache, build_examples, head_vocabularies
    from esmoe.graph import build_graph
    from esmoe.policy import ActorValueNet, TrainConfig
    from esmoe.rewards import RewardEngine

    dialogues = load_corpus(synth_data["corpus"])
    lex = VadLexicon.load(synth_data["lexicon"])
    stopwords = load_stopwords(synth_data["stopwords"])
    train, valid, test = split_corpus(dialogues, (0.8, 0.1, 0.1), seed=0)
    graph = build_graph(train, lex, top_k=25, stopwords=stopwords)
    label_vocab = build_label_vocabulary(train, lex)
    vocab = Vocabulary.build(t for d in train for u in d.turns for t in u.tokens)
    head_vocabs = head_vocabularies(label_vocab, graph)
    config = TrainConfig(seed=0)
    gen = torch.Generator().manual_seed(config.seed)
    bank = ExpertBank(vocab, head_vocabs, d_h=32, max_len=96, generator=gen)
    net = ActorValueNet(config.k_steps, d_h=32, generator=gen)
    return {
        "dialogues": dialogues,
        "train": train,
        "valid": valid,
        "test": test,
        "lex": lex,
        "stopwords": stopwords,
        "graph": graph,
        "label_vocab": label_vocab,
        "head_vocabs": head_vocabs,
        "vocab": vocab,
        "bank": bank,
        "net": net,
        "config": config,
        "cache": NeighborCache(graph),
        "engine": RewardEngine.reference(lex, graph),
        "realizer": TemplateRealizer(TemplatePools.load(synth_data["templates"]), lex),
        "profiles": load_profiles(synth_data["profiles"]),
        "examples": build_examples(train, lex, stopwords, label_vocab, head_vocabs),
    }


# ---------------------------------------------------------------------------
# Tiny expert bank and graph shared by experts/policy/env tests


def tiny_graph():
    g = EmotionKeywordGraph(top_k=4)
    for word, val, pol in [
        ("alpha", None, Polarity.NON_EMOTIONAL),
        ("berry", 0.9, Polarity.POSITIVE),
        ("light", 0.8, Polarity.POSITIVE),
        ("dark", 0.2, Polarity.NEGATIVE),
        ("cold", 0.3, Polarity.NEGATIVE),
    ]:
        g.add_vertex(KeywordVertex(word, val, pol))
    F, B = Relation.FORWARD, Relation.BACKWARD
    P, N = Polarity.POSITIVE, Polarity.NEGATIVE
    for head, tail, rel, pol, score in [
        ("alpha", "berry", F, P, 0.9),
        ("alpha", "dark", F, N, 0.8),
        ("berry", "dark", F, N, 0.6),
        ("dark", "berry", F, P, 0.5),
        ("dark", "light", B, P, 0.4),
        ("dark", "cold", B, N, 0.3),
        ("berry", "light", B, P, 0.2),
        ("berry", "cold", B, N, 0.1),
    ]:
        g.add_edge(Edge(head, tail, rel, pol, score))
    return g


def tiny_bank(seed=0, d_h=4, alpha=1e-5, max_len=8):
    vocab = Vocabulary.build(
        ["alpha", "beta", "gamma", "delta", "berry", "light", "dark", "cold",
         "calm", "glad", "sad", "angry"]
    )
    head_vocabs = {}
    for h in HEAD_IDS:
        if h.endswith("kws"):
            head_vocabs[h] = ("berry", "light") if "-pos-" in h else ("dark", "cold")
        else:
            head_vocabs[h] = ("calm", "glad") if "-pos-" in h else ("angry", "sad")
    return ExpertBank(
        vocab, head_vocabs, d_h=d_h, max_len=max_len, alpha=alpha,
        generator=seeded_generator(seed),
    )


# ---------------------------------------------------------------------------
# Finite-difference gradient oracle


def flat_params(module):
    return [p for p in module.parameters() if p.requires_grad]


def fd_gradcheck(loss_fn, params, step=1e-5, rtol=1e-4, floor=1e-4):
    """Central finite differences against autograd for every parameter entry.

    loss_fn must rebuild the loss from scratch (it is called many times with
    perturbed parameters). Near-zero entries are compared against `floor`
    instead of their own magnitude: the difference quotient carries
    cancellation noise of order |loss| * eps / step (~1e-10 here), so demanding
    rtol of a ~1e-10 gradient would only test rounding error. Returns the
    worst relative error."""
    loss = loss_fn()
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss.backward()
    worst = 0.0
    for p in params:
        grad = p.grad.clone() if p.grad is not None else torch.zeros_like(p)
        flat = p.data.view(-1)
        gflat = grad.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            up = float(loss_fn().detach())
            flat[i] = orig - step
            down = float(loss_fn().detach())
            flat[i] = orig
            fd = (up - down) / (2 * step)
            denom = max(abs(fd), abs(gflat[i].item()), floor)
            rel = abs(fd - gflat[i].item()) / denom
            worst = max(worst, rel)
            assert rel < rtol, (
                f"gradient mismatch at {p.shape} entry {i}: "
                f"fd={fd:.8g} autograd={gflat[i].item():.8g} rel={rel:.3g}"
            )
    return worst


def seeded_generator(seed):
    return torch.Generator().manual_seed(seed)


def rng(seed=0):
    return np.random.default_rng(seed)
