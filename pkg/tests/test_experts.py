import logging
import math

import numpy as np
import pytest
import torch

from esmoe.corpus import Polarity, VadLexicon
from esmoe.experts import (
    HEAD_IDS,
    ExpertBank,
    ExpertHead,
    NeighborCache,
    TrainingExample,
    Vocabulary,
    build_examples,
    expert_transform,
    experts_mse,
    head_vocabularies,
    keyword_enhance,
    label_logits,
    label_set_loss,
    neighbor_attention,
    predict_labels,
)
from esmoe.graph import Edge, EmotionKeywordGraph, KeywordVertex, Relation
from conftest import dialogue, fd_gradcheck, seeded_generator, tiny_bank, tiny_graph

F, B = Relation.FORWARD, Relation.BACKWARD
P, N = Polarity.POSITIVE, Polarity.NEGATIVE


def example(targets=None):
    return TrainingExample(
        context_tokens=("alpha", "beta", "gamma"),
        context_kws=("alpha",),
        targets=targets or {},
    )


ALL_TARGETS = {
    "ctx-pos-emo": ("calm",),
    "ctx-neg-emo": ("sad",),
    "ftr-pos-emo": ("glad",),
    "ftr-neg-emo": ("angry", "sad"),
    "ctx-pos-kws": ("berry",),
    "ctx-neg-kws": ("dark",),
    "ftr-pos-kws": ("light",),
    "ftr-neg-kws": ("cold",),
}


class TestVocabulary:
    def test_specials_first(self):
        v = Vocabulary.build(["zeta", "alpha"])
        assert v.tokens[0] == "<cls>" and v.tokens[1] == "<unk>"
        assert all(m in v.tokens for m in (f"<{h}>" for h in HEAD_IDS))

    def test_unknown_maps_to_unk(self):
        v = Vocabulary.build(["alpha"])
        assert v.id("nope") == 1

    def test_hash_stable(self):
        assert Vocabulary.build(["a1"]).sha256() == Vocabulary.build(["a1"]).sha256()
        assert Vocabulary.build(["a1"]).sha256() != Vocabulary.build(["b1"]).sha256()


class TestEncode:
    def test_empty_sequence_summary_only(self):
        bank = tiny_bank()
        hidden = bank.encode(())
        assert hidden.shape == (1, 4)
        assert torch.isfinite(hidden).all()

    def test_positional_sensitivity(self):
        bank = tiny_bank()
        a = bank.encode(("alpha", "beta", "gamma"))
        b = bank.encode(("beta", "alpha", "gamma"))
        assert not torch.allclose(a, b)

    def test_deterministic(self):
        a = tiny_bank(seed=3).encode(("alpha", "beta"))
        b = tiny_bank(seed=3).encode(("alpha", "beta"))
        assert torch.equal(a, b)

    def test_left_truncation_keeps_summary(self):
        bank = tiny_bank()  # max_len 8 -> at most 7 tokens after the slot
        hidden = bank.encode(tuple("alpha" for _ in range(20)))
        assert hidden.shape == (8, 4)


class TestExpertTransform:
    def test_identity_initialized(self):
        head = ExpertHead("ctx-pos-emo", 3, 2, seeded_generator(0))
        with torch.no_grad():
            head.mlp_w1.copy_(torch.eye(3, dtype=torch.float64))
            head.mlp_b1.zero_()
            head.mlp_w2.copy_(torch.eye(3, dtype=torch.float64))
            head.mlp_b2.zero_()
        x = torch.tensor([[0.5, 1.0, 2.0], [0.1, 0.0, 3.0]], dtype=torch.float64)
        assert torch.allclose(expert_transform(x, head), x)  # nonneg input

    def test_zero_weights(self):
        head = ExpertHead("ctx-pos-emo", 3, 2, seeded_generator(0))
        with torch.no_grad():
            for p in (head.mlp_w1, head.mlp_b1, head.mlp_w2, head.mlp_b2):
                p.zero_()
        x = torch.randn(4, 3, dtype=torch.float64)
        assert torch.equal(expert_transform(x, head), torch.zeros(4, 3, dtype=torch.float64))

    def test_matches_numpy_recomputation(self):
        head = ExpertHead("ctx-pos-emo", 4, 2, seeded_generator(7))
        x = torch.randn(3, 4, dtype=torch.float64, generator=seeded_generator(1))
        got = expert_transform(x, head).detach().numpy()
        w1 = head.mlp_w1.detach().numpy()
        b1 = head.mlp_b1.detach().numpy()
        w2 = head.mlp_w2.detach().numpy()
        b2 = head.mlp_b2.detach().numpy()
        expected = np.maximum(x.numpy() @ w1.T + b1, 0.0) @ w2.T + b2
        assert np.allclose(got, expected, atol=1e-9)

    def test_shape_preserved(self):
        head = ExpertHead("ctx-pos-emo", 4, 2, seeded_generator(0))
        for rows in (1, 2, 5):
            x = torch.randn(rows, 4, dtype=torch.float64)
            assert expert_transform(x, head).shape == (rows, 4)


class TestPredictLabels:
    def head_with_logits(self, logits):
        head = ExpertHead("ctx-pos-emo", len(logits), len(logits), seeded_generator(0))
        with torch.no_grad():
            head.out_w.copy_(torch.eye(len(logits), dtype=torch.float64))
        return head, torch.tensor(logits, dtype=torch.float64)

    def test_zero_logits_uniform(self):
        head, s = self.head_with_logits([0.0, 0.0, 0.0])
        assert torch.allclose(predict_labels(s, head), torch.full((3,), 1 / 3, dtype=torch.float64))

    def test_shift_invariance(self):
        head, s = self.head_with_logits([0.3, -1.2, 2.0])
        a = predict_labels(s, head)
        b = predict_labels(s + 5.0, head)
        assert torch.allclose(a, b, atol=1e-9)

    def test_softmax_123(self):
        head, s = self.head_with_logits([1.0, 2.0, 3.0])
        probs = predict_labels(s, head)
        expected = torch.tensor([0.09003057, 0.24472847, 0.66524096], dtype=torch.float64)
        assert torch.allclose(probs, expected, atol=1e-7)

    def test_distribution_invariant(self):
        gen = seeded_generator(2)
        for _ in range(20):
            head = ExpertHead("ctx-pos-emo", 5, 7, gen)
            s = torch.randn(5, dtype=torch.float64, generator=gen)
            probs = predict_labels(s, head).detach()
            assert (probs >= 0).all()
            assert abs(float(probs.sum()) - 1.0) <= 1e-9


class TestLabelSetLoss:
    def test_perfect_prediction(self):
        lp = torch.log(torch.tensor([1.0 - 1e-300, 1e-300], dtype=torch.float64))
        assert float(label_set_loss(lp, [0])) == pytest.approx(0.0, abs=1e-12)

    def test_log_identity(self):
        lp = torch.log(torch.tensor([math.exp(-1), 0.5], dtype=torch.float64))
        assert float(label_set_loss(lp, [0])) == pytest.approx(1.0, abs=1e-12)

    def test_two_labels_closed_form(self):
        lp = torch.log(torch.tensor([0.5, 0.25, 0.25], dtype=torch.float64))
        got = float(label_set_loss(lp, [0, 1]))
        assert got == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)
        assert got == pytest.approx(1.0397207708399179, abs=1e-9)

    def test_empty_labels_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            label_set_loss(torch.zeros(3, dtype=torch.float64), [])

    def test_out_of_vocab_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            label_set_loss(torch.zeros(3, dtype=torch.float64), [3])


class TestNeighborAttention:
    def kws_head(self, d_h=4, seed=0):
        return ExpertHead("ctx-pos-kws", d_h, 2, seeded_generator(seed))

    def test_single_neighbor_passthrough(self):
        head = self.kws_head()
        s = torch.randn(4, dtype=torch.float64)
        n = torch.randn(1, 4, dtype=torch.float64)
        assert torch.allclose(neighbor_attention(s, n, head), n[0])

    def test_identical_neighbors(self):
        head = self.kws_head()
        s = torch.randn(4, dtype=torch.float64)
        row = torch.randn(4, dtype=torch.float64)
        n = row.expand(5, 4)
        assert torch.allclose(neighbor_attention(s, n, head), row, atol=1e-12)

    def test_zero_neighbors_zero_vector(self):
        head = self.kws_head()
        s = torch.randn(4, dtype=torch.float64)
        out = neighbor_attention(s, torch.zeros((0, 4), dtype=torch.float64), head)
        assert torch.equal(out, torch.zeros(4, dtype=torch.float64))

    def test_matches_numpy_recomputation(self):
        head = self.kws_head(seed=11)
        gen = seeded_generator(4)
        s = torch.randn(4, dtype=torch.float64, generator=gen)
        n = torch.randn(2, 4, dtype=torch.float64, generator=gen)
        got = neighbor_attention(s, n, head).detach().numpy()
        wq = head.attn_wq.detach().numpy()
        wk = head.attn_wk.detach().numpy()
        v = head.attn_v.detach().numpy()
        scores = np.tanh(s.numpy() @ wq.T + n.numpy() @ wk.T) @ v
        weights = np.exp(scores - scores.max())
        weights /= weights.sum()
        expected = weights @ n.numpy()
        assert np.allclose(got, expected, atol=1e-9)


class TestKeywordEnhance:
    def test_block_structure(self):
        head = ExpertHead("ctx-pos-kws", 3, 2, seeded_generator(0))
        with torch.no_grad():
            head.fuse_w[:, 3:].zero_()  # ignore the fused half
        x = torch.randn(4, 3, dtype=torch.float64)
        got = keyword_enhance(x, torch.zeros(3, dtype=torch.float64), head)
        expected = x @ head.fuse_w[:, :3].T + head.fuse_b
        assert torch.allclose(got, expected, atol=1e-12)

    def test_matches_numpy_recomputation(self):
        head = ExpertHead("ctx-pos-kws", 3, 2, seeded_generator(9))
        gen = seeded_generator(5)
        x = torch.randn(2, 3, dtype=torch.float64, generator=gen)
        fused = torch.randn(3, dtype=torch.float64, generator=gen)
        got = keyword_enhance(x, fused, head).detach().numpy()
        w = head.fuse_w.detach().numpy()
        b = head.fuse_b.detach().numpy()
        cat = np.concatenate([x.numpy(), np.tile(fused.numpy(), (2, 1))], axis=1)
        assert np.allclose(got, cat @ w.T + b, atol=1e-9)

    def test_finite_on_wide_inputs(self):
        head = ExpertHead("ctx-pos-kws", 4, 2, seeded_generator(0))
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = torch.from_numpy(rng.uniform(-10, 10, size=(3, 4)))
            fused = torch.from_numpy(rng.uniform(-10, 10, size=4))
            assert torch.isfinite(keyword_enhance(x, fused, head)).all()

    def test_sequence_length_preserved(self):
        head = ExpertHead("ctx-pos-kws", 4, 2, seeded_generator(0))
        for rows in (1, 3, 6):
            x = torch.randn(rows, 4, dtype=torch.float64)
            assert keyword_enhance(x, torch.zeros(4, dtype=torch.float64), head).shape == (rows, 4)


class TestExpertsMse:
    def test_zero_residual(self):
        s = torch.randn(4, dtype=torch.float64)
        assert float(experts_mse(s, [s] * 8, alpha=1.0)) == 0.0

    def test_closed_form(self):
        s = torch.tensor([1.0, 0.0], dtype=torch.float64)
        zeros = torch.zeros(2, dtype=torch.float64)
        assert float(experts_mse(s, [zeros] * 8, alpha=1.0)) == pytest.approx(0.5, abs=1e-12)

    def test_default_alpha(self):
        assert tiny_bank().alpha == 1e-5
        assert ExpertBank.__init__.__defaults__[2] == 1e-5  # d_h=64, max_len=128, alpha


class TestNeighborCache:
    def test_contextual_one_hop(self):
        cache = NeighborCache(tiny_graph())
        assert cache.neighbor_words("ctx-pos-kws", ("alpha",)) == ("berry",)
        assert cache.neighbor_words("ctx-neg-kws", ("alpha",)) == ("dark",)

    def test_future_multi_hop(self):
        cache = NeighborCache(tiny_graph())
        # {alpha} -F-> {berry, dark} -F-> {berry, dark} -B(pol)-> tails only
        assert cache.neighbor_words("ftr-pos-kws", ("alpha",)) == ("light",)
        assert cache.neighbor_words("ftr-neg-kws", ("alpha",)) == ("cold",)

    def test_missing_graph_warns_once(self, caplog):
        cache = NeighborCache(None)
        with caplog.at_level(logging.WARNING):
            assert cache.neighbor_words("ctx-pos-kws", ("alpha",)) == ()
            assert cache.neighbor_words("ftr-neg-kws", ("alpha",)) == ()
        assert sum("neighbor" in r.message for r in caplog.records) == 1

    def test_cached_identity(self):
        cache = NeighborCache(tiny_graph())
        a = cache.neighbor_words("ctx-pos-kws", ("alpha",))
        assert cache.neighbor_words("ctx-pos-kws", ("alpha",)) is a


class TestMultitaskLoss:
    def test_additivity_removing_keyword_targets(self):
        bank = tiny_bank(seed=1)
        cache = NeighborCache(tiny_graph())
        with torch.no_grad():
            full, _ = bank.multitask_loss([example(ALL_TARGETS)], cache)
            emo_only = {h: t for h, t in ALL_TARGETS.items() if h.endswith("emo")}
            kws_only = {h: t for h, t in ALL_TARGETS.items() if h.endswith("kws")}
            no_kws, bd = bank.multitask_loss([example(emo_only)], cache)
            kws_part, _ = bank.multitask_loss([example(kws_only)], cache)
        assert float(full) == pytest.approx(
            float(no_kws) + float(kws_part) - bd["mse"], abs=1e-9
        )

    def test_single_example_equals_hand_sum(self):
        bank = tiny_bank(seed=2)
        graph = tiny_graph()
        cache = NeighborCache(graph)
        with torch.no_grad():
            total, bd = bank.multitask_loss([example(ALL_TARGETS)], cache)
            # hand-sum the per-head terms through the public pieces
            enc = bank.encode(("alpha", "beta", "gamma"))
            hand = 0.0
            summaries = []
            for h in HEAD_IDS:
                neighbors = cache.neighbor_words(h, ("alpha",)) if h.endswith("kws") else ()
                summary = bank.head_summary(h, enc, neighbors)
                summaries.append(summary)
                ids = [bank.head_label_index[h][w] for w in ALL_TARGETS[h]]
                lp = torch.log_softmax(label_logits(summary, bank.heads[h]), dim=-1)
                hand += float(label_set_loss(lp, ids))
            hand += float(experts_mse(enc[0], summaries, bank.alpha))
        assert float(total) == pytest.approx(hand, rel=1e-12)
        assert bd["total"] == pytest.approx(hand, rel=1e-12)

    def test_missing_targets_contribute_zero(self):
        bank = tiny_bank(seed=3)
        cache = NeighborCache(tiny_graph())
        with torch.no_grad():
            none, _ = bank.multitask_loss([example({})], cache)
            some, bd = bank.multitask_loss([example({"ctx-pos-emo": ("calm",)})], cache)
        assert float(none) == pytest.approx(bd["mse"], abs=1e-12)
        assert float(some) > float(none)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            tiny_bank().multitask_loss([], NeighborCache(None))


class TestGradients:
    def check(self, targets, alpha, seed=0):
        bank = tiny_bank(seed=seed, alpha=alpha)
        cache = NeighborCache(tiny_graph())
        batch = [example(targets)]

        def loss_fn():
            loss, _ = bank.multitask_loss(batch, cache)
            return loss

        fd_gradcheck(loss_fn, list(bank.parameters()))

    def test_emotion_loss_gradients(self):
        self.check({h: ALL_TARGETS[h] for h in HEAD_IDS if h.endswith("emo")}, alpha=0.0)

    def test_keyword_loss_gradients(self):
        self.check({h: ALL_TARGETS[h] for h in HEAD_IDS if h.endswith("kws")}, alpha=0.0)

    def test_mse_loss_gradients(self):
        self.check({}, alpha=1.0)

    def test_combined_loss_gradients(self):
        self.check(ALL_TARGETS, alpha=0.01, seed=1)

    def test_softmax_ce_analytic_identity(self):
        # d/dlogits of the label-set cross entropy = probs - mean(one-hots)
        gen = seeded_generator(0)
        logits = torch.randn(5, dtype=torch.float64, generator=gen, requires_grad=True)
        labels = [1, 3]
        loss = label_set_loss(torch.log_softmax(logits, dim=-1), labels)
        loss.backward()
        probs = torch.softmax(logits.detach(), dim=-1)
        one_hot = torch.zeros(5, dtype=torch.float64)
        for i in labels:
            one_hot[i] += 1 / len(labels)
        assert torch.allclose(logits.grad, probs - one_hot, atol=1e-12)

    def test_zero_loss_zero_gradients(self):
        # no targets and alpha=0: the loss is identically zero
        bank = tiny_bank(alpha=0.0)
        cache = NeighborCache(tiny_graph())
        loss, _ = bank.multitask_loss([example({})], cache)
        loss.backward()
        assert float(loss) == 0.0
        for p in bank.parameters():
            if p.grad is not None:
                assert torch.equal(p.grad, torch.zeros_like(p))


class TestBuildExamples:
    def make_corpus(self):
        return [
            dialogue(
                "d1",
                [
                    ("seeker", "alpha town feels dark and i am sad"),
                    ("supporter", "try the berry and mind the dark"),
                    ("seeker", "the light sounds glad but cold leaves me angry"),
                    ("supporter", "hold the light"),
                ],
            )
        ]

    def lexicon(self):
        return VadLexicon(
            {
                "berry": 0.9, "light": 0.8, "dark": 0.2, "cold": 0.3,
                "calm": 0.7, "glad": 0.85, "sad": 0.1, "angry": 0.15,
            }
        )

    def test_targets(self):
        from esmoe.corpus import build_label_vocabulary

        corpus = self.make_corpus()
        lex = self.lexicon()
        label_vocab = build_label_vocabulary(corpus, lex)
        head_vocabs = head_vocabularies(label_vocab, tiny_graph())
        stop = frozenset({"the", "and", "i", "am", "try", "me", "but"})
        examples = build_examples(corpus, lex, stop, label_vocab, head_vocabs)
        assert len(examples) == 2
        first = examples[0]
        assert first.context_tokens == tuple("alpha town feels dark and i am sad".split())
        assert first.targets["ctx-neg-emo"] == ("dark", "sad")
        assert first.targets["ctx-pos-emo"] == ()
        assert first.targets["ftr-pos-emo"] == ("glad", "light")
        assert first.targets["ctx-pos-kws"] == ("berry",)
        assert first.targets["ctx-neg-kws"] == ("dark",)
        assert first.targets["ftr-pos-kws"] == ("light",)
        assert first.targets["ftr-neg-kws"] == ("cold",)
        second = examples[1]
        # final supporter turn has no future seeker utterance
        assert second.targets["ftr-pos-emo"] == ()
        assert second.targets["ftr-neg-kws"] == ()

    def test_top_labels_ties_lexicographic(self):
        bank = tiny_bank()
        with torch.no_grad():
            bank.heads["ctx-pos-emo"].out_w.zero_()  # uniform probabilities
        enc = bank.encode(("alpha",))
        assert bank.top_labels("ctx-pos-emo", enc, (), n=2) == ["calm", "glad"]
        assert bank.top_labels("ctx-pos-emo", enc, (), n=0) == []
