#!/usr/bin/env python3
"""Dev harness: measures the learning margin, ablation directionality, and
PED trend that the acceptance suite asserts. Not part of the package."""

import argparse
import copy
import pathlib
import tempfile
import time

import numpy as np
import torch

from esmoe import synth
from esmoe.corpus import (
    VadLexicon,
    build_label_vocabulary,
    load_corpus,
    load_stopwords,
    split_corpus,
)
from esmoe.env import TemplatePools, TemplateRealizer, env_stream, load_profiles
from esmoe.evaluate import evaluate
from esmoe.experts import (
    ExpertBank,
    NeighborCache,
    Vocabulary,
    build_examples,
    head_vocabularies,
)
from esmoe.graph import build_graph
from esmoe.policy import ActorValueNet, TrainConfig, joint_train, warm_start
from esmoe.rewards import RewardEngine, RewardWeights


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--eval-episodes", type=int, default=200)
    ap.add_argument("--dialogues", type=int, default=240)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ablations", action="store_true")
    args = ap.parse_args()

    torch.set_num_threads(1)
    tmp = pathlib.Path(tempfile.mkdtemp())
    paths = synth.write_all(tmp, n_dialogues=args.dialogues, seed=0)
    dialogues = load_corpus(paths["corpus"])
    lex = VadLexicon.load(paths["lexicon"])
    stop = load_stopwords(paths["stopwords"])
    train, valid, test = split_corpus(dialogues, (0.8, 0.1, 0.1), 0)
    graph = build_graph(train, lex, 25, stop)
    label_vocab = build_label_vocabulary(train, lex)
    vocab = Vocabulary.build(t for d in train for u in d.turns for t in u.tokens)
    hv = head_vocabularies(label_vocab, graph)
    cache = NeighborCache(graph)
    train_ex = build_examples(train, lex, stop, label_vocab, hv)
    realizer = TemplateRealizer(TemplatePools.load(paths["templates"]), lex)
    profiles = load_profiles(paths["profiles"])

    cfg = TrainConfig(lr=3e-2, warm_epochs=5, batch_size=16, warmup_steps=20, seed=args.seed)
    gen = torch.Generator().manual_seed(args.seed)
    bank0 = ExpertBank(vocab, hv, d_h=32, max_len=96, generator=gen)
    net0 = ActorValueNet(cfg.k_steps, d_h=32, generator=gen)
    t0 = time.time()
    warm_start(train_ex, bank0, cache, cfg)
    print(f"warm [{time.time()-t0:.0f}s]")

    eval_engine = RewardEngine.reference(lex, graph, RewardWeights())

    def efactory():
        return env_stream(profiles, realizer, lex, stop, 10, 0.8, 7, stage=2)

    def show(tag, report):
        print(
            f"[{tag}] return {report.mean_return:.4f} cES {report.ces:.3f} "
            f"tES {report.tes:.3f} cDC {report.cdc:.3f} fDC {report.fdc:.3f}"
        )
        print("   ped:", [(t, round(m, 3)) for t, m, _ in report.ped_by_turn])

    bank_r = copy.deepcopy(bank0)
    net_r = copy.deepcopy(net0)
    with torch.no_grad():
        net_r.w_phi.zero_()
    rand_report, _ = evaluate(
        bank_r, net_r, eval_engine, cache, efactory(), args.eval_episodes, cfg, mode="sample"
    )
    show("random", rand_report)

    def run(weights, tag):
        bank = copy.deepcopy(bank0)
        net = copy.deepcopy(net0)
        engine = RewardEngine.reference(lex, graph, weights)
        tc = TrainConfig(
            lr=args.lr, joint_epochs=args.epochs, episodes_per_epoch=args.episodes,
            batch_size=16, warmup_steps=20, seed=args.seed,
        )
        factory = env_stream(profiles, realizer, lex, stop, 10, 0.8, args.seed, stage=1)
        t0 = time.time()
        joint_train(factory, bank, net, engine, cache, tc)
        ttr = time.time() - t0
        report, _ = evaluate(bank, net, eval_engine, cache, efactory(), args.eval_episodes, tc)
        print(f"   (train {ttr:.0f}s)")
        show(tag, report)
        return report

    full = run(RewardWeights(), "full")
    print("RATIO full/random:", round(full.mean_return / rand_report.mean_return, 4))
    window = [m for t, m, _ in full.ped_by_turn if t <= 5]
    diffs = [round(b - a, 4) for a, b in zip(window, window[1:])]
    inv = [d for d in diffs if d < 0]
    print("PED window:", [round(x, 3) for x in window], "diffs:", diffs,
          "inversions:", len(inv), "max inv:", -min(inv) if inv else 0.0)

    if args.ablations:
        no_es = run(RewardWeights(0.0, 0.0, 0.1, 1.0), "no-ES")
        no_dc = run(RewardWeights(0.1, 1.0, 0.0, 0.0), "no-DC")
        print("cES full vs no-ES:", round(full.ces, 4), round(no_es.ces, 4),
              "OK" if full.ces > no_es.ces else "VIOLATED")
        print("cDC full vs no-DC:", round(full.cdc, 4), round(no_dc.cdc, 4),
              "OK" if full.cdc > no_dc.cdc else "VIOLATED")


if __name__ == "__main__":
    main()
