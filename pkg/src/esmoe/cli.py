"""Command-line pipeline: build-graph, warm-start, train, eval, rollout.

Configuration is a flat key=value file (# comments allowed) overridable with
repeated --set key=value flags; every key is listed in --help. Exit codes:
0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import shlex
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .corpus import (
    CorpusError,
    VadLexicon,
    build_label_vocabulary,
    extract_keywords,
    load_corpus,
    load_reaction_sidecar,
    load_stopwords,
    split_corpus,
    tokenize,
)
from .env import SupportEnv, TemplatePools, TemplateRealizer, env_stream, load_profiles, realize_response
from .evaluate import evaluate
from .experts import (
    ExpertBank,
    NeighborCache,
    Vocabulary,
    build_examples,
    head_vocabularies,
)
from .graph import GraphFormatError, build_graph, graph_summary, load_graph, save_graph
from .model_io import ModelFormatError, load_bundle, save_bundle
from .policy import (
    ActorValueNet,
    TrainConfig,
    advance_state,
    greedy_action,
    init_state,
    joint_train,
    make_prompt,
    rollout,
    warm_start,
)
from .rewards import (
    ExternalProcessScorer,
    RewardEngine,
    RewardInputs,
    RewardWeights,
)

EXIT_CONFIG = 2
EXIT_DATA = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every tunable of the pipeline; flat, so the config file stays flat."""

    # paths
    corpus: str = "data/corpus.jsonl"
    lexicon: str = "data/lexicon.tsv"
    stopwords: str = "data/stopwords.txt"
    templates: str = "data/templates.json"
    profiles: str = "data/profiles.json"
    sidecar: str = ""  # optional reaction sidecar JSONL
    graph: str = "artifacts/graph.json"
    model: str = "artifacts/model.bin"
    report: str = "artifacts/report.json"
    dump: str = ""  # optional per-step trajectory dump JSONL (eval)
    # training
    k_steps: int = 2
    gamma: float = 0.99
    max_turns: int = 10
    lr: float = 1e-3
    batch_size: int = 16
    warmup_steps: int = 120
    warm_epochs: int = 5
    joint_epochs: int = 3
    episodes_per_epoch: int = 500
    seed: int = 0
    # model dimensions
    d_h: int = 64
    d1: int = 64
    d2: int = 64
    dropout: float = 0.1
    max_len: int = 128
    alpha: float = 1e-5
    prompt_n: int = 3
    # corpus and graph
    top_k: int = 25
    tau: float = 0.5
    label_vocab_size: int = 50
    max_reactions: int = 10
    split_ratios: str = "0.8,0.1,0.1"
    # reward weights
    w_ces: float = 0.1
    w_tes: float = 1.0
    w_cdc: float = 0.1
    w_fdc: float = 1.0
    # scorers: reference | external-bridge (external_cmd speaks JSONL)
    scorer: str = "reference"
    external_cmd: str = ""
    # environment
    done_threshold: float = 0.8
    # evaluation
    eval_episodes: int = 200

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            k_steps=self.k_steps,
            gamma=self.gamma,
            max_turns=self.max_turns,
            lr=self.lr,
            batch_size=self.batch_size,
            warmup_steps=self.warmup_steps,
            warm_epochs=self.warm_epochs,
            joint_epochs=self.joint_epochs,
            episodes_per_epoch=self.episodes_per_epoch,
            seed=self.seed,
        )

    def weights(self) -> RewardWeights:
        return RewardWeights(self.w_ces, self.w_tes, self.w_cdc, self.w_fdc)

    def ratios(self) -> tuple[float, ...]:
        try:
            return tuple(float(x) for x in self.split_ratios.split(","))
        except ValueError as e:
            raise ConfigError(f"bad split_ratios {self.split_ratios!r}") from e

    def echo(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from e


def parse_config_file(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    assignments: dict[str, str] = {}
    if args.config:
        if not Path(args.config).exists():
            raise ConfigError(f"config file not found: {args.config}")
        assignments.update(parse_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        assignments[key.strip()] = value.strip()
    for key, raw in assignments.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _convert(key, raw))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "episodes", None) is not None:
        cfg.eval_episodes = args.episodes
    if getattr(args, "top_k", None) is not None:
        cfg.top_k = args.top_k
    if cfg.scorer not in ("reference", "external-bridge"):
        raise ConfigError(f"scorer must be 'reference' or 'external-bridge', got {cfg.scorer!r}")
    if cfg.scorer == "external-bridge" and not cfg.external_cmd:
        raise ConfigError("scorer external-bridge requires external_cmd")
    return cfg


def _require_paths(cfg: RunConfig, *keys: str) -> None:
    for key in keys:
        path = getattr(cfg, key)
        if not path or not Path(path).exists():
            raise FileNotFoundError(f"{key} file not found: {path!r}")


def _ensure_parent(path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# Shared stage loaders


def _load_data(cfg: RunConfig):
    _require_paths(cfg, "corpus", "lexicon", "stopwords")
    dialogues = load_corpus(cfg.corpus)
    lex = VadLexicon.load(cfg.lexicon, tau=cfg.tau)
    stopwords = load_stopwords(cfg.stopwords)
    return dialogues, lex, stopwords


def _load_env_parts(cfg: RunConfig, lex: VadLexicon):
    _require_paths(cfg, "templates", "profiles")
    pools = TemplatePools.load(cfg.templates)
    realizer = TemplateRealizer(pools, lex)
    profiles = load_profiles(cfg.profiles)
    return realizer, profiles


def _make_engine(cfg: RunConfig, lex: VadLexicon, graph) -> RewardEngine:
    if cfg.scorer == "external-bridge":
        bridge = ExternalProcessScorer(shlex.split(cfg.external_cmd))
        return RewardEngine(
            bridge.emotion_scorer(),
            bridge.coherence_scorer("cdc"),
            bridge.coherence_scorer("fdc"),
            graph,
            cfg.weights(),
        )
    return RewardEngine.reference(lex, graph, cfg.weights())


# ---------------------------------------------------------------------------
# Commands


def cmd_build_graph(cfg: RunConfig) -> int:
    dialogues, lex, stopwords = _load_data(cfg)
    train, _, _ = split_corpus(dialogues, cfg.ratios(), cfg.seed)
    graph = build_graph(train, lex, cfg.top_k, stopwords)
    _ensure_parent(cfg.graph)
    save_graph(graph, cfg.graph)
    s = graph_summary(graph)
    print(f"#Keywords {int(s['keywords'])}")
    print(f"#Edges {int(s['edges'])}")
    print(f"Avg. forward neighbors {s['avg_forward_neighbors']:.2f}")
    print(f"Avg. backward neighbors {s['avg_backward_neighbors']:.2f}")
    print(f"Avg. positive neighbors {s['avg_positive_neighbors']:.2f}")
    print(f"Avg. negative neighbors {s['avg_negative_neighbors']:.2f}")
    print(f"graph written to {cfg.graph}")
    return 0


def cmd_warm_start(cfg: RunConfig) -> int:
    dialogues, lex, stopwords = _load_data(cfg)
    _require_paths(cfg, "graph")
    graph = load_graph(cfg.graph)
    train, valid, _ = split_corpus(dialogues, cfg.ratios(), cfg.seed)
    sidecar = load_reaction_sidecar(cfg.sidecar) if cfg.sidecar else None
    label_vocab = build_label_vocabulary(
        train, lex, cfg.max_reactions, cfg.label_vocab_size, sidecar
    )
    vocab = Vocabulary.build(t for d in train for u in d.turns for t in u.tokens)
    head_vocabs = head_vocabularies(label_vocab, graph)
    gen = torch.Generator().manual_seed(cfg.seed)
    bank = ExpertBank(vocab, head_vocabs, cfg.d_h, cfg.max_len, cfg.alpha, gen)
    net = ActorValueNet(cfg.k_steps, cfg.d_h, cfg.d1, cfg.d2, cfg.dropout, gen)
    cache = NeighborCache(graph)
    examples = build_examples(
        train, lex, stopwords, label_vocab, head_vocabs, cfg.max_reactions, sidecar
    )
    valid_examples = build_examples(
        valid, lex, stopwords, label_vocab, head_vocabs, cfg.max_reactions, sidecar
    )
    history = warm_start(examples, bank, cache, cfg.train_config(), valid_examples)
    for entry in history:
        line = f"epoch {entry['epoch']}: train L_exp {entry['train_loss']:.4f}"
        if "valid_loss" in entry:
            line += f", valid L_exp {entry['valid_loss']:.4f}"
        print(line)
    _ensure_parent(cfg.model)
    save_bundle(
        cfg.model, bank, net, cfg.train_config(), cfg.d1, cfg.d2, cfg.dropout,
        extra_meta={"stage": "warm-start"},
    )
    print(f"model written to {cfg.model}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    _require_paths(cfg, "model", "graph")
    bank, net, _, meta = load_bundle(cfg.model)
    graph = load_graph(cfg.graph)
    _, lex, stopwords = _load_data(cfg)
    realizer, profiles = _load_env_parts(cfg, lex)
    engine = _make_engine(cfg, lex, graph)
    cache = NeighborCache(graph)
    factory = env_stream(
        profiles, realizer, lex, stopwords, cfg.max_turns, cfg.done_threshold,
        cfg.seed, stage=1,
    )
    history = joint_train(factory, bank, net, engine, cache, cfg.train_config(), cfg.prompt_n)
    for entry in history:
        print(
            f"epoch {entry['epoch']}: mean return {entry['mean_return']:.4f}, "
            f"mean loss {entry['mean_loss']:.4f}"
        )
    _ensure_parent(cfg.model)
    save_bundle(
        cfg.model, bank, net, cfg.train_config(),
        meta["net"]["d1"], meta["net"]["d2"], meta["net"]["dropout"],
        extra_meta={"stage": "joint"},
    )
    print(f"model written to {cfg.model}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    _require_paths(cfg, "model", "graph")
    bank, net, _, _ = load_bundle(cfg.model)
    graph = load_graph(cfg.graph)
    _, lex, stopwords = _load_data(cfg)
    realizer, profiles = _load_env_parts(cfg, lex)
    engine = _make_engine(cfg, lex, graph)
    cache = NeighborCache(graph)
    factory = env_stream(
        profiles, realizer, lex, stopwords, cfg.max_turns, cfg.done_threshold,
        cfg.seed, stage=2,
    )
    report, records = evaluate(
        bank, net, engine, cache, factory, cfg.eval_episodes,
        cfg.train_config(), cfg.prompt_n, config_echo=cfg.echo(),
    )
    _ensure_parent(cfg.report)
    with open(cfg.report, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    if cfg.dump:
        _ensure_parent(cfg.dump)
        with open(cfg.dump, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    print(
        f"cES {report.ces:.3f}  tES {report.tes:.3f}  "
        f"cDC {report.cdc:.3f}  fDC {report.fdc:.3f}"
    )
    print(
        f"D-1/2/3 {report.distinct[0]:.3f}/{report.distinct[1]:.3f}/{report.distinct[2]:.3f}  "
        f"len {report.avg_len:.1f}  return {report.mean_return:.4f}"
    )
    print(f"report written to {cfg.report}")
    return 0


def _print_components(prefix: str, comp: dict) -> None:
    print(
        f"{prefix} cES {comp['cES']:+.3f}  tES {comp['tES']:.3f}  "
        f"cDC {comp['cDC']:.3f}  fDC {comp['fDC']:.3f}"
    )


def cmd_rollout(cfg: RunConfig, interactive: bool) -> int:
    _require_paths(cfg, "model", "graph")
    bank, net, _, _ = load_bundle(cfg.model)
    graph = load_graph(cfg.graph)
    _, lex, stopwords = _load_data(cfg)
    realizer, profiles = _load_env_parts(cfg, lex)
    engine = _make_engine(cfg, lex, graph)
    cache = NeighborCache(graph)
    tc = cfg.train_config()
    if interactive:
        return _interactive_rollout(cfg, bank, net, engine, cache, realizer, stopwords, tc)
    factory = env_stream(
        profiles, realizer, lex, stopwords, cfg.max_turns, cfg.done_threshold,
        cfg.seed, stage=3,
    )
    env, act_rng = factory(0)
    opening = env.reset()
    print(f"seeker> {opening}")
    while not env._state().done:
        traj = rollout(env, net, bank, engine, cache, tc, "greedy", act_rng, cfg.prompt_n)
        experts = ", ".join(f"<{p.expert_id}>" for p in traj.terminal_state.prompts)
        print(f"agent [{experts}]> {traj.response_text}")
        for k, comp in enumerate(traj.components, start=1):
            _print_components(f"  step {k}: r={traj.rewards[k - 1]:+.3f} ", comp.as_dict())
        print(f"  G={traj.discounted:+.4f}  user emotion -> {traj.user_emotion:.3f}")
        print(f"seeker> {traj.future_text}")
    print("episode finished")
    return 0


def _interactive_rollout(cfg, bank, net, engine, cache, realizer, stopwords, tc) -> int:
    """REPL: the human is the seeker; per turn the agent shows its expert
    selections, response, and reward components (tES/fDC complete on the next
    human message, which supplies the future utterance)."""
    rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
    transcript: list[tuple[str, str]] = []
    pending = None  # (turn, posts, context_text, c_kws, realized)
    completed_totals: list[float] = []
    print("you are the seeker; the agent supports you. type 'quit' to end.")
    while True:
        try:
            text = input("seeker> ").strip()
        except EOFError:
            text = "quit"
        if not text:
            continue
        if text.lower() in ("quit", "exit"):
            break
        transcript.append(("seeker", text))
        if pending is not None:
            turn, posts, context_text, c_kws, realized = pending
            future_kws = extract_keywords(tokenize(text), stopwords).words
            for k, (y_text, y_kws) in enumerate(realized, start=1):
                total, comp = engine.score(
                    RewardInputs(
                        y_text, y_kws, posts, context_text, c_kws,
                        text, future_kws, turn, cfg.max_turns,
                    )
                )
                _print_components(f"  turn {turn} step {k} complete: r={total:+.3f} ", comp.as_dict())
                completed_totals.append(total)
            pending = None

        turn = min(sum(1 for s, _ in transcript if s == "seeker"), cfg.max_turns)
        posts = tuple(t for s, t in transcript if s == "seeker")[:turn]
        context_text = " ".join(t for _, t in transcript)
        state = init_state(
            tuple(tokenize(context_text)),
            extract_keywords(tokenize(context_text), stopwords).words,
            bank, tc.k_steps,
        )
        c_kws = state.context_kws
        actions: list[int] = []
        realized = []
        for _ in range(tc.k_steps):
            with torch.no_grad():
                probs, _, _ = net(state.embedding_tensor(), training=False)
            a = greedy_action(probs)
            actions.append(a)
            state = advance_state(state, make_prompt(a, bank, state, cache, cfg.prompt_n), bank)
            realized.append(
                realize_response(state, actions, bank, realizer, rng, stopwords, cfg.prompt_n)
            )
        response_text, _ = realized[-1]
        experts = ", ".join(f"<{p.expert_id}>" for p in state.prompts)
        print(f"agent [{experts}]> {response_text}")
        print("  (tES/fDC for this turn will complete with your next message)")
        transcript.append(("supporter", response_text))
        pending = (turn, posts, context_text, c_kws, realized)
    n_turns = sum(1 for s, _ in transcript if s == "supporter")
    mean_total = float(np.mean(completed_totals)) if completed_totals else 0.0
    print(
        f"session summary: {n_turns} agent turns, "
        f"{len(completed_totals)} completed reward steps, mean total reward {mean_total:+.3f}"
    )
    return 0


# ---------------------------------------------------------------------------
# Entry point


def _config_key_help() -> str:
    lines = ["config keys (key = value per line; --set key=value overrides):"]
    for f in fields(RunConfig):
        lines.append(f"  {f.name} (default: {f.default!r})")
    return "\n".join(lines)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esmoe",
        description="Emotional-support dialogue policy pipeline.",
        epilog=_config_key_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("build-graph", "build and save the emotion keyword graph"),
        ("warm-start", "train the expert bank on the multi-task loss"),
        ("train", "joint REINFORCE + expert training against the simulated seeker"),
        ("eval", "greedy evaluation; writes the metrics report"),
        ("rollout", "play one episode (or talk to the agent with --interactive)"),
    ):
        p = sub.add_parser(name, help=help_text, epilog=_config_key_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the seed")
        if name == "eval":
            p.add_argument("--episodes", type=int, help="override eval_episodes")
        if name == "build-graph":
            p.add_argument("--top-k", dest="top_k", type=int, help="override top_k")
        if name == "rollout":
            p.add_argument("--interactive", action="store_true",
                           help="type seeker messages yourself")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    torch.set_num_threads(1)  # tiny matmuls; keeps runs bit-reproducible
    try:
        cfg = build_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "build-graph":
            return cmd_build_graph(cfg)
        if args.command == "warm-start":
            return cmd_warm_start(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "rollout":
            return cmd_rollout(cfg, args.interactive)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, GraphFormatError, ModelFormatError, FileNotFoundError, ValueError) as e:
        print(f"data error [{args.command}]: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
