"""Expert-selection MDP: state assembly over the encoder, the actor/value
network, rollouts against the simulated seeker, and REINFORCE-with-baseline
training (warm start on the expert losses, then joint training).

One episode is the K-step expert selection behind a single supporter turn;
the return discounts the per-step rewards of the responses realized from each
updated state.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import Polarity, VadLexicon, extract_keywords, tokenize
from .experts import (
    HEAD_IDS,
    N_EXPERTS,
    ExpertBank,
    NeighborCache,
    TrainingExample,
    head_is_keyword,
    head_polarity,
    uniform_param,
)
from .env import SupportEnv
from .rewards import RewardComponents, RewardEngine, RewardInputs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
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

    def __post_init__(self):
        if self.k_steps < 1:
            raise ValueError("k_steps must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")


# ---------------------------------------------------------------------------
# States and prompts


@dataclass(frozen=True)
class ExpertPrompt:
    """Marker token naming the expert plus its top predicted labels."""

    expert_id: str
    words: tuple[str, ...]

    def tokens(self) -> tuple[str, ...]:
        return (f"<{self.expert_id}>", *self.words)


@dataclass(frozen=True)
class State:
    """The k-th observed state: context (plus initial keywords at k=1, expert
    prompts afterwards), its encoder hidden matrix, and the zero-padded
    concatenation of the summary vectors seen so far."""

    context_tokens: tuple[str, ...]
    context_kws: tuple[str, ...]
    prompts: tuple[ExpertPrompt, ...]
    k: int
    k_steps: int
    history: tuple[np.ndarray, ...] = field(repr=False)
    hidden: torch.Tensor = field(repr=False)

    def sequence_tokens(self) -> tuple[str, ...]:
        if self.k == 1:
            return self.context_tokens + self.context_kws
        return self.context_tokens + tuple(
            t for p in self.prompts for t in p.tokens()
        )

    @property
    def embedding(self) -> np.ndarray:
        d_h = self.history[0].shape[0]
        out = np.zeros(self.k_steps * d_h, dtype=np.float64)
        for i, h in enumerate(self.history[: self.k_steps]):
            out[i * d_h : (i + 1) * d_h] = h
        return out

    def embedding_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.embedding)


def init_state(
    context_tokens: Sequence[str],
    keywords: Sequence[str],
    bank: ExpertBank,
    k_steps: int,
) -> State:
    """s_1 encodes context + keywords; the embedding is padded to K slots."""
    if not context_tokens:
        raise ValueError("empty context")
    tokens = tuple(context_tokens)
    kws = tuple(keywords)
    with torch.no_grad():
        hidden = bank.encode(tokens + kws)
    return State(
        context_tokens=tokens,
        context_kws=kws,
        prompts=(),
        k=1,
        k_steps=k_steps,
        history=(hidden[0].numpy().copy(),),
        hidden=hidden,
    )


def advance_state(state: State, prompt: ExpertPrompt, bank: ExpertBank) -> State:
    """Append the new expert prompt; the initial keywords are dropped for k>1."""
    if state.k > state.k_steps:
        raise ValueError(f"state is terminal (k={state.k})")
    prompts = state.prompts + (prompt,)
    sequence = state.context_tokens + tuple(t for p in prompts for t in p.tokens())
    with torch.no_grad():
        hidden = bank.encode(sequence)
    return replace(
        state,
        prompts=prompts,
        k=state.k + 1,
        history=state.history + (hidden[0].numpy().copy(),),
        hidden=hidden,
    )


# ---------------------------------------------------------------------------
# Actor / value network


def _dropout(
    x: torch.Tensor, p: float, training: bool, generator: Optional[torch.Generator]
) -> torch.Tensor:
    if not training or p <= 0.0:
        return x
    keep = (torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


class ActorValueNet(nn.Module):
    """Shared ELU+dropout trunk with an 8-way actor head and a scalar value
    head. A zero entry in the action mask drives that logit to -inf (the
    default mask is all ones, leaving every expert available)."""

    def __init__(
        self,
        k_steps: int,
        d_h: int = 64,
        d1: int = 64,
        d2: int = 64,
        dropout: float = 0.1,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.dropout = dropout
        self.w1 = uniform_param(k_steps * d_h, d1, generator=generator)
        self.w2 = uniform_param(d1, d2, generator=generator)
        self.w_phi = uniform_param(d2, N_EXPERTS, generator=generator)
        self.w_delta = uniform_param(d2, 1, generator=generator)
        self.register_buffer("action_mask", torch.ones(N_EXPERTS, dtype=torch.float64))

    def set_action_mask(self, mask: Sequence[float]) -> None:
        m = torch.as_tensor(list(mask), dtype=torch.float64)
        if m.shape != (N_EXPERTS,) or not ((m == 0) | (m == 1)).all():
            raise ValueError("mask must be a binary vector over the 8 experts")
        if m.sum() == 0:
            raise ValueError("mask cannot exclude every expert")
        self.action_mask.copy_(m)

    def trunk(
        self,
        s: torch.Tensor,
        training: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        h = _dropout(torch.nn.functional.elu(s @ self.w1), self.dropout, training, generator)
        return _dropout(torch.nn.functional.elu(h @ self.w2), self.dropout, training, generator)

    def forward(
        self,
        s: torch.Tensor,
        training: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(action probabilities, log-probabilities, state value)."""
        o = self.trunk(s, training, generator)
        logits = o @ self.w_phi + torch.log(self.action_mask)
        probs = torch.softmax(logits, dim=-1)
        log_probs = torch.log_softmax(logits, dim=-1)
        q = (o @ self.w_delta).squeeze(-1)
        return probs, log_probs, q


def actor_forward(
    state: State,
    net: ActorValueNet,
    training: bool = False,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    probs, _, _ = net(state.embedding_tensor(), training, generator)
    return probs


def value_forward(
    state: State,
    net: ActorValueNet,
    training: bool = False,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    _, _, q = net(state.embedding_tensor(), training, generator)
    return q


def sample_action(probs: torch.Tensor | np.ndarray, rng: np.random.Generator) -> int:
    p = probs.detach().numpy() if isinstance(probs, torch.Tensor) else np.asarray(probs)
    p = p / p.sum()
    return int(rng.choice(len(p), p=p))


def greedy_action(probs: torch.Tensor | np.ndarray) -> int:
    p = probs.detach().numpy() if isinstance(probs, torch.Tensor) else np.asarray(probs)
    return int(np.argmax(p))  # argmax takes the lowest index on ties


def make_prompt(
    action: int,
    bank: ExpertBank,
    state: State,
    cache: NeighborCache,
    n: int = 3,
) -> ExpertPrompt:
    """Marker plus the expert's top-n predictions on the current state."""
    head_id = HEAD_IDS[action]
    neighbors = (
        cache.neighbor_words(head_id, state.context_kws)
        if head_is_keyword(head_id)
        else ()
    )
    with torch.no_grad():
        words = bank.top_labels(head_id, state.hidden, neighbors, n)
    return ExpertPrompt(head_id, tuple(words))


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """sum_k gamma^k * r_{k+1}: the first reward is already discounted once."""
    return sum(gamma ** (i + 1) * r for i, r in enumerate(rewards))


# ---------------------------------------------------------------------------
# Rollouts


@dataclass(frozen=True)
class Trajectory:
    """One K-step expert-selection episode behind a single supporter turn."""

    states: tuple[State, ...]  # s_1..s_K
    terminal_state: State  # s_{K+1}
    actions: tuple[int, ...]
    rewards: tuple[float, ...]  # r_2..r_{K+1}
    components: tuple[RewardComponents, ...]
    discounted: float  # G
    log_probs: tuple[float, ...]
    values: tuple[float, ...]
    policies: tuple[tuple[float, ...], ...]  # action distribution per step
    targets: dict[str, tuple[str, ...]]
    response_text: str
    response_kws: tuple[str, ...]
    turn: int
    future_text: str
    user_emotion: float
    episode_done: bool

    def expert_examples(self) -> list[TrainingExample]:
        """Per-state supervision for the joint objective (K+1 states)."""
        c_kws = self.states[0].context_kws
        return [
            TrainingExample(s.sequence_tokens(), c_kws, self.targets)
            for s in (*self.states, self.terminal_state)
        ]

    def step_records(self, episode: Optional[int] = None) -> list[dict]:
        """One debugging record per step: state hash, action, distribution,
        value estimate, and reward components."""
        out = []
        for k in range(len(self.actions)):
            state_text = " ".join(self.states[k].sequence_tokens())
            out.append(
                {
                    "episode": episode,
                    "turn": self.turn,
                    "step": k + 1,
                    "state_sha256": hashlib.sha256(state_text.encode("utf-8")).hexdigest(),
                    "action": self.actions[k],
                    "expert": HEAD_IDS[self.actions[k]],
                    "pi": list(self.policies[k]),
                    "q": self.values[k],
                    "reward": self.rewards[k],
                    "components": self.components[k].as_dict(),
                    "G": self.discounted,
                }
            )
        return out


def _polarity_words(
    words: Sequence[str], lex: VadLexicon, vocab_index: dict[str, int], pol: Polarity
) -> tuple[str, ...]:
    out = []
    for w in words:
        if lex.polarity(w) is pol and w in vocab_index and w not in out:
            out.append(w)
    return tuple(out)


def episode_targets(
    bank: ExpertBank,
    lex: VadLexicon,
    stopwords: frozenset[str],
    last_post: str,
    response_kws: Sequence[str],
    future_text: str,
) -> dict[str, tuple[str, ...]]:
    """Supervision reused at every visited state: contextual emotions from the
    user's last post, future ones from the observed reply, keyword targets from
    the realized response and the reply."""
    future_kws = extract_keywords(tokenize(future_text), stopwords).words
    sources = {
        "ctx-pos-emo": (tokenize(last_post), Polarity.POSITIVE),
        "ctx-neg-emo": (tokenize(last_post), Polarity.NEGATIVE),
        "ftr-pos-emo": (tokenize(future_text), Polarity.POSITIVE),
        "ftr-neg-emo": (tokenize(future_text), Polarity.NEGATIVE),
        "ctx-pos-kws": (response_kws, Polarity.POSITIVE),
        "ctx-neg-kws": (response_kws, Polarity.NEGATIVE),
        "ftr-pos-kws": (future_kws, Polarity.POSITIVE),
        "ftr-neg-kws": (future_kws, Polarity.NEGATIVE),
    }
    return {
        h: _polarity_words(words, lex, bank.head_label_index[h], pol)
        for h, (words, pol) in sources.items()
    }


def rollout(
    env: SupportEnv,
    net: ActorValueNet,
    bank: ExpertBank,
    engine: RewardEngine,
    cache: NeighborCache,
    config: TrainConfig,
    mode: str = "sample",
    act_rng: Optional[np.random.Generator] = None,
    prompt_n: int = 3,
) -> Trajectory:
    """One agent turn: K expert selections, a response realized after each,
    the user stepped once on the final response, and every step scored."""
    if mode not in ("sample", "greedy"):
        raise ValueError(f"mode must be 'sample' or 'greedy', got {mode!r}")
    if mode == "sample" and act_rng is None:
        raise ValueError("sampling mode needs an action RNG")
    env._require_active()
    turn = env.turn
    posts = env.seeker_posts()
    context_text = env.context_text()
    state = init_state(env.context_tokens(), env.context_keywords(), bank, config.k_steps)
    c_kws = state.context_kws

    states, actions, log_probs, values, policies, realized = [state], [], [], [], [], []
    for _ in range(config.k_steps):
        with torch.no_grad():
            probs, logp, q = net(state.embedding_tensor(), training=False)
        a = sample_action(probs, act_rng) if mode == "sample" else greedy_action(probs)
        actions.append(a)
        log_probs.append(float(logp[a]))
        values.append(float(q))
        policies.append(tuple(float(p) for p in probs))
        prompt = make_prompt(a, bank, state, cache, prompt_n)
        state = advance_state(state, prompt, bank)
        states.append(state)
        realized.append(env.realize(state, actions, bank, prompt_n))

    response_text, response_kws = realized[-1]
    gate = engine.f_cdc.score(context_text, c_kws, response_text, response_kws)
    future_text, emotion, done = env.user_step(response_text, gate)
    future_kws = extract_keywords(tokenize(future_text), env.stopwords).words

    rewards, components = [], []
    for y_text, y_kws in realized:
        total, comp = engine.score(
            RewardInputs(
                response_text=y_text,
                response_kws=y_kws,
                posts=posts,
                context_text=context_text,
                context_kws=c_kws,
                future_text=future_text,
                future_kws=future_kws,
                turn=turn,
                max_turns=env.max_turns,
            )
        )
        rewards.append(total)
        components.append(comp)

    return Trajectory(
        states=tuple(states[: config.k_steps]),
        terminal_state=states[config.k_steps],
        actions=tuple(actions),
        rewards=tuple(rewards),
        components=tuple(components),
        discounted=discounted_return(rewards, config.gamma),
        log_probs=tuple(log_probs),
        values=tuple(values),
        policies=tuple(policies),
        targets=episode_targets(
            bank, env.lex, env.stopwords, posts[-1], response_kws, future_text
        ),
        response_text=response_text,
        response_kws=response_kws,
        turn=turn,
        future_text=future_text,
        user_emotion=emotion,
        episode_done=done,
    )


# ---------------------------------------------------------------------------
# Optimization


def agent_objective(
    trajectories: Sequence[Trajectory],
    net: ActorValueNet,
    training: bool = True,
    generator: Optional[torch.Generator] = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch-mean REINFORCE loss with the detached value baseline, plus the
    squared-error value loss toward G."""
    if not trajectories:
        raise ValueError("empty batch")
    actor = torch.zeros((), dtype=torch.float64)
    value = torch.zeros((), dtype=torch.float64)
    for traj in trajectories:
        embeddings = torch.stack([s.embedding_tensor() for s in traj.states])
        _, log_probs, q = net(embeddings, training, generator)
        chosen = log_probs[torch.arange(len(traj.actions)), torch.as_tensor(traj.actions)]
        g = torch.tensor(traj.discounted, dtype=torch.float64)
        advantage = (g - q).detach()
        actor = actor - (chosen * advantage).sum()
        value = value + ((q - g) ** 2).sum()
    n = len(trajectories)
    return actor / n, value / n


def make_optimizer(
    params, config: TrainConfig
) -> tuple[torch.optim.Optimizer, torch.optim.lr_scheduler.LambdaLR]:
    opt = torch.optim.Adam(params, lr=config.lr)
    warmup = max(0, config.warmup_steps)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda step: min(1.0, (step + 1) / warmup) if warmup > 0 else 1.0
    )
    return opt, sched


def policy_gradient_step(
    trajectories: Sequence[Trajectory],
    net: ActorValueNet,
    optimizer: torch.optim.Optimizer,
    scheduler=None,
    generator: Optional[torch.Generator] = None,
) -> float:
    """One optimizer step on L_agent; returns its value."""
    actor, value = agent_objective(trajectories, net, training=True, generator=generator)
    loss = actor + value
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    return float(loss.detach())


def warm_start(
    examples: Sequence[TrainingExample],
    bank: ExpertBank,
    cache: NeighborCache,
    config: TrainConfig,
    valid_examples: Optional[Sequence[TrainingExample]] = None,
) -> list[dict[str, float]]:
    """Train the expert bank on the multi-task loss for warm_epochs; reports
    training (and validation, when given) loss per epoch."""
    if not examples:
        raise ValueError("empty training split")
    opt, sched = make_optimizer(bank.parameters(), config)
    rng = np.random.default_rng([config.seed, 101])
    history = []
    for epoch in range(config.warm_epochs):
        order = rng.permutation(len(examples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[start : start + config.batch_size]]
            loss, _ = bank.multitask_loss(batch, cache)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += float(loss.detach()) * len(batch)
        entry = {"epoch": epoch + 1, "train_loss": total / len(examples)}
        if valid_examples:
            with torch.no_grad():
                vloss, _ = bank.multitask_loss(list(valid_examples), cache)
            entry["valid_loss"] = float(vloss)
        history.append(entry)
        logger.info("warm start %s", entry)
    return history


def joint_train(
    env_factory: Callable[[int], tuple[SupportEnv, np.random.Generator]],
    bank: ExpertBank,
    net: ActorValueNet,
    engine: RewardEngine,
    cache: NeighborCache,
    config: TrainConfig,
    prompt_n: int = 3,
) -> list[dict[str, float]]:
    """Alternate sampled rollouts with gradient steps on
    L_agent + mean_k L_exp,k over the visited states."""
    params = list(bank.parameters()) + list(net.parameters())
    opt, sched = make_optimizer(params, config)
    gen = torch.Generator().manual_seed(config.seed + 0x5EED)
    history = []
    episode = 0
    for epoch in range(config.joint_epochs):
        buffer: list[Trajectory] = []
        returns: list[float] = []
        losses: list[float] = []

        def flush():
            if not buffer:
                return
            actor, value = agent_objective(buffer, net, training=True, generator=gen)
            expert_examples = [ex for t in buffer for ex in t.expert_examples()]
            exp_loss, _ = bank.multitask_loss(expert_examples, cache)
            loss = actor + value + exp_loss
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            losses.append(float(loss.detach()))
            buffer.clear()

        for _ in range(config.episodes_per_epoch):
            env, act_rng = env_factory(episode)
            episode += 1
            env.reset()
            while not env._state().done:
                traj = rollout(env, net, bank, engine, cache, config, "sample", act_rng, prompt_n)
                buffer.append(traj)
                returns.append(traj.discounted)
                if len(buffer) >= config.batch_size:
                    flush()
        flush()
        entry = {
            "epoch": epoch + 1,
            "mean_return": float(np.mean(returns)) if returns else 0.0,
            "mean_loss": float(np.mean(losses)) if losses else 0.0,
        }
        history.append(entry)
        logger.info("joint training %s", entry)
    return history
