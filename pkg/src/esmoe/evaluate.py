"""Evaluation harness: greedy rollouts over seeded episodes, reward components
as metrics, distinct-n diversity, and the positive-emotion-distance curve."""

from __future__ import annotations

import hashlib
import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import tokenize
from .experts import ExpertBank, NeighborCache
from .policy import ActorValueNet, TrainConfig, Trajectory, rollout
from .rewards import RewardEngine, ped_metric
from .env import SupportEnv


def distinct_n(responses: Sequence[str], n: int) -> float:
    """Unique n-grams over total n-grams across all responses; 0 when none."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seen: Counter[tuple[str, ...]] = Counter()
    total = 0
    for r in responses:
        tokens = tokenize(r)
        for i in range(len(tokens) - n + 1):
            seen[tuple(tokens[i : i + n])] += 1
            total += 1
    return len(seen) / total if total else 0.0


@dataclass(frozen=True)
class MetricsReport:
    ces: float
    tes: float
    cdc: float
    fdc: float
    distinct: tuple[float, float, float]
    avg_len: float
    ped_by_turn: tuple[tuple[int, float, int], ...]
    mean_return: float
    episodes: int
    turns: int
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "cES": self.ces,
            "tES": self.tes,
            "cDC": self.cdc,
            "fDC": self.fdc,
            "distinct": list(self.distinct),
            "avg_len": self.avg_len,
            "ped_by_turn": [[t, m, c] for t, m, c in self.ped_by_turn],
            "mean_return": self.mean_return,
            "episodes": self.episodes,
            "turns": self.turns,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def config_hash(config_echo: dict) -> str:
    blob = json.dumps(config_echo, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def evaluate(
    bank: ExpertBank,
    net: ActorValueNet,
    engine: RewardEngine,
    cache: NeighborCache,
    env_factory: Callable[[int], tuple[SupportEnv, np.random.Generator]],
    episodes: int,
    config: TrainConfig,
    prompt_n: int = 3,
    mode: str = "greedy",
    config_echo: Optional[dict] = None,
) -> tuple[MetricsReport, list[dict]]:
    """Roll out `episodes` conversations and aggregate the final response's
    reward components per agent turn. Returns the report and the per-step
    records (for dumps and recount checks)."""
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    comp_sums = {"cES": 0.0, "tES": 0.0, "cDC": 0.0, "fDC": 0.0}
    ped_lists: dict[int, list[float]] = defaultdict(list)
    responses: list[str] = []
    records: list[dict] = []
    returns: list[float] = []
    n_turns = 0
    for ep in range(episodes):
        env, act_rng = env_factory(ep)
        env.reset()
        while not env._state().done:
            posts = env.seeker_posts()
            traj: Trajectory = rollout(
                env, net, bank, engine, cache, config, mode, act_rng, prompt_n
            )
            final = traj.components[-1]
            for key, value in final.as_dict().items():
                comp_sums[key] += value
            ped_lists[traj.turn].append(
                ped_metric(traj.response_text, posts, engine.f_es)
            )
            responses.append(traj.response_text)
            returns.append(traj.discounted)
            n_turns += 1
            records.extend(traj.step_records(episode=ep))
    ped_by_turn = tuple(
        (t, float(np.mean(ped_lists[t])), len(ped_lists[t]))
        for t in sorted(ped_lists)
    )
    report = MetricsReport(
        ces=comp_sums["cES"] / n_turns,
        tes=comp_sums["tES"] / n_turns,
        cdc=comp_sums["cDC"] / n_turns,
        fdc=comp_sums["fDC"] / n_turns,
        distinct=tuple(distinct_n(responses, n) for n in (1, 2, 3)),
        avg_len=float(np.mean([len(tokenize(r)) for r in responses])),
        ped_by_turn=ped_by_turn,
        mean_return=float(np.mean(returns)),
        episodes=episodes,
        turns=n_turns,
        config_hash=config_hash(config_echo or {}),
    )
    return report, records
