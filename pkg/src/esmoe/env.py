"""Seeded simulated seeker and template realizer that close the RL loop.

The realizer maps expert selections to a (empathy, elicitation) template
bucket and fills {kw} slots from keyword-expert predictions. The simulated
user moves toward the response's emotion score, gated by coherence, plus
seeded noise, and answers from a band-matched utterance pool.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import VadLexicon, extract_keywords, tokenize
from .experts import HEAD_IDS, ExpertBank, head_is_contextual, head_is_keyword, head_polarity
from .corpus import Polarity
from .rewards import LexiconEmotionScorer

LEVELS = ("low", "mid", "high")

# Seeker pools are bucketed by emotion band; supporter pools by
# (empathy, elicitation) with these reference emotion-score targets.
BAND_EDGES = (0.35, 0.65)
ELICITATION_TARGETS = {"low": 0.3, "mid": 0.55, "high": 0.8}
DONE_THRESHOLD = 0.8
NEUTRAL_FILLER = "things"

_SLOT_RE = re.compile(r"\{kw\}")


def band_of(emotion: float) -> str:
    if emotion < BAND_EDGES[0]:
        return "low"
    if emotion < BAND_EDGES[1]:
        return "mid"
    return "high"


def proportion_level(p: float) -> str:
    if p <= 1 / 3:
        return "low"
    if p >= 2 / 3:
        return "high"
    return "mid"


@dataclass(frozen=True)
class UserProfile:
    initial_emotion: float = 0.2
    responsiveness: float = 0.6
    volatility: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.initial_emotion <= 1.0:
            raise ValueError("initial_emotion must be in [0, 1]")
        if not 0.0 <= self.responsiveness <= 1.0:
            raise ValueError("responsiveness must be in [0, 1]")
        if self.volatility < 0.0:
            raise ValueError("volatility must be nonnegative")


def load_profiles(path: str | Path) -> list[UserProfile]:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return [UserProfile(**p) for p in raw]


def save_profiles(profiles: Sequence[UserProfile], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            [
                {
                    "initial_emotion": p.initial_emotion,
                    "responsiveness": p.responsiveness,
                    "volatility": p.volatility,
                    "seed": p.seed,
                }
                for p in profiles
            ],
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")


@dataclass
class TemplatePools:
    seeker: dict[str, list[str]]  # band -> utterances
    supporter: dict[str, list[str]]  # "empathy-elicitation" -> templates with {kw}

    @classmethod
    def load(cls, path: str | Path) -> "TemplatePools":
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        return cls(raw["seeker"], raw["supporter"])

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(
                {"seeker": self.seeker, "supporter": self.supporter},
                f,
                indent=2,
                sort_keys=True,
            )
            f.write("\n")


class TemplateRealizer:
    """Template pools checked at build time: every supporter template's
    reference emotion score (slots stripped) must fall within band_tolerance
    of its elicitation bucket's target."""

    def __init__(
        self,
        pools: TemplatePools,
        lex: VadLexicon,
        band_tolerance: float = 0.1,
    ):
        self.pools = pools
        self.f_es = LexiconEmotionScorer(lex)
        for band in LEVELS:
            if not pools.seeker.get(band):
                raise ValueError(f"empty seeker pool for band {band!r}")
        for emp in LEVELS:
            for elic in LEVELS:
                key = f"{emp}-{elic}"
                templates = pools.supporter.get(key)
                if not templates:
                    raise ValueError(f"empty supporter pool for bucket {key!r}")
                target = ELICITATION_TARGETS[elic]
                for t in templates:
                    score = self.f_es.score(_SLOT_RE.sub(" ", t))
                    if abs(score - target) > band_tolerance:
                        raise ValueError(
                            f"template in bucket {key!r} scores {score:.3f}, "
                            f"outside {target} +- {band_tolerance}: {t!r}"
                        )

    def seeker_utterance(self, band: str, rng: np.random.Generator) -> str:
        pool = self.pools.seeker[band]
        return pool[int(rng.integers(len(pool)))]

    def realize(
        self,
        empathy: str,
        elicitation: str,
        slot_words: Sequence[str],
        rng: np.random.Generator,
    ) -> str:
        pool = self.pools.supporter[f"{empathy}-{elicitation}"]
        template = pool[int(rng.integers(len(pool)))]
        words = list(slot_words) or [NEUTRAL_FILLER]
        parts = template.split("{kw}")
        out = parts[0]
        for i, rest in enumerate(parts[1:]):
            out += words[i % len(words)] + rest
        return out


def realize_response(
    state,
    actions: Sequence[int],
    bank: ExpertBank,
    realizer: TemplateRealizer,
    rng: np.random.Generator,
    stopwords: frozenset[str] = frozenset(),
    top_n: int = 3,
) -> tuple[str, tuple[str, ...]]:
    """Turn the expert selections into text: the positive-expert share picks
    the elicitation level, the contextual share the empathy level, and {kw}
    slots take the selected keyword experts' prompt words. Selecting no
    keyword expert leaves only the neutral filler, so keyword grounding is
    something the policy must choose."""
    if not actions:
        raise ValueError("at least one expert must be selected")
    ids = [HEAD_IDS[a] for a in actions]
    elicitation = proportion_level(sum(head_polarity(h) is Polarity.POSITIVE for h in ids) / len(ids))
    empathy = proportion_level(sum(head_is_contextual(h) for h in ids) / len(ids))
    slot_words: list[str] = []
    for prompt in state.prompts:
        if head_is_keyword(prompt.expert_id):
            slot_words.extend(w for w in prompt.words if w not in slot_words)
    text = realizer.realize(empathy, elicitation, slot_words, rng)
    return text, extract_keywords(tokenize(text), stopwords).words


@dataclass
class SimUserState:
    emotion: float
    turn: int  # how many times the seeker has spoken
    transcript: list[tuple[str, str]]  # (speaker, text)
    done: bool = False


def env_stream(
    profiles: Sequence[UserProfile],
    realizer: TemplateRealizer,
    lex: VadLexicon,
    stopwords: frozenset[str],
    max_turns: int,
    done_threshold: float,
    master_seed: int,
    stage: int,
):
    """Factory of per-episode environments with independent seeded streams.

    Profiles rotate round-robin; episode i's environment and action RNGs are
    derived from (master_seed, stage, i), so episodes are order-independent."""

    def make(i: int) -> tuple["SupportEnv", np.random.Generator]:
        profile = profiles[i % len(profiles)]
        env_rng = np.random.default_rng([master_seed, stage, i, profile.seed])
        act_rng = np.random.default_rng([master_seed, stage, i, 7919])
        env = SupportEnv(
            profile, realizer, lex, stopwords, env_rng, max_turns, done_threshold
        )
        return env, act_rng

    return make


class SupportEnv:
    """One seeker conversation: reset -> [agent responds, user_step]* -> done."""

    def __init__(
        self,
        profile: UserProfile,
        realizer: TemplateRealizer,
        lex: VadLexicon,
        stopwords: frozenset[str],
        rng: np.random.Generator,
        max_turns: int = 10,
        done_threshold: float = DONE_THRESHOLD,
    ):
        self.profile = profile
        self.realizer = realizer
        self.lex = lex
        self.stopwords = stopwords
        self.rng = rng
        self.max_turns = max_turns
        self.done_threshold = done_threshold
        self.f_es = LexiconEmotionScorer(lex)
        self.state: Optional[SimUserState] = None

    def reset(self) -> str:
        opening = self.realizer.seeker_utterance(
            band_of(self.profile.initial_emotion), self.rng
        )
        self.state = SimUserState(
            emotion=self.profile.initial_emotion,
            turn=1,
            transcript=[("seeker", opening)],
        )
        return opening

    def _require_active(self) -> SimUserState:
        if self.state is None:
            raise RuntimeError("environment not reset")
        if self.state.done:
            raise RuntimeError("episode already finished")
        return self.state

    @property
    def turn(self) -> int:
        return self._state().turn

    def _state(self) -> SimUserState:
        if self.state is None:
            raise RuntimeError("environment not reset")
        return self.state

    def seeker_posts(self) -> tuple[str, ...]:
        return tuple(t for s, t in self._state().transcript if s == "seeker")

    def context_text(self) -> str:
        return " ".join(t for _, t in self._state().transcript)

    def context_tokens(self) -> tuple[str, ...]:
        return tuple(tokenize(self.context_text()))

    def context_keywords(self) -> tuple[str, ...]:
        return extract_keywords(self.context_tokens(), self.stopwords).words

    def realize(self, state, actions: Sequence[int], bank: ExpertBank, top_n: int = 3):
        return realize_response(
            state, actions, bank, self.realizer, self.rng, self.stopwords, top_n
        )

    def user_step(self, response_text: str, coherence: float) -> tuple[str, float, bool]:
        """Advance the user: emotion moves toward the response's score, gated
        by coherence, plus seeded noise; reply drawn from the matching band."""
        s = self._require_active()
        drift = self.profile.responsiveness * (self.f_es.score(response_text) - s.emotion) * coherence
        noise = self.profile.volatility * float(self.rng.standard_normal())
        emotion = float(np.clip(s.emotion + drift + noise, 0.0, 1.0))
        utterance = self.realizer.seeker_utterance(band_of(emotion), self.rng)
        s.transcript.append(("supporter", response_text))
        s.transcript.append(("seeker", utterance))
        s.emotion = emotion
        s.turn += 1
        s.done = s.turn >= self.max_turns or emotion >= self.done_threshold
        return utterance, emotion, s.done
