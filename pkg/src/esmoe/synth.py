"""Deterministic synthetic data kit: a small topic world with a hand-assigned
valence lexicon, a dialogue corpus generator, seeker/supporter template pools,
and user profiles. `python -m esmoe.synth --out data/` writes everything a full
pipeline run needs.

Each topic fixes its own emotional vocabulary (current and future feelings,
supportive and problem keywords), which makes every expert's prediction task
separable from the context alone.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .corpus import Dialogue, Utterance, VadLexicon, save_corpus
from .env import TemplatePools, UserProfile, save_profiles

# Per topic: situation words are out-of-lexicon (head-only keywords); the rest
# carry valences. ctx_* words show up in the seeker's current utterance, ftr_*
# in the next one; resp_* are the supporter's keywords.
TOPICS: dict[str, dict[str, list[str]]] = {
    "job": {
        "situation": ["job", "boss", "office"],
        "ctx_neg": ["stressed"],
        "ctx_pos": ["composed"],
        "ftr_neg": ["overwhelmed"],
        "ftr_pos": ["hopeful"],
        "resp_pos": ["interview", "promotion"],
        "resp_neg": ["layoff"],
        "ftr_pos_kw": ["offer"],
        "ftr_neg_kw": ["deadline"],
    },
    "school": {
        "situation": ["school", "exam", "teacher"],
        "ctx_neg": ["anxious"],
        "ctx_pos": ["curious"],
        "ftr_neg": ["discouraged"],
        "ftr_pos": ["motivated"],
        "resp_pos": ["tutoring", "scholarship"],
        "resp_neg": ["failure"],
        "ftr_pos_kw": ["progress"],
        "ftr_neg_kw": ["pressure"],
    },
    "health": {
        "situation": ["doctor", "clinic", "checkup"],
        "ctx_neg": ["exhausted"],
        "ctx_pos": ["steadier"],
        "ftr_neg": ["weary"],
        "ftr_pos": ["recovering"],
        "resp_pos": ["exercise", "healing"],
        "resp_neg": ["illness"],
        "ftr_pos_kw": ["strength"],
        "ftr_neg_kw": ["fatigue"],
    },
    "family": {
        "situation": ["family", "mother", "brother"],
        "ctx_neg": ["lonely"],
        "ctx_pos": ["grateful"],
        "ftr_neg": ["isolated"],
        "ftr_pos": ["connected"],
        "resp_pos": ["reunion", "forgiveness"],
        "resp_neg": ["argument"],
        "ftr_pos_kw": ["warmth"],
        "ftr_neg_kw": ["distance"],
    },
    "money": {
        "situation": ["money", "rent", "bills"],
        "ctx_neg": ["desperate"],
        "ctx_pos": ["careful"],
        "ftr_neg": ["burdened"],
        "ftr_pos": ["secure"],
        "resp_pos": ["budget", "savings"],
        "resp_neg": ["debt"],
        "ftr_pos_kw": ["stability"],
        "ftr_neg_kw": ["shortage"],
    },
    "friends": {
        "situation": ["friend", "party", "neighbor"],
        "ctx_neg": ["rejected"],
        "ctx_pos": ["sincere"],
        "ftr_neg": ["awkward"],
        "ftr_pos": ["welcomed"],
        "resp_pos": ["invitation", "kindness"],
        "resp_neg": ["conflict"],
        "ftr_pos_kw": ["trust"],
        "ftr_neg_kw": ["silence"],
    },
}

_TOPIC_VALENCES = {
    "ctx_neg": 0.10,
    "ctx_pos": 0.85,
    "ftr_neg": 0.15,
    "ftr_pos": 0.88,
    "resp_pos": 0.70,
    "resp_neg": 0.30,
    "ftr_pos_kw": 0.72,
    "ftr_neg_kw": 0.28,
}

# Emotional words used by the corpus patterns and seeker pools. These become
# graph vertices, so the supporter templates below deliberately avoid them.
GENERAL_VALENCES = {
    "awful": 0.05,
    "terrible": 0.08,
    "miserable": 0.10,
    "sad": 0.12,
    "upset": 0.15,
    "heavy": 0.18,
    "hard": 0.20,
    "tough": 0.22,
    "rough": 0.25,
    "difficult": 0.28,
    "tired": 0.30,
    "unsure": 0.35,
    "okay": 0.55,
    "steady": 0.58,
    "gentle": 0.62,
    "calm": 0.68,
    "believe": 0.70,
    "good": 0.72,
    "better": 0.75,
    "improve": 0.78,
    "stronger": 0.80,
    "relieved": 0.82,
    "brighter": 0.85,
    "proud": 0.88,
    "glad": 0.90,
    "happy": 0.92,
    "wonderful": 0.95,
}

# Words reserved for the supporter templates: in the lexicon (they set the
# realized emotion score) but absent from the corpus, so they are never graph
# vertices and the coherence bonus hinges on the {kw} slot words alone.
TEMPLATE_VALENCES = {
    "daunting": 0.26,
    "strained": 0.28,
    "shaky": 0.29,
    "uneasy": 0.30,
    "tiring": 0.32,
    "clouded": 0.34,
    "milder": 0.56,
    "workable": 0.55,
    "settling": 0.58,
    "calmer": 0.59,
    "easing": 0.60,
    "gentler": 0.62,
    "shining": 0.80,
    "heartening": 0.82,
    "heartened": 0.82,
    "thriving": 0.84,
    "uplifting": 0.85,
    "uplifted": 0.84,
    "radiant": 0.86,
    "cheerful": 0.87,
    "joyful": 0.90,
}

STOPWORDS = """a about after again ahead all almost am an and any anyone are around as at
be because been before being but by can cannot come coming could did do does doing down
even face feel feeling feels few find follow for from get gets getting go got grew had has
have having he hear her here hers him his how i if imagine in into is it its just keep
keeps kind knew know left less let like little make makes may me more most much my near
no nor not now of off on once one only open or other our out over own path real right
shape shared she should shows side so some soon sounds still stretch such talk talked
than that the their them then there these they this those through to too try turn under
until up very want was we went were what when where which while who why will with works
would yet you your yours
thing things step steps plan part patch spot place days time way idea""".split()


def default_lexicon(tau: float = 0.5) -> VadLexicon:
    valence: dict[str, float] = dict(GENERAL_VALENCES)
    valence.update(TEMPLATE_VALENCES)
    for words in TOPICS.values():
        for key, v in _TOPIC_VALENCES.items():
            for w in words[key]:
                valence[w] = v
    return VadLexicon(valence, tau)


def default_profiles() -> list[UserProfile]:
    # slow enough that one over-eager turn cannot flip the user's band (the
    # turn-level reward then punishes early over-elicitation), with spread so
    # users cross bands at different turns and pooled curves rise smoothly
    return [
        UserProfile(initial_emotion=0.15, responsiveness=0.55, volatility=0.03, seed=0),
        UserProfile(initial_emotion=0.12, responsiveness=0.50, volatility=0.03, seed=1),
        UserProfile(initial_emotion=0.10, responsiveness=0.45, volatility=0.02, seed=2),
        UserProfile(initial_emotion=0.08, responsiveness=0.35, volatility=0.04, seed=3),
    ]


def default_templates() -> TemplatePools:
    seeker = {
        # band text scores sit near 0.28 / 0.52 / 0.74 so that matching a band
        # is cheap and the keywords are backward-edge heads in the graph
        "low": [
            "the deadline keeps me overwhelmed and tired, my job is stuck and i am unsure",
            "the pressure at school makes me discouraged, i am tired and unsure",
            "the fatigue will not lift, i feel weary and unsure about the clinic",
            "the distance from my family leaves me isolated, tired and unsure",
            "the shortage of money keeps me burdened and tired, i am unsure",
            "the silence from my friend makes me awkward, tired and unsure",
        ],
        "mid": [
            "the interview sounds okay, the deadline feels lighter now",
            "the tutoring felt steady and okay, the pressure is smaller",
            "the exercise keeps me steady, the fatigue is okay to carry",
            "the reunion plan sounds okay, the distance feels steady now",
            "the budget keeps things steady, the shortage is okay for now",
            "the invitation was okay and i feel steady, the silence is smaller",
        ],
        "high": [
            "i feel hopeful about the offer, the interview made things calm and good",
            "the progress is real and i feel motivated, things look good and mostly okay",
            "my strength is back and i feel recovering, the healing felt good",
            "the warmth at home is real, i feel connected and calm",
            "the stability is growing and i feel secure, the savings look good",
            "the trust came back and i feel welcomed, my friend was calm",
        ],
    }
    supporter = {
        # empathy-elicitation; {kw} slots take keyword-expert predictions
        "high-low": [
            "i hear you, the {kw} sounds so daunting and strained right now",
            "i am here with you, the {kw} part feels uneasy and strained",
        ],
        "mid-low": [
            "that is a shaky stretch, the {kw} makes it tiring",
            "the {kw} sounds daunting, anyone would feel strained in this",
        ],
        "low-low": [
            "the {kw} is a strained and tiring thing to face",
            "that {kw} sounds tiring and clouded",
        ],
        "high-mid": [
            "i hear you about the {kw}, a workable path is easing open",
            "i am with you, things around the {kw} are settling milder",
        ],
        "mid-mid": [
            "the {kw} may yet turn out gentler and more workable",
            "that {kw} may find an easing, calmer shape soon",
        ],
        "low-mid": [
            "a workable plan for the {kw} keeps things settling",
            "try the {kw}, a milder and calmer stretch can follow",
        ],
        "high-high": [
            "i am heartened you shared the {kw}, uplifting days are coming",
            "i hear you, the {kw} shows a thriving and shining side of you",
        ],
        "mid-high": [
            "you can feel joyful about the {kw}, such heartening steps",
            "imagine the cheerful and uplifting turn once the {kw} works out",
        ],
        "low-high": [
            "go for the {kw}, shining and thriving things are ahead",
            "the {kw} can make things radiant, you will feel uplifted",
        ],
    }
    return TemplatePools(seeker=seeker, supporter=supporter)


def _pick(rng: np.random.Generator, options: list[str]) -> str:
    return options[int(rng.integers(len(options)))]


def make_dialogue(topic: str, dialogue_id: str, rng: np.random.Generator) -> Dialogue:
    t = TOPICS[topic]
    s0, s1, s2 = t["situation"]
    cneg, cpos = t["ctx_neg"][0], t["ctx_pos"][0]
    fneg, fpos = t["ftr_neg"][0], t["ftr_pos"][0]
    rp0, rp1 = t["resp_pos"]
    rn0 = t["resp_neg"][0]
    fpkw, fnkw = t["ftr_pos_kw"][0], t["ftr_neg_kw"][0]

    seeker1 = _pick(
        rng,
        [
            f"my {s0} {s1} situation got worse and i feel {cneg} though i try to stay {cpos}",
            f"the {s0} and the {s2} trouble keeps growing, i feel {cneg} but want to be {cpos}",
            f"everything about my {s1} and {s0} feels {cneg}, staying {cpos} is hard",
        ],
    )
    supporter1 = _pick(
        rng,
        [
            f"i hear the {rn0} is hard, maybe a {rp0} or a {rp1} could help",
            f"that {rn0} sounds tough, have you tried a {rp0}, i believe in you",
            f"the {rn0} around your {s0} is heavy, a {rp1} could make it better",
        ],
    )
    seeker2 = _pick(
        rng,
        [
            f"a {rp0} sounds {fpos} though the {fnkw} leaves me {fneg}",
            f"maybe the {rp1} could work, i feel almost {fpos} but the {fnkw} makes me {fneg}",
            f"the {rp0} idea feels {fpos}, still the {fnkw} keeps me {fneg}",
        ],
    )
    supporter2 = _pick(
        rng,
        [
            f"that {fnkw} is heavy, remember the {fpkw} you built, you should feel proud",
            f"the {fnkw} still feels heavy, but i am glad the {fpkw} is growing",
            f"the {fnkw} feels rough now, yet your {fpkw} grows stronger",
        ],
    )
    seeker3 = _pick(
        rng,
        [
            f"thanks, i feel more {fpos} about the {fpkw} and a little relieved",
            f"talking helped, i feel {fpos} and the {fpkw} makes me calm",
            f"i feel {fpos} now, the {fpkw} gives me a steady feeling",
        ],
    )
    texts = [seeker1, supporter1, seeker2, supporter2, seeker3]
    speakers = ["seeker", "supporter", "seeker", "supporter", "seeker"]
    turns = tuple(
        Utterance.make(sp, tx, i + 1) for i, (sp, tx) in enumerate(zip(speakers, texts))
    )
    return Dialogue(dialogue_id, f"{topic} troubles", turns)


def make_corpus(n_dialogues: int = 240, seed: int = 0) -> list[Dialogue]:
    rng = np.random.default_rng(seed)
    names = sorted(TOPICS)
    return [
        make_dialogue(names[i % len(names)], f"synth-{i:04d}", rng)
        for i in range(n_dialogues)
    ]


def write_all(outdir: str | Path, n_dialogues: int = 240, seed: int = 0) -> dict[str, Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.jsonl",
        "lexicon": out / "lexicon.tsv",
        "stopwords": out / "stopwords.txt",
        "templates": out / "templates.json",
        "profiles": out / "profiles.json",
    }
    save_corpus(make_corpus(n_dialogues, seed), paths["corpus"])
    default_lexicon().save(paths["lexicon"])
    with open(paths["stopwords"], "w", encoding="utf-8") as f:
        f.write("\n".join(sorted(set(STOPWORDS))) + "\n")
    default_templates().save(paths["templates"])
    save_profiles(default_profiles(), paths["profiles"])
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Write the synthetic data kit.")
    parser.add_argument("--out", default="data", help="output directory")
    parser.add_argument("--n-dialogues", type=int, default=240)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = write_all(args.out, args.n_dialogues, args.seed)
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
