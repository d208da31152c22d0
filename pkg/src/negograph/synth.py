"""Synthetic negotiation corpora with planted strategy dependencies, used by
property-based acceptance tests. Rules fire deterministically (or with a given
probability) with a fixed lag; the conversation-initial turn seeds a random
non-empty subset of the trigger labels so chains can start. Utterances are
templated from the strategy set through a small, deliberately lossy frame
pool over a 50-word vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import corpus as corpus_mod
from .corpus import Corpus, Dialogue, DialogueTurn, Outcome, Scenario


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class PlantRule:
    trigger: str
    consequence: str
    lag: int = 1
    probability: float = 1.0

    def __post_init__(self):
        if self.lag < 1:
            raise SynthError("rule lag must be >= 1")
        if not 0.0 <= self.probability <= 1.0:
            raise SynthError("rule probability must be in [0, 1]")


WORDS50 = (
    "okay good deal price item sure maybe think low high offer take leave "
    "come pick firm cash today tomorrow new used great fine works best last "
    "need want give get go meet half still little more less much really just "
    "thanks hello interested condition time look make call done sold"
).split()

assert len(WORDS50) == 50

# deliberately few frames: many strategy sets share one surface form
_FRAMES = (
    ("hello interested item condition good",),
    ("maybe take less cash today",),
    ("think price firm still works",),
    ("okay deal done thanks come pick",),
)

_ACT_PATTERN = ("intro", "inquiry", "inform", "counter-price", "vague-price",
                "agree", "disagree", "insist", "init-price", "unknown")

_RATIO_CYCLE = (0.1, 0.3, 0.5, 0.7, 0.9)


def template_utterance(strategy_ids) -> list[str]:
    """Lossy map from a strategy set to one of a few token frames."""
    ids = sorted(strategy_ids)
    idx = (sum(ids) + len(ids)) % len(_FRAMES)
    return list(_FRAMES[idx][0].split())


def noise_pool(rules) -> list[str]:
    """Strategy labels untouched by any rule; noise draws only from here."""
    used = {r.trigger for r in rules} | {r.consequence for r in rules}
    pool = [lab for lab in corpus_mod.STRATEGY_LABELS
            if lab not in used and lab != corpus_mod.START_STRATEGY]
    return pool[:3]


def generate(rules: list[PlantRule], n_dialogues: int, turns_per_dialogue: int,
             noise_rate: float, seed: int) -> Corpus:
    """Corpus whose turn-t strategy set is the consequences of rules whose
    triggers fired at t-lag, plus (with probability `noise_rate`) one random
    noise label. The first turn seeds one uniformly drawn trigger label so
    chains can start. Outcomes cycle through 5 evenly spread ratio targets so
    ratio classes are balanced."""
    svocab = corpus_mod.strategy_vocab()
    dvocab = corpus_mod.dialogue_act_vocab()
    for r in rules:
        svocab.id(r.trigger)
        svocab.id(r.consequence)
    rng = np.random.default_rng(seed)
    triggers = sorted({r.trigger for r in rules})
    pool = noise_pool(rules)
    dialogues = []
    listed, buyer_target = 100.0, 50.0
    for n in range(n_dialogues):
        label_sets: list[set[str]] = []
        for t in range(turns_per_dialogue):
            labels: set[str] = set()
            if t == 0 and triggers:
                labels.add(triggers[int(rng.integers(len(triggers)))])
            for rule in rules:
                if t >= rule.lag and rule.trigger in label_sets[t - rule.lag]:
                    if rule.probability >= 1.0 or rng.random() < rule.probability:
                        labels.add(rule.consequence)
            if pool and rng.random() < noise_rate:
                labels.add(pool[int(rng.integers(len(pool)))])
            label_sets.append(labels)
        turns = []
        for t, labels in enumerate(label_sets):
            ids = frozenset(svocab.id(lab) for lab in labels)
            if not ids and t == 0:
                ids = frozenset({svocab.id(corpus_mod.START_STRATEGY)})
            tokens = template_utterance(ids)
            turns.append(DialogueTurn(
                speaker="buyer" if t % 2 == 0 else "seller",
                tokens=tuple(tokens),
                dialogue_act=dvocab.id(_ACT_PATTERN[t % len(_ACT_PATTERN)]),
                strategies=ids,
                raw_prices=corpus_mod.extract_prices(tokens),
            ))
        ratio = _RATIO_CYCLE[n % len(_RATIO_CYCLE)]
        sale = buyer_target + ratio * (listed - buyer_target)
        dialogues.append(Dialogue(
            dialogue_id=f"synth{n:05d}",
            scenario=Scenario(listed, buyer_target, title="synthetic item"),
            turns=tuple(turns),
            outcome=Outcome(sale_price=sale, final_action="accept"),
        ))
    return Corpus(dialogues, svocab, dvocab)


def chain_rules(labels: list[str], lag: int = 1, probability: float = 1.0) -> list[PlantRule]:
    """Cyclic successor rules over `labels`: each label triggers the next."""
    n = len(labels)
    return [PlantRule(labels[i], labels[(i + 1) % n], lag, probability) for i in range(n)]


def bayes_predict(rules: list[PlantRule], history: list[set[str]]) -> set[str]:
    """The Bayes-optimal next-turn prediction for deterministic rules: the
    consequences of triggers observed at the matching lag."""
    t_next = len(history)
    out = set()
    for rule in rules:
        src = t_next - rule.lag
        if rule.probability >= 1.0 and 0 <= src < len(history) and rule.trigger in history[src]:
            out.add(rule.consequence)
    return out
