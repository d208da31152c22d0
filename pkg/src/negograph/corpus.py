"""Dialogue data model, corpus ingestion, and price/outcome arithmetic.

A corpus file holds one JSON record per line:

    {"scenario": {"listed_price": number, "buyer_target_price": number,
                  "title": str, "description": str?},
     "turns": [{"speaker": "buyer"|"seller", "text": str, "tokens": [str],
                "dialogue_act": str, "strategies": [str]}],
     "outcome": {"sale_price": number|null,
                 "final_action": "offer"|"accept"|"reject"|"quit"}}

Vocabularies are fixed: 21 content negotiation strategies plus the
conversation-start marker, and 14 dialogue acts (10 utterance acts plus the
4 terminal action acts).
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CorpusError(Exception):
    """Base class for corpus failures."""


class SchemaError(CorpusError):
    """A record does not match the corpus schema (carries the record index)."""


class VocabError(CorpusError):
    """An unknown strategy or dialogue-act label was encountered."""


class DomainError(CorpusError):
    """Price or ratio arithmetic outside its domain (e.g. zero denominator)."""


class FitError(CorpusError):
    """Ratio-class boundaries cannot be fitted."""


START_STRATEGY = "<start>"

# 21 content strategies, in fixed frequency order, then the start marker.
STRATEGY_LABELS = (
    "first_person_singular_count",
    "pos_sentiment",
    "number_of_diff_dic_pos",
    "third_person_singular",
    "hedge_count",
    "number_of_diff_dic_neg",
    "personal_concern",
    "propose",
    "politeness_greet",
    "assertive_count",
    "neg_sentiment",
    "factive_count",
    "politeness_gratitude",
    "first_person_plural_count",
    "liwc_certainty",
    "liwc_informal",
    "third_person_plural",
    "trade_in",
    "politeness_please",
    "family",
    "friend",
    START_STRATEGY,
)

DIALOGUE_ACT_LABELS = (
    "intro",
    "inquiry",
    "init-price",
    "counter-price",
    "unknown",
    "agree",
    "disagree",
    "inform",
    "vague-price",
    "insist",
    "<offer>",
    "<accept>",
    "<reject>",
    "<quit>",
)

FINAL_ACTIONS = ("offer", "accept", "reject", "quit")


class LabelVocab:
    """Fixed, ordered label set with stable integer ids."""

    def __init__(self, labels):
        self.labels = tuple(labels)
        self.index = {lab: i for i, lab in enumerate(self.labels)}
        if len(self.index) != len(self.labels):
            raise VocabError("duplicate labels in vocabulary")

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.index

    def id(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise VocabError(f"unknown label {label!r}") from None

    def label(self, idx: int) -> str:
        return self.labels[idx]

    def save(self, path):
        Path(path).write_text("\n".join(self.labels) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LabelVocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def strategy_vocab() -> LabelVocab:
    return LabelVocab(STRATEGY_LABELS)


def dialogue_act_vocab() -> LabelVocab:
    return LabelVocab(DIALOGUE_ACT_LABELS)


# id of <start>, content-strategy count used by prediction heads
START_STRATEGY_ID = STRATEGY_LABELS.index(START_STRATEGY)
NUM_CONTENT_STRATEGIES = len(STRATEGY_LABELS) - 1
NUM_DIALOGUE_ACTS = len(DIALOGUE_ACT_LABELS)


@dataclass(frozen=True)
class Scenario:
    listed_price: float
    buyer_target_price: float
    title: str = ""
    description: str = ""

    def validate(self):
        if self.listed_price <= 0:
            raise SchemaError(f"listed_price must be > 0, got {self.listed_price}")
        if self.listed_price == self.buyer_target_price:
            raise SchemaError("listed_price equals buyer_target_price (ratio undefined)")


@dataclass(frozen=True)
class DialogueTurn:
    speaker: str
    tokens: tuple[str, ...]
    dialogue_act: int
    strategies: frozenset[int]
    raw_prices: tuple[tuple[int, float], ...] = ()

    def strategy_ids_sorted(self) -> list[int]:
        return sorted(self.strategies)


@dataclass(frozen=True)
class Outcome:
    sale_price: float | None
    final_action: str


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    scenario: Scenario
    turns: tuple[DialogueTurn, ...]
    outcome: Outcome


@dataclass
class Corpus:
    dialogues: list[Dialogue]
    strategy_vocab: LabelVocab = field(default_factory=strategy_vocab)
    da_vocab: LabelVocab = field(default_factory=dialogue_act_vocab)

    def __len__(self):
        return len(self.dialogues)

    def __iter__(self):
        return iter(self.dialogues)


_PRICE_TOKEN = re.compile(r"^\$?(\d+(?:\.\d+)?)$")


def extract_prices(tokens) -> tuple[tuple[int, float], ...]:
    """Token positions that look like currency amounts, e.g. '$30' or '35.5'."""
    found = []
    for i, tok in enumerate(tokens):
        m = _PRICE_TOKEN.match(tok)
        if m:
            found.append((i, float(m.group(1))))
    return tuple(found)


def _parse_turn(raw: dict, turn_index: int, svocab: LabelVocab, dvocab: LabelVocab) -> DialogueTurn:
    speaker = raw.get("speaker")
    if speaker not in ("buyer", "seller"):
        raise SchemaError(f"turn {turn_index}: speaker must be buyer|seller, got {speaker!r}")
    tokens = raw.get("tokens")
    if tokens is None:
        text = raw.get("text")
        if not isinstance(text, str):
            raise SchemaError(f"turn {turn_index}: needs 'tokens' or 'text'")
        tokens = text.split()
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise SchemaError(f"turn {turn_index}: tokens must be a list of strings")
    act = raw.get("dialogue_act")
    if not isinstance(act, str):
        raise SchemaError(f"turn {turn_index}: dialogue_act must be a string")
    strategies = raw.get("strategies", [])
    if not isinstance(strategies, list):
        raise SchemaError(f"turn {turn_index}: strategies must be a list")
    try:
        act_id = dvocab.id(act)
        strat_ids = frozenset(svocab.id(s) for s in strategies)
    except VocabError as e:
        raise VocabError(f"turn {turn_index}: {e}") from None
    # only the conversation-initial turn gets the start marker when unannotated
    if not strat_ids and turn_index == 0:
        strat_ids = frozenset({svocab.id(START_STRATEGY)})
    return DialogueTurn(
        speaker=speaker,
        tokens=tuple(tokens),
        dialogue_act=act_id,
        strategies=strat_ids,
        raw_prices=extract_prices(tokens),
    )


def parse_record(raw: dict, dialogue_id: str, svocab: LabelVocab, dvocab: LabelVocab) -> Dialogue:
    try:
        sc = raw["scenario"]
        scenario = Scenario(
            listed_price=float(sc["listed_price"]),
            buyer_target_price=float(sc["buyer_target_price"]),
            title=str(sc.get("title", "")),
            description=str(sc.get("description", "") or ""),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"bad scenario: {e}") from None
    scenario.validate()
    raw_turns = raw.get("turns")
    if not isinstance(raw_turns, list):
        raise SchemaError("turns must be a list")
    turns = tuple(_parse_turn(t, i, svocab, dvocab) for i, t in enumerate(raw_turns))
    out = raw.get("outcome") or {}
    sale = out.get("sale_price")
    if sale is not None:
        sale = float(sale)
    action = out.get("final_action")
    if action not in FINAL_ACTIONS:
        raise SchemaError(f"final_action must be one of {FINAL_ACTIONS}, got {action!r}")
    return Dialogue(dialogue_id, scenario, turns, Outcome(sale, action))


def load_corpus(path, min_turns: int = 5) -> Corpus:
    """Read a JSONL corpus file, dropping dialogues shorter than `min_turns`.

    Raises SchemaError/VocabError annotated with the failing record index.
    """
    svocab = strategy_vocab()
    dvocab = dialogue_act_vocab()
    dialogues: list[Dialogue] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"record {lineno}: invalid JSON ({e})") from None
            try:
                d = parse_record(raw, f"d{lineno:05d}", svocab, dvocab)
            except CorpusError as e:
                raise type(e)(f"record {lineno}: {e}") from None
            if len(d.turns) >= min_turns:
                dialogues.append(d)
    return Corpus(dialogues, svocab, dvocab)


def dialogue_to_record(d: Dialogue, svocab: LabelVocab, dvocab: LabelVocab) -> dict:
    return {
        "scenario": {
            "listed_price": d.scenario.listed_price,
            "buyer_target_price": d.scenario.buyer_target_price,
            "title": d.scenario.title,
            "description": d.scenario.description,
        },
        "turns": [
            {
                "speaker": t.speaker,
                "text": " ".join(t.tokens),
                "tokens": list(t.tokens),
                "dialogue_act": dvocab.label(t.dialogue_act),
                "strategies": [svocab.label(i) for i in t.strategy_ids_sorted()],
            }
            for t in d.turns
        ],
        "outcome": {"sale_price": d.outcome.sale_price, "final_action": d.outcome.final_action},
    }


def save_corpus(corpus: Corpus, path) -> None:
    """Deterministic JSONL writer (sorted keys, fixed separators)."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.dialogues:
            rec = dialogue_to_record(d, corpus.strategy_vocab, corpus.da_vocab)
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# price placeholders

PLACEHOLDER_DECIMALS = 3
PLACEHOLDER_UNIT = 10.0 ** -PLACEHOLDER_DECIMALS
FRACTION_CEILING = 2.0
PRICE_GRID_STEP = 0.05
PRICE_GRID = tuple(round(i * PRICE_GRID_STEP, 2) for i in range(int(FRACTION_CEILING / PRICE_GRID_STEP) + 1))

_PLACEHOLDER = re.compile(r"^<price-(\d+\.\d{3})>$")


def price_to_placeholder(price: float, listed: float) -> str:
    """Encode a price as its fraction of the listed price, 3 decimal digits,
    clamped to [0, 2]: (35, 40) -> '<price-0.875>'."""
    if listed <= 0:
        raise DomainError(f"listed price must be > 0, got {listed}")
    frac = min(max(price / listed, 0.0), FRACTION_CEILING)
    return f"<price-{frac:.3f}>"


def placeholder_to_price(token: str, listed: float) -> float:
    """Inverse of price_to_placeholder up to one rounding unit."""
    m = _PLACEHOLDER.match(token)
    if not m:
        raise DomainError(f"malformed price placeholder {token!r}")
    return float(m.group(1)) * listed


def is_placeholder(token: str) -> bool:
    return _PLACEHOLDER.match(token) is not None


def quantize_placeholder(price: float, listed: float) -> str:
    """Snap the fraction to the fixed 41-token generation grid (step 0.05)."""
    if listed <= 0:
        raise DomainError(f"listed price must be > 0, got {listed}")
    frac = min(max(price / listed, 0.0), FRACTION_CEILING)
    idx = int(round(frac / PRICE_GRID_STEP))
    return f"<price-{PRICE_GRID[idx]:.3f}>"


def placeholderize_tokens(turn: DialogueTurn, listed: float) -> list[str]:
    """Replace currency tokens with grid placeholder tokens (decoder targets)."""
    out = list(turn.tokens)
    for pos, amount in turn.raw_prices:
        out[pos] = quantize_placeholder(amount, listed)
    return out


# ---------------------------------------------------------------------------
# outcome arithmetic


def compute_ratio(sale: float, buyer_target: float, listed: float) -> float:
    """Sale-to-list ratio (sale - target) / (listed - target); may be negative
    or exceed 1."""
    denom = listed - buyer_target
    if denom == 0:
        raise DomainError("listed price equals buyer target price")
    return (sale - buyer_target) / denom


@dataclass(frozen=True)
class RatioBoundaries:
    """Four ascending cut points splitting ratios into 5 classes."""

    cuts: tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.cuts) != 4:
            raise FitError("exactly 4 boundaries required")


def fit_class_boundaries(train_ratios) -> RatioBoundaries:
    """Empirical 20/40/60/80 quantiles (lower interpolation) of the training
    ratios. Warns when the boundaries are degenerate (ties collapse classes)."""
    arr = np.asarray(list(train_ratios), dtype=np.float64)
    if arr.size < 5:
        raise FitError(f"need at least 5 training ratios, got {arr.size}")
    cuts = tuple(float(q) for q in np.quantile(arr, [0.2, 0.4, 0.6, 0.8], method="lower"))
    if len(set(cuts)) < 4:
        warnings.warn("degenerate ratio-class boundaries (ties in training ratios)", stacklevel=2)
    return RatioBoundaries(cuts)


def ratio_to_class(r: float, boundaries: RatioBoundaries) -> int:
    """Class in {1..5}; ties on a boundary fall to the lower class, values
    outside the fitted range clamp to classes 1 and 5."""
    return 1 + sum(r > c for c in boundaries.cuts)


# ---------------------------------------------------------------------------
# token vocabulary

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIAL_TOKENS = (PAD, UNK, BOS, EOS)


class TokenVocab:
    """Word vocabulary for the decoder: specials, the fixed price-placeholder
    grid, then corpus surface tokens sorted by (frequency desc, lexicographic)."""

    def __init__(self, surface_tokens_by_rank: list[str], surface_size: int):
        grid = tuple(f"<price-{v:.3f}>" for v in PRICE_GRID)
        self.tokens = list(SPECIAL_TOKENS) + list(grid) + surface_tokens_by_rank
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.surface_size = surface_size
        self.pad_id = self.index[PAD]
        self.unk_id = self.index[UNK]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens) -> list[int]:
        return [self.index.get(t, self.unk_id) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TokenVocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        tokens = [ln for ln in lines if ln]
        n_fixed = len(SPECIAL_TOKENS) + len(PRICE_GRID)
        surface = tokens[n_fixed:]
        vocab = cls(surface, surface_size=len(surface))
        if vocab.tokens != tokens:
            raise SchemaError("token vocabulary file has unexpected fixed prefix")
        return vocab


def build_token_vocab(corpus: Corpus) -> TokenVocab:
    """Deterministic vocabulary over corpus surface forms. Price-looking
    tokens are excluded (they are represented by the placeholder grid)."""
    counts: dict[str, int] = {}
    for d in corpus.dialogues:
        for turn in d.turns:
            priced = {pos for pos, _ in turn.raw_prices}
            for i, tok in enumerate(turn.tokens):
                if i in priced:
                    continue
                counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return TokenVocab([t for t, _ in ranked], surface_size=len(ranked))


# ---------------------------------------------------------------------------
# import adapter for the original CraigslistBargain JSON


def _cocoa_price(kbs) -> tuple[float, float, str, str]:
    listed = target = None
    title = desc = ""
    for kb in kbs:
        personal = kb.get("personal", {})
        role = personal.get("Role") or kb.get("role")
        item = (kb.get("item") or {})
        if item:
            listed = item.get("Price", listed)
            title = item.get("Title", title) or title
            d = item.get("Description")
            if isinstance(d, list):
                d = " ".join(d)
            desc = d or desc
        if role == "buyer":
            target = personal.get("Target", target)
    if listed is None or target is None:
        raise SchemaError("cocoa scenario missing listed price or buyer target")
    return float(listed), float(target), title, desc or ""


def import_craigslist(raw_path, out_path) -> int:
    """Convert the original CraigslistBargain JSON (list of scenarios with
    chat events) into the corpus JSONL schema. Strategy/dialogue-act
    annotations are not part of the raw release; turns are imported with the
    'unknown' act and empty strategy sets so annotated files can be merged in
    later. Returns the number of dialogues written."""
    data = json.loads(Path(raw_path).read_text(encoding="utf-8"))
    n = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for ex in data:
            scenario = ex.get("scenario", {})
            try:
                listed, target, title, desc = _cocoa_price(scenario.get("kbs", []))
            except SchemaError:
                continue
            if listed <= 0 or listed == target:
                continue
            agents = ex.get("agents", {}) or {}
            roles = {int(k): v for k, v in agents.items()} if agents else {0: "buyer", 1: "seller"}
            turns = []
            sale = None
            action = "quit"
            for ev in ex.get("events", []):
                act = ev.get("action")
                speaker = roles.get(ev.get("agent"), "buyer")
                if act == "message" and isinstance(ev.get("data"), str):
                    turns.append({
                        "speaker": speaker,
                        "text": ev["data"],
                        "tokens": ev["data"].split(),
                        "dialogue_act": "unknown",
                        "strategies": [],
                    })
                elif act == "offer":
                    price = (ev.get("data") or {}).get("price")
                    if price is not None:
                        sale = float(price)
                    action = "offer"
                elif act in ("accept", "reject", "quit"):
                    action = act
            if action != "accept":
                sale = None
            rec = {
                "scenario": {
                    "listed_price": listed,
                    "buyer_target_price": target,
                    "title": title,
                    "description": desc,
                },
                "turns": turns,
                "outcome": {"sale_price": sale, "final_action": action},
            }
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
            n += 1
    return n
