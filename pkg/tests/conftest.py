import json

import pytest

from negograph import corpus as C

ACTS = ["intro", "inquiry", "inform", "counter-price", "agree", "disagree"]


def make_turn(speaker="buyer", text="hello there", act="inform", strategies=(), tokens=None):
    return {
        "speaker": speaker,
        "text": text,
        "tokens": tokens if tokens is not None else text.split(),
        "dialogue_act": act,
        "strategies": list(strategies),
    }


def make_record(n_turns=5, listed=40.0, target=36.0, sale=38.0, final_action="accept",
                strategies_per_turn=None, texts=None):
    turns = []
    for i in range(n_turns):
        strategies = strategies_per_turn[i] if strategies_per_turn else []
        text = texts[i] if texts else f"turn {i} words here"
        turns.append(make_turn(
            speaker="buyer" if i % 2 == 0 else "seller",
            text=text,
            act=ACTS[i % len(ACTS)],
            strategies=strategies,
        ))
    return {
        "scenario": {"listed_price": listed, "buyer_target_price": target, "title": "bike"},
        "turns": turns,
        "outcome": {"sale_price": sale, "final_action": final_action},
    }


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


@pytest.fixture
def tiny_corpus_path(tmp_path):
    recs = [
        make_record(5, strategies_per_turn=[["propose"], ["hedge_count"], [], ["pos_sentiment", "propose"], []]),
        make_record(6, strategies_per_turn=[[], ["family"], ["propose"], [], ["trade_in"], []]),
    ]
    return write_jsonl(tmp_path / "tiny.jsonl", recs)


@pytest.fixture
def tiny_corpus(tiny_corpus_path):
    return C.load_corpus(tiny_corpus_path, min_turns=5)
