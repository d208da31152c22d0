"""Operator entry points: train, evaluate, explain, synthesize, chat in a
terminal, and serve the HTTP API. Every run is reproducible from its config
plus seed, and every output file carries the config hash.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import interpret, synth, train as train_mod
from .corpus import Corpus
from .model import ModelConfig, NegotiationModel, config_hash, load_checkpoint

VARIANT_CHOICES = ("graph", "rnn", "none")


def _load_config(args) -> ModelConfig:
    cfg = ModelConfig.from_file(args.config) if args.config else ModelConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "variant", None):
        cfg.variant = args.variant
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_c = corpus_mod.load_corpus(args.corpus, min_turns=args.min_turns)
    valid_c = corpus_mod.load_corpus(args.valid, min_turns=args.min_turns) if args.valid else train_c
    out = _outdir(args)
    result = train_mod.fit(
        train_c, valid_c, cfg,
        checkpoint_path=out / "model.ckpt",
        log_path=out / "training_log.csv",
    )
    summary = {
        "config_hash": config_hash(cfg),
        "config": asdict(cfg),
        "best_epoch": result.best_epoch,
        "best_val_st_f1_macro": result.best_val_macro_f1,
        "epochs_run": len(result.log),
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"trained {len(result.log)} epochs; best macro-F1 "
          f"{result.best_val_macro_f1:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus = corpus_mod.load_corpus(args.corpus, min_turns=args.min_turns)
    boundaries = None
    if args.train_corpus:
        boundaries = train_mod.fit_boundaries(corpus_mod.load_corpus(args.train_corpus, args.min_turns))
    out = _outdir(args)
    metrics = train_mod.evaluate(model, corpus, boundaries,
                                 dump_path=out / "predictions.jsonl")
    payload = {"config_hash": config_hash(model.config), "metrics": metrics}
    path = out / "metrics.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    for key in sorted(metrics):
        print(f"{key}: {metrics[key]:.4f}")
    print(f"metrics written to {path}")
    return 0


def cmd_explain(args) -> int:
    payloads = []
    for path in args.traces:
        payloads.append(json.loads(Path(path).read_text(encoding="utf-8")))
    out = _outdir(args)
    table = interpret.association_scores(payloads)
    table.to_csv(out / "association_scores.csv")
    report = interpret.propose_boundary_report(payloads)
    (out / "propose_boundary.json").write_text(json.dumps({
        "n_dialogues": report.n_dialogues,
        "n_crossing": report.n_crossing,
        "n_non_crossing": report.n_non_crossing,
        "crossing_mean": report.crossing_mean,
        "non_crossing_mean": report.non_crossing_mean,
    }, indent=2, sort_keys=True))
    maps = []
    for payload in payloads:
        for node in range(len(payload.get("nodes", []))):
            try:
                imap = interpret.influence_map(payload, node)
            except interpret.InterpretError:
                continue
            maps.append(json.loads(interpret.influence_map_to_json(imap)))
    (out / "influence_maps.json").write_text(json.dumps(maps, indent=2, sort_keys=True))
    if args.dot:
        (out / "influence.dot").write_text(interpret.influence_to_dot(payloads[0]))
    print(f"wrote association_scores.csv, propose_boundary.json, influence_maps.json to {out}")
    return 0


def cmd_synth(args) -> int:
    rules = []
    for spec_str in args.rule:
        parts = spec_str.split(":")
        if len(parts) not in (2, 3, 4):
            raise ValueError(f"rule must be trigger:consequence[:lag[:prob]], got {spec_str!r}")
        lag = int(parts[2]) if len(parts) > 2 else 1
        prob = float(parts[3]) if len(parts) > 3 else 1.0
        rules.append(synth.PlantRule(parts[0], parts[1], lag, prob))
    corpus = synth.generate(rules, args.dialogues, args.turns, args.noise, args.seed)
    corpus_mod.save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} dialogues to {args.out}")
    return 0


def cmd_chat(args) -> int:
    from .service import NegotiationSessions

    model = load_checkpoint(args.checkpoint)
    sessions = NegotiationSessions(model)
    scenario = corpus_mod.Scenario(listed_price=args.listed, buyer_target_price=args.target,
                                   title=args.title)
    sid, opening = sessions.create_session(scenario)
    print(f"[seller] {opening}")
    print("(type a message; /offer AMOUNT, /accept, /reject, /quit end the deal)")
    while True:
        try:
            line = input("[buyer] ").strip()
        except EOFError:
            line = "/quit"
        if not line:
            continue
        if line.startswith("/"):
            parts = line[1:].split()
            action = parts[0]
            amount = float(parts[1]) if len(parts) > 1 else None
            try:
                outcome = sessions.post_action(sid, action, amount)
            except Exception as e:  # noqa: BLE001 - interactive loop reports and continues
                print(f"! {e}")
                continue
            if outcome["status"] == "offer":
                print(f"offer on the table: ${outcome['outstanding_offer']['amount']}")
                continue
            print(f"deal closed: {outcome}")
            return 0
        reply = sessions.post_buyer_message(sid, line)
        print(f"[seller] {reply['bot_reply']}")
        if reply["bot_strategies"]:
            print(f"         strategies: {', '.join(reply['bot_strategies'])}")


def cmd_serve(args) -> int:
    from .service import run_server

    model = load_checkpoint(args.checkpoint)
    print(f"serving on port {args.port} (config {config_hash(model.config)[:12]})")
    run_server(model, port=args.port, log_path=args.session_log)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="negograph",
        description="Negotiation dialogue modeling with strategy graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write checkpoint + log")
    p.add_argument("--corpus", required=True)
    p.add_argument("--valid", help="validation split (defaults to the training corpus)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANT_CHOICES)
    p.add_argument("--min-turns", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="compute metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--train-corpus", help="train split for ratio-class boundaries")
    p.add_argument("--min-turns", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("explain", help="influence/association reports from trace files")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--dot", action="store_true", help="also emit DOT for the first trace")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("synth", help="generate a planted-dependency corpus")
    p.add_argument("--rule", action="append", default=[],
                   help="trigger:consequence[:lag[:prob]] (repeatable)")
    p.add_argument("--dialogues", type=int, default=100)
    p.add_argument("--turns", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("chat", help="terminal negotiation against a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--listed", type=float, default=40.0)
    p.add_argument("--target", type=float, default=36.0)
    p.add_argument("--title", default="item for sale")
    p.set_defaults(fn=cmd_chat)

    p = sub.add_parser("serve", help="run the HTTP negotiation service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--session-log", help="optional JSONL session log path")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (corpus_mod.CorpusError, train_mod.TrainError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
