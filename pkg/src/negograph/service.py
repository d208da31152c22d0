"""Session-oriented negotiation service: a lightweight keyword tagger for
buyer turns, per-session graph and context state, reply generation, price
bookkeeping, and an HTTP+JSON layer over the standard library server.

Endpoints: POST /sessions, POST /sessions/{id}/message,
POST /sessions/{id}/action, GET /sessions/{id}/trace, GET /healthz. Payloads
carry a version field `v`. Concurrent sessions are supported; operations on
one session are serialized by a per-session lock and model parameters are
shared read-only.
"""

from __future__ import annotations

import json
import re
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import gnn, graphbuild, heads, ndcore as nd
from .corpus import Dialogue, DialogueTurn, Outcome, Scenario
from .model import NegotiationModel

PROTOCOL_VERSION = 1
TRACE_SNAPSHOT_EDGES = 200


class ServiceError(Exception):
    status = 500


class UnknownSession(ServiceError):
    status = 404


class SessionConflict(ServiceError):
    status = 409


class ModelUnavailable(ServiceError):
    status = 503


class BadRequest(ServiceError):
    status = 400


# ---------------------------------------------------------------------------
# buyer-turn tagger (auditable keyword/regex table shipped as data)

_TOKEN_RE = re.compile(r"\$?\d+(?:\.\d+)?|[a-z']+")


def load_tagger_rules() -> dict:
    path = Path(__file__).parent / "tagger_rules.json"
    return json.loads(path.read_text(encoding="utf-8"))


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class TaggedTurn:
    tokens: list[str]
    strategies: set[str]
    dialogue_act: str
    prices: list[float]


class KeywordTagger:
    """Approximate stand-in for the upstream rule-based extractors: keyword
    lists for politeness/sentiment/hedging plus a currency regex for price
    proposals."""

    def __init__(self, rules: dict | None = None):
        self.rules = rules or load_tagger_rules()
        self._by_word: dict[str, list[str]] = {}
        for label, words in self.rules["keyword_strategies"].items():
            for w in words:
                self._by_word.setdefault(w, []).append(label)

    def tag(self, text: str, is_first_price: bool) -> TaggedTurn:
        tokens = tokenize(text)
        strategies: set[str] = set()
        for tok in tokens:
            for label in self._by_word.get(tok, ()):
                strategies.add(label)
        prices = [amount for _, amount in corpus_mod.extract_prices(tokens)]
        acts = self.rules["dialogue_acts"]
        if prices:
            strategies.add(self.rules["price_strategy"])
            act = acts["first_price_act"] if is_first_price else acts["later_price_act"]
        elif "politeness_greet" in strategies:
            act = acts["greeting_act"]
        elif "?" in text:
            act = acts["question_act"]
        elif any(w in tokens for w in self.rules["agree_words"]):
            act = acts["agree_act"]
        elif any(w in tokens for w in self.rules["disagree_words"]):
            act = acts["disagree_act"]
        else:
            act = acts["default_act"]
        return TaggedTurn(tokens=tokens, strategies=strategies, dialogue_act=act, prices=prices)


# ---------------------------------------------------------------------------
# sessions


def truncate_trace_payload(payload: dict, max_edges: int = TRACE_SNAPSHOT_EDGES) -> dict:
    """Keep only the most recent `max_edges` attention edges (those pointing
    at the latest nodes) for transport; the full trace stays downloadable."""
    out = {"nodes": payload.get("nodes", []), "layers": []}
    for layer in payload.get("layers", []):
        entries = sorted(layer["alpha"], key=lambda e: (e["dst"], e["src"]))
        out["layers"].append({
            "alpha": entries[-max_edges:],
            "clusters": layer["clusters"],
        })
    return out


@dataclass
class SessionState:
    session_id: str
    scenario: Scenario
    turns: list[DialogueTurn] = field(default_factory=list)
    st_graph: graphbuild.StrategyGraph = field(
        default_factory=lambda: graphbuild.StrategyGraph(n_labels=len(corpus_mod.STRATEGY_LABELS)))
    da_graph: graphbuild.StrategyGraph = field(
        default_factory=lambda: graphbuild.StrategyGraph(n_labels=corpus_mod.NUM_DIALOGUE_ACTS))
    outstanding_offer: dict | None = None
    last_buyer_proposal: float | None = None
    terminal_action: str | None = None
    last_trace_payload: dict = field(default_factory=lambda: {"nodes": [], "layers": []})
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def terminal(self) -> bool:
        return self.terminal_action is not None


class NegotiationSessions:
    """Live negotiation sessions over a trained model. The bot plays the
    seller, opens with a greeting, and never auto-accepts: deal actions are
    explicit."""

    OPENING = "hello"

    def __init__(self, model: NegotiationModel | None, log_path=None):
        self.model = model
        self.tagger = KeywordTagger()
        self.sessions: dict[str, SessionState] = {}
        self._registry_lock = threading.Lock()
        self._log_path = log_path
        self._svocab = corpus_mod.strategy_vocab()
        self._dvocab = corpus_mod.dialogue_act_vocab()

    def _log(self, event: dict):
        if not self._log_path:
            return
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def _require_model(self) -> NegotiationModel:
        if self.model is None:
            raise ModelUnavailable("no model checkpoint loaded")
        return self.model

    def _session(self, session_id: str) -> SessionState:
        with self._registry_lock:
            state = self.sessions.get(session_id)
        if state is None:
            raise UnknownSession(f"unknown session {session_id!r}")
        return state

    def _append_turn(self, state: SessionState, speaker: str, tokens: list[str],
                     act_label: str, strategy_labels: set[str]) -> DialogueTurn:
        if not state.turns and not strategy_labels:
            strategy_labels = {corpus_mod.START_STRATEGY}
        ids = frozenset(self._svocab.id(s) for s in strategy_labels)
        turn = DialogueTurn(
            speaker=speaker,
            tokens=tuple(tokens),
            dialogue_act=self._dvocab.id(act_label),
            strategies=ids,
            raw_prices=corpus_mod.extract_prices(tokens),
        )
        state.turns.append(turn)
        state.st_graph = graphbuild.extend_graph(state.st_graph, turn.strategy_ids_sorted())
        state.da_graph = graphbuild.extend_graph(state.da_graph, [turn.dialogue_act])
        return turn

    def _as_dialogue(self, state: SessionState) -> Dialogue:
        return Dialogue(
            dialogue_id=state.session_id,
            scenario=state.scenario,
            turns=tuple(state.turns),
            outcome=Outcome(None, state.terminal_action or "quit"),
        )

    def _encode(self, state: SessionState):
        """(h_u, h_st, h_da, trace payload) for the current history, using the
        session's live graphs."""
        model = self._require_model()
        model.train(False)
        dialogue = self._as_dialogue(state)
        with nd.no_grad():
            h_u = model.context_states(dialogue)[-1]
            if model.config.variant == "graph":
                st_enc = gnn.structure_encode(state.st_graph, model.st_encoder)
                da_enc = gnn.structure_encode(state.da_graph, model.da_encoder)
                h_st, h_da = st_enc.h, da_enc.h
                trace_payload = gnn.trace_to_payload(st_enc.trace, self._svocab)
            else:
                h_st, h_da, _ = model.structure_states(dialogue, len(state.turns) - 1)
                trace_payload = {"nodes": [], "layers": []}
        return h_u, h_st, h_da, trace_payload

    def _predict_and_reply(self, state: SessionState):
        model = self._require_model()
        with nd.no_grad():
            h_u, h_st, h_da, _ = self._encode(state)
            st_in, da_in = model.head_inputs(h_u, h_st, h_da)
            h_t = model.joint_state(h_u, h_st, h_da)
            st_pred = heads.predict_strategies(st_in, model.strategy_head)
            da_pred = heads.predict_dialogue_act(da_in, model.da_head)
            reply_tokens = model.generate_reply(h_t, listed=None)
        labels = {self._svocab.label(j) for j in np.flatnonzero(st_pred.khot)}
        act = self._dvocab.label(da_pred.argmax)
        if act.startswith("<"):
            # terminal action acts are reserved for explicit deal actions
            act = "inform"
        return reply_tokens, labels, act

    # -- public operations ----------------------------------------------------

    def create_session(self, scenario: Scenario) -> tuple[str, str]:
        self._require_model()
        try:
            scenario.validate()
        except corpus_mod.SchemaError as e:
            raise BadRequest(str(e)) from None
        state = SessionState(session_id=uuid.uuid4().hex, scenario=scenario)
        with self._registry_lock:
            self.sessions[state.session_id] = state
        with state.lock:
            opening_tagged = self.tagger.tag(self.OPENING, is_first_price=True)
            self._append_turn(state, "seller", opening_tagged.tokens,
                              opening_tagged.dialogue_act, opening_tagged.strategies)
        self._log({"event": "create", "session": state.session_id,
                   "listed": scenario.listed_price, "target": scenario.buyer_target_price})
        return state.session_id, self.OPENING

    def post_buyer_message(self, session_id: str, text: str) -> dict:
        if not isinstance(text, str) or not text.strip():
            raise BadRequest("message text must be a non-empty string")
        state = self._session(session_id)
        model = self._require_model()
        with state.lock:
            if state.terminal:
                raise SessionConflict("session is terminal")
            seen_price = any(t.raw_prices for t in state.turns)
            tagged = self.tagger.tag(text, is_first_price=not seen_price)
            self._append_turn(state, "buyer", tagged.tokens, tagged.dialogue_act,
                              tagged.strategies)
            if tagged.prices:
                state.last_buyer_proposal = tagged.prices[-1]
            reply_tokens, bot_labels, bot_act = self._predict_and_reply(state)
            self._append_turn(state, "seller", reply_tokens, bot_act, bot_labels)
            with nd.no_grad():
                h_u, h_st, h_da, trace_payload = self._encode(state)
                st_in, _ = model.head_inputs(h_u, h_st, h_da)
                next_pred = heads.predict_strategies(st_in, model.strategy_head)
            state.last_trace_payload = trace_payload
            listed = state.scenario.listed_price
            reply_text = " ".join(heads.realize_tokens(reply_tokens, listed))
            response = {
                "v": PROTOCOL_VERSION,
                "session": session_id,
                "buyer_strategies": sorted(tagged.strategies),
                "buyer_da": tagged.dialogue_act,
                "bot_reply": reply_text,
                "bot_strategies": sorted(bot_labels),
                "bot_da": bot_act,
                "predicted_next_strategies": sorted(
                    self._svocab.label(j) for j in np.flatnonzero(next_pred.khot)),
                "price_state": self._price_state(state),
                "trace_snapshot": truncate_trace_payload(trace_payload),
            }
        self._log({"event": "message", "session": session_id, "text": text,
                   "reply": reply_text})
        return response

    def _price_state(self, state: SessionState) -> dict:
        listed = state.scenario.listed_price
        fraction = None
        if state.last_buyer_proposal is not None:
            fraction = round(state.last_buyer_proposal / listed, 6)
        return {
            "listed_price": listed,
            "buyer_target_price": state.scenario.buyer_target_price,
            "last_buyer_proposal": state.last_buyer_proposal,
            "proposal_fraction": fraction,
            "outstanding_offer": state.outstanding_offer,
        }

    def post_action(self, session_id: str, action: str, amount: float | None = None) -> dict:
        state = self._session(session_id)
        with state.lock:
            if state.terminal:
                raise SessionConflict("session is terminal")
            if action == "offer":
                if amount is None or amount <= 0:
                    raise BadRequest("offer requires a positive amount")
                state.outstanding_offer = {"amount": float(amount), "proposer": "buyer"}
                self._append_turn(state, "buyer", [f"<offer> {amount}"], "<offer>", set())
                outcome = {"v": PROTOCOL_VERSION, "session": session_id, "status": "offer",
                           "outstanding_offer": state.outstanding_offer}
            elif action in ("accept", "reject"):
                if state.outstanding_offer is None:
                    raise SessionConflict(f"{action} requires an outstanding offer")
                self._append_turn(state, "buyer", [f"<{action}>"], f"<{action}>", set())
                state.terminal_action = action
                sale = state.outstanding_offer["amount"] if action == "accept" else None
                ratio = None
                if sale is not None:
                    ratio = corpus_mod.compute_ratio(
                        sale, state.scenario.buyer_target_price, state.scenario.listed_price)
                outcome = {"v": PROTOCOL_VERSION, "session": session_id, "status": action,
                           "sale_price": sale, "ratio": ratio}
            elif action == "quit":
                self._append_turn(state, "buyer", ["<quit>"], "<quit>", set())
                state.terminal_action = "quit"
                outcome = {"v": PROTOCOL_VERSION, "session": session_id, "status": "quit",
                           "sale_price": None, "ratio": None}
            else:
                raise BadRequest(f"unknown action {action!r}")
        self._log({"event": "action", "session": session_id, "action": action,
                   "amount": amount, "outcome": {k: v for k, v in outcome.items() if k != "v"}})
        return outcome

    def get_trace(self, session_id: str) -> dict:
        state = self._session(session_id)
        with state.lock:
            return {"v": PROTOCOL_VERSION, "session": session_id,
                    "trace": state.last_trace_payload}

    def graphs_consistent(self, session_id: str) -> bool:
        """The live graphs must equal a rebuild from the turn history."""
        state = self._session(session_id)
        rebuilt_st = graphbuild.build_graph(
            [t.strategy_ids_sorted() for t in state.turns],
            n_labels=len(corpus_mod.STRATEGY_LABELS))
        rebuilt_da = graphbuild.build_da_graph(
            [t.dialogue_act for t in state.turns], n_labels=corpus_mod.NUM_DIALOGUE_ACTS)
        return state.st_graph.equals(rebuilt_st) and state.da_graph.equals(rebuilt_da)


# ---------------------------------------------------------------------------
# HTTP layer

_SESSION_PATH = re.compile(r"^/sessions/([0-9a-f]+)/(message|action|trace)$")


def make_handler(sessions: NegotiationSessions):
    class Handler(BaseHTTPRequestHandler):
        server_version = "negograph/0.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, payload: dict):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.end_headers()
            self.wfile.write(body)

        def _read_json(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length).decode("utf-8"))
            except json.JSONDecodeError:
                raise BadRequest("invalid JSON body") from None

        def do_OPTIONS(self):  # CORS preflight for the browser client
            self._send(200, {"v": PROTOCOL_VERSION})

        def do_GET(self):
            try:
                if self.path == "/healthz":
                    self._send(200, {"v": PROTOCOL_VERSION, "status": "ok",
                                     "model_loaded": sessions.model is not None})
                    return
                m = _SESSION_PATH.match(self.path)
                if m and m.group(2) == "trace":
                    self._send(200, sessions.get_trace(m.group(1)))
                    return
                self._send(404, {"v": PROTOCOL_VERSION, "error": "not found"})
            except ServiceError as e:
                self._send(e.status, {"v": PROTOCOL_VERSION, "error": str(e)})

        def do_POST(self):
            try:
                if self.path == "/sessions":
                    body = self._read_json()
                    try:
                        scenario = Scenario(
                            listed_price=float(body["listed_price"]),
                            buyer_target_price=float(body["buyer_target_price"]),
                            title=str(body.get("title", "")),
                            description=str(body.get("description", "")),
                        )
                    except (KeyError, TypeError, ValueError):
                        raise BadRequest("scenario requires listed_price and buyer_target_price") from None
                    sid, opening = sessions.create_session(scenario)
                    self._send(201, {"v": PROTOCOL_VERSION, "session": sid,
                                     "opening": opening,
                                     "price_state": sessions._price_state(sessions._session(sid))})
                    return
                m = _SESSION_PATH.match(self.path)
                if m:
                    sid, endpoint = m.group(1), m.group(2)
                    body = self._read_json()
                    if endpoint == "message":
                        self._send(200, sessions.post_buyer_message(sid, body.get("text", "")))
                        return
                    if endpoint == "action":
                        self._send(200, sessions.post_action(
                            sid, body.get("action", ""), body.get("amount")))
                        return
                self._send(404, {"v": PROTOCOL_VERSION, "error": "not found"})
            except ServiceError as e:
                self._send(e.status, {"v": PROTOCOL_VERSION, "error": str(e)})

    return Handler


def make_server(model: NegotiationModel | None, port: int = 0,
                log_path=None) -> tuple[ThreadingHTTPServer, NegotiationSessions]:
    sessions = NegotiationSessions(model, log_path=log_path)
    server = ThreadingHTTPServer(("127.0.0.1", port), make_handler(sessions))
    return server, sessions


def run_server(model: NegotiationModel, port: int = 8080, log_path=None) -> None:
    server, _ = make_server(model, port=port, log_path=log_path)
    try:
        server.serve_forever()
    finally:
        server.server_close()
