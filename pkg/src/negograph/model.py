"""Full negotiation model assembly: utterance + context encoding, pluggable
structure encoders (graph attention, k-hot GRU baseline, or none), prediction
heads, and the utterance decoder, plus deterministic checkpoint I/O.

Structure-encoder variants:
- "graph": the GAT + cluster-pooling encoder over strategy and dialogue-act
  graphs (separate parameter sets);
- "rnn": a GRU over per-turn k-hot strategy / one-hot act vectors;
- "none": no structure encoding at all; the heads read the dialogue context.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import corpus as corpus_mod
from . import dialenc, gnn, graphbuild, heads, ndcore as nd
from .corpus import Dialogue, NUM_CONTENT_STRATEGIES, NUM_DIALOGUE_ACTS, TokenVocab
from .gnn import AttentionTrace
from .ndcore import Tensor

VARIANTS = ("graph", "rnn", "none")


class ModelError(Exception):
    pass


@dataclass
class ModelConfig:
    """Hyperparameters, named after the configuration table they mirror."""

    seed: int = 0
    variant: str = "graph"
    utterance_mode: str = "trainable"
    lr: float = 1e-3
    l2: float = 1e-3
    loss_alpha: float = 1.0
    loss_beta: float = 10.0
    loss_gamma: float = 10.0
    weighted_strategy_loss: bool = True
    hidden_dim: int = 64
    graph_layers: int = 2
    asap_pooling_ratio: float = 0.8
    dialogue_context_embedding: int = 300
    context_hidden: int = 64
    dialogue_context_dropout: float = 0.1
    graph_dropout: float = 0.0
    word_dim: int = 64
    projection_hidden: int = 64
    max_utterances_in_batch: int = 128
    patience: int = 10
    epochs: int = 50
    max_decode_len: int = 30
    decoder_hidden: int | None = None  # None: decoder hidden is dim(h_t)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


def config_hash(config: ModelConfig) -> str:
    return hashlib.sha256(config.to_json().encode("utf-8")).hexdigest()


@dataclass
class KhotGruEncoder:
    """Ablation structure encoder: GRU over k-hot label vectors."""

    gru: nd.GruParams
    out_dim: int

    @staticmethod
    def create(seed: int, name: str, n_labels: int, out_dim: int) -> "KhotGruEncoder":
        return KhotGruEncoder(nd.GruParams.create(seed, name, n_labels, out_dim), out_dim)

    def encode(self, khots: list[np.ndarray]) -> Tensor:
        h = Tensor(np.zeros(self.out_dim))
        for k in khots:
            h = nd.gru_cell(Tensor(k), h, self.gru)
        return h

    def tensors(self) -> list[Tensor]:
        return self.gru.tensors()


@dataclass
class PredictionPoint:
    """Model outputs for one turn boundary: state after observing turns
    [0..t] predicting turn t+1 (`target_index`)."""

    target_index: int
    st: heads.StrategyPrediction
    da: heads.ActPrediction
    outcome: heads.ActPrediction
    h_t: Tensor
    gen_probs: list[Tensor] | None
    gen_target_ids: list[int] | None
    trace: AttentionTrace | None


@dataclass
class BatchedForward:
    """All prediction points of one dialogue as stacked matrices (row t is the
    boundary predicting turn t+1). Numerically equivalent to forward_dialogue,
    with head projections and losses batched across points."""

    n_points: int
    st_probs: Tensor
    da_logits: Tensor
    outcome_logits: Tensor
    h_joint: Tensor
    gen: list[tuple[int, Tensor, list[int]]]

    @property
    def st_khot(self) -> np.ndarray:
        return self.st_probs.value > heads.STRATEGY_THRESHOLD


class NegotiationModel:
    def __init__(self, config: ModelConfig, token_vocab: TokenVocab,
                 external: dialenc.ExternalEmbeddings | None = None):
        self.config = config
        self.token_vocab = token_vocab
        self.external = external
        if config.utterance_mode == "external" and external is None:
            raise ModelError("external utterance mode requires an embedding table")
        seed = config.seed
        d = config.hidden_dim
        st_labels = len(corpus_mod.STRATEGY_LABELS)
        da_labels = NUM_DIALOGUE_ACTS

        self.utt = dialenc.UtteranceEncoderParams.create(
            seed, "utt", len(token_vocab), config.word_dim, config.dialogue_context_embedding)
        self.context = dialenc.ContextEncoder.create(
            seed, "context", config.dialogue_context_embedding, config.context_hidden)

        self.st_encoder = None
        self.da_encoder = None
        self.st_rnn = None
        self.da_rnn = None
        if config.variant == "graph":
            self.st_encoder = gnn.StructureEncoderParams.create(
                seed, "st_enc", st_labels, d, config.graph_layers,
                config.asap_pooling_ratio, config.projection_hidden)
            self.da_encoder = gnn.StructureEncoderParams.create(
                seed, "da_enc", da_labels, d, config.graph_layers,
                config.asap_pooling_ratio, config.projection_hidden)
            struct_dim = 2 * d
        elif config.variant == "rnn":
            self.st_rnn = KhotGruEncoder.create(seed, "st_rnn", st_labels, 2 * d)
            self.da_rnn = KhotGruEncoder.create(seed, "da_rnn", da_labels, 2 * d)
            struct_dim = 2 * d
        else:
            struct_dim = config.context_hidden

        self.st_dim = struct_dim
        self.da_dim = struct_dim
        self.joint_dim = config.context_hidden + (
            2 * struct_dim if config.variant != "none" else 0)

        self.strategy_head = heads.LinearHead.create(seed, "head_st", self.st_dim, NUM_CONTENT_STRATEGIES)
        self.da_head = heads.LinearHead.create(seed, "head_da", self.da_dim, NUM_DIALOGUE_ACTS)
        self.outcome_head = heads.LinearHead.create(seed, "head_outcome", self.joint_dim, 5)
        self.decoder = heads.DecoderParams.create(
            seed, "decoder", len(token_vocab), config.word_dim, self.joint_dim,
            hidden_dim=config.decoder_hidden)

        self._train_mode = False
        self._dropout_rng = nd.stream(seed, "dropout")

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[Tensor]:
        out = list(self.utt.tensors()) + list(self.context.tensors())
        if self.st_encoder is not None:
            out += self.st_encoder.tensors() + self.da_encoder.tensors()
        if self.st_rnn is not None:
            out += self.st_rnn.tensors() + self.da_rnn.tensors()
        out += self.strategy_head.tensors() + self.da_head.tensors()
        out += self.outcome_head.tensors() + self.decoder.tensors()
        names = [t.name for t in out]
        if len(set(names)) != len(names):
            raise ModelError("duplicate parameter names")
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in self.parameters()}

    def zero_grad(self):
        for t in self.parameters():
            t.zero_grad()

    def train(self, on: bool = True):
        self._train_mode = on
        return self

    # -- encoding -----------------------------------------------------------

    def _utterance_embedding(self, dialogue: Dialogue, turn_index: int) -> Tensor:
        if self.config.utterance_mode == "external":
            return self.external.lookup(dialogue.dialogue_id, turn_index)
        ids = self.token_vocab.encode(dialogue.turns[turn_index].tokens)
        return dialenc.encode_utterance_trainable(ids, self.utt)

    def context_states(self, dialogue: Dialogue) -> list[Tensor]:
        """h_t over every prefix of the dialogue (one GRU pass)."""
        es = []
        for t in range(len(dialogue.turns)):
            e = self._utterance_embedding(dialogue, t)
            e = nd.dropout(e, self.config.dialogue_context_dropout,
                           self._dropout_rng, self._train_mode)
            es.append(e)
        return self.context.all_states(es)

    def _khot(self, strategies, n: int) -> np.ndarray:
        v = np.zeros(n)
        for s in strategies:
            v[s] = 1.0
        return v

    def structure_states(self, dialogue: Dialogue, upto: int,
                         want_trace: bool = False) -> tuple[Tensor | None, Tensor | None, AttentionTrace | None]:
        """(h_st, h_da, strategy trace) for the prefix turns[0..upto]."""
        cfg = self.config
        if cfg.variant == "none":
            return None, None, None
        turns = dialogue.turns[: upto + 1]
        if cfg.variant == "rnn":
            st = self.st_rnn.encode([self._khot(t.strategies, len(corpus_mod.STRATEGY_LABELS)) for t in turns])
            da = self.da_rnn.encode([self._khot([t.dialogue_act], NUM_DIALOGUE_ACTS) for t in turns])
            return st, da, None
        st_graph = graphbuild.build_graph(
            [t.strategy_ids_sorted() for t in turns], n_labels=len(corpus_mod.STRATEGY_LABELS))
        da_graph = graphbuild.build_da_graph(
            [t.dialogue_act for t in turns], n_labels=NUM_DIALOGUE_ACTS)
        st_enc = gnn.structure_encode(st_graph, self.st_encoder, train=self._train_mode,
                                      dropout_rate=cfg.graph_dropout, rng=self._dropout_rng)
        da_enc = gnn.structure_encode(da_graph, self.da_encoder, train=self._train_mode,
                                      dropout_rate=cfg.graph_dropout, rng=self._dropout_rng)
        return st_enc.h, da_enc.h, (st_enc.trace if want_trace else None)

    def joint_state(self, h_u: Tensor, h_st: Tensor | None, h_da: Tensor | None) -> Tensor:
        if self.config.variant == "none":
            return h_u
        return nd.concat([h_u, h_st, h_da])

    def head_inputs(self, h_u: Tensor, h_st: Tensor | None, h_da: Tensor | None):
        """(strategy-head input, act-head input); the `none` variant reads the
        dialogue context."""
        if self.config.variant == "none":
            return h_u, h_u
        return h_st, h_da

    def _prefix_structure_states(self, dialogue: Dialogue, n_points: int,
                                 want_trace: bool):
        """(h_st, h_da, trace) per prediction point, sharing prefix work:
        the graph variant reuses the causal stage-1 pass across prefixes, the
        rnn variant reads intermediate GRU states."""
        cfg = self.config
        turns = dialogue.turns
        if cfg.variant == "none":
            return [(None, None, None)] * n_points
        if cfg.variant == "rnn":
            st_states, da_states = [], []
            h_st = Tensor(np.zeros(self.st_rnn.out_dim))
            h_da = Tensor(np.zeros(self.da_rnn.out_dim))
            for t in range(n_points):
                k_st = self._khot(turns[t].strategies, len(corpus_mod.STRATEGY_LABELS))
                k_da = self._khot([turns[t].dialogue_act], NUM_DIALOGUE_ACTS)
                h_st = nd.gru_cell(Tensor(k_st), h_st, self.st_rnn.gru)
                h_da = nd.gru_cell(Tensor(k_da), h_da, self.da_rnn.gru)
                st_states.append(h_st)
                da_states.append(h_da)
            return [(st_states[t], da_states[t], None) for t in range(n_points)]
        prefix_turns = turns[:n_points]
        st_graph = graphbuild.build_graph(
            [t.strategy_ids_sorted() for t in prefix_turns], n_labels=len(corpus_mod.STRATEGY_LABELS))
        da_graph = graphbuild.build_da_graph(
            [t.dialogue_act for t in prefix_turns], n_labels=NUM_DIALOGUE_ACTS)
        st_counts = np.cumsum([len(t.strategies) for t in prefix_turns]).tolist()
        da_counts = list(range(1, n_points + 1))
        kw = dict(train=self._train_mode, dropout_rate=self.config.graph_dropout,
                  rng=self._dropout_rng)
        st_encs = gnn.encode_dialogue_prefixes(st_graph, self.st_encoder, st_counts,
                                               want_trace=want_trace, **kw)
        da_encs = gnn.encode_dialogue_prefixes(da_graph, self.da_encoder, da_counts,
                                               want_trace=False, **kw)
        return [(st_encs[t].h, da_encs[t].h, st_encs[t].trace if want_trace else None)
                for t in range(n_points)]

    def forward_dialogue(self, dialogue: Dialogue, teacher_forcing: bool = True,
                         want_trace: bool = False) -> list[PredictionPoint]:
        """Prediction points for every turn boundary of a dialogue. The state
        at boundary t uses information from the prefix through turn t only."""
        n = len(dialogue.turns)
        if n < 2:
            return []
        ctx = self.context_states(dialogue)
        structure = self._prefix_structure_states(dialogue, n - 1, want_trace)
        points = []
        for t in range(n - 1):
            h_st, h_da, trace = structure[t]
            h_u = ctx[t]
            st_in, da_in = self.head_inputs(h_u, h_st, h_da)
            h_t = self.joint_state(h_u, h_st, h_da)
            target = dialogue.turns[t + 1]
            gen_probs = gen_ids = None
            if teacher_forcing and target.speaker == "seller":
                toks = corpus_mod.placeholderize_tokens(target, dialogue.scenario.listed_price)
                gen_ids = self.token_vocab.encode(toks) + [self.token_vocab.eos_id]
                gen_probs = heads.teacher_forced_probs(h_t, gen_ids, self.decoder, self.token_vocab)
            points.append(PredictionPoint(
                target_index=t + 1,
                st=heads.predict_strategies(st_in, self.strategy_head),
                da=heads.predict_dialogue_act(da_in, self.da_head),
                outcome=heads.predict_outcome(h_t, self.outcome_head),
                h_t=h_t,
                gen_probs=gen_probs,
                gen_target_ids=gen_ids,
                trace=trace,
            ))
        return points

    def forward_dialogue_batched(self, dialogue: Dialogue,
                                 teacher_forcing: bool = True) -> BatchedForward | None:
        """Stacked-matrix forward used by the training loop and evaluation."""
        n = len(dialogue.turns)
        if n < 2:
            return None
        ctx = self.context_states(dialogue)
        t_points = n - 1
        h_u = nd.concat([nd.reshape(h, (1, h.shape[0])) for h in ctx[:t_points]], axis=0)
        if self.config.variant == "none":
            h_st_m = h_da_m = h_u
            h_joint = h_u
        else:
            structure = self._prefix_structure_states(dialogue, t_points, want_trace=False)
            h_st_m = nd.concat([nd.reshape(s, (1, s.shape[0])) for s, _, _ in structure], axis=0)
            h_da_m = nd.concat([nd.reshape(a, (1, a.shape[0])) for _, a, _ in structure], axis=0)
            h_joint = nd.concat([h_u, h_st_m, h_da_m], axis=1)
        st_probs = nd.sigmoid(self.strategy_head.logits(h_st_m))
        da_logits = self.da_head.logits(h_da_m)
        outcome_logits = self.outcome_head.logits(h_joint)
        gen: list[tuple[int, Tensor, list[int]]] = []
        if teacher_forcing:
            dim = h_joint.shape[1]
            for t in range(t_points):
                target = dialogue.turns[t + 1]
                if target.speaker != "seller":
                    continue
                toks = corpus_mod.placeholderize_tokens(target, dialogue.scenario.listed_price)
                ids = self.token_vocab.encode(toks) + [self.token_vocab.eos_id]
                h_t = nd.reshape(nd.embedding_lookup(h_joint, [t]), (dim,))
                probs = heads.teacher_forced_prob_matrix(h_t, ids, self.decoder, self.token_vocab)
                gen.append((t, probs, ids))
        return BatchedForward(
            n_points=t_points, st_probs=st_probs, da_logits=da_logits,
            outcome_logits=outcome_logits, h_joint=h_joint, gen=gen)

    def joint_state_row(self, bf: BatchedForward, t: int) -> Tensor:
        dim = bf.h_joint.shape[1]
        return nd.reshape(nd.embedding_lookup(bf.h_joint, [t]), (dim,))

    def generate_reply(self, h_t: Tensor, listed: float | None) -> list[str]:
        return heads.decode_utterance(h_t, self.decoder, self.token_vocab,
                                      self.config.max_decode_len, listed=listed)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"NGCK0001"


def save_checkpoint(model: NegotiationModel, path) -> None:
    """Deterministic binary checkpoint: header JSON (config, config hash,
    token vocabulary, parameter manifest) followed by raw float64 data."""
    params = model.named_parameters()
    manifest = [{"name": name, "shape": list(t.shape)} for name, t in sorted(params.items())]
    header = {
        "config": asdict(model.config),
        "config_hash": config_hash(model.config),
        "vocab": model.token_vocab.tokens,
        "params": manifest,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for entry in manifest:
            fh.write(params[entry["name"]].value.astype("<f8").tobytes())


def load_checkpoint(path, external: dialenc.ExternalEmbeddings | None = None) -> NegotiationModel:
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        config = ModelConfig(**header["config"])
        if config_hash(config) != header["config_hash"]:
            raise ModelError("checkpoint config hash mismatch")
        tokens = header["vocab"]
        n_fixed = len(corpus_mod.SPECIAL_TOKENS) + len(corpus_mod.PRICE_GRID)
        vocab = TokenVocab(tokens[n_fixed:], surface_size=len(tokens) - n_fixed)
        model = NegotiationModel(config, vocab, external=external)
        params = model.named_parameters()
        for entry in header["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            if name not in params:
                raise ModelError(f"checkpoint parameter {name!r} unknown to this config")
            if params[name].value.shape != raw.shape:
                raise ModelError(f"checkpoint shape mismatch for {name!r}")
            params[name].value = raw.copy()
    return model
