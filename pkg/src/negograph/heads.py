"""Prediction heads over the encoder outputs and the greedy GRU utterance
decoder. The strategy head is multi-label over the 21 content strategies
(the start marker is a structural token, never a prediction target); the
dialogue-act and outcome heads are softmax classifiers. The decoder is
initialized from the joint state h_t = [h_u ; h_st ; h_da] and decodes
greedily, emitting price placeholders that a surface realizer turns back
into dollar amounts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import corpus as corpus_mod
from . import ndcore as nd
from .corpus import TokenVocab
from .ndcore import GruParams, Tensor

STRATEGY_THRESHOLD = 0.5


@dataclass
class LinearHead:
    w: Tensor
    b: Tensor

    @staticmethod
    def create(seed: int, name: str, d_in: int, d_out: int) -> "LinearHead":
        return LinearHead(
            w=nd.param(seed, f"{name}/w", (d_in, d_out)),
            b=nd.zeros_param(f"{name}/b", (d_out,)),
        )

    def logits(self, h: Tensor) -> Tensor:
        return nd.add(nd.matmul(h, self.w), self.b)

    def tensors(self) -> list[Tensor]:
        return [self.w, self.b]


@dataclass
class StrategyPrediction:
    probs: Tensor

    @property
    def khot(self) -> np.ndarray:
        # strict >: a probability of exactly 0.5 is not a prediction
        return self.probs.value > STRATEGY_THRESHOLD


@dataclass
class ActPrediction:
    logits: Tensor
    dist: Tensor

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.dist.value))


def predict_strategies(h_st: Tensor, head: LinearHead) -> StrategyPrediction:
    return StrategyPrediction(probs=nd.sigmoid(head.logits(h_st)))


def predict_dialogue_act(h_da: Tensor, head: LinearHead) -> ActPrediction:
    logits = head.logits(h_da)
    return ActPrediction(logits=logits, dist=nd.softmax_masked(logits))


def predict_outcome(h_t: Tensor, head: LinearHead) -> ActPrediction:
    logits = head.logits(h_t)
    return ActPrediction(logits=logits, dist=nd.softmax_masked(logits))


# ---------------------------------------------------------------------------
# utterance decoder


@dataclass
class DecoderParams:
    """GRU decoder. The hidden state starts from the joint state h_t; when
    `hidden_dim` differs from dim(h_t), a learned tanh projection maps h_t
    into the decoder's hidden space first."""

    embed: Tensor
    gru: GruParams
    out_w: Tensor
    out_b: Tensor
    init_w: Tensor | None = None
    init_b: Tensor | None = None

    @staticmethod
    def create(seed: int, name: str, vocab_size: int, word_dim: int,
               state_dim: int, hidden_dim: int | None = None):
        hidden = hidden_dim or state_dim
        init_w = init_b = None
        if hidden != state_dim:
            init_w = nd.param(seed, f"{name}/init_w", (state_dim, hidden))
            init_b = nd.zeros_param(f"{name}/init_b", (hidden,))
        return DecoderParams(
            embed=nd.param(seed, f"{name}/embed", (vocab_size, word_dim), scale=0.1),
            gru=GruParams.create(seed, f"{name}/gru", word_dim, hidden),
            out_w=nd.param(seed, f"{name}/out_w", (hidden, vocab_size)),
            out_b=nd.zeros_param(f"{name}/out_b", (vocab_size,)),
            init_w=init_w,
            init_b=init_b,
        )

    def initial_hidden(self, h_t: Tensor) -> Tensor:
        if self.init_w is None:
            return h_t
        return nd.tanh(nd.add(nd.matmul(h_t, self.init_w), self.init_b))

    def tensors(self) -> list[Tensor]:
        out = [self.embed, *self.gru.tensors(), self.out_w, self.out_b]
        if self.init_w is not None:
            out += [self.init_w, self.init_b]
        return out


def decoder_step(params: DecoderParams, hidden: Tensor, token_id: int) -> tuple[Tensor, Tensor]:
    """Advance the decoder one token; returns (new_hidden, vocab logits)."""
    x = nd.embedding_lookup(params.embed, [token_id])
    x = nd.reshape(x, (params.embed.shape[1],))
    h = nd.gru_cell(x, hidden, params.gru)
    return h, nd.add(nd.matmul(h, params.out_w), params.out_b)


def teacher_forced_probs(h_t: Tensor, target_ids: list[int], params: DecoderParams,
                         vocab: TokenVocab) -> list[Tensor]:
    """Per-position vocabulary distributions conditioned on gold previous
    tokens; position j predicts target_ids[j]."""
    hidden = params.initial_hidden(h_t)
    prev = vocab.bos_id
    probs = []
    for tid in target_ids:
        hidden, logits = decoder_step(params, hidden, prev)
        probs.append(nd.softmax_masked(logits))
        prev = tid
    return probs


def teacher_forced_prob_matrix(h_t: Tensor, target_ids: list[int], params: DecoderParams,
                               vocab: TokenVocab) -> Tensor:
    """Same distributions as teacher_forced_probs but stacked (L, V), with the
    output projection batched over positions."""
    hidden = params.initial_hidden(h_t)
    prev = vocab.bos_id
    hiddens = []
    for tid in target_ids:
        x = nd.reshape(nd.embedding_lookup(params.embed, [prev]), (params.embed.shape[1],))
        hidden = nd.gru_cell(x, hidden, params.gru)
        hiddens.append(nd.reshape(hidden, (1, hidden.shape[0])))
        prev = tid
    stacked = nd.concat(hiddens, axis=0)
    logits = nd.add(nd.matmul(stacked, params.out_w), params.out_b)
    return nd.softmax_masked(logits, axis=1)


def decode_utterance(h_t: Tensor, params: DecoderParams, vocab: TokenVocab,
                     max_len: int, listed: float | None = None) -> list[str]:
    """Greedy decode from the start token until the end token or max_len.
    Never emits start/pad; price placeholders are surface-realized against
    the listed price when one is provided."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    with nd.no_grad():
        hidden = params.initial_hidden(h_t)
        prev = vocab.bos_id
        out: list[str] = []
        for _ in range(max_len):
            hidden, logits = decoder_step(params, hidden, prev)
            scores = logits.value.copy()
            scores[vocab.bos_id] = -np.inf
            scores[vocab.pad_id] = -np.inf
            nxt = int(np.argmax(scores))
            if nxt == vocab.eos_id:
                break
            out.append(vocab.tokens[nxt])
            prev = nxt
    if listed is not None:
        out = realize_tokens(out, listed)
    return out


def realize_tokens(tokens: list[str], listed: float) -> list[str]:
    """Replace price placeholders with dollar amounts: <price-0.875> at listed
    40 becomes $35.00."""
    out = []
    for tok in tokens:
        if corpus_mod.is_placeholder(tok):
            out.append(f"${corpus_mod.placeholder_to_price(tok, listed):.2f}")
        else:
            out.append(tok)
    return out
