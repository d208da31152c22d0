"""Utterance embedding and hierarchical dialogue-context encoding.

Two utterance modes: `trainable` (mean of learned word embeddings through one
linear layer, gradients flow) and `external` (precomputed per-utterance
vectors loaded from a binary table, no gradient), so a contextual encoder can
be plugged in without touching the rest of the pipeline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .ndcore import GruParams, Tensor


class DialencError(Exception):
    pass


class EmbeddingLookupError(DialencError):
    """A (dialogue_id, turn_index) key is missing from the external table."""


@dataclass
class UtteranceEncoderParams:
    word_embed: Tensor
    proj_w: Tensor
    proj_b: Tensor

    @staticmethod
    def create(seed: int, name: str, vocab_size: int, word_dim: int, embed_dim: int):
        return UtteranceEncoderParams(
            word_embed=nd.param(seed, f"{name}/word_embed", (vocab_size, word_dim), scale=0.1),
            proj_w=nd.param(seed, f"{name}/proj_w", (word_dim, embed_dim)),
            proj_b=nd.zeros_param(f"{name}/proj_b", (embed_dim,)),
        )

    def tensors(self) -> list[Tensor]:
        return [self.word_embed, self.proj_w, self.proj_b]


def encode_utterance_trainable(token_ids, params: UtteranceEncoderParams) -> Tensor:
    """Mean of word embeddings through a linear layer; empty utterances embed
    as the projected zero vector."""
    if len(token_ids) == 0:
        mean = Tensor(np.zeros(params.word_embed.shape[1]))
    else:
        mean = nd.mean_reduce(nd.embedding_lookup(params.word_embed, list(token_ids)), axis=0)
    return nd.add(nd.matmul(mean, params.proj_w), params.proj_b)


class ExternalEmbeddings:
    """Frozen per-utterance vectors keyed by (dialogue_id, turn_index)."""

    MAGIC = b"NGEMB001"

    def __init__(self, dim: int, table: dict[tuple[str, int], np.ndarray] | None = None):
        self.dim = dim
        self.table = table or {}

    def put(self, dialogue_id: str, turn_index: int, vector) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DialencError(f"vector dim {v.shape} != table dim ({self.dim},)")
        self.table[(dialogue_id, turn_index)] = v

    def lookup(self, dialogue_id: str, turn_index: int) -> Tensor:
        key = (dialogue_id, turn_index)
        if key not in self.table:
            raise EmbeddingLookupError(f"no external embedding for {key}")
        return Tensor(self.table[key])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<II", self.dim, len(self.table)))
            for (did, turn), vec in sorted(self.table.items()):
                raw = did.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<i", turn))
                fh.write(vec.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ExternalEmbeddings":
        with open(path, "rb") as fh:
            if fh.read(8) != cls.MAGIC:
                raise DialencError("not an external-embedding file")
            dim, count = struct.unpack("<II", fh.read(8))
            store = cls(dim)
            for _ in range(count):
                (idlen,) = struct.unpack("<H", fh.read(2))
                did = fh.read(idlen).decode("utf-8")
                (turn,) = struct.unpack("<i", fh.read(4))
                vec = np.frombuffer(fh.read(8 * dim), dtype="<f8").copy()
                store.table[(did, turn)] = vec
        return store


class ContextEncoder:
    """GRU over utterance embeddings. The incremental API (init_state/step)
    yields exactly the same states as a batch replay."""

    def __init__(self, params: GruParams, hidden_dim: int):
        self.params = params
        self.hidden_dim = hidden_dim

    @staticmethod
    def create(seed: int, name: str, embed_dim: int, hidden_dim: int) -> "ContextEncoder":
        return ContextEncoder(GruParams.create(seed, name, embed_dim, hidden_dim), hidden_dim)

    def init_state(self) -> Tensor:
        return Tensor(np.zeros(self.hidden_dim))

    def step(self, state: Tensor, e: Tensor) -> Tensor:
        return nd.gru_cell(e, state, self.params)

    def encode(self, embeddings: list[Tensor]) -> Tensor:
        """Final hidden state over the whole prefix."""
        if not embeddings:
            raise DialencError("cannot encode an empty utterance sequence")
        return self.all_states(embeddings)[-1]

    def all_states(self, embeddings: list[Tensor]) -> list[Tensor]:
        """Hidden state after each turn: all_states(es)[t] encodes es[: t + 1]."""
        if not embeddings:
            raise DialencError("cannot encode an empty utterance sequence")
        states = []
        h = self.init_state()
        for e in embeddings:
            h = self.step(h, e)
            states.append(h)
        return states

    def tensors(self) -> list[Tensor]:
        return self.params.tensors()
