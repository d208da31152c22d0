"""Forward-directed graphs over per-utterance strategy (or dialogue-act)
labels. Every label occurrence is a node; each node receives a directed edge
from every node of every earlier turn. No edges within a turn; self-loops are
added later by the encoder, not stored here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class GraphError(Exception):
    pass


@dataclass
class StrategyGraph:
    """Immutable-by-convention value object. `nodes[i] = (turn_index, label_id)`;
    edges run from every earlier-turn node to every later-turn node. Turns with
    empty label sets add no nodes but still advance `turns_seen`, keeping node
    turn indices aligned with the dialogue."""

    nodes: list[tuple[int, int]] = field(default_factory=list)
    edge_src: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    edge_dst: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    n_labels: int | None = None
    turns_seen: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return int(self.edge_src.size)

    @property
    def label_ids(self) -> np.ndarray:
        return np.array([lab for _, lab in self.nodes], dtype=np.intp)

    @property
    def turn_of(self) -> np.ndarray:
        return np.array([t for t, _ in self.nodes], dtype=np.intp)

    def num_turns(self) -> int:
        return self.turns_seen

    def adjacency(self) -> np.ndarray:
        """Dense directed adjacency, row = source. No self-loops."""
        n = self.num_nodes
        a = np.zeros((n, n), dtype=np.float64)
        a[self.edge_src, self.edge_dst] = 1.0
        return a

    def in_mask_with_self_loops(self) -> np.ndarray:
        """mask[i, j] is True when j feeds i's attention neighborhood
        (forward edge j -> i, or j == i)."""
        n = self.num_nodes
        m = np.zeros((n, n), dtype=bool)
        m[self.edge_dst, self.edge_src] = True
        np.fill_diagonal(m, True)
        return m

    def features(self, embeddings: np.ndarray) -> np.ndarray:
        """Node feature matrix Z: one embedding-table row per node label."""
        table = np.asarray(embeddings)
        ids = self.label_ids
        if ids.size and ids.max() >= table.shape[0]:
            raise GraphError("label id outside the embedding table")
        return table[ids]

    def equals(self, other: "StrategyGraph") -> bool:
        return (
            self.nodes == other.nodes
            and np.array_equal(self.edge_src, other.edge_src)
            and np.array_equal(self.edge_dst, other.edge_dst)
        )


def _check_labels(labels, n_labels: int | None):
    for lab in labels:
        if lab < 0 or (n_labels is not None and lab >= n_labels):
            raise GraphError(f"label id {lab} outside vocabulary of size {n_labels}")


def build_graph(turn_label_sets, n_labels: int | None = None) -> StrategyGraph:
    """Batch construction from per-turn label-id sets. Node order is turn order
    with labels sorted inside a turn, so insertion order never matters."""
    g = StrategyGraph(n_labels=n_labels)
    for labels in turn_label_sets:
        g = extend_graph(g, labels)
    return g


def extend_graph(graph: StrategyGraph, new_turn_labels) -> StrategyGraph:
    """Append one turn. The result is structurally identical to rebuilding from
    the concatenated turn list."""
    labels = sorted(set(new_turn_labels))
    _check_labels(labels, graph.n_labels)
    turn = graph.turns_seen
    if not labels:
        return StrategyGraph(graph.nodes, graph.edge_src, graph.edge_dst,
                             graph.n_labels, turn + 1)
    n_old = graph.num_nodes
    new_nodes = graph.nodes + [(turn, lab) for lab in labels]
    k = len(labels)
    if n_old:
        src = np.repeat(np.arange(n_old, dtype=np.intp), k)
        dst = np.tile(np.arange(n_old, n_old + k, dtype=np.intp), n_old)
        edge_src = np.concatenate([graph.edge_src, src])
        edge_dst = np.concatenate([graph.edge_dst, dst])
    else:
        edge_src, edge_dst = graph.edge_src, graph.edge_dst
    return StrategyGraph(new_nodes, edge_src, edge_dst, graph.n_labels, turn + 1)


def build_da_graph(dialogue_act_sequence, n_labels: int | None = None) -> StrategyGraph:
    """Same construction with exactly one label per turn."""
    return build_graph([[a] for a in dialogue_act_sequence], n_labels=n_labels)


def graph_to_json(graph: StrategyGraph, vocab) -> str:
    """Debug dump consumed by the UI and oracle tests."""
    payload = {
        "nodes": [{"turn": int(t), "label": vocab.label(lab)} for t, lab in graph.nodes],
        "edges": [[int(s), int(d)] for s, d in zip(graph.edge_src, graph.edge_dst)],
    }
    return json.dumps(payload, sort_keys=True)


def graph_from_json(text: str, vocab) -> StrategyGraph:
    payload = json.loads(text)
    nodes = [(n["turn"], vocab.id(n["label"])) for n in payload["nodes"]]
    edges = payload["edges"]
    src = np.array([e[0] for e in edges], dtype=np.intp)
    dst = np.array([e[1] for e in edges], dtype=np.intp)
    turns = 0 if not nodes else max(t for t, _ in nodes) + 1
    return StrategyGraph(nodes, src, dst, n_labels=len(vocab), turns_seen=turns)
