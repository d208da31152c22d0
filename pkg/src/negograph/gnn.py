"""Graph attention with hierarchical cluster pooling.

The structure encoder runs `l` stages of (GAT -> cluster pooling) over a
forward-directed label graph, reads out each pooled stage as [mean ‖ max],
sums the readouts and projects them through a small FC stack. Attention and
cluster-assignment matrices are captured per stage as the raw material for
interpretability reports.

Conventions fixed here (the underlying method leaves them open):
- attention is computed over in-neighborhoods (information flows from earlier
  turns to later ones) with self-loops added to every node;
- a single attention head, ELU on aggregated node features;
- one candidate cluster per node spanning its 1-hop in-neighborhood plus
  itself; fitness is a sigmoid of a linear score over the cluster feature and
  its mean difference from neighboring cluster features;
- cluster selection ties break toward the lower node id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .graphbuild import StrategyGraph
from .ndcore import Tensor


class GnnError(Exception):
    pass


@dataclass
class GatLayerParams:
    w: Tensor
    a_src: Tensor
    a_dst: Tensor
    slope: float = 0.2

    @staticmethod
    def create(seed: int, name: str, d_in: int, d_out: int) -> "GatLayerParams":
        # attention vectors start at unit scale: near-equal logits make the
        # softmax uniform and leave the attention path without usable gradient
        return GatLayerParams(
            w=nd.param(seed, f"{name}/w", (d_in, d_out)),
            a_src=nd.param(seed, f"{name}/a_src", (d_out,), scale=1.0),
            a_dst=nd.param(seed, f"{name}/a_dst", (d_out,), scale=1.0),
        )

    def tensors(self) -> list[Tensor]:
        return [self.w, self.a_src, self.a_dst]


@dataclass
class AsapParams:
    ratio: float
    att_center: Tensor
    att_member: Tensor
    fit_self: Tensor
    fit_diff: Tensor
    fit_bias: Tensor
    slope: float = 0.2

    @staticmethod
    def create(seed: int, name: str, d: int, ratio: float) -> "AsapParams":
        if not 0 < ratio <= 1:
            raise GnnError(f"pooling ratio must be in (0, 1], got {ratio}")
        return AsapParams(
            ratio=ratio,
            att_center=nd.param(seed, f"{name}/att_center", (d,), scale=1.0),
            att_member=nd.param(seed, f"{name}/att_member", (d,), scale=1.0),
            fit_self=nd.param(seed, f"{name}/fit_self", (d,), scale=1.0),
            fit_diff=nd.param(seed, f"{name}/fit_diff", (d,), scale=1.0),
            fit_bias=nd.zeros_param(f"{name}/fit_bias", (1,)),
        )

    def tensors(self) -> list[Tensor]:
        return [self.att_center, self.att_member, self.fit_self, self.fit_diff, self.fit_bias]


@dataclass
class StageTrace:
    """What one (GAT -> pool) stage saw: node identities at stage input,
    dense masked attention, cluster assignment (rows = candidate clusters,
    columns = stage nodes, each row softmax over its members), kept cluster
    ids and fitness scores."""

    nodes: list[tuple[int, int]]
    alpha: np.ndarray
    in_mask: np.ndarray
    s_matrix: np.ndarray
    kept: list[int]
    fitness: np.ndarray

    def alpha_entries(self):
        """(src, dst, weight) triples for every attended edge, self-loops included."""
        dst_idx, src_idx = np.nonzero(self.in_mask)
        for i, j in zip(dst_idx, src_idx):
            yield int(j), int(i), float(self.alpha[i, j])


@dataclass
class AttentionTrace:
    layers: list[StageTrace]

    @property
    def node_meta(self) -> list[tuple[int, int]]:
        return self.layers[0].nodes if self.layers else []


@dataclass
class StructureEncoding:
    h: Tensor
    trace: AttentionTrace


def gat_forward(x: Tensor, in_mask: np.ndarray, params: GatLayerParams) -> tuple[Tensor, Tensor]:
    """One attention layer. `in_mask[i, j]` marks j as part of i's attention
    neighborhood (j == i or forward edge j -> i). Returns updated features and
    the dense attention matrix (rows = destination)."""
    if not in_mask.any(axis=1).all():
        raise GnnError("node with empty in-neighborhood (self-loops missing?)")
    n = x.shape[0]
    hw = nd.matmul(x, params.w)
    s_src = nd.matmul(hw, params.a_src)
    s_dst = nd.matmul(hw, params.a_dst)
    logits = nd.leaky_relu(
        nd.add(nd.reshape(s_dst, (n, 1)), nd.reshape(s_src, (1, n))), params.slope
    )
    alpha = nd.softmax_masked(logits, in_mask, axis=1)
    out = nd.elu(nd.matmul(alpha, hw))
    return out, alpha


def asap_pool(x: Tensor, in_mask: np.ndarray, adjacency: np.ndarray, params: AsapParams):
    """Cluster-assignment pooling.

    Every node proposes a cluster over its in-neighborhood (incl. itself);
    membership weights come from a masked softmax of a local attention score,
    so each cluster row of S sums to 1. Clusters are ranked by a fitness score
    and the top ceil(ratio * N) survive; their members' weighted features,
    scaled by fitness, become the pooled node features. A pooled edge u -> v
    exists iff some member of u had a forward edge to some member of v.

    Returns (x_pooled, kept_ids, s_matrix, fitness, pooled_adjacency).
    """
    n = x.shape[0]
    if n < 1:
        raise GnnError("cannot pool an empty graph")
    logits = nd.leaky_relu(
        nd.add(
            nd.reshape(nd.matmul(x, params.att_center), (n, 1)),
            nd.reshape(nd.matmul(x, params.att_member), (1, n)),
        ),
        params.slope,
    )
    s = nd.softmax_masked(logits, in_mask, axis=1)
    xc = nd.matmul(s, x)
    deg = in_mask.sum(axis=1, keepdims=True).astype(np.float64)
    nbr_mean = nd.matmul(Tensor(in_mask / deg), xc)
    diff = nd.sub(xc, nbr_mean)
    fitness = nd.sigmoid(
        nd.add(nd.add(nd.matmul(xc, params.fit_self), nd.matmul(diff, params.fit_diff)), params.fit_bias)
    )
    k = math.ceil(params.ratio * n)
    ranked = np.lexsort((np.arange(n), -fitness.value))
    kept = sorted(int(i) for i in ranked[:k])
    scaled = nd.mul(xc, nd.reshape(fitness, (n, 1)))
    x_new = nd.embedding_lookup(scaled, kept)
    s_kept = s.value[kept]
    pooled = (s_kept @ adjacency @ s_kept.T) > 0
    np.fill_diagonal(pooled, False)
    return x_new, kept, s, fitness, pooled.astype(np.float64)


def readout(x: Tensor) -> Tensor:
    """[mean over nodes ‖ elementwise max over nodes], dimension 2d."""
    if x.shape[0] < 1:
        raise GnnError("readout of an empty graph")
    return nd.concat([nd.mean_reduce(x, axis=0), nd.max_reduce(x, axis=0)])


@dataclass
class StructureEncoderParams:
    """Embedding table, l (GAT, pool) stages and the post-readout FC stack."""

    embed: Tensor
    gat: list[GatLayerParams]
    asap: list[AsapParams]
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor

    @staticmethod
    def create(seed: int, name: str, n_labels: int, d: int, layers: int,
               ratio: float, fc_hidden: int = 64) -> "StructureEncoderParams":
        return StructureEncoderParams(
            embed=nd.param(seed, f"{name}/embed", (n_labels, d), scale=1.0),
            gat=[GatLayerParams.create(seed, f"{name}/gat{s}", d, d) for s in range(layers)],
            asap=[AsapParams.create(seed, f"{name}/asap{s}", d, ratio) for s in range(layers)],
            fc1_w=nd.param(seed, f"{name}/fc1_w", (2 * d, fc_hidden)),
            fc1_b=nd.zeros_param(f"{name}/fc1_b", (fc_hidden,)),
            fc2_w=nd.param(seed, f"{name}/fc2_w", (fc_hidden, 2 * d)),
            fc2_b=nd.zeros_param(f"{name}/fc2_b", (2 * d,)),
        )

    @property
    def layers(self) -> int:
        return len(self.gat)

    @property
    def out_dim(self) -> int:
        return self.fc2_w.shape[1]

    def tensors(self) -> list[Tensor]:
        out = [self.embed]
        for g in self.gat:
            out.extend(g.tensors())
        for a in self.asap:
            out.extend(a.tensors())
        out.extend([self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b])
        return out


def structure_encode(graph: StrategyGraph, params: StructureEncoderParams,
                     train: bool = False, dropout_rate: float = 0.0,
                     rng: np.random.Generator | None = None) -> StructureEncoding:
    """Encode a label graph into a fixed-size vector plus its attention trace."""
    if graph.num_nodes < 1:
        raise GnnError("cannot encode an empty graph")
    x = nd.embedding_lookup(params.embed, graph.label_ids)
    x = nd.dropout(x, dropout_rate, rng, train)
    in_mask = graph.in_mask_with_self_loops()
    adjacency = graph.adjacency()
    nodes = list(graph.nodes)
    readouts = []
    stages: list[StageTrace] = []
    for gat_p, asap_p in zip(params.gat, params.asap):
        x, alpha = gat_forward(x, in_mask, gat_p)
        x_pooled, kept, s, fitness, pooled_adj = asap_pool(x, in_mask, adjacency, asap_p)
        stages.append(StageTrace(
            nodes=nodes,
            alpha=alpha.value.copy(),
            in_mask=in_mask.copy(),
            s_matrix=s.value.copy(),
            kept=list(kept),
            fitness=fitness.value.copy(),
        ))
        readouts.append(readout(x_pooled))
        x = x_pooled
        adjacency = pooled_adj
        in_mask = (pooled_adj.T > 0) | np.eye(len(kept), dtype=bool)
        nodes = [nodes[i] for i in kept]
    summed = readouts[0]
    for r in readouts[1:]:
        summed = nd.add(summed, r)
    hidden = nd.tanh(nd.add(nd.matmul(summed, params.fc1_w), params.fc1_b))
    h = nd.add(nd.matmul(hidden, params.fc2_w), params.fc2_b)
    return StructureEncoding(h=h, trace=AttentionTrace(stages))


def _pooled_stage(x: Tensor, in_mask: np.ndarray, adjacency: np.ndarray,
                  nodes: list[tuple[int, int]], gat_p: GatLayerParams,
                  asap_p: AsapParams):
    """One (GAT -> pool) stage plus its trace; returns the pooled graph state."""
    x1, alpha = gat_forward(x, in_mask, gat_p)
    x_pooled, kept, s, fitness, pooled_adj = asap_pool(x1, in_mask, adjacency, asap_p)
    trace = StageTrace(nodes=nodes, alpha=alpha.value.copy(), in_mask=in_mask.copy(),
                       s_matrix=s.value.copy(), kept=list(kept), fitness=fitness.value.copy())
    new_mask = (pooled_adj.T > 0) | np.eye(len(kept), dtype=bool)
    new_nodes = [nodes[i] for i in kept]
    return x_pooled, new_mask, pooled_adj, new_nodes, trace


def encode_dialogue_prefixes(graph: StrategyGraph, params: StructureEncoderParams,
                             node_counts: list[int], train: bool = False,
                             dropout_rate: float = 0.0,
                             rng: np.random.Generator | None = None,
                             want_trace: bool = False) -> list[StructureEncoding]:
    """Encode every prefix of a dialogue in one pass, exactly equivalent to
    calling structure_encode on each prefix graph.

    Forward-directed edges make stage 1 causal: a node's attention
    neighborhood and candidate cluster only contain earlier turns, so GAT
    outputs, cluster features and fitness scores computed on the full graph
    are bitwise identical to any prefix's. Only cluster selection, the
    readout, and later stages depend on the prefix, so the dominant stage-1
    cost is paid once per dialogue instead of once per turn.

    `node_counts[p]` is the node count of prefix p (nondecreasing, last equal
    to the full graph). Prefixes with zero nodes are rejected.
    """
    n = graph.num_nodes
    if n < 1:
        raise GnnError("cannot encode an empty graph")
    if not node_counts or node_counts[-1] != n or any(c < 1 for c in node_counts):
        raise GnnError("node_counts must be positive and end at the full graph")
    cfg_layers = params.layers
    x = nd.embedding_lookup(params.embed, graph.label_ids)
    x = nd.dropout(x, dropout_rate, rng, train)
    in_mask = graph.in_mask_with_self_loops()
    adjacency = graph.adjacency()
    gat_p, asap_p = params.gat[0], params.asap[0]

    # shared stage-1 tensors over the full graph
    x1, alpha = gat_forward(x, in_mask, gat_p)
    logits = nd.leaky_relu(
        nd.add(
            nd.reshape(nd.matmul(x1, asap_p.att_center), (n, 1)),
            nd.reshape(nd.matmul(x1, asap_p.att_member), (1, n)),
        ),
        asap_p.slope,
    )
    s = nd.softmax_masked(logits, in_mask, axis=1)
    xc = nd.matmul(s, x1)
    deg = in_mask.sum(axis=1, keepdims=True).astype(np.float64)
    nbr_mean = nd.matmul(Tensor(in_mask / deg), xc)
    fitness = nd.sigmoid(nd.add(nd.add(
        nd.matmul(xc, asap_p.fit_self),
        nd.matmul(nd.sub(xc, nbr_mean), asap_p.fit_diff)), asap_p.fit_bias))
    scaled = nd.mul(xc, nd.reshape(fitness, (n, 1)))
    s_np = s.value

    out: list[StructureEncoding] = []
    for count in node_counts:
        k = math.ceil(asap_p.ratio * count)
        ranked = np.lexsort((np.arange(count), -fitness.value[:count]))
        kept = sorted(int(i) for i in ranked[:k])
        x_pooled = nd.embedding_lookup(scaled, kept)
        s_kept = s_np[kept][:, :count]
        sub_adj = adjacency[:count, :count]
        pooled_adj = (s_kept @ sub_adj @ s_kept.T) > 0
        np.fill_diagonal(pooled_adj, False)
        pooled_adj = pooled_adj.astype(np.float64)
        stages: list[StageTrace] = []
        if want_trace:
            stages.append(StageTrace(
                nodes=list(graph.nodes[:count]),
                alpha=alpha.value[:count, :count].copy(),
                in_mask=in_mask[:count, :count].copy(),
                s_matrix=s_np[:count, :count].copy(),
                kept=list(kept),
                fitness=fitness.value[:count].copy(),
            ))
        readouts = [readout(x_pooled)]
        xs = x_pooled
        mask_s = (pooled_adj.T > 0) | np.eye(len(kept), dtype=bool)
        adj_s = pooled_adj
        nodes_s = [graph.nodes[i] for i in kept]
        for stage_idx in range(1, cfg_layers):
            xs, mask_s, adj_s, nodes_s, st_trace = _pooled_stage(
                xs, mask_s, adj_s, nodes_s, params.gat[stage_idx], params.asap[stage_idx])
            if want_trace:
                stages.append(st_trace)
            readouts.append(readout(xs))
        summed = readouts[0]
        for r in readouts[1:]:
            summed = nd.add(summed, r)
        hidden = nd.tanh(nd.add(nd.matmul(summed, params.fc1_w), params.fc1_b))
        h = nd.add(nd.matmul(hidden, params.fc2_w), params.fc2_b)
        out.append(StructureEncoding(h=h, trace=AttentionTrace(stages)))
    return out


def trace_to_payload(trace: AttentionTrace, vocab) -> dict:
    """JSON-ready trace: stage-1 node identities plus per-layer attention and
    cluster structures. Consumed by the interpretability reports and the UI."""
    payload = {
        "nodes": [{"turn": int(t), "label": vocab.label(lab)} for t, lab in trace.node_meta],
        "layers": [],
    }
    for stage in trace.layers:
        payload["layers"].append({
            "alpha": [{"src": s, "dst": d, "w": w} for s, d, w in stage.alpha_entries()],
            "clusters": {
                "S": [[float(v) for v in row] for row in stage.s_matrix],
                "kept": [int(i) for i in stage.kept],
                "fitness": [float(f) for f in stage.fitness],
            },
        })
    return payload


def trace_to_json(trace: AttentionTrace, vocab) -> str:
    return json.dumps(trace_to_payload(trace, vocab), sort_keys=True)
