import math

import numpy as np
import pytest

from negograph import gnn
from negograph import graphbuild as G
from negograph import ndcore as nd
from negograph.ndcore import Tensor

RNG = np.random.default_rng(11)


def naive_gat_reference(z, in_mask, w, a_src, a_dst, slope=0.2):
    """Independent per-node reference: explicit python loops, no masking tricks."""
    n = z.shape[0]
    hw = z @ w
    out = np.zeros_like(hw)
    alpha = np.zeros((n, n))
    for i in range(n):
        nbrs = [j for j in range(n) if in_mask[i, j]]
        logits = []
        for j in nbrs:
            e = a_dst @ hw[i] + a_src @ hw[j]
            logits.append(e if e > 0 else slope * e)
        logits = np.array(logits)
        ex = np.exp(logits - logits.max())
        att = ex / ex.sum()
        agg = np.zeros(hw.shape[1])
        for j, a in zip(nbrs, att):
            alpha[i, j] = a
            agg += a * hw[j]
        out[i] = np.where(agg > 0, agg, np.exp(np.minimum(agg, 0)) - 1.0)
    return out, alpha


class TestGatForward:
    def test_single_node_self_loop(self):
        d = 4
        p = gnn.GatLayerParams.create(0, "gat", d, d)
        z = Tensor(RNG.normal(size=(1, d)))
        out, alpha = gnn.gat_forward(z, np.ones((1, 1), dtype=bool), p)
        assert alpha.value.tolist() == [[1.0]]
        expected = z.value @ p.w.value
        expected = np.where(expected > 0, expected, np.exp(np.minimum(expected, 0)) - 1)
        assert np.allclose(out.value, expected)

    def test_identical_features_symmetric_edges_split_evenly(self):
        d = 3
        p = gnn.GatLayerParams.create(1, "gat", d, d)
        z = Tensor(np.tile(RNG.normal(size=(1, d)), (2, 1)))
        mask = np.ones((2, 2), dtype=bool)
        _, alpha = gnn.gat_forward(z, mask, p)
        assert np.allclose(alpha.value, 0.5)

    def test_matches_naive_reference_on_random_dag(self):
        d = 5
        p = gnn.GatLayerParams.create(2, "gat", d, d)
        g = G.build_graph([[0, 1], [2], [3, 4], [5]])
        assert g.num_nodes == 6
        z = Tensor(RNG.normal(size=(6, d)))
        mask = g.in_mask_with_self_loops()
        out, alpha = gnn.gat_forward(z, mask, p)
        ref_out, ref_alpha = naive_gat_reference(z.value, mask, p.w.value, p.a_src.value, p.a_dst.value)
        assert np.allclose(out.value, ref_out, atol=1e-12)
        assert np.allclose(alpha.value, ref_alpha, atol=1e-12)
        sums = alpha.value.sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-9)
        assert ((alpha.value >= 0) & (alpha.value <= 1)).all()

    def test_empty_in_neighborhood_is_contract_violation(self):
        p = gnn.GatLayerParams.create(0, "gat", 3, 3)
        z = Tensor(RNG.normal(size=(2, 3)))
        mask = np.array([[True, False], [False, False]])
        with pytest.raises(gnn.GnnError):
            gnn.gat_forward(z, mask, p)


class TestAsapPool:
    def _setup(self, sets, seed=3, d=4, ratio=0.8):
        g = G.build_graph(sets)
        p = gnn.AsapParams.create(seed, "asap", d, ratio)
        x = Tensor(RNG.normal(size=(g.num_nodes, d)), requires_grad=True)
        return g, p, x

    def test_ratio_one_preserves_node_count(self):
        g, p, x = self._setup([[0, 1], [2], [3]], ratio=1.0)
        x_new, kept, s, fit, adj = gnn.asap_pool(x, g.in_mask_with_self_loops(), g.adjacency(), p)
        assert x_new.shape[0] == g.num_nodes
        assert kept == list(range(g.num_nodes))

    def test_five_nodes_ratio_08_keeps_four(self):
        g, p, x = self._setup([[0, 1], [2], [3, 4]], ratio=0.8)
        assert g.num_nodes == 5
        x_new, kept, *_ = gnn.asap_pool(x, g.in_mask_with_self_loops(), g.adjacency(), p)
        assert x_new.shape[0] == 4 == math.ceil(0.8 * 5)

    def test_s_rows_are_stochastic_over_members(self):
        g, p, x = self._setup([[0, 1], [2], [3, 4], [5]])
        mask = g.in_mask_with_self_loops()
        _, _, s, _, _ = gnn.asap_pool(x, mask, g.adjacency(), p)
        assert np.allclose(s.value.sum(axis=1), 1.0, atol=1e-9)
        assert (s.value[~mask] == 0).all()

    def test_two_components_never_connect(self):
        # two parallel turn-chains, no cross edges
        chain_a = G.build_graph([[0], [1], [2]])
        n = chain_a.num_nodes
        src = np.concatenate([chain_a.edge_src, chain_a.edge_src + n])
        dst = np.concatenate([chain_a.edge_dst, chain_a.edge_dst + n])
        nodes = chain_a.nodes + [(t, lab) for t, lab in chain_a.nodes]
        g = G.StrategyGraph(nodes, src, dst, turns_seen=3)
        mask = g.in_mask_with_self_loops()
        p = gnn.AsapParams.create(5, "asap", 4, 0.8)
        x = Tensor(RNG.normal(size=(2 * n, 4)))
        _, kept, s, _, pooled = gnn.asap_pool(x, mask, g.adjacency(), p)
        comp = np.array([0] * n + [1] * n)[kept]
        for u in range(len(kept)):
            for v in range(len(kept)):
                if pooled[u, v] > 0:
                    assert comp[u] == comp[v]

    def test_single_node_pools_to_single_node(self):
        g, p, x = self._setup([[0]])
        x_new, kept, *_ = gnn.asap_pool(x, g.in_mask_with_self_loops(), g.adjacency(), p)
        assert x_new.shape[0] == 1 and kept == [0]

    def test_fitness_ties_break_toward_lower_id(self):
        g = G.build_graph([[0], [0]])  # same label twice
        p = gnn.AsapParams.create(0, "asap", 3, 0.5)
        # identical rows force identical fitness; ceil(0.5 * 2) = 1 cluster kept
        x = Tensor(np.tile(RNG.normal(size=(1, 3)), (2, 1)))
        mask = np.eye(2, dtype=bool)  # isolate nodes so scores match exactly
        _, kept, *_ = gnn.asap_pool(x, mask, np.zeros((2, 2)), p)
        assert kept == [0]


class TestReadout:
    def test_single_node_duplicates(self):
        z = RNG.normal(size=(1, 4))
        out = gnn.readout(Tensor(z))
        assert np.allclose(out.value, np.concatenate([z[0], z[0]]))

    def test_hand_example(self):
        out = gnn.readout(Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])))
        assert out.value.tolist() == [0.5, 0.5, 1.0, 1.0]

    def test_dimension_is_2d(self):
        for n in (1, 3, 9):
            out = gnn.readout(Tensor(RNG.normal(size=(n, 6))))
            assert out.shape == (12,)


def encoder(seed=0, n_labels=8, d=4, layers=2, ratio=0.8):
    return gnn.StructureEncoderParams.create(seed, "enc", n_labels, d, layers, ratio, fc_hidden=5)


class TestStructureEncode:
    def test_degenerate_pooling_still_finite(self):
        params = encoder(layers=2, ratio=0.5)
        g = G.build_graph([[0], [1]], n_labels=8)  # stage sizes 2 -> 1 -> 1
        enc = gnn.structure_encode(g, params)
        assert np.isfinite(enc.h.value).all()
        assert enc.h.shape == (8,)

    def test_stage_node_counts_follow_ceil_rule(self):
        params = encoder(layers=2, ratio=0.8)
        g = G.build_graph([[0, 1, 2], [3, 4], [5, 6]], n_labels=8)
        enc = gnn.structure_encode(g, params)
        n0 = g.num_nodes
        n1 = math.ceil(0.8 * n0)
        assert len(enc.trace.layers[0].kept) == n1
        assert len(enc.trace.layers[1].kept) == math.ceil(0.8 * n1)

    def test_insertion_order_within_turn_irrelevant(self):
        params = encoder()
        g1 = G.build_graph([[2, 0], [5, 3], [1]], n_labels=8)
        g2 = G.build_graph([[0, 2], [3, 5], [1]], n_labels=8)
        h1 = gnn.structure_encode(g1, params).h.value
        h2 = gnn.structure_encode(g2, params).h.value
        assert np.allclose(h1, h2, atol=1e-9)

    def test_empty_graph_rejected(self):
        with pytest.raises(gnn.GnnError):
            gnn.structure_encode(G.StrategyGraph(), encoder())

    def test_gradient_check(self):
        params = encoder(seed=4, d=3, layers=2, ratio=0.8)
        g = G.build_graph([[0, 1], [2], [3]], n_labels=8)
        probe = Tensor(RNG.normal(size=(6,)))

        def f():
            enc = gnn.structure_encode(g, params)
            return nd.sum_reduce(nd.mul(enc.h, probe))

        err = nd.grad_check(f, params.tensors())
        assert err < 1e-3

    def test_alpha_and_s_sums_across_stages(self):
        params = encoder(layers=2)
        g = G.build_graph([[0, 1], [2, 3], [4]], n_labels=8)
        enc = gnn.structure_encode(g, params)
        for stage in enc.trace.layers:
            live = stage.in_mask.any(axis=1)
            assert np.allclose(stage.alpha.sum(axis=1)[live], 1.0, atol=1e-6)
            assert np.allclose(stage.s_matrix.sum(axis=1)[live], 1.0, atol=1e-6)


class TestPrefixSharedEncoding:
    """encode_dialogue_prefixes must be numerically equivalent to encoding
    every prefix graph separately (forward edges make stage 1 causal)."""

    @pytest.mark.parametrize("layers", [1, 2])
    def test_matches_per_prefix_structure_encode(self, layers):
        params = encoder(seed=9, n_labels=10, d=4, layers=layers, ratio=0.8)
        sets = [[0, 1], [2], [3, 4, 5], [], [6, 1]]
        full = G.build_graph(sets, n_labels=10)
        counts = np.cumsum([len(set(s)) for s in sets]).tolist()
        shared = gnn.encode_dialogue_prefixes(full, params, counts, want_trace=True)
        for t in range(len(sets)):
            prefix = G.build_graph(sets[: t + 1], n_labels=10)
            single = gnn.structure_encode(prefix, params)
            assert np.allclose(shared[t].h.value, single.h.value, atol=1e-12), t
            st_shared = shared[t].trace.layers[0]
            st_single = single.trace.layers[0]
            assert st_shared.kept == st_single.kept
            assert np.allclose(st_shared.alpha, st_single.alpha, atol=1e-12)
            assert np.allclose(st_shared.s_matrix, st_single.s_matrix, atol=1e-12)
            assert st_shared.nodes == st_single.nodes

    def test_gradients_flow_through_shared_path(self):
        params = encoder(seed=2, n_labels=6, d=3, layers=2, ratio=0.8)
        g = G.build_graph([[0, 1], [2], [3]], n_labels=6)
        encs = gnn.encode_dialogue_prefixes(g, params, [2, 3, 4])
        total = nd.sum_reduce(nd.concat([e.h for e in encs]))
        total.backward()
        assert params.embed.grad is not None
        assert np.abs(params.embed.grad).sum() > 0

    def test_bad_node_counts_rejected(self):
        params = encoder()
        g = G.build_graph([[0], [1]], n_labels=8)
        with pytest.raises(gnn.GnnError):
            gnn.encode_dialogue_prefixes(g, params, [1])  # does not end at full graph
        with pytest.raises(gnn.GnnError):
            gnn.encode_dialogue_prefixes(g, params, [0, 2])


class TestTraceExport:
    def test_payload_schema(self):
        from negograph import corpus as C

        vocab = C.strategy_vocab()
        params = encoder(n_labels=len(vocab))
        g = G.build_graph([[0, 7], [19]], n_labels=len(vocab))
        enc = gnn.structure_encode(g, params)
        payload = gnn.trace_to_payload(enc.trace, vocab)
        assert {n["label"] for n in payload["nodes"]} == {"first_person_singular_count", "propose", "family"}
        assert len(payload["layers"]) == 2
        layer0 = payload["layers"][0]
        assert set(layer0["clusters"].keys()) == {"S", "kept", "fitness"}
        for entry in layer0["alpha"]:
            assert set(entry.keys()) == {"src", "dst", "w"}
        # self-loops are present in the attention entries
        assert any(e["src"] == e["dst"] for e in layer0["alpha"])
