import json

import pytest

from negograph import interpret as I


def payload(node_specs, alpha, s_matrix=None, kept=None):
    """node_specs: list of (turn, label); alpha: list of (src, dst, w)."""
    n = len(node_specs)
    return {
        "nodes": [{"turn": t, "label": lab} for t, lab in node_specs],
        "layers": [{
            "alpha": [{"src": s, "dst": d, "w": w} for s, d, w in alpha],
            "clusters": {
                "S": s_matrix if s_matrix is not None else [[0.0] * n for _ in range(n)],
                "kept": kept if kept is not None else [],
                "fitness": [0.5] * n,
            },
        }],
    }


class TestInfluenceMap:
    def test_min_max_formula(self):
        p = payload(
            [(0, "a"), (0, "b"), (1, "c"), (2, "d")],
            [(0, 3, 0.2), (1, 3, 0.5), (2, 3, 0.9), (3, 3, 0.1)],
        )
        imap = I.influence_map(p, 3)
        normalized = {e.source: e.normalized for e in imap.entries}
        assert normalized[0] == pytest.approx(0.0)
        assert normalized[1] == pytest.approx((0.5 - 0.2) / 0.7)
        assert normalized[1] == pytest.approx(0.4286, abs=1e-4)
        assert normalized[2] == pytest.approx(1.0)
        assert not imap.uninformative

    def test_self_loops_excluded(self):
        p = payload([(0, "a"), (1, "b")], [(0, 1, 0.3), (1, 1, 0.7)])
        imap = I.influence_map(p, 1)
        assert [e.source for e in imap.entries] == [0]

    def test_single_in_edge_maps_to_one(self):
        p = payload([(0, "a"), (1, "b")], [(0, 1, 0.123), (1, 1, 0.877)])
        imap = I.influence_map(p, 1)
        assert imap.entries[0].normalized == 1.0

    def test_all_equal_raw_values_flagged_uninformative(self):
        p = payload(
            [(0, "a"), (0, "b"), (1, "c")],
            [(0, 2, 0.25), (1, 2, 0.25), (2, 2, 0.5)],
        )
        imap = I.influence_map(p, 2)
        assert imap.uninformative
        assert all(e.normalized == 0.0 for e in imap.entries)

    def test_invariant_under_positive_affine_rescale(self):
        raw = [(0, 3, 0.2), (1, 3, 0.5), (2, 3, 0.9)]
        scaled = [(s, d, 10.0 * w + 3.0) for s, d, w in raw]
        nodes = [(0, "a"), (0, "b"), (1, "c"), (2, "d")]
        m1 = I.influence_map(payload(nodes, raw), 3)
        m2 = I.influence_map(payload(nodes, scaled), 3)
        for e1, e2 in zip(m1.entries, m2.entries):
            assert e1.normalized == pytest.approx(e2.normalized, abs=1e-12)

    def test_missing_node_is_lookup_error(self):
        p = payload([(0, "a")], [(0, 0, 1.0)])
        with pytest.raises(I.InterpretError):
            I.influence_map(p, 5)

    def test_json_export_is_deterministic(self):
        p = payload([(0, "a"), (1, "b")], [(0, 1, 0.4), (1, 1, 0.6)])
        a = I.influence_map_to_json(I.influence_map(p, 1))
        b = I.influence_map_to_json(I.influence_map(p, 1))
        assert a == b
        json.loads(a)  # valid JSON


class TestAssociationScores:
    def test_hand_built_two_member_cluster(self):
        s = [[0.6, 0.4], [0.0, 0.0]]
        p = payload([(0, "personal_concern"), (1, "politeness_please")],
                    [(0, 1, 0.5)], s_matrix=s, kept=[0])
        table = I.association_scores([p])
        assert table.score("personal_concern", "politeness_please") == pytest.approx(0.5)
        assert table.score("politeness_please", "personal_concern") == pytest.approx(0.5)

    def test_never_co_clustered_pair_absent(self):
        s = [[1.0, 0.0], [0.0, 1.0]]
        p = payload([(0, "propose"), (1, "family")], [(0, 1, 0.5)], s_matrix=s, kept=[0, 1])
        table = I.association_scores([p])
        assert table.score("propose", "family") is None

    def test_unkept_clusters_ignored(self):
        s = [[0.6, 0.4], [0.5, 0.5]]
        p = payload([(0, "propose"), (1, "family")], [(0, 1, 0.5)], s_matrix=s, kept=[])
        table = I.association_scores([p])
        assert table.score("propose", "family") is None

    def test_scores_symmetric_and_bounded(self):
        s = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.1, 0.8]]
        p = payload([(0, "propose"), (1, "family"), (2, "trade_in")],
                    [(0, 1, 0.5)], s_matrix=s, kept=[0, 1, 2])
        table = I.association_scores([p])
        for (a, b), v in table.scores.items():
            assert 0.0 <= v <= 1.0
            assert table.scores[(b, a)] == v

    def test_same_label_pairs_excluded(self):
        s = [[0.6, 0.4], [0.0, 0.0]]
        p = payload([(0, "propose"), (1, "propose")], [(0, 1, 0.5)], s_matrix=s, kept=[0])
        table = I.association_scores([p])
        assert table.scores == {}

    def test_empty_trace_set_rejected(self):
        with pytest.raises(I.InterpretError):
            I.association_scores([])

    def test_csv_export(self, tmp_path):
        s = [[0.6, 0.4], [0.0, 0.0]]
        p = payload([(0, "propose"), (1, "family")], [(0, 1, 0.5)], s_matrix=s, kept=[0])
        table = I.association_scores([p])
        out = tmp_path / "assoc.csv"
        table.to_csv(out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "strategy_a,strategy_b,score,observations"
        assert lines[1].startswith("family,propose,0.5")


class TestProposeBoundary:
    def test_no_propose_gives_empty_report(self):
        p = payload([(0, "family"), (1, "trade_in")], [(0, 1, 0.5)])
        report = I.propose_boundary_report([p])
        assert report.empty

    def test_hand_built_crossing_vs_non_crossing(self):
        nodes = [(0, "family"), (1, "propose"), (2, "trade_in")]
        alpha = [(0, 1, 0.4), (0, 2, 0.1), (1, 2, 0.9)]
        report = I.propose_boundary_report([payload(nodes, alpha)])
        assert not report.empty
        assert report.crossing_mean == pytest.approx(0.0)   # 0->2 crosses, normalized 0
        assert report.non_crossing_mean == pytest.approx(1.0)
        assert report.n_crossing == 1
        assert report.n_non_crossing == 2

    def test_purity_rerun_identical(self):
        nodes = [(0, "family"), (1, "propose"), (2, "trade_in")]
        alpha = [(0, 1, 0.4), (0, 2, 0.1), (1, 2, 0.9)]
        r1 = I.propose_boundary_report([payload(nodes, alpha)])
        r2 = I.propose_boundary_report([payload(nodes, alpha)])
        assert r1 == r2


class TestDot:
    def test_dot_contains_nodes_and_weighted_edges(self):
        p = payload([(0, "family"), (1, "propose")], [(0, 1, 0.8), (1, 1, 0.2)])
        dot = I.influence_to_dot(p)
        assert dot.startswith("digraph")
        assert 'label="u0:family"' in dot
        assert "n0 -> n1" in dot
        assert "penwidth" in dot
