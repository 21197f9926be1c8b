import random

import pytest
from hypothesis import given, strategies as st

from walknet.distance import DistanceRecord
from walknet.geo import Wgs84Point
from walknet.graph import (
    BipartiteGraph,
    GraphError,
    build_graph,
    cell_poi_density,
    edge_weight,
    graph_stats,
    poi_poi_shared_cells,
    read_edge_list,
    read_gexf,
    write_edge_list,
    write_gexf,
)
from walknet.ingest import CellAccumulation

LOC = Wgs84Point(36.3, 127.4)


class TestEdgeWeight:
    def test_worked_example(self):
        assert edge_weight(10, 200, 1000) == 8.0

    def test_boundaries(self):
        assert edge_weight(5, 1000, 1000) == 0.0
        assert edge_weight(5, 0, 1000) == 5.0

    def test_hand_substitution(self):
        assert edge_weight(7, 350, 1000) == pytest.approx(4.55)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            edge_weight(5, 1001, 1000)
        with pytest.raises(ValueError):
            edge_weight(5, -1, 1000)
        with pytest.raises(ValueError):
            edge_weight(5, 10, 0)
        with pytest.raises(ValueError):
            edge_weight(-1, 10, 1000)

    @given(
        n_v=st.integers(0, 10_000),
        d=st.floats(0, 1000),
        d_max=st.just(1000.0),
    )
    def test_bounds(self, n_v, d, d_max):
        w = edge_weight(n_v, d, d_max)
        assert 0 <= w <= n_v

    @given(
        n_v=st.integers(1, 10_000),
        d1=st.floats(0, 999),
        delta=st.floats(0.001, 1),
    )
    def test_strictly_decreasing_in_distance(self, n_v, d1, delta):
        d2 = min(d1 + delta, 1000.0)
        if d2 > d1:
            assert edge_weight(n_v, d2, 1000.0) < edge_weight(n_v, d1, 1000.0)

    @given(n_v=st.integers(0, 10_000), d=st.floats(0, 999))
    def test_strictly_increasing_in_visitors(self, n_v, d):
        assert edge_weight(n_v + 1, d, 1000.0) > edge_weight(n_v, d, 1000.0)


def cells_for(n_v_by_id):
    return [CellAccumulation(cid, LOC, n) for cid, n in n_v_by_id.items()]


class TestBuildGraph:
    def test_single_record(self):
        g = build_graph([DistanceRecord("p1", "c1", 450.0, 500.0)],
                        cells_for({"c1": 4}), 1000.0)
        assert g.edges == [("p1", "c1", 2.0)]

    def test_cell_without_record_absent(self):
        g = build_graph([DistanceRecord("p1", "c1", 100.0, 100.0)],
                        cells_for({"c1": 4, "c2": 9}), 1000.0)
        assert g.cell_nodes == ["c1"]

    def test_unknown_cell_fatal(self):
        with pytest.raises(GraphError, match="c9"):
            build_graph([DistanceRecord("p1", "c9", 100.0, 100.0)],
                        cells_for({"c1": 4}), 1000.0)

    def test_weights_match_recompute_oracle(self):
        rng = random.Random(6)
        n_v = {f"c{i}": rng.randint(1, 50) for i in range(30)}
        records = [DistanceRecord(f"p{j}", f"c{i}", 0.0, rng.uniform(0, 1000))
                   for j in range(8) for i in rng.sample(range(30), 10)]
        g = build_graph(records, cells_for(n_v), 1000.0)
        by_pair = {(r.poi_id, r.cell_id): r for r in records}
        for poi_id, cell_id, w in g.edges:
            r = by_pair[(poi_id, cell_id)]
            assert w == pytest.approx(
                n_v[cell_id] * (1 - r.walking_m / 1000.0), abs=1e-12)

    def test_zero_weight_edge_retained(self):
        g = build_graph([DistanceRecord("p1", "c1", 900.0, 1000.0)],
                        cells_for({"c1": 4}), 1000.0)
        assert g.edges[0][2] == 0.0
        assert g.degree("p1") == 1


class TestBipartiteInvariants:
    def test_bipartiteness_enforced(self):
        with pytest.raises(GraphError):
            BipartiteGraph([("x", "c1", 1.0), ("p1", "x", 1.0)])

    def test_duplicate_edge_rejected(self):
        with pytest.raises(GraphError):
            BipartiteGraph([("p1", "c1", 1.0), ("p1", "c1", 2.0)])

    def test_invalid_weight_rejected(self):
        with pytest.raises(GraphError):
            BipartiteGraph([("p1", "c1", -1.0)])
        with pytest.raises(GraphError):
            BipartiteGraph([("p1", "c1", float("nan"))])

    def test_handshake_identity(self):
        rng = random.Random(8)
        edges = [(f"p{j}", f"c{i}", rng.uniform(0, 100))
                 for j in range(10) for i in rng.sample(range(40), 12)]
        g = BipartiteGraph(edges)
        total = sum(g.weighted_degree(n) for n in g.nodes)
        assert total == pytest.approx(2 * g.total_weight(), rel=1e-9)


class TestGraphStats:
    def test_average_degree(self):
        g = BipartiteGraph([("p1", "c1", 1.0), ("p1", "c2", 1.0),
                            ("p2", "c2", 1.0), ("p2", "c3", 1.0)])
        stats = graph_stats(g)
        assert stats.node_count == 5
        assert stats.average_degree == pytest.approx(1.6)

    def test_single_edge_weighted_degree(self):
        g = BipartiteGraph([("p1", "c1", 3.5)])
        assert g.weighted_degree("p1") == 3.5
        assert g.weighted_degree("c1") == 3.5

    def test_empty_graph_error(self):
        with pytest.raises(GraphError):
            graph_stats(BipartiteGraph([]))

    def test_matches_naive_recount(self):
        rng = random.Random(12)
        edges = [(f"p{j}", f"c{i}", rng.uniform(0, 10))
                 for j in range(12) for i in rng.sample(range(38), 8)]
        g = BipartiteGraph(edges)
        stats = graph_stats(g)
        # independent recount straight off the edge list
        nodes = {e[0] for e in edges} | {e[1] for e in edges}
        assert stats.node_count == len(nodes)
        assert stats.edge_count == len(edges)
        assert stats.average_degree == pytest.approx(2 * len(edges) / len(nodes))
        assert stats.average_weighted_degree == pytest.approx(
            2 * sum(e[2] for e in edges) / len(nodes))


class TestSharedCellsAndDensity:
    def test_identical_neighborhoods(self):
        edges = [("p1", c, 1.0) for c in ("c1", "c2", "c3")]
        edges += [("p2", c, 1.0) for c in ("c1", "c2", "c3")]
        shared = poi_poi_shared_cells(BipartiteGraph(edges))
        assert shared == [("p1", "p2", 3)]

    def test_disjoint_neighborhoods_omitted(self):
        g = BipartiteGraph([("p1", "c1", 1.0), ("p2", "c2", 1.0)])
        assert poi_poi_shared_cells(g) == []

    def test_matches_set_intersection_oracle(self):
        rng = random.Random(20)
        edges = {(f"p{j}", f"c{i}") for j in range(10)
                 for i in rng.sample(range(25), 8)}
        g = BipartiteGraph([(a, b, 1.0) for a, b in edges])
        nbrs = {p: {c for (pp, c) in edges if pp == p} for p in g.poi_nodes}
        expected = {}
        pois = sorted(nbrs)
        for i, a in enumerate(pois):
            for b in pois[i + 1:]:
                n = len(nbrs[a] & nbrs[b])
                if n:
                    expected[(a, b)] = n
        assert {(a, b): n for a, b, n in poi_poi_shared_cells(g)} == expected

    def test_density_normalization(self):
        edges = [("p1", "c1", 1.0)]
        edges += [(f"p{i}", "c2", 1.0) for i in range(1, 3)]
        edges += [(f"p{i}", "c3", 1.0) for i in range(1, 5)]
        density = cell_poi_density(BipartiteGraph(edges))
        assert density == {"c1": 0.25, "c2": 0.5, "c3": 1.0}

    def test_equal_links_all_one(self):
        g = BipartiteGraph([("p1", "c1", 1.0), ("p2", "c2", 1.0)])
        assert cell_poi_density(g) == {"c1": 1.0, "c2": 1.0}


class TestExportImport:
    def make_graph(self):
        rng = random.Random(14)
        edges = [(f"p{j}", f"c{i}", rng.uniform(0, 12.3456789))
                 for j in range(6) for i in rng.sample(range(20), 5)]
        return BipartiteGraph(edges)

    def test_edge_list_round_trip(self, tmp_path):
        g = self.make_graph()
        write_edge_list(g, tmp_path / "edges.csv")
        g2 = read_edge_list(tmp_path / "edges.csv")
        assert sorted(g.edges) == sorted(g2.edges)

    def test_gexf_round_trip(self, tmp_path):
        g = self.make_graph()
        attrs = {n: {"district": "Seo-Gu", "category": "park"}
                 for n in g.poi_nodes}
        attrs.update({n: {"n_v": str(i)} for i, n in enumerate(g.cell_nodes)})
        write_gexf(g, tmp_path / "graph.gexf", attrs)
        g2, attrs2 = read_gexf(tmp_path / "graph.gexf")
        assert sorted(g.edges) == sorted(g2.edges)
        assert attrs2 == attrs
        assert g2.poi_nodes == g.poi_nodes
        assert g2.cell_nodes == g.cell_nodes
