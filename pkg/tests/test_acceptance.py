"""End-to-end acceptance checks. Each test covers one release criterion and
prints a single PASS/FAIL line; run with `pytest -v -s tests/test_acceptance.py`
to see them all."""

import filecmp
import functools
import math
import random
import time
from collections import Counter
from datetime import date, datetime

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from walknet import analysis, community, distance, graph, ingest, synth
from walknet.cli import main as cli_main
from walknet.geo import EARTH_RADIUS_M, Wgs84Point, haversine_m
from walknet.graph import BipartiteGraph, edge_weight

D_MAX = 1000.0
M_PER_DEG = math.pi * EARTH_RADIUS_M / 180.0


def criterion(label):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\n[{label}] FAIL")
                raise
            print(f"\n[{label}] PASS")
        return wrapper
    return deco


def offset(base: Wgs84Point, east_m: float, north_m: float) -> Wgs84Point:
    return Wgs84Point(
        base.lat + north_m / M_PER_DEG,
        base.lon + east_m / (M_PER_DEG * math.cos(math.radians(base.lat))))


def random_bipartite(rng, n_pois, n_cells):
    edges = {}
    for j in range(n_cells):
        edges[(f"p{j % n_pois}", f"c{j}")] = rng.uniform(0.5, 10.0)
    for i in range(n_pois):
        for j in range(n_cells):
            if rng.random() < 0.4:
                edges.setdefault((f"p{i}", f"c{j}"), rng.uniform(0.5, 10.0))
    return BipartiteGraph([(a, b, w) for (a, b), w in edges.items()])


@criterion("criterion 1: edge-weight formula exactness and monotonicity")
def test_criterion_01_edge_weight():
    t0 = time.monotonic()
    assert edge_weight(10, 200, 1000) == 8.0
    rng = random.Random(101)
    for _ in range(10_000):
        n_v = rng.randint(0, 5_000)
        d = rng.uniform(0.0, 999.0)
        w = edge_weight(n_v, d, D_MAX)
        assert 0.0 <= w <= n_v
        assert edge_weight(n_v, d + 0.5, D_MAX) < w or n_v == 0
        if n_v == 0:
            assert w == 0.0
        assert edge_weight(n_v + 1, d, D_MAX) > w
    assert time.monotonic() - t0 < 1.0


def modularity_double_sum(g, partition, gamma=1.0):
    adj = {}
    for a, b, w in g.edges:
        adj[(a, b)] = adj.get((a, b), 0.0) + w
        adj[(b, a)] = adj.get((b, a), 0.0) + w
    k = {n: g.weighted_degree(n) for n in g.nodes}
    two_m = sum(k.values())
    q = 0.0
    for i in g.nodes:
        for j in g.nodes:
            if partition.assignment[i] == partition.assignment[j]:
                q += adj.get((i, j), 0.0) - gamma * k[i] * k[j] / two_m
    return q / two_m


@criterion("criterion 2: modularity matches the double-sum oracle")
def test_criterion_02_modularity_oracle():
    t0 = time.monotonic()
    rng = random.Random(102)
    for trial in range(50):
        g = random_bipartite(rng, rng.randint(2, 3), rng.randint(3, 5))
        assignment = {n: rng.randint(0, 3) for n in g.nodes}
        p = community.Partition(assignment, resolution=1.0, seed=0)
        assert community.modularity(g, p, 1.0) == pytest.approx(
            modularity_double_sum(g, p), abs=1e-12)
        single = community.Partition({n: 0 for n in g.nodes}, 1.0, 0)
        assert abs(community.modularity(g, single, 1.0)) <= 1e-12
    assert time.monotonic() - t0 < 10.0


def set_partitions(items):
    if not items:
        yield []
        return
    head = items[0]
    for part in set_partitions(items[1:]):
        for i in range(len(part)):
            yield part[:i] + [part[i] + [head]] + part[i + 1:]
        yield [[head]] + part


def exhaustive_max_modularity(g):
    best = -math.inf
    for blocks in set_partitions(list(g.nodes)):
        assignment = {n: i for i, block in enumerate(blocks) for n in block}
        p = community.Partition(assignment, 1.0, 0)
        best = max(best, community.modularity(g, p, 1.0))
    return best


@criterion("criterion 3: detection quality vs exhaustive optimum")
def test_criterion_03_louvain_quality():
    t0 = time.monotonic()
    rng = random.Random(103)
    for trial in range(20):
        g = random_bipartite(rng, rng.randint(2, 4), rng.randint(3, 6))
        assert g.node_count() <= 10
        part, trace = community.louvain_with_trace(g, 1.0, seed=trial)
        q = community.modularity(g, part, 1.0)
        assert trace[-1] == pytest.approx(q, abs=1e-9)
        best = exhaustive_max_modularity(g)
        if best > 0:
            assert q >= 0.95 * best
    assert time.monotonic() - t0 < 120.0


def run_detection(plan, cache_path, resolution, seed=0):
    data = synth.generate_city(plan)
    window = ingest.TimeWindow(datetime(2021, 11, 1), datetime(2021, 11, 30))
    cells = ingest.accumulate_cells(data.snapshots, window)
    pairs = distance.prefilter_pairs(data.pois, cells, D_MAX)
    provider = distance.RoadGraphProvider(
        data.road_graph, cutoff_m=D_MAX + 2 * distance.SNAP_MAX_M)
    with distance.DistanceCache(cache_path) as cache:
        records, _ = distance.resolve_distances(
            pairs, provider, cache, D_MAX,
            {p.poi_id: p.location for p in data.pois},
            {c.cell_id: c.location for c in cells})
    g = graph.build_graph(records, cells, D_MAX)
    part = community.louvain(g, resolution, seed)
    return data, g, part


@criterion("criterion 4: planted-district recovery and leading filter")
def test_criterion_04_planted_recovery(tmp_path):
    t0 = time.monotonic()
    gamma = community.gamma_from_gephi_resolution(1.0)
    hits = 0
    for seed in range(10):
        data, g, part = run_detection(
            synth.recovery_plan(seed), tmp_path / f"cache_{seed}.csv", gamma)
        truth = [data.ground_truth[n] for n in g.nodes]
        found = [part.assignment[n] for n in g.nodes]
        if adjusted_rand_score(truth, found) >= 0.9:
            hits += 1
    assert hits >= 9

    # on the full-size default plan the leading filter must recover the
    # planted districts exactly
    data, g, part = run_detection(
        synth.CityPlan(seed=0), tmp_path / "cache_default.csv", gamma)
    leading, _ = community.filter_leading(part, g)
    labels = set(data.ground_truth[n] for n in g.nodes)
    assert len(leading) == len(labels)
    majority = set()
    for c in leading:
        members = [n for n in g.nodes if part.assignment[n] == c]
        majority.add(Counter(data.ground_truth[n] for n in members)
                     .most_common(1)[0][0])
    assert majority == labels
    assert time.monotonic() - t0 < 300.0


@criterion("criterion 5: prefilter equals brute force; nothing walkable lost")
def test_criterion_05_prefilter_soundness(tmp_path):
    t0 = time.monotonic()
    rng = random.Random(105)
    base = Wgs84Point(36.30, 127.30)
    cells = [ingest.CellAccumulation(
        f"c{i}", offset(base, rng.uniform(0, 5_000), rng.uniform(0, 5_000)), 1)
        for i in range(5_000)]
    pois = [ingest.Poi(f"p{i}", f"poi {i}", "addr",
                       offset(base, rng.uniform(0, 5_000), rng.uniform(0, 5_000)),
                       "park", "synth", False)
            for i in range(200)]
    got = {(p.poi_id, p.cell_id)
           for p in distance.prefilter_pairs(pois, cells, D_MAX)}
    cell_loc = {c.cell_id: c.location for c in cells}
    brute = {(p.poi_id, c.cell_id) for p in pois for c in cells
             if haversine_m(p.location, cell_loc[c.cell_id]) <= D_MAX}
    assert got == brute

    # road-graph completeness: every pair walkable within budget survives
    plan = synth.CityPlan(
        seed=5, rows=30, cols=30,
        district_offsets_m=[(1100.0, 1100.0), (400.0, 400.0)],
        district_labels=["east", "west"], pois_per_district=5,
        poi_scatter_m=100.0, coverage_m=500.0)
    data = synth.generate_city(plan)
    window = ingest.TimeWindow(datetime(2021, 11, 1), datetime(2021, 11, 30))
    city_cells = ingest.accumulate_cells(data.snapshots, window)
    provider = distance.RoadGraphProvider(data.road_graph)
    poi_loc = {p.poi_id: p.location for p in data.pois}
    loc = {c.cell_id: c.location for c in city_cells}
    all_pairs = [distance.CandidatePair(p.poi_id, c.cell_id,
                                        haversine_m(p.location, loc[c.cell_id]))
                 for p in data.pois for c in city_cells]
    with distance.DistanceCache(tmp_path / "oracle_cache.csv") as cache:
        oracle_records, _ = distance.resolve_distances(
            all_pairs, provider, cache, D_MAX, poi_loc, loc)
    pre = distance.prefilter_pairs(data.pois, city_cells, D_MAX)
    with distance.DistanceCache(tmp_path / "pre_cache.csv") as cache:
        pre_records, _ = distance.resolve_distances(
            pre, provider, cache, D_MAX, poi_loc, loc)
    assert {(r.poi_id, r.cell_id) for r in oracle_records} <= \
        {(r.poi_id, r.cell_id) for r in pre_records}
    assert time.monotonic() - t0 < 60.0


def floyd_warshall(nodes, edges):
    dist = {(a, b): math.inf for a in nodes for b in nodes}
    for n in nodes:
        dist[(n, n)] = 0.0
    for a, b, w in edges:
        dist[(a, b)] = min(dist[(a, b)], w)
        dist[(b, a)] = min(dist[(b, a)], w)
    for k in nodes:
        for i in nodes:
            for j in nodes:
                alt = dist[(i, k)] + dist[(k, j)]
                if alt < dist[(i, j)]:
                    dist[(i, j)] = alt
    return dist


class CountingProvider:
    def __init__(self, inner):
        self.inner = inner
        self.provider_id = inner.provider_id
        self.calls = 0

    def walking_m(self, origin, dest):
        self.calls += 1
        return self.inner.walking_m(origin, dest)


@criterion("criterion 6: road distances match all-pairs oracle; cache rerun")
def test_criterion_06_distance_oracle(tmp_path):
    rng = random.Random(106)
    base = Wgs84Point(36.30, 127.30)
    nodes = {}
    for r in range(4):
        for c in range(5):
            nodes[f"n{r}_{c}"] = offset(base, c * 220.0, r * 220.0)
    edges = []
    for r in range(4):
        for c in range(5):
            if c + 1 < 5:
                edges.append((f"n{r}_{c}", f"n{r}_{c + 1}",
                              haversine_m(nodes[f"n{r}_{c}"],
                                          nodes[f"n{r}_{c + 1}"])))
            if r + 1 < 4:
                edges.append((f"n{r}_{c}", f"n{r + 1}_{c}",
                              haversine_m(nodes[f"n{r}_{c}"],
                                          nodes[f"n{r + 1}_{c}"])))
    road = distance.RoadGraph(nodes, edges)
    provider = distance.RoadGraphProvider(road)
    oracle = floyd_warshall(list(nodes), edges)
    names = sorted(nodes)
    for a in names:
        for b in names:
            got = provider.walking_m(nodes[a], nodes[b])
            want = oracle[(a, b)]
            assert got == pytest.approx(want, rel=1e-6, abs=1e-6)

    # identical rerun against a warm cache makes zero provider calls
    pois = [ingest.Poi(a, a, "addr", nodes[a], "park", "synth", False)
            for a in names[:5]]
    cells = [ingest.CellAccumulation(f"cell_{b}", nodes[b], 1)
             for b in names[5:]]
    pairs = distance.prefilter_pairs(pois, cells, D_MAX)
    poi_loc = {p.poi_id: p.location for p in pois}
    cell_loc = {c.cell_id: c.location for c in cells}
    counting = CountingProvider(provider)
    with distance.DistanceCache(tmp_path / "cache.csv") as cache:
        first, _ = distance.resolve_distances(
            pairs, counting, cache, D_MAX, poi_loc, cell_loc)
    assert counting.calls == len(pairs)
    counting.calls = 0
    with distance.DistanceCache(tmp_path / "cache.csv") as cache:
        second, summary = distance.resolve_distances(
            pairs, counting, cache, D_MAX, poi_loc, cell_loc)
    assert counting.calls == 0
    assert summary.provider_calls == 0
    assert second == first


@criterion("criterion 7: centrality matches dense eigendecomposition")
def test_criterion_07_centrality_oracle():
    rng = random.Random(107)
    for trial in range(5):
        g = random_bipartite(rng, 8, 12)
        assert g.node_count() == 20
        cent = analysis.eigenvector_centrality(g, tol=1e-13, max_iter=50_000)
        nodes = g.nodes
        idx = {n: i for i, n in enumerate(nodes)}
        a = np.zeros((20, 20))
        for u, v, w in g.edges:
            a[idx[u], idx[v]] += w
            a[idx[v], idx[u]] += w
        vals, vecs = np.linalg.eigh(a)
        lead = np.abs(vecs[:, np.argmax(vals)])
        lead /= lead.max()
        for n in nodes:
            assert cent[n] == pytest.approx(lead[idx[n]], abs=1e-6)
        assert sum(1 for v in cent.values() if v > 1.0 - 1e-9) == 1
        assert max(cent.values()) == pytest.approx(1.0, abs=1e-12)


@criterion("criterion 8: temporal means and slice ratios")
def test_criterion_08_temporal_arithmetic():
    # 91,404 cells totalling 7,631,404 visitors -> mean 83.49
    total_cells, total_visitors = 91_404, 7_631_404
    base, extra = divmod(total_visitors, total_cells)
    ts = datetime(2021, 11, 3, 12)
    loc = Wgs84Point(36.3, 127.4)
    snaps = [ingest.VisitorSnapshot(f"c{i}", ts, base + (1 if i < extra else 0),
                                    loc)
             for i in range(total_cells)]
    (stats,) = analysis.temporal_slices(snaps, [(date(2021, 11, 3), None)])
    assert stats.cell_count == total_cells
    assert stats.visitor_sum == total_visitors
    assert f"{stats.visitor_mean:.2f}" == "83.49"

    weekday = analysis.TemporalSliceStats("weekday", total_cells,
                                          total_visitors,
                                          total_visitors / total_cells, 6_154)
    weekend = analysis.TemporalSliceStats("weekend", 85_245, 8_746_376,
                                          8_746_376 / 85_245, 10_610)
    cmp = analysis.slice_compare(weekday, weekend)
    assert f"{cmp.sum_ratio:.2f}" == "1.15"
    assert f"{cmp.max_ratio:.2f}" == "1.72"


@criterion("criterion 9: repeated runs are byte-identical")
def test_criterion_09_determinism(tmp_path):
    city = tmp_path / "city"
    synth.write_city(synth.generate_city(synth.CityPlan(
        seed=9, rows=30, cols=30,
        district_offsets_m=[(1100.0, 1100.0), (400.0, 400.0)],
        district_labels=["east", "west"], pois_per_district=5,
        poi_scatter_m=100.0, coverage_m=500.0)), city)
    argv_base = [
        "run", "--visitors", str(city / "visitors.csv"),
        "--pois", str(city / "pois.csv"),
        "--road-nodes", str(city / "road_nodes.csv"),
        "--road-edges", str(city / "road_edges.csv"),
        "--window-start", "20211103-00", "--window-end", "20211106-23",
        "--seed", "9", "--min-nodes", "10", "--min-share", "0.05",
    ]
    for sub in ("a", "b"):
        assert cli_main(argv_base + ["--outdir", str(tmp_path / sub)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        if name == "provenance.json":  # contains wall-clock stage timings
            continue
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                           shallow=False), name


@criterion("criterion 10: conservation of visitors, weight, and POIs")
def test_criterion_10_conservation():
    rng = random.Random(110)
    loc = Wgs84Point(36.3, 127.4)
    snaps = [ingest.VisitorSnapshot(f"c{rng.randint(0, 60)}",
                                    datetime(2021, 11, 3, rng.randint(0, 23)),
                                    rng.randint(1, 40), loc)
             for _ in range(3_000)]
    window = ingest.TimeWindow(datetime(2021, 11, 3), datetime(2021, 11, 4))
    cells = ingest.accumulate_cells(snaps, window)
    assert sum(c.n_v for c in cells) == sum(s.visitors for s in snaps)

    g = random_bipartite(rng, 10, 30)
    total = sum(g.weighted_degree(n) for n in g.nodes)
    assert total == pytest.approx(2 * g.total_weight(), rel=1e-9)

    part = community.louvain(g, 1.0, 0)
    leading, _ = community.filter_leading(part, g, min_nodes=2, min_share=0.05)
    pois = [ingest.Poi(f"p{i}", f"p{i}", "addr", loc, "park", "synth", False)
            for i in range(12)]  # p10, p11 never appear in the graph
    scores = analysis.compute_poi_scores(g, part, leading, pois)
    buckets = analysis.poi_report_buckets(scores, g)
    placed = buckets["leading"] + buckets["residual"] + buckets["no_edge"]
    assert sorted(placed) == sorted(p.poi_id for p in pois)
