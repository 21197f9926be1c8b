"""Resolution-parameterized Louvain community detection over the weighted
POI-cell network, generalized modularity scoring, and the leading-community
filter.

The native resolution parameter is the gamma of generalized modularity
(larger gamma -> smaller communities). Gephi-style resolutions, where
values above 1 grow communities, map through gamma = 1 / resolution.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from typing import Optional

from .graph import BipartiteGraph, GraphError

DEFAULT_MIN_NODES = 2000
DEFAULT_MIN_SHARE = 0.03
RESIDUAL_ID = -1

_TIE_EPS = 1e-12


@dataclass(frozen=True)
class Partition:
    """Node-to-community assignment with the parameters that produced it."""

    assignment: dict[str, int]
    resolution: float
    seed: int

    def communities(self) -> dict[int, list[str]]:
        groups: dict[int, list[str]] = {}
        for node, comm in self.assignment.items():
            groups.setdefault(comm, []).append(node)
        return groups


@dataclass(frozen=True)
class CommunityStats:
    community_id: Optional[int]  # None marks the residual bucket
    node_count: int
    edge_count: int
    internal_modularity: float
    average_weighted_degree: float
    share_of_network: float
    poi_count: int


def gamma_from_gephi_resolution(resolution: float) -> float:
    """Map a Gephi-style resolution (larger -> larger communities) onto
    the generalized-modularity gamma."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    return 1.0 / resolution


def _adjacency(g: BipartiteGraph) -> dict[str, dict[str, float]]:
    adj: dict[str, dict[str, float]] = {n: {} for n in g.nodes}
    for a, b, w in g.edges:
        adj[a][b] = adj[a].get(b, 0.0) + w
        adj[b][a] = adj[b].get(a, 0.0) + w
    return adj


def modularity(g: BipartiteGraph, p: Partition, gamma: float = 1.0) -> float:
    """Generalized weighted modularity Q(gamma) of a partition.

    Q = sum_c [ S_in_c / (2m) - gamma * (S_tot_c / (2m))^2 ] where S_in_c
    doubles intra-community edge weight and S_tot_c sums member weighted
    degrees. gamma = 1 is standard Newman-Girvan modularity.
    """
    if g.node_count() == 0:
        raise GraphError("empty graph")
    missing = [n for n in g.nodes if n not in p.assignment]
    if missing:
        raise ValueError(f"partition does not cover nodes {missing[:5]}")
    two_m = 2.0 * g.total_weight()
    if two_m == 0:
        raise GraphError("graph has zero total weight")
    s_in: dict[int, float] = {}
    s_tot: dict[int, float] = {}
    for a, b, w in g.edges:
        ca, cb = p.assignment[a], p.assignment[b]
        if ca == cb:
            s_in[ca] = s_in.get(ca, 0.0) + 2.0 * w
    for node in g.nodes:
        c = p.assignment[node]
        s_tot[c] = s_tot.get(c, 0.0) + g.weighted_degree(node)
    q = 0.0
    for c in s_tot:
        q += s_in.get(c, 0.0) / two_m - gamma * (s_tot[c] / two_m) ** 2
    return q


# ---------------------------------------------------------------------------
# Louvain

def _one_level(
    adj: dict[str, dict[str, float]],
    loops: dict[str, float],
    gamma: float,
    rng: random.Random,
) -> tuple[dict[str, int], bool]:
    """Local-moving phase. Returns (node -> local community, improved).

    Gain comparisons drop terms constant across candidate communities:
    gain(c) = w(i, c) - gamma * k_i * S_tot(c) / (2m). Among exact ties
    the current community wins, then the lowest community index.
    """
    nodes = sorted(adj)
    comm = {n: i for i, n in enumerate(nodes)}
    k = {n: sum(w for nbr, w in adj[n].items() if nbr != n) + 2.0 * loops.get(n, 0.0)
         for n in nodes}
    two_m = sum(k.values())
    if two_m == 0:
        return comm, False
    s_tot = {comm[n]: k[n] for n in nodes}
    improved = False
    moved = True
    while moved:
        moved = False
        order = list(nodes)
        rng.shuffle(order)
        for node in order:
            old = comm[node]
            s_tot[old] -= k[node]
            link: dict[int, float] = {}
            for nbr, w in adj[node].items():
                if nbr == node:
                    continue
                c = comm[nbr]
                link[c] = link.get(c, 0.0) + w
            candidates = set(link)
            candidates.add(old)
            best_comm, best_gain = old, None
            scale = gamma * k[node] / two_m
            for c in sorted(candidates):
                gain = link.get(c, 0.0) - scale * s_tot[c]
                if best_gain is None or gain > best_gain + _TIE_EPS:
                    best_comm, best_gain = c, gain
                elif abs(gain - best_gain) <= _TIE_EPS:
                    if c == old:
                        best_comm = old
                    elif best_comm != old and c < best_comm:
                        best_comm = c
            comm[node] = best_comm
            s_tot[best_comm] = s_tot.get(best_comm, 0.0) + k[node]
            if best_comm != old:
                moved = True
                improved = True
    return comm, improved


def _aggregate(
    adj: dict[str, dict[str, float]],
    loops: dict[str, float],
    comm: dict[str, int],
) -> tuple[dict[str, dict[str, float]], dict[str, float], dict[str, str]]:
    """Aggregation phase: communities become super-nodes; intra weight
    (plus prior loops) becomes a self-loop. Returns (adj, loops, node ->
    super-node)."""
    relabel = {c: f"s{i}" for i, c in enumerate(sorted(set(comm.values())))}
    mapping = {n: relabel[comm[n]] for n in adj}
    new_adj: dict[str, dict[str, float]] = {s: {} for s in relabel.values()}
    new_loops: dict[str, float] = {s: 0.0 for s in relabel.values()}
    for n, nbrs in adj.items():
        sn = mapping[n]
        new_loops[sn] += loops.get(n, 0.0)
        for nbr, w in nbrs.items():
            if nbr <= n:
                continue  # undirected edge counted once
            sm = mapping[nbr]
            if sn == sm:
                new_loops[sn] += w
            else:
                new_adj[sn][sm] = new_adj[sn].get(sm, 0.0) + w
                new_adj[sm][sn] = new_adj[sm].get(sn, 0.0) + w
    return new_adj, new_loops, mapping


def _louvain_once(
    g: BipartiteGraph,
    resolution: float,
    seed: int,
    rng_seed: int,
) -> tuple[Partition, list[float]]:
    rng = random.Random(rng_seed)
    adj = _adjacency(g)
    loops: dict[str, float] = {}
    membership = {n: n for n in g.nodes}  # node -> current super-node
    trace: list[float] = []

    def snapshot() -> Partition:
        dense: dict[str, int] = {}
        assignment: dict[str, int] = {}
        for node in sorted(membership):
            s = membership[node]
            if s not in dense:
                dense[s] = len(dense)
            assignment[node] = dense[s]
        return Partition(assignment=assignment, resolution=resolution, seed=seed)

    while True:
        comm, improved = _one_level(adj, loops, resolution, rng)
        if not improved:
            break
        adj, loops, mapping = _aggregate(adj, loops, comm)
        membership = {n: mapping[s] for n, s in membership.items()}
        trace.append(modularity(g, snapshot(), resolution))
    partition = snapshot()
    if not trace:
        trace.append(modularity(g, partition, resolution))
    return partition, trace


def louvain_with_trace(
    g: BipartiteGraph,
    resolution: float = 1.0,
    seed: int = 0,
    restarts: int = 4,
) -> tuple[Partition, list[float]]:
    """Louvain plus the Q(resolution) trace of the winning restart.

    The greedy local-moving phase can stall in a poor local optimum on
    small graphs, so several restarts run with distinct seeded visit
    orders and the highest-Q partition wins (ties keep the earliest)."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    best: Optional[tuple[Partition, list[float]]] = None
    for r in range(restarts):
        candidate = _louvain_once(g, resolution, seed, seed * 1_000_003 + r)
        if best is None or candidate[1][-1] > best[1][-1]:
            best = candidate
    return best


def louvain(
    g: BipartiteGraph,
    resolution: float = 1.0,
    seed: int = 0,
    restarts: int = 4,
) -> Partition:
    """Two-phase Louvain maximization of Q(resolution).

    Node visit order is a seeded shuffle per sweep, so a fixed seed gives
    an identical partition. Final community ids are dense integers from 0,
    numbered by first appearance over the sorted node list.
    """
    partition, _ = louvain_with_trace(g, resolution, seed, restarts)
    return partition


def filter_leading(
    p: Partition,
    g: BipartiteGraph,
    min_nodes: int = DEFAULT_MIN_NODES,
    min_share: float = DEFAULT_MIN_SHARE,
) -> tuple[list[int], list[str]]:
    """Leading communities and the residual node list.

    A community leads when node_count > min_nodes and its share of all
    graph nodes is >= min_share. The returned community ids are ordered
    by descending size (rank 1 = largest; ties by lower id); every node
    outside a leading community lands in the residual.
    """
    total = g.node_count()
    sizes: dict[int, int] = {}
    for node in g.nodes:
        c = p.assignment[node]
        sizes[c] = sizes.get(c, 0) + 1
    leading = [c for c, n in sizes.items()
               if n > min_nodes and n / total >= min_share]
    leading.sort(key=lambda c: (-sizes[c], c))
    lead_set = set(leading)
    residual = sorted(n for n in g.nodes if p.assignment[n] not in lead_set)
    return leading, residual


def community_stats(
    g: BipartiteGraph,
    p: Partition,
    leading: list[int],
) -> list[CommunityStats]:
    """Per-leading-community statistics plus a residual row; shares sum
    to 1 over the returned rows.

    Internal modularity is the Q(1) of a fresh detection run on the
    induced subgraph, seeded from the partition's seed.
    """
    total = g.node_count()
    members: dict[int, list[str]] = {c: [] for c in leading}
    lead_set = set(leading)
    residual_nodes: list[str] = []
    for node in g.nodes:
        c = p.assignment[node]
        if c in lead_set:
            members[c].append(node)
        else:
            residual_nodes.append(node)
    rows: list[CommunityStats] = []
    for c in leading:
        nodes = set(members[c])
        intra = [(a, b, w) for a, b, w in g.edges if a in nodes and b in nodes]
        avg_wdeg = (sum(g.weighted_degree(n) for n in nodes) / len(nodes)
                    if nodes else 0.0)
        internal_q = 0.0
        if intra:
            sub = BipartiteGraph(intra)
            sub_part = louvain(sub, resolution=1.0, seed=p.seed)
            internal_q = modularity(sub, sub_part, gamma=1.0)
        rows.append(CommunityStats(
            community_id=c,
            node_count=len(nodes),
            edge_count=len(intra),
            internal_modularity=internal_q,
            average_weighted_degree=avg_wdeg,
            share_of_network=len(nodes) / total,
            poi_count=sum(1 for n in nodes if g.is_poi(n)),
        ))
    rows.append(CommunityStats(
        community_id=None,
        node_count=len(residual_nodes),
        edge_count=sum(1 for a, b, _ in g.edges
                       if p.assignment[a] not in lead_set
                       and p.assignment[b] not in lead_set),
        internal_modularity=0.0,
        average_weighted_degree=(sum(g.weighted_degree(n) for n in residual_nodes)
                                 / len(residual_nodes) if residual_nodes else 0.0),
        share_of_network=len(residual_nodes) / total,
        poi_count=sum(1 for n in residual_nodes if g.is_poi(n)),
    ))
    return rows


def write_partition(
    g: BipartiteGraph,
    p: Partition,
    leading: list[int],
    path,
) -> None:
    lead_set = set(leading)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "node_class", "community_id", "is_leading"])
        for node in g.nodes:
            c = p.assignment[node]
            writer.writerow([node, "poi" if g.is_poi(node) else "cell",
                             c, str(c in lead_set)])


def read_partition(path, resolution: float = 1.0, seed: int = 0
                   ) -> tuple[Partition, list[int]]:
    """Load a partition file; returns the partition and its leading ids
    (ordered by descending size as in filter_leading)."""
    assignment: dict[str, int] = {}
    lead: set[int] = set()
    sizes: dict[int, int] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            c = int(row["community_id"])
            assignment[row["node_id"]] = c
            sizes[c] = sizes.get(c, 0) + 1
            if row["is_leading"] == "True":
                lead.add(c)
    leading = sorted(lead, key=lambda c: (-sizes[c], c))
    return Partition(assignment=assignment, resolution=resolution, seed=seed), leading
