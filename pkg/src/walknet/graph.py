"""The visitor-weighted bipartite POI-cell network.

Edge weight = n_v * (1 - d / d_max): the cell's accumulated visitors
scaled by a linear distance decay over the walking distance. Includes
descriptive statistics, shared-cell and density views, and GEXF /
edge-list export with round-trip import.
"""

from __future__ import annotations

import csv
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Iterable, Optional

from .distance import DistanceRecord
from .ingest import CellAccumulation

GEXF_NS = "http://www.gexf.net/1.2draft"


class GraphError(ValueError):
    """Inconsistent graph construction input or empty-graph query."""


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    average_degree: float
    average_weighted_degree: float


def edge_weight(n_v: int, d: float, d_max: float) -> float:
    """Visitor count scaled by linear distance decay, in [0, n_v]."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    if not 0 <= d <= d_max:
        raise ValueError(f"distance {d} outside [0, {d_max}]")
    if n_v < 0:
        raise ValueError(f"visitor count {n_v} must be non-negative")
    return n_v * (1.0 - d / d_max)


class BipartiteGraph:
    """Immutable bipartite graph between POI nodes and cell nodes.

    POI and cell id sets must be disjoint; every edge joins one POI to
    one cell; duplicate (poi, cell) edges are rejected.
    """

    def __init__(self, edges: Iterable[tuple[str, str, float]]):
        self.edges: list[tuple[str, str, float]] = []
        self._adj: dict[str, dict[str, float]] = {}
        poi_set: set[str] = set()
        cell_set: set[str] = set()
        seen: set[tuple[str, str]] = set()
        for poi_id, cell_id, weight in edges:
            if (poi_id, cell_id) in seen:
                raise GraphError(f"duplicate edge ({poi_id}, {cell_id})")
            seen.add((poi_id, cell_id))
            if not (weight >= 0 and weight == weight and weight != float("inf")):
                raise GraphError(f"edge ({poi_id}, {cell_id}) weight {weight} invalid")
            poi_set.add(poi_id)
            cell_set.add(cell_id)
            self.edges.append((poi_id, cell_id, weight))
            self._adj.setdefault(poi_id, {})[cell_id] = weight
            self._adj.setdefault(cell_id, {})[poi_id] = weight
        overlap = poi_set & cell_set
        if overlap:
            raise GraphError(f"ids used as both POI and cell: {sorted(overlap)[:5]}")
        self.poi_nodes = sorted(poi_set)
        self.cell_nodes = sorted(cell_set)
        self._poi_set = poi_set

    @property
    def nodes(self) -> list[str]:
        return self.poi_nodes + self.cell_nodes

    def node_count(self) -> int:
        return len(self.poi_nodes) + len(self.cell_nodes)

    def neighbors(self, node: str) -> dict[str, float]:
        return self._adj.get(node, {})

    def degree(self, node: str) -> int:
        return len(self._adj.get(node, {}))

    def weighted_degree(self, node: str) -> float:
        return sum(self._adj.get(node, {}).values())

    def is_poi(self, node: str) -> bool:
        return node in self._poi_set

    def total_weight(self) -> float:
        return sum(w for _, _, w in self.edges)


def build_graph(
    records: list[DistanceRecord],
    cells: list[CellAccumulation],
    d_max: float,
) -> BipartiteGraph:
    """One edge per distance record, weighted by the cell's visitor
    accumulation and the record's walking distance. Cells without any
    surviving record are excluded."""
    n_v = {c.cell_id: c.n_v for c in cells}
    edges = []
    for r in records:
        if r.cell_id not in n_v:
            raise GraphError(f"record references unknown cell {r.cell_id!r}")
        edges.append((r.poi_id, r.cell_id,
                      edge_weight(n_v[r.cell_id], r.walking_m, d_max)))
    return BipartiteGraph(edges)


def graph_stats(g: BipartiteGraph) -> GraphStats:
    n = g.node_count()
    if n == 0:
        raise GraphError("empty graph")
    e = len(g.edges)
    total_weight = g.total_weight()
    return GraphStats(
        node_count=n,
        edge_count=e,
        average_degree=2.0 * e / n,
        average_weighted_degree=2.0 * total_weight / n,
    )


def poi_poi_shared_cells(g: BipartiteGraph) -> list[tuple[str, str, int]]:
    """Shared-cell counts for every unordered POI pair with at least one
    commonly connected cell, sorted by (poi_a, poi_b)."""
    counts: dict[tuple[str, str], int] = {}
    for cell in g.cell_nodes:
        linked = sorted(g.neighbors(cell))
        for i, a in enumerate(linked):
            for b in linked[i + 1:]:
                counts[(a, b)] = counts.get((a, b), 0) + 1
    return [(a, b, c) for (a, b), c in sorted(counts.items())]


def cell_poi_density(g: BipartiteGraph) -> dict[str, float]:
    """Cell POI-link counts normalized by the maximum over all cells."""
    counts = {cell: g.degree(cell) for cell in g.cell_nodes}
    if not counts:
        return {}
    peak = max(counts.values())
    if peak == 0:
        return {cell: 0.0 for cell in counts}
    return {cell: counts[cell] / peak for cell in counts}


# ---------------------------------------------------------------------------
# export / import

def write_edge_list(g: BipartiteGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["poi_id", "cell_id", "weight"])
        for poi_id, cell_id, weight in sorted(g.edges):
            writer.writerow([poi_id, cell_id, repr(weight)])


def read_edge_list(path) -> BipartiteGraph:
    edges = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            edges.append((row["poi_id"], row["cell_id"], float(row["weight"])))
    return BipartiteGraph(edges)


def write_gexf(
    g: BipartiteGraph,
    path,
    node_attrs: Optional[dict[str, dict[str, str]]] = None,
) -> None:
    """GEXF export with a node class attribute plus any extra per-node
    attributes (district, category, n_v) given as strings."""
    node_attrs = node_attrs or {}
    extra_keys = sorted({k for attrs in node_attrs.values() for k in attrs})
    root = ET.Element("gexf", xmlns=GEXF_NS, version="1.2")
    graph_el = ET.SubElement(root, "graph", defaultedgetype="undirected")
    attr_decl = ET.SubElement(graph_el, "attributes", **{"class": "node"})
    ET.SubElement(attr_decl, "attribute", id="0", title="class", type="string")
    for i, key in enumerate(extra_keys, start=1):
        ET.SubElement(attr_decl, "attribute", id=str(i), title=key, type="string")
    attr_ids = {"class": "0", **{k: str(i) for i, k in enumerate(extra_keys, start=1)}}
    nodes_el = ET.SubElement(graph_el, "nodes")
    for node in g.nodes:
        node_el = ET.SubElement(nodes_el, "node", id=node, label=node)
        values = ET.SubElement(node_el, "attvalues")
        ET.SubElement(values, "attvalue", **{
            "for": attr_ids["class"],
            "value": "poi" if g.is_poi(node) else "cell",
        })
        for key, value in sorted(node_attrs.get(node, {}).items()):
            ET.SubElement(values, "attvalue", **{"for": attr_ids[key], "value": value})
    edges_el = ET.SubElement(graph_el, "edges")
    for i, (poi_id, cell_id, weight) in enumerate(sorted(g.edges)):
        ET.SubElement(edges_el, "edge", id=str(i), source=poi_id,
                      target=cell_id, weight=repr(weight))
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


def read_gexf(path) -> tuple[BipartiteGraph, dict[str, dict[str, str]]]:
    """Inverse of :func:`write_gexf`; attribute values round-trip exactly."""
    ns = {"g": GEXF_NS}
    root = ET.parse(path).getroot()
    graph_el = root.find("g:graph", ns)
    titles: dict[str, str] = {}
    for attr in graph_el.find("g:attributes", ns).findall("g:attribute", ns):
        titles[attr.get("id")] = attr.get("title")
    node_attrs: dict[str, dict[str, str]] = {}
    classes: dict[str, str] = {}
    for node_el in graph_el.find("g:nodes", ns).findall("g:node", ns):
        node = node_el.get("id")
        attrs = {}
        for av in node_el.find("g:attvalues", ns).findall("g:attvalue", ns):
            title = titles[av.get("for")]
            if title == "class":
                classes[node] = av.get("value")
            else:
                attrs[title] = av.get("value")
        if attrs:
            node_attrs[node] = attrs
    edges = []
    for edge_el in graph_el.find("g:edges", ns).findall("g:edge", ns):
        edges.append((edge_el.get("source"), edge_el.get("target"),
                      float(edge_el.get("weight"))))
    g = BipartiteGraph(edges)
    mislabeled = [n for n in g.poi_nodes if classes.get(n) != "poi"]
    mislabeled += [n for n in g.cell_nodes if classes.get(n) != "cell"]
    if mislabeled:
        raise GraphError(f"GEXF node classes inconsistent with edge direction: "
                         f"{mislabeled[:5]}")
    return g, node_attrs
