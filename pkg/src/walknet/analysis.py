"""POI-level and temporal analytics over a partitioned network.

Covers eigenvector centrality, per-community top-POI reports, category
distributions, official-attraction coverage, excluded-POI accounting by
district, temporal slice statistics and ratio comparisons, plus CSV and
GeoJSON report writers.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass
from datetime import date as date_type
from typing import Optional

import numpy as np

from .community import CommunityStats, Partition
from .graph import BipartiteGraph, GraphError
from .ingest import CellAccumulation, Poi, VisitorSnapshot

log = logging.getLogger(__name__)

LOW_CENTRALITY_THRESHOLD = 0.5


@dataclass(frozen=True)
class PoiScore:
    poi_id: str
    community_id: Optional[int]  # None = outside all leading communities
    weighted_degree: float
    eigenvector_centrality: float
    category: str
    district: str
    official_attraction: bool


@dataclass(frozen=True)
class TemporalSliceStats:
    """Cell/visitor statistics for one date at one hour or all-day."""

    label: str
    cell_count: int
    visitor_sum: int
    visitor_mean: float
    visitor_max: int


# ---------------------------------------------------------------------------
# centrality

def _components(g: BipartiteGraph) -> list[list[str]]:
    seen: set[str] = set()
    comps = []
    for start in g.nodes:
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        stack = [start]
        while stack:
            node = stack.pop()
            for nbr in g.neighbors(node):
                if nbr not in seen:
                    seen.add(nbr)
                    comp.append(nbr)
                    stack.append(nbr)
        comps.append(sorted(comp))
    return comps


def eigenvector_centrality(
    g: BipartiteGraph,
    tol: float = 1e-8,
    max_iter: int = 5000,
) -> dict[str, float]:
    """Dominant-eigenvector scores of the weighted adjacency.

    Power iteration runs per connected component; each component's vector
    is scaled by its dominant eigenvalue relative to the largest, then the
    whole result is max-normalized so the global maximum is exactly 1.
    Isolated nodes score 0.
    """
    if g.node_count() == 0:
        raise GraphError("empty graph")
    scores: dict[str, float] = {}
    component_peaks: list[tuple[float, dict[str, float]]] = []
    for comp in _components(g):
        if len(comp) == 1 and not g.neighbors(comp[0]):
            scores[comp[0]] = 0.0
            continue
        idx = {n: i for i, n in enumerate(comp)}
        rows, cols, weights = [], [], []
        for n in comp:
            for nbr, w in g.neighbors(n).items():
                rows.append(idx[n])
                cols.append(idx[nbr])
                weights.append(w)
        rows_a = np.array(rows)
        cols_a = np.array(cols)
        w_a = np.array(weights)
        degree = np.zeros(len(comp))
        np.add.at(degree, rows_a, w_a)
        # iterate on A + shift*I: the adjacency spectrum is symmetric about
        # zero, so unshifted power iteration oscillates between +/- pairs
        shift = degree.max()
        x = np.full(len(comp), 1.0 / len(comp))
        eigenvalue = 0.0
        for it in range(max_iter):
            nxt = shift * x
            np.add.at(nxt, rows_a, w_a * x[cols_a])
            peak = nxt.max()
            if peak == 0:
                break
            nxt /= peak
            diff = np.abs(nxt - x).max()
            x = nxt
            eigenvalue = peak - shift
            if diff < tol:
                break
        else:
            log.warning("eigenvector centrality did not converge in %d iterations "
                        "(residual %.3g)", max_iter, diff)
        component_peaks.append((eigenvalue, {n: float(x[idx[n]]) for n in comp}))
    if component_peaks:
        lam_max = max(lam for lam, _ in component_peaks)
        for lam, vec in component_peaks:
            factor = lam / lam_max if lam_max > 0 else 0.0
            for n, v in vec.items():
                scores[n] = v * factor
    return scores


def compute_poi_scores(
    g: BipartiteGraph,
    partition: Partition,
    leading: list[int],
    pois: list[Poi],
    centrality: Optional[dict[str, float]] = None,
) -> list[PoiScore]:
    """One PoiScore per input POI; POIs without edges get zero scores and
    no community."""
    if centrality is None:
        centrality = eigenvector_centrality(g)
    lead_set = set(leading)
    in_graph = set(g.poi_nodes)
    out = []
    for poi in pois:
        if poi.poi_id in in_graph:
            c = partition.assignment[poi.poi_id]
            community = c if c in lead_set else None
            wdeg = g.weighted_degree(poi.poi_id)
            cent = centrality.get(poi.poi_id, 0.0)
        else:
            community, wdeg, cent = None, 0.0, 0.0
        out.append(PoiScore(poi.poi_id, community, wdeg, cent,
                            poi.category, poi.district, poi.official_attraction))
    return out


# ---------------------------------------------------------------------------
# POI reports

@dataclass(frozen=True)
class CategoryBest:
    category: str
    count_in_top: int
    poi_id: str
    value: float


@dataclass(frozen=True)
class TopPoiReport:
    community_id: int
    by_weighted_degree: list[CategoryBest]
    by_centrality: list[CategoryBest]


def _rank_and_pick(
    members: list[PoiScore],
    key,
    k: int,
    top_categories: int,
) -> list[CategoryBest]:
    ranked = sorted(members, key=lambda s: (-key(s), s.poi_id))
    top = ranked[:k]
    freq = Counter(s.category for s in top)
    best_member: dict[str, PoiScore] = {}
    for s in top:
        cur = best_member.get(s.category)
        if cur is None or key(s) > key(cur) or (key(s) == key(cur)
                                                and s.poi_id < cur.poi_id):
            best_member[s.category] = s
    # frequency desc, then higher best-member score, then lexical category
    cats = sorted(freq, key=lambda c: (-freq[c], -key(best_member[c]), c))
    return [CategoryBest(c, freq[c], best_member[c].poi_id, key(best_member[c]))
            for c in cats[:top_categories]]


def top_poi_report(
    scores: list[PoiScore],
    community_id: int,
    k: int = 30,
    top_categories: int = 5,
) -> TopPoiReport:
    """Per-community headline POIs: within the top-k by each metric, the
    most frequent categories and each category's best POI. Communities
    with fewer than k POIs use all of them."""
    members = [s for s in scores if s.community_id == community_id]
    return TopPoiReport(
        community_id=community_id,
        by_weighted_degree=_rank_and_pick(
            members, lambda s: s.weighted_degree, k, top_categories),
        by_centrality=_rank_and_pick(
            members, lambda s: s.eigenvector_centrality, k, top_categories),
    )


def category_distribution(
    pois: list[PoiScore],
    grouping: str = "global",
) -> dict[str, list[tuple[str, int, float]]]:
    """Category counts and percentage shares, descending, per group.

    grouping "global": one group over all POIs; "community": one group
    per leading community plus "residual"; "excluded": one group of POIs
    outside all leading communities.
    """
    groups: dict[str, list[PoiScore]] = {}
    if grouping == "global":
        groups["all"] = list(pois)
    elif grouping == "community":
        for s in pois:
            key = str(s.community_id) if s.community_id is not None else "residual"
            groups.setdefault(key, []).append(s)
    elif grouping == "excluded":
        groups["excluded"] = [s for s in pois if s.community_id is None]
    else:
        raise ValueError(f"unknown grouping {grouping!r}")
    out: dict[str, list[tuple[str, int, float]]] = {}
    for name in sorted(groups):
        members = groups[name]
        total = len(members)
        freq = Counter(s.category for s in members)
        rows = [(cat, n, round(100.0 * n / total, 2))
                for cat, n in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))]
        out[name] = rows
    return out


@dataclass(frozen=True)
class AttractionCoverage:
    poi_id: str
    community_id: Optional[int]
    rank_by_weighted_degree: Optional[int]
    eigenvector_centrality: float
    low_centrality: bool


def official_attraction_coverage(
    scores: list[PoiScore],
    threshold: float = LOW_CENTRALITY_THRESHOLD,
) -> list[AttractionCoverage]:
    """Per official attraction: membership, within-community rank by
    weighted degree, centrality, and a low-centrality flag."""
    by_comm: dict[int, list[PoiScore]] = {}
    for s in scores:
        if s.community_id is not None:
            by_comm.setdefault(s.community_id, []).append(s)
    ranks: dict[str, int] = {}
    for members in by_comm.values():
        ordered = sorted(members, key=lambda s: (-s.weighted_degree, s.poi_id))
        for i, s in enumerate(ordered, start=1):
            ranks[s.poi_id] = i
    out = []
    for s in sorted((s for s in scores if s.official_attraction),
                    key=lambda s: s.poi_id):
        out.append(AttractionCoverage(
            poi_id=s.poi_id,
            community_id=s.community_id,
            rank_by_weighted_degree=ranks.get(s.poi_id),
            eigenvector_centrality=s.eigenvector_centrality,
            low_centrality=s.eigenvector_centrality <= threshold,
        ))
    return out


def excluded_poi_by_district(
    scores: list[PoiScore],
) -> dict[str, tuple[int, int, float]]:
    """Per district: (excluded_count, total, percent). A POI counts as
    excluded when it sits outside every leading community. Districts with
    no POIs are omitted."""
    totals: Counter = Counter()
    excluded: Counter = Counter()
    for s in scores:
        totals[s.district] += 1
        if s.community_id is None:
            excluded[s.district] += 1
    return {d: (excluded[d], totals[d], round(100.0 * excluded[d] / totals[d], 2))
            for d in sorted(totals)}


def poi_report_buckets(scores: list[PoiScore], g: BipartiteGraph
                       ) -> dict[str, list[str]]:
    """Exhaustive accounting: every POI in exactly one of leading /
    residual / no-edge."""
    in_graph = set(g.poi_nodes)
    buckets: dict[str, list[str]] = {"leading": [], "residual": [], "no_edge": []}
    for s in scores:
        if s.poi_id not in in_graph:
            buckets["no_edge"].append(s.poi_id)
        elif s.community_id is not None:
            buckets["leading"].append(s.poi_id)
        else:
            buckets["residual"].append(s.poi_id)
    return buckets


# ---------------------------------------------------------------------------
# temporal

class SliceOutsideWindowError(ValueError):
    pass


def temporal_slices(
    snapshots: list[VisitorSnapshot],
    slices: list[tuple[date_type, Optional[int]]],
) -> list[TemporalSliceStats]:
    """Statistics per requested (date, hour) slice; hour None means
    all-day, which aggregates per-cell daily sums before mean/max. Only
    cells with visitors count."""
    if not snapshots:
        raise ValueError("no snapshots")
    dates = {s.timestamp.date() for s in snapshots}
    lo, hi = min(dates), max(dates)
    out = []
    for day, hour in slices:
        if not lo <= day <= hi:
            raise SliceOutsideWindowError(
                f"slice {day} {'all-day' if hour is None else f'{hour:02d}h'} "
                f"outside the ingested window {lo}..{hi}")
        per_cell: dict[str, int] = {}
        for s in snapshots:
            if s.timestamp.date() != day:
                continue
            if hour is not None and s.timestamp.hour != hour:
                continue
            per_cell[s.cell_id] = per_cell.get(s.cell_id, 0) + s.visitors
        values = [v for v in per_cell.values() if v > 0]
        label = f"{day.isoformat()} " + ("all-day" if hour is None else f"{hour:02d}h")
        if not values:
            out.append(TemporalSliceStats(label, 0, 0, 0.0, 0))
            continue
        total = sum(values)
        out.append(TemporalSliceStats(
            label=label,
            cell_count=len(values),
            visitor_sum=total,
            visitor_mean=total / len(values),
            visitor_max=max(values),
        ))
    return out


@dataclass(frozen=True)
class SliceComparison:
    """Elementwise b/a ratios between two slices; None marks a ratio with
    a zero denominator."""

    label_a: str
    label_b: str
    sum_ratio: Optional[float]
    mean_ratio: Optional[float]
    max_ratio: Optional[float]
    cell_count_ratio: Optional[float]


def slice_compare(a: TemporalSliceStats, b: TemporalSliceStats) -> SliceComparison:
    def ratio(x, y):
        return None if x == 0 else y / x

    return SliceComparison(
        label_a=a.label,
        label_b=b.label,
        sum_ratio=ratio(a.visitor_sum, b.visitor_sum),
        mean_ratio=ratio(a.visitor_mean, b.visitor_mean),
        max_ratio=ratio(a.visitor_max, b.visitor_max),
        cell_count_ratio=ratio(a.cell_count, b.cell_count),
    )


# ---------------------------------------------------------------------------
# report writers

def _fmt_ratio(r: Optional[float]) -> str:
    return "undefined" if r is None else f"{r:.2f}"


def write_community_report(rows: list[CommunityStats], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["community_id", "node_count", "edge_count",
                         "internal_modularity", "average_weighted_degree",
                         "share_percent", "poi_count"])
        for r in rows:
            writer.writerow([
                "residual" if r.community_id is None else r.community_id,
                r.node_count, r.edge_count,
                f"{r.internal_modularity:.4f}",
                f"{r.average_weighted_degree:.2f}",
                f"{100.0 * r.share_of_network:.2f}",
                r.poi_count,
            ])


def write_top_poi_report(report: TopPoiReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "category", "count_in_top", "poi_id", "value"])
        for metric, rows in (("weighted_degree", report.by_weighted_degree),
                             ("eigenvector_centrality", report.by_centrality)):
            for r in rows:
                writer.writerow([metric, r.category, r.count_in_top, r.poi_id,
                                 f"{r.value:.5f}"])


def write_category_report(dist: dict[str, list[tuple[str, int, float]]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "category", "count", "percent"])
        for group in sorted(dist):
            for cat, count, pct in dist[group]:
                writer.writerow([group, cat, count, f"{pct:.2f}"])


def write_attraction_report(rows: list[AttractionCoverage], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["poi_id", "community_id", "rank_by_weighted_degree",
                         "eigenvector_centrality", "low_centrality"])
        for r in rows:
            writer.writerow([
                r.poi_id,
                "excluded" if r.community_id is None else r.community_id,
                "" if r.rank_by_weighted_degree is None else r.rank_by_weighted_degree,
                f"{r.eigenvector_centrality:.5f}",
                str(r.low_centrality),
            ])


def write_excluded_report(rows: dict[str, tuple[int, int, float]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["district", "excluded", "total", "percent"])
        for district in sorted(rows):
            exc, total, pct = rows[district]
            writer.writerow([district, exc, total, f"{pct:.2f}"])


def write_slice_report(slices: list[TemporalSliceStats],
                       comparisons: list[SliceComparison], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "cell_count", "visitor_sum", "visitor_mean",
                         "visitor_max"])
        for s in slices:
            writer.writerow([s.label, s.cell_count, s.visitor_sum,
                             f"{s.visitor_mean:.2f}", s.visitor_max])
        writer.writerow([])
        writer.writerow(["compare", "sum_ratio", "mean_ratio", "max_ratio",
                         "cell_count_ratio"])
        for c in comparisons:
            writer.writerow([f"{c.label_b} / {c.label_a}",
                             _fmt_ratio(c.sum_ratio), _fmt_ratio(c.mean_ratio),
                             _fmt_ratio(c.max_ratio), _fmt_ratio(c.cell_count_ratio)])


def poi_geojson(scores: list[PoiScore], pois: list[Poi]) -> dict:
    locations = {p.poi_id: p.location for p in pois}
    features = []
    for s in sorted(scores, key=lambda s: s.poi_id):
        loc = locations[s.poi_id]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [loc.lon, loc.lat]},
            "properties": {
                "poi_id": s.poi_id,
                "community": s.community_id,
                "weighted_degree": round(s.weighted_degree, 5),
                "eigenvector_centrality": round(s.eigenvector_centrality, 5),
                "category": s.category,
                "district": s.district,
                "official_attraction": s.official_attraction,
            },
        })
    return {"type": "FeatureCollection", "features": features}


def cell_geojson(cells: list[CellAccumulation], partition: Partition,
                 leading: list[int]) -> dict:
    lead_set = set(leading)
    features = []
    for c in sorted(cells, key=lambda c: c.cell_id):
        comm = partition.assignment.get(c.cell_id)
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point",
                         "coordinates": [c.location.lon, c.location.lat]},
            "properties": {
                "cell_id": c.cell_id,
                "n_v": c.n_v,
                "community": comm if comm in lead_set else None,
            },
        })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(collection: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(collection, fh, indent=2, sort_keys=True)
        fh.write("\n")
