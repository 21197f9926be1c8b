"""Deterministic synthetic-city generator.

Produces visitor snapshots, POI records, a road graph and ground-truth
district labels with planted community structure: districts are spatial
clusters whose cells receive visitors concentrated around same-district
POIs, with a configurable leakage fraction spilling into other districts.
Everything is reproducible from the plan seed, and the emitted files parse
cleanly through the ingest and road-graph loaders.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date as date_type, datetime
from pathlib import Path

import numpy as np

from .distance import RoadGraph
from .geo import EARTH_RADIUS_M, Wgs84Point, haversine_m
from .ingest import Poi, VisitorSnapshot

_M_PER_DEG = math.pi * EARTH_RADIUS_M / 180.0

CELL_PITCH_M = 50.0  # fixed cell size of the visitor feed

DEFAULT_CATEGORIES = [
    "park", "restaurant", "cafe", "museum", "market",
    "heritage_site", "theater", "experience_center",
]

# sparse hourly intensity curves (index = hour of day)
DEFAULT_WEEKDAY_PROFILE = {9: 3.0, 11: 4.0, 13: 6.0, 15: 5.0, 17: 4.0, 19: 3.0}
DEFAULT_WEEKEND_PROFILE = {9: 4.0, 11: 6.0, 13: 10.0, 15: 8.0, 17: 6.0, 19: 4.0}


@dataclass
class CityPlan:
    """Parameters of one synthetic city. Offsets are metres east/north of
    the grid origin (its southwest corner)."""

    seed: int = 0
    origin: Wgs84Point = field(default_factory=lambda: Wgs84Point(36.30, 127.30))
    rows: int = 120
    cols: int = 120
    district_labels: list[str] = field(
        default_factory=lambda: ["north-east", "north-west", "south-east", "south-west"])
    district_offsets_m: list[tuple[float, float]] = field(
        default_factory=lambda: [(4500.0, 4500.0), (1500.0, 4500.0),
                                 (4500.0, 1500.0), (1500.0, 1500.0)])
    pois_per_district: int = 30
    poi_scatter_m: float = 350.0
    coverage_m: float = 1500.0  # visitor emission radius around each centre
    cross_district_leakage: float = 0.1
    weekday_profile: dict[int, float] = field(
        default_factory=lambda: dict(DEFAULT_WEEKDAY_PROFILE))
    weekend_profile: dict[int, float] = field(
        default_factory=lambda: dict(DEFAULT_WEEKEND_PROFILE))
    dates: list[date_type] = field(
        default_factory=lambda: [date_type(2021, 11, 3), date_type(2021, 11, 6)])
    categories: list[str] = field(default_factory=lambda: list(DEFAULT_CATEGORIES))
    official_fraction: float = 0.15
    isolated_pois: int = 0  # planted zero-visitor POIs far outside coverage

    def __post_init__(self):
        if not self.district_labels:
            raise ValueError("plan needs at least one district")
        if len(self.district_labels) != len(self.district_offsets_m):
            raise ValueError("district labels and offsets must align")
        if not 0.0 <= self.cross_district_leakage < 0.5:
            raise ValueError("leakage must lie in [0, 0.5): planted structure "
                             "must dominate")
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid must be at least 2x2")


@dataclass
class CityData:
    snapshots: list[VisitorSnapshot]
    pois: list[Poi]
    road_graph: RoadGraph
    ground_truth: dict[str, str]  # poi_id / cell_id -> planted district


def _offset_point(origin: Wgs84Point, east_m: float, north_m: float) -> Wgs84Point:
    lat = origin.lat + north_m / _M_PER_DEG
    lon = origin.lon + east_m / (_M_PER_DEG * math.cos(math.radians(origin.lat)))
    return Wgs84Point(lat, lon)


def generate_city(plan: CityPlan) -> CityData:
    """Deterministically generate one synthetic city from its plan."""
    rng = np.random.default_rng(plan.seed)
    centers = [_offset_point(plan.origin, dx, dy) for dx, dy in plan.district_offsets_m]

    # cell grid; centroid of cell (r, c) sits half a pitch into the cell
    cell_ids: list[str] = []
    cell_loc: dict[str, Wgs84Point] = {}
    cell_district: dict[str, int] = {}
    cell_center_dist: dict[str, float] = {}
    for r in range(plan.rows):
        for c in range(plan.cols):
            cid = f"c{r * plan.cols + c}"
            loc = _offset_point(plan.origin, (c + 0.5) * CELL_PITCH_M,
                                (r + 0.5) * CELL_PITCH_M)
            dists = [haversine_m(loc, ctr) for ctr in centers]
            nearest = min(range(len(centers)), key=lambda i: dists[i])
            cell_ids.append(cid)
            cell_loc[cid] = loc
            cell_district[cid] = nearest
            cell_center_dist[cid] = dists[nearest]

    # POIs scattered around district centres
    pois: list[Poi] = []
    ground_truth: dict[str, str] = {}
    poi_idx = 0
    for d, (label, center) in enumerate(zip(plan.district_labels, centers)):
        for _ in range(plan.pois_per_district):
            dx, dy = rng.normal(0.0, plan.poi_scatter_m, size=2)
            loc = _offset_point(center, float(dx), float(dy))
            category = plan.categories[int(rng.integers(len(plan.categories)))]
            official = bool(rng.random() < plan.official_fraction)
            pid = f"p{poi_idx}"
            pois.append(Poi(
                poi_id=pid,
                title=f"{category} {poi_idx}",
                address=f"{poi_idx} Synth Street, {label}",
                location=loc,
                category=category,
                district=label,
                official_attraction=official,
            ))
            ground_truth[pid] = label
            poi_idx += 1
    # planted zero-visitor POIs, far outside every coverage disc
    far_base_east = (plan.cols + 200) * CELL_PITCH_M
    for i in range(plan.isolated_pois):
        pid = f"p{poi_idx}"
        loc = _offset_point(plan.origin, far_base_east + 200.0 * i, 0.0)
        pois.append(Poi(pid, f"isolated {poi_idx}", f"{poi_idx} Nowhere Road",
                        loc, plan.categories[0], "isolated", False))
        ground_truth[pid] = "isolated"
        poi_idx += 1

    for cid in cell_ids:
        ground_truth[cid] = plan.district_labels[cell_district[cid]]

    # visitor snapshots: Poisson counts around the hourly profile, scaled
    # by proximity to the home district centre; a leakage fraction of the
    # emitted rows is re-homed to a random cell of another district
    covered = [cid for cid in cell_ids if cell_center_dist[cid] <= plan.coverage_m]
    by_district: dict[int, list[str]] = {}
    for cid in covered:
        by_district.setdefault(cell_district[cid], []).append(cid)
    proximity = np.array([
        max(0.2, 1.0 - cell_center_dist[cid] / max(plan.coverage_m, 1.0))
        for cid in covered
    ])
    counts: dict[tuple[str, datetime], int] = {}
    for day in plan.dates:
        profile = plan.weekend_profile if day.weekday() >= 5 else plan.weekday_profile
        for hour in sorted(profile):
            lam = profile[hour] * proximity
            draws = rng.poisson(lam)
            leak_mask = rng.random(len(covered)) < plan.cross_district_leakage
            ts = datetime(day.year, day.month, day.day, hour)
            for i, cid in enumerate(covered):
                n = int(draws[i])
                if n < 1:
                    continue
                target = cid
                if leak_mask[i] and len(by_district) > 1:
                    others = [d for d in sorted(by_district) if d != cell_district[cid]]
                    d = others[int(rng.integers(len(others)))]
                    pool = by_district[d]
                    target = pool[int(rng.integers(len(pool)))]
                counts[(target, ts)] = counts.get((target, ts), 0) + n
    snapshots = [VisitorSnapshot(cid, ts, n, cell_loc[cid])
                 for (cid, ts), n in sorted(counts.items())]

    # road graph: the cell lattice plus district-centre spokes
    nodes: dict[str, Wgs84Point] = {}
    edges: list[tuple[str, str, float]] = []
    for r in range(plan.rows):
        for c in range(plan.cols):
            nid = f"n{r}_{c}"
            nodes[nid] = cell_loc[f"c{r * plan.cols + c}"]
    for r in range(plan.rows):
        for c in range(plan.cols):
            nid = f"n{r}_{c}"
            if c + 1 < plan.cols:
                other = f"n{r}_{c + 1}"
                edges.append((nid, other, haversine_m(nodes[nid], nodes[other])))
            if r + 1 < plan.rows:
                other = f"n{r + 1}_{c}"
                edges.append((nid, other, haversine_m(nodes[nid], nodes[other])))
    for d, center in enumerate(centers):
        nid = f"ctr{d}"
        nodes[nid] = center
        ranked = sorted(
            ((haversine_m(center, cell_loc[cid]), cid) for cid in by_district.get(d, [])),
        )[:4]
        for dist, cid in ranked:
            lattice = "n{}_{}".format(*divmod(int(cid[1:]), plan.cols))
            edges.append((nid, lattice, max(dist, 1.0)))
    road_graph = RoadGraph(nodes, edges)

    return CityData(snapshots=snapshots, pois=pois, road_graph=road_graph,
                    ground_truth=ground_truth)


# ---------------------------------------------------------------------------
# file emission (the exact ingest / road-graph input formats)

def write_city(data: CityData, outdir) -> dict[str, Path]:
    """Write visitors.csv, pois.csv, road_nodes.csv, road_edges.csv and
    ground_truth.csv; returns the path of each."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {name: outdir / f"{name}.csv"
             for name in ("visitors", "pois", "road_nodes", "road_edges",
                          "ground_truth")}
    with open(paths["visitors"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "time", "visitors", "lat", "lon"])
        for s in data.snapshots:
            writer.writerow([s.cell_id, s.timestamp.strftime("%Y%m%d-%H"),
                             s.visitors, repr(s.location.lat), repr(s.location.lon)])
    with open(paths["pois"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["poi_id", "title", "address", "lat", "lon", "categories",
                         "official_attraction", "district"])
        for p in data.pois:
            writer.writerow([p.poi_id, p.title, p.address, repr(p.location.lat),
                             repr(p.location.lon), p.category,
                             str(p.official_attraction), p.district])
    with open(paths["road_nodes"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "lat", "lon"])
        for nid in sorted(data.road_graph.nodes):
            p = data.road_graph.nodes[nid]
            writer.writerow([nid, repr(p.lat), repr(p.lon)])
    with open(paths["road_edges"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id_a", "id_b", "length_m"])
        seen = set()
        for a in sorted(data.road_graph.adj):
            for b, length in sorted(data.road_graph.adj[a]):
                key = (min(a, b), max(a, b))
                if key in seen:
                    continue
                seen.add(key)
                writer.writerow([key[0], key[1], repr(length)])
    with open(paths["ground_truth"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "kind", "district"])
        for node_id in sorted(data.ground_truth):
            kind = "poi" if node_id.startswith("p") else "cell"
            writer.writerow([node_id, kind, data.ground_truth[node_id]])
    return paths


def read_ground_truth(path) -> dict[str, str]:
    truth = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            truth[row["id"]] = row["district"]
    return truth


def recovery_plan(seed: int) -> CityPlan:
    """The desk-scale recovery benchmark: 4 districts, ~5,000 cells,
    80 POIs, leakage 0.1."""
    return CityPlan(
        seed=seed,
        rows=71,
        cols=71,
        district_offsets_m=[(2950.0, 2950.0), (600.0, 2950.0),
                            (2950.0, 600.0), (600.0, 600.0)],
        pois_per_district=20,
        poi_scatter_m=200.0,
        coverage_m=1000.0,
        cross_district_leakage=0.1,
    )
