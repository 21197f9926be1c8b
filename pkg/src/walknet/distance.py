"""Two-stage POI-cell distance resolution.

Stage one prefilters POI-cell pairs by great-circle distance within the
walkability budget, accelerated by a grid index. Stage two resolves the
actual walking distance through a pluggable provider (HTTP routing API,
offline road graph, or a straight-line fallback) with a persistent cache
so long runs are resumable.
"""

from __future__ import annotations

import csv
import heapq
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol

import requests

from .geo import GridIndex, Wgs84Point, haversine_m
from .ingest import CellAccumulation, Poi

log = logging.getLogger(__name__)

DEFAULT_D_MAX_M = 1000.0
SNAP_MAX_M = 500.0
STRAIGHT_SLACK_M = 1.0


class ProviderError(RuntimeError):
    """Transient provider failure that survived all retries."""


@dataclass(frozen=True)
class CandidatePair:
    """POI-cell pair surviving the straight-line prefilter."""

    poi_id: str
    cell_id: str
    straight_m: float


@dataclass(frozen=True)
class DistanceRecord:
    """Resolved POI-cell pair with straight-line and walking distances."""

    poi_id: str
    cell_id: str
    straight_m: float
    walking_m: float


class WalkProvider(Protocol):
    provider_id: str

    def walking_m(self, origin: Wgs84Point, dest: Wgs84Point) -> Optional[float]:
        """Walking distance in metres, or None if unreachable.

        Raises ProviderError on unrecoverable transport failure."""
        ...


def prefilter_pairs(
    pois: list[Poi],
    cells: list[CellAccumulation],
    d_max: float = DEFAULT_D_MAX_M,
) -> list[CandidatePair]:
    """Exactly the POI-cell pairs with haversine distance <= d_max.

    Grid-index accelerated; output sorted by (poi_id, cell_id)."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    index = GridIndex({c.cell_id: c.location for c in cells}, cell_size_m=d_max)
    loc = {c.cell_id: c.location for c in cells}
    pairs: list[CandidatePair] = []
    for poi in pois:
        for cell_id in index.query(poi.location, d_max):
            d = haversine_m(poi.location, loc[cell_id])
            if d <= d_max:
                pairs.append(CandidatePair(poi.poi_id, cell_id, d))
    pairs.sort(key=lambda p: (p.poi_id, p.cell_id))
    return pairs


# ---------------------------------------------------------------------------
# providers

class FallbackProvider:
    """Straight-line distance scaled by a fixed urban detour factor."""

    def __init__(self, detour_factor: float = 1.3):
        if detour_factor < 1.0:
            raise ValueError("detour_factor must be >= 1")
        self.detour_factor = detour_factor
        self.provider_id = f"fallback:{detour_factor:g}"

    def walking_m(self, origin: Wgs84Point, dest: Wgs84Point) -> Optional[float]:
        return haversine_m(origin, dest) * self.detour_factor


class RoadGraph:
    """Immutable undirected road network with positive edge lengths."""

    def __init__(
        self,
        nodes: dict[str, Wgs84Point],
        edges: Iterable[tuple[str, str, float]],
    ):
        self.nodes = dict(nodes)
        self.adj: dict[str, list[tuple[str, float]]] = {n: [] for n in self.nodes}
        for a, b, length in edges:
            if a not in self.nodes or b not in self.nodes:
                raise ValueError(f"edge ({a}, {b}) references an unknown node")
            if not length > 0:
                raise ValueError(f"edge ({a}, {b}) has non-positive length {length}")
            self.adj[a].append((b, length))
            self.adj[b].append((a, length))
        # fine buckets keep nearest-node candidate sets small
        self._index = GridIndex(self.nodes, cell_size_m=SNAP_MAX_M / 4)

    @classmethod
    def from_files(cls, node_path, edge_path) -> "RoadGraph":
        """Load from delimited files: nodes (id, lat, lon) and edges
        (id_a, id_b[, length_m]); a missing length falls back to the
        haversine of the endpoints."""
        nodes: dict[str, Wgs84Point] = {}
        with open(node_path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                row = {k.strip().lower(): v for k, v in row.items()}
                nodes[row["id"].strip()] = Wgs84Point(float(row["lat"]), float(row["lon"]))
        edges: list[tuple[str, str, float]] = []
        with open(edge_path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                row = {k.strip().lower(): v for k, v in row.items()}
                a, b = row["id_a"].strip(), row["id_b"].strip()
                raw = (row.get("length_m") or "").strip()
                length = float(raw) if raw else haversine_m(nodes[a], nodes[b])
                edges.append((a, b, length))
        return cls(nodes, edges)

    def nearest_node(self, p: Wgs84Point, max_m: float = SNAP_MAX_M
                     ) -> Optional[tuple[str, float]]:
        """Closest road node within max_m, as (node_id, distance).

        Searches expanding radii; a hit at distance <= the query radius is
        guaranteed globally nearest because the query returns a superset
        of that radius."""
        radius = max_m / 4
        while True:
            radius = min(radius, max_m)
            best_id, best_d = None, max_m
            for nid in self._index.query(p, radius):
                d = haversine_m(p, self.nodes[nid])
                if d < best_d or (d == best_d and (best_id is None or nid < best_id)):
                    best_id, best_d = nid, d
            if best_id is not None and (best_d <= radius or radius >= max_m):
                return best_id, best_d
            if radius >= max_m:
                return None
            radius *= 2

    def shortest_paths(self, source: str, cutoff: Optional[float] = None
                       ) -> dict[str, float]:
        """Dijkstra distances from source, optionally truncated at cutoff."""
        dist = {source: 0.0}
        heap = [(0.0, source)]
        done: set[str] = set()
        while heap:
            d, node = heapq.heappop(heap)
            if node in done:
                continue
            done.add(node)
            if cutoff is not None and d > cutoff:
                continue
            for nbr, length in self.adj[node]:
                nd = d + length
                if nbr not in dist or nd < dist[nbr]:
                    dist[nbr] = nd
                    heapq.heappush(heap, (nd, nbr))
        if cutoff is not None:
            dist = {n: d for n, d in dist.items() if d <= cutoff}
        return dist


class RoadGraphProvider:
    """Walking distance over an offline road graph.

    Snaps both endpoints to their nearest road node (within snap_max_m),
    routes between the snap nodes, and adds straight-line access legs at
    both ends. Unreachable when either endpoint has no road node in range
    or no path exists.
    """

    def __init__(self, graph: RoadGraph, snap_max_m: float = SNAP_MAX_M,
                 cutoff_m: Optional[float] = None):
        self.graph = graph
        self.snap_max_m = snap_max_m
        self.cutoff_m = cutoff_m
        self.provider_id = "roadgraph"
        self._sp_cache: dict[str, dict[str, float]] = {}
        self._snap_memo: dict[tuple[float, float], Optional[tuple[str, float]]] = {}

    def _paths_from(self, node: str) -> dict[str, float]:
        cached = self._sp_cache.get(node)
        if cached is None:
            cached = self.graph.shortest_paths(node, cutoff=self.cutoff_m)
            self._sp_cache[node] = cached
        return cached

    def _snap(self, p: Wgs84Point) -> Optional[tuple[str, float]]:
        key = (p.lat, p.lon)
        if key not in self._snap_memo:
            self._snap_memo[key] = self.graph.nearest_node(p, self.snap_max_m)
        return self._snap_memo[key]

    def walking_m(self, origin: Wgs84Point, dest: Wgs84Point) -> Optional[float]:
        snap_o = self._snap(origin)
        snap_d = self._snap(dest)
        if snap_o is None or snap_d is None:
            return None
        node_o, leg_o = snap_o
        node_d, leg_d = snap_d
        path = self._paths_from(node_o).get(node_d)
        if path is None:
            return None
        return leg_o + path + leg_d


class RoutingApiClient:
    """Rate-limited HTTP client for a Kakao-style pedestrian routing API.

    GET {base_url} with origin/destination query parameters as "lon,lat"
    strings and the API key in an Authorization header. The response JSON
    must carry the total walking distance in metres either as a top-level
    "distance" field or at routes[0].summary.distance.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str,
        requests_per_second: float = 5.0,
        max_in_flight: int = 4,
        timeout_s: float = 10.0,
        max_attempts: int = 3,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.max_attempts = max_attempts
        self.provider_id = "routing-api"
        self._session = session or requests.Session()
        self._min_interval = 1.0 / requests_per_second if requests_per_second > 0 else 0.0
        self._gate = threading.Semaphore(max_in_flight)
        self._lock = threading.Lock()
        self._last_request = 0.0

    def _throttle(self):
        with self._lock:
            wait = self._last_request + self._min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()

    @staticmethod
    def _extract_distance(payload: dict) -> Optional[float]:
        if "distance" in payload:
            return float(payload["distance"])
        try:
            return float(payload["routes"][0]["summary"]["distance"])
        except (KeyError, IndexError, TypeError):
            return None

    def walking_m(self, origin: Wgs84Point, dest: Wgs84Point) -> Optional[float]:
        params = {
            "origin": f"{origin.lon},{origin.lat}",
            "destination": f"{dest.lon},{dest.lat}",
        }
        headers = {"Authorization": f"KakaoAK {self.api_key}"}
        delay = 0.5
        last_err: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(delay)
                delay *= 2
            try:
                with self._gate:
                    self._throttle()
                    resp = self._session.get(self.base_url, params=params,
                                             headers=headers, timeout=self.timeout_s)
                if resp.status_code == 404:
                    return None  # no pedestrian route
                resp.raise_for_status()
                dist = self._extract_distance(resp.json())
                if dist is None:
                    raise ValueError("response carries no distance field")
                return dist
            except (requests.RequestException, ValueError) as exc:
                last_err = exc
                log.warning("routing API attempt %d failed: %s", attempt + 1, exc)
        raise ProviderError(f"routing API failed after {self.max_attempts} attempts: "
                            f"{last_err}")


# ---------------------------------------------------------------------------
# cache

UNREACHABLE = "UNREACHABLE"


class DistanceCache:
    """Append-friendly persistent cache of resolved walking distances.

    One record per line: poi_id, cell_id, provider_id, d_max, walking_m
    (or UNREACHABLE). Keys include the provider and budget so differently
    configured runs never collide.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._entries: dict[tuple[str, str, str, float], Optional[float]] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with open(self.path, encoding="utf-8", newline="") as fh:
                for row in csv.reader(fh):
                    if len(row) != 5:
                        continue
                    poi_id, cell_id, provider_id, d_max, walking = row
                    value = None if walking == UNREACHABLE else float(walking)
                    self._entries[(poi_id, cell_id, provider_id, float(d_max))] = value
        self._fh = open(self.path, "a", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh)

    def get(self, poi_id: str, cell_id: str, provider_id: str, d_max: float):
        """(hit, walking_m-or-None). walking_m None means unreachable."""
        key = (poi_id, cell_id, provider_id, d_max)
        if key in self._entries:
            return True, self._entries[key]
        return False, None

    def put(self, poi_id: str, cell_id: str, provider_id: str, d_max: float,
            walking_m: Optional[float]):
        key = (poi_id, cell_id, provider_id, d_max)
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = walking_m
            self._writer.writerow([
                poi_id, cell_id, provider_id, repr(d_max),
                UNREACHABLE if walking_m is None else repr(walking_m),
            ])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class ResolveSummary:
    """Outcome counts for one resolve_distances run."""

    resolved: int = 0
    discarded_over_budget: int = 0
    unreachable: int = 0
    unresolved: int = 0
    provider_calls: int = 0
    cache_hits: int = 0
    unresolved_pairs: list[tuple[str, str]] = field(default_factory=list)


def resolve_distances(
    pairs: list[CandidatePair],
    provider: WalkProvider,
    cache: DistanceCache,
    d_max: float,
    poi_locations: dict[str, Wgs84Point],
    cell_locations: dict[str, Wgs84Point],
) -> tuple[list[DistanceRecord], ResolveSummary]:
    """Resolve walking distances for prefiltered pairs.

    Every resolution (including unreachable) is written to the cache so a
    rerun makes no provider calls. Pairs over budget or unreachable are
    discarded; transport-failed pairs are reported in the summary and
    excluded from the output.
    """
    records: list[DistanceRecord] = []
    summary = ResolveSummary()
    for pair in pairs:
        hit, walking = cache.get(pair.poi_id, pair.cell_id, provider.provider_id, d_max)
        if hit:
            summary.cache_hits += 1
        else:
            try:
                walking = provider.walking_m(
                    poi_locations[pair.poi_id], cell_locations[pair.cell_id]
                )
                summary.provider_calls += 1
            except ProviderError as exc:
                log.warning("pair (%s, %s) unresolved: %s",
                            pair.poi_id, pair.cell_id, exc)
                summary.unresolved += 1
                summary.unresolved_pairs.append((pair.poi_id, pair.cell_id))
                continue
            cache.put(pair.poi_id, pair.cell_id, provider.provider_id, d_max, walking)
        if walking is None:
            summary.unreachable += 1
            continue
        if walking < pair.straight_m - STRAIGHT_SLACK_M:
            log.warning("pair (%s, %s): walking %.1f m below straight-line %.1f m",
                        pair.poi_id, pair.cell_id, walking, pair.straight_m)
        if walking > d_max:
            summary.discarded_over_budget += 1
            continue
        records.append(DistanceRecord(pair.poi_id, pair.cell_id,
                                      pair.straight_m, walking))
        summary.resolved += 1
    records.sort(key=lambda r: (r.poi_id, r.cell_id))
    return records, summary


def write_distance_records(records: list[DistanceRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["poi_id", "cell_id", "straight_m", "walking_m"])
        for r in records:
            writer.writerow([r.poi_id, r.cell_id, repr(r.straight_m), repr(r.walking_m)])


def read_distance_records(path) -> list[DistanceRecord]:
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(DistanceRecord(row["poi_id"], row["cell_id"],
                                          float(row["straight_m"]),
                                          float(row["walking_m"])))
    return records
