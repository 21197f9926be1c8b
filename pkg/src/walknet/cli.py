"""Pipeline orchestration CLI.

Subcommands cover each stage (synth, ingest, distances, build, detect,
report, export) plus `run` for the whole pipeline. A key=value manifest
file centralizes inputs and parameters; command-line flags override it.
Every run writes a provenance record sufficient to replay it.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass
from datetime import timedelta
from pathlib import Path
from typing import Optional

from . import __version__, analysis, community, distance, graph, ingest, synth

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


@dataclass
class RunManifest:
    """All inputs and parameters of one pipeline run."""

    visitors: str = ""
    pois: str = ""
    road_nodes: str = ""
    road_edges: str = ""
    outdir: str = "out"
    coordinate_mode: str = "wgs84"
    window_start: str = ""  # "YYYYMMDD-HH", inclusive
    window_end: str = ""
    d_max: float = 1000.0
    provider: str = "roadgraph"  # roadgraph | fallback | api
    detour_factor: float = 1.3
    api_url: str = ""
    gamma: Optional[float] = None
    gephi_resolution: Optional[float] = None
    seed: int = 0
    min_nodes: int = 2000
    min_share: float = 0.03
    jobs: int = 1
    compare_window_start: str = ""
    compare_window_end: str = ""

    def validate(self):
        if self.gamma is not None and self.gephi_resolution is not None:
            raise ManifestError("set only one of gamma / gephi_resolution")
        if self.gamma is None and self.gephi_resolution is None:
            self.gamma = 1.0  # documented default resolution
        for key in ("visitors", "pois"):
            path = getattr(self, key)
            if not path:
                raise ManifestError(f"manifest key {key!r} is required")
            if not Path(path).exists():
                raise ManifestError(f"{key} input path not found: {path}")
        if self.provider == "roadgraph":
            for key in ("road_nodes", "road_edges"):
                path = getattr(self, key)
                if not path or not Path(path).exists():
                    raise ManifestError(
                        f"{key} input path not found: {path or '(unset)'}")
        if not self.window_start or not self.window_end:
            raise ManifestError("window_start and window_end are required")

    @property
    def effective_gamma(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return community.gamma_from_gephi_resolution(self.gephi_resolution)

    def window(self) -> ingest.TimeWindow:
        start = ingest.parse_timestamp(self.window_start)
        end = ingest.parse_timestamp(self.window_end)
        # the end hour is inclusive
        return ingest.TimeWindow(start, end + timedelta(hours=1) - timedelta(
            microseconds=1))

    def compare_window(self) -> Optional[ingest.TimeWindow]:
        if not self.compare_window_start:
            return None
        start = ingest.parse_timestamp(self.compare_window_start)
        end = ingest.parse_timestamp(self.compare_window_end)
        return ingest.TimeWindow(start, end + timedelta(hours=1) - timedelta(
            microseconds=1))


_FLOAT_KEYS = {"d_max", "detour_factor", "gamma", "gephi_resolution", "min_share"}
_INT_KEYS = {"seed", "min_nodes", "jobs"}


def load_manifest(path) -> RunManifest:
    """Load a manifest from a key=value file, or from a provenance JSON
    (its embedded manifest replays the original run)."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    values: dict[str, object] = {}
    if path.suffix == ".json":
        payload = json.loads(path.read_text(encoding="utf-8"))
        values = dict(payload.get("manifest", payload))
    else:
        for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ManifestError(f"{path}:{line_no}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    manifest = RunManifest()
    for key, value in values.items():
        if not hasattr(manifest, key):
            raise ManifestError(f"unknown manifest key {key!r}")
        if value is None or value == "":
            continue
        if key in _FLOAT_KEYS:
            value = float(value)
        elif key in _INT_KEYS:
            value = int(value)
        setattr(manifest, key, value)
    return manifest


def _apply_overrides(manifest: RunManifest, args: argparse.Namespace):
    for key in vars(manifest):
        value = getattr(args, key, None)
        if value is not None:
            setattr(manifest, key, value)


# ---------------------------------------------------------------------------
# pipeline stages (in-memory state shared by `run`, re-loadable per stage)

class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _make_provider(manifest: RunManifest):
    if manifest.provider == "fallback":
        return distance.FallbackProvider(manifest.detour_factor)
    if manifest.provider == "roadgraph":
        road = distance.RoadGraph.from_files(manifest.road_nodes, manifest.road_edges)
        return distance.RoadGraphProvider(
            road, cutoff_m=manifest.d_max + 2 * distance.SNAP_MAX_M)
    if manifest.provider == "api":
        api_key = os.environ.get("WALKNET_API_KEY", "")
        if not manifest.api_url or not api_key:
            raise ManifestError("api provider needs api_url in the manifest and "
                                "WALKNET_API_KEY in the environment")
        return distance.RoutingApiClient(manifest.api_url, api_key)
    raise ManifestError(f"unknown provider {manifest.provider!r}")


def write_cells(cells, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "lat", "lon", "n_v"])
        for c in cells:
            writer.writerow([c.cell_id, repr(c.location.lat), repr(c.location.lon),
                             c.n_v])


def read_cells(path):
    cells = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            cells.append(ingest.CellAccumulation(
                row["cell_id"],
                ingest.Wgs84Point(float(row["lat"]), float(row["lon"])),
                int(row["n_v"])))
    return cells


def run_pipeline(manifest: RunManifest) -> dict:
    """Execute every stage; returns the provenance record (also written
    to <outdir>/provenance.json)."""
    manifest.validate()
    outdir = Path(manifest.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    provenance: dict = {
        "tool": "walknet",
        "version": __version__,
        "manifest": asdict(manifest),
        "seed": manifest.seed,
        "stages": {},
        "counts": {},
    }
    counts = provenance["counts"]
    stage = "ingest"
    try:
        t0 = time.monotonic()
        snapshots, bad = ingest.parse_visitor_file(
            manifest.visitors, coordinate_mode=manifest.coordinate_mode)
        pois = ingest.parse_poi_file(manifest.pois)
        cells = ingest.accumulate_cells(snapshots, manifest.window())
        write_cells(cells, outdir / "cells.csv")
        counts.update(snapshot_rows=bad.total_rows, bad_rows=bad.bad_rows,
                      snapshots=len(snapshots), cells=len(cells),
                      pois_in=len(pois))
        provenance["stages"][stage] = round(time.monotonic() - t0, 3)

        stage = "prefilter"
        t0 = time.monotonic()
        pairs = distance.prefilter_pairs(pois, cells, manifest.d_max)
        counts["prefilter_pairs"] = len(pairs)
        provenance["stages"][stage] = round(time.monotonic() - t0, 3)

        stage = "distances"
        t0 = time.monotonic()
        provider = _make_provider(manifest)
        poi_loc = {p.poi_id: p.location for p in pois}
        cell_loc = {c.cell_id: c.location for c in cells}
        with distance.DistanceCache(outdir / "distance_cache.csv") as cache:
            records, summary = distance.resolve_distances(
                pairs, provider, cache, manifest.d_max, poi_loc, cell_loc)
        distance.write_distance_records(records, outdir / "distances.csv")
        counts.update(distance_records=len(records),
                      provider_calls=summary.provider_calls,
                      cache_hits=summary.cache_hits,
                      unreachable=summary.unreachable,
                      unresolved=summary.unresolved)
        provenance["stages"][stage] = round(time.monotonic() - t0, 3)

        stage = "verify"
        t0 = time.monotonic()
        links = [(r.poi_id, r.cell_id) for r in records]
        kept, dropped, _per_poi = ingest.verify_pois(pois, links, cells)
        kept_ids = {p.poi_id for p in kept}
        records = [r for r in records if r.poi_id in kept_ids]
        counts.update(pois_kept=len(kept), pois_dropped=len(dropped))
        provenance["stages"][stage] = round(time.monotonic() - t0, 3)

        stage = "build"
        t0 = time.monotonic()
        g = graph.build_graph(records, cells, manifest.d_max)
        stats = graph.graph_stats(g)
        graph.write_edge_list(g, outdir / "edges.csv")
        poi_by_id = {p.poi_id: p for p in pois}
        n_v = {c.cell_id: c.n_v for c in cells}
        node_attrs = {}
        for node in g.poi_nodes:
            p = poi_by_id[node]
            node_attrs[node] = {"district": p.district, "category": p.category}
        for node in g.cell_nodes:
            node_attrs[node] = {"n_v": str(n_v[node])}
        graph.write_gexf(g, outdir / "graph.gexf", node_attrs)
        counts.update(graph_nodes=stats.node_count, graph_edges=stats.edge_count)
        provenance["stages"][stage] = round(time.monotonic() - t0, 3)

        stage = "detect"
        t0 = time.monotonic()
        partition = community.louvain(g, manifest.effective_gamma, manifest.seed)
        leading, residual = community.filter_leading(
            partition, g, manifest.min_nodes, manifest.min_share)
        stats_rows = community.community_stats(g, partition, leading)
        community.write_partition(g, partition, leading, outdir / "partition.csv")
        analysis.write_community_report(stats_rows, outdir / "communities.csv")
        counts.update(communities=len(set(partition.assignment.values())),
                      leading=len(leading), residual_nodes=len(residual),
                      modularity=round(community.modularity(
                          g, partition, manifest.effective_gamma), 6))
        provenance["stages"][stage] = round(time.monotonic() - t0, 3)

        stage = "report"
        t0 = time.monotonic()
        centrality = analysis.eigenvector_centrality(g)
        scores = analysis.compute_poi_scores(g, partition, leading, pois, centrality)
        _write_poi_scores(scores, outdir / "poi_scores.csv")
        for c in leading:
            analysis.write_top_poi_report(
                analysis.top_poi_report(scores, c),
                outdir / f"top_pois_community_{c}.csv")
        analysis.write_category_report(
            analysis.category_distribution(scores, "global"),
            outdir / "categories_global.csv")
        analysis.write_category_report(
            analysis.category_distribution(scores, "community"),
            outdir / "categories_by_community.csv")
        analysis.write_category_report(
            analysis.category_distribution(scores, "excluded"),
            outdir / "categories_excluded.csv")
        analysis.write_attraction_report(
            analysis.official_attraction_coverage(scores),
            outdir / "official_attractions.csv")
        analysis.write_excluded_report(
            analysis.excluded_poi_by_district(scores),
            outdir / "excluded_by_district.csv")
        _write_slices(manifest, snapshots, outdir)
        provenance["stages"][stage] = round(time.monotonic() - t0, 3)

        stage = "export"
        t0 = time.monotonic()
        analysis.write_geojson(analysis.poi_geojson(scores, pois),
                               outdir / "pois.geojson")
        analysis.write_geojson(analysis.cell_geojson(cells, partition, leading),
                               outdir / "cells.geojson")
        provenance["stages"][stage] = round(time.monotonic() - t0, 3)
    except Exception as exc:
        (outdir / f"{stage}.partial").touch()
        raise StageFailure(stage, exc) from exc

    with open(outdir / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    summary_lines = [f"walknet {__version__} run", f"seed {manifest.seed}",
                     f"gamma {manifest.effective_gamma:g}"]
    summary_lines += [f"{k} {v}" for k, v in sorted(counts.items())]
    (outdir / "summary.txt").write_text("\n".join(summary_lines) + "\n",
                                        encoding="utf-8")
    return provenance


def _write_poi_scores(scores, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["poi_id", "community_id", "weighted_degree",
                         "eigenvector_centrality", "category", "district",
                         "official_attraction"])
        for s in sorted(scores, key=lambda s: s.poi_id):
            writer.writerow([
                s.poi_id,
                "" if s.community_id is None else s.community_id,
                f"{s.weighted_degree:.5f}", f"{s.eigenvector_centrality:.5f}",
                s.category, s.district, str(s.official_attraction)])


def _write_slices(manifest: RunManifest, snapshots, outdir: Path):
    window_b = manifest.compare_window()
    window_a = manifest.window()
    dates_a = sorted({s.timestamp.date() for s in snapshots
                      if window_a.contains(s.timestamp)})
    slices = analysis.temporal_slices(snapshots, [(d, None) for d in dates_a])
    comparisons = []
    if window_b is not None:
        dates_b = sorted({s.timestamp.date() for s in snapshots
                          if window_b.contains(s.timestamp)})
        slices_b = analysis.temporal_slices(snapshots, [(d, None) for d in dates_b])
        comparisons = [analysis.slice_compare(a, b)
                       for a, b in zip(slices, slices_b)]
        slices = slices + slices_b
    analysis.write_slice_report(slices, comparisons, outdir / "slices.csv")


# ---------------------------------------------------------------------------
# subcommands

def _add_manifest_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="manifest file (key=value, or a "
                        "provenance.json to replay)")
    parser.add_argument("--visitors")
    parser.add_argument("--pois")
    parser.add_argument("--road-nodes", dest="road_nodes")
    parser.add_argument("--road-edges", dest="road_edges")
    parser.add_argument("--outdir")
    parser.add_argument("--coordinate-mode", dest="coordinate_mode",
                        choices=["wgs84", "utmk"])
    parser.add_argument("--window-start", dest="window_start")
    parser.add_argument("--window-end", dest="window_end")
    parser.add_argument("--d-max", dest="d_max", type=float)
    parser.add_argument("--provider", choices=["roadgraph", "fallback", "api"])
    parser.add_argument("--detour-factor", dest="detour_factor", type=float)
    parser.add_argument("--api-url", dest="api_url")
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--gephi-resolution", dest="gephi_resolution", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--min-nodes", dest="min_nodes", type=int)
    parser.add_argument("--min-share", dest="min_share", type=float)
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--compare-window-start", dest="compare_window_start")
    parser.add_argument("--compare-window-end", dest="compare_window_end")


def _manifest_from_args(args) -> RunManifest:
    manifest = load_manifest(args.config) if args.config else RunManifest()
    _apply_overrides(manifest, args)
    return manifest


def _cmd_synth(args) -> int:
    plan = synth.CityPlan(seed=args.seed if args.seed is not None else 0)
    if args.small:
        plan = synth.recovery_plan(args.seed if args.seed is not None else 0)
    data = synth.generate_city(plan)
    paths = synth.write_city(data, args.out)
    dates = sorted(plan.dates)
    manifest_path = Path(args.out) / "manifest.cfg"
    manifest_path.write_text(
        "\n".join([
            f"visitors={paths['visitors']}",
            f"pois={paths['pois']}",
            f"road_nodes={paths['road_nodes']}",
            f"road_edges={paths['road_edges']}",
            f"window_start={dates[0].strftime('%Y%m%d')}-00",
            f"window_end={dates[-1].strftime('%Y%m%d')}-23",
            f"outdir={Path(args.out) / 'run'}",
            f"seed={plan.seed}",
        ]) + "\n", encoding="utf-8")
    print(f"synthetic city written to {args.out} ({len(data.snapshots)} snapshot "
          f"rows, {len(data.pois)} POIs); manifest at {manifest_path}")
    return 0


def _cmd_run(args) -> int:
    manifest = _manifest_from_args(args)
    provenance = run_pipeline(manifest)
    print(f"run complete: {provenance['counts']}")
    return 0


def _cmd_ingest(args) -> int:
    manifest = _manifest_from_args(args)
    manifest.validate()
    outdir = Path(manifest.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    snapshots, bad = ingest.parse_visitor_file(
        manifest.visitors, coordinate_mode=manifest.coordinate_mode)
    cells = ingest.accumulate_cells(snapshots, manifest.window())
    write_cells(cells, outdir / "cells.csv")
    print(f"{len(snapshots)} snapshots ({bad.bad_rows} bad rows), "
          f"{len(cells)} cells -> {outdir / 'cells.csv'}")
    return 0


def _cmd_distances(args) -> int:
    manifest = _manifest_from_args(args)
    manifest.validate()
    outdir = Path(manifest.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cells = read_cells(outdir / "cells.csv")
    pois = ingest.parse_poi_file(manifest.pois)
    pairs = distance.prefilter_pairs(pois, cells, manifest.d_max)
    provider = _make_provider(manifest)
    with distance.DistanceCache(outdir / "distance_cache.csv") as cache:
        records, summary = distance.resolve_distances(
            pairs, provider, cache, manifest.d_max,
            {p.poi_id: p.location for p in pois},
            {c.cell_id: c.location for c in cells})
    distance.write_distance_records(records, outdir / "distances.csv")
    print(f"{len(pairs)} candidate pairs, {len(records)} records "
          f"({summary.provider_calls} provider calls, {summary.cache_hits} cache "
          f"hits, {summary.unreachable} unreachable, {summary.unresolved} "
          f"unresolved)")
    return 0


def _cmd_build(args) -> int:
    manifest = _manifest_from_args(args)
    manifest.validate()
    outdir = Path(manifest.outdir)
    cells = read_cells(outdir / "cells.csv")
    records = distance.read_distance_records(outdir / "distances.csv")
    pois = ingest.parse_poi_file(manifest.pois)
    kept, dropped, _ = ingest.verify_pois(
        pois, [(r.poi_id, r.cell_id) for r in records], cells)
    kept_ids = {p.poi_id for p in kept}
    records = [r for r in records if r.poi_id in kept_ids]
    g = graph.build_graph(records, cells, manifest.d_max)
    graph.write_edge_list(g, outdir / "edges.csv")
    stats = graph.graph_stats(g)
    print(f"graph: {stats.node_count} nodes, {stats.edge_count} edges, "
          f"avg degree {stats.average_degree:.2f}, avg weighted degree "
          f"{stats.average_weighted_degree:.2f}; {len(dropped)} POIs dropped")
    return 0


def _cmd_detect(args) -> int:
    manifest = _manifest_from_args(args)
    outdir = Path(manifest.outdir)
    g = graph.read_edge_list(outdir / "edges.csv")
    if manifest.gamma is None and manifest.gephi_resolution is None:
        manifest.gamma = 1.0
    partition = community.louvain(g, manifest.effective_gamma, manifest.seed)
    leading, residual = community.filter_leading(
        partition, g, manifest.min_nodes, manifest.min_share)
    community.write_partition(g, partition, leading, outdir / "partition.csv")
    analysis.write_community_report(
        community.community_stats(g, partition, leading),
        outdir / "communities.csv")
    print(f"{len(set(partition.assignment.values()))} communities, "
          f"{len(leading)} leading, {len(residual)} residual nodes, "
          f"Q={community.modularity(g, partition, manifest.effective_gamma):.4f}")
    return 0


def _cmd_report(args) -> int:
    manifest = _manifest_from_args(args)
    outdir = Path(manifest.outdir)
    g = graph.read_edge_list(outdir / "edges.csv")
    partition, leading = community.read_partition(outdir / "partition.csv")
    pois = ingest.parse_poi_file(manifest.pois)
    scores = analysis.compute_poi_scores(g, partition, leading, pois)
    _write_poi_scores(scores, outdir / "poi_scores.csv")
    for c in leading:
        analysis.write_top_poi_report(analysis.top_poi_report(scores, c),
                                      outdir / f"top_pois_community_{c}.csv")
    analysis.write_category_report(
        analysis.category_distribution(scores, "global"),
        outdir / "categories_global.csv")
    analysis.write_attraction_report(
        analysis.official_attraction_coverage(scores),
        outdir / "official_attractions.csv")
    analysis.write_excluded_report(
        analysis.excluded_poi_by_district(scores),
        outdir / "excluded_by_district.csv")
    print(f"reports written to {outdir}")
    return 0


def _cmd_export(args) -> int:
    manifest = _manifest_from_args(args)
    outdir = Path(manifest.outdir)
    g = graph.read_edge_list(outdir / "edges.csv")
    partition, leading = community.read_partition(outdir / "partition.csv")
    pois = ingest.parse_poi_file(manifest.pois)
    cells = read_cells(outdir / "cells.csv")
    scores = analysis.compute_poi_scores(g, partition, leading, pois)
    n_v = {c.cell_id: c.n_v for c in cells}
    poi_by_id = {p.poi_id: p for p in pois}
    node_attrs = {}
    for node in g.poi_nodes:
        p = poi_by_id[node]
        node_attrs[node] = {"district": p.district, "category": p.category}
    for node in g.cell_nodes:
        node_attrs[node] = {"n_v": str(n_v[node])}
    graph.write_gexf(g, outdir / "graph.gexf", node_attrs)
    analysis.write_geojson(analysis.poi_geojson(scores, pois),
                           outdir / "pois.geojson")
    analysis.write_geojson(analysis.cell_geojson(cells, partition, leading),
                           outdir / "cells.geojson")
    print(f"exports written to {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="walknet",
        description="Visitor-weighted POI-cell walkability network pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic city")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int)
    p_synth.add_argument("--small", action="store_true",
                         help="use the desk-scale recovery plan")
    p_synth.set_defaults(func=_cmd_synth)

    for name, func, help_text in [
        ("run", _cmd_run, "execute the full pipeline"),
        ("ingest", _cmd_ingest, "parse inputs and accumulate cells"),
        ("distances", _cmd_distances, "prefilter and resolve walking distances"),
        ("build", _cmd_build, "verify POIs and build the weighted graph"),
        ("detect", _cmd_detect, "Louvain community detection"),
        ("report", _cmd_report, "POI-level reports"),
        ("export", _cmd_export, "GEXF and GeoJSON exports"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_manifest_flags(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: "
                        "%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, FileNotFoundError, ingest.FormatError,
            ingest.DataQualityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
