"""Parsing and validation of visitor-snapshot and POI files, per-cell
visitor accumulation over a time window, and POI verification against
observed visitors.

Input files are UTF-8 comma-delimited with a header row. Column order is
free; names are fixed (case-insensitive). Timestamps use the feed format
"YYYYMMDD-HH" and are naive local time.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable

from .geo import UtmkPoint, Wgs84Point, utmk_to_wgs84

log = logging.getLogger(__name__)

VISITOR_COLUMNS = ("cell_id", "time", "visitors", "lat", "lon")
POI_COLUMNS = ("poi_id", "title", "address", "lat", "lon", "categories",
               "official_attraction")

DISTRICT_PATTERN = re.compile(r"\b([A-Za-z]+-Gu)\b")


class FormatError(ValueError):
    """The file header does not match the expected schema."""


class DataQualityError(ValueError):
    """Too many malformed rows, or an integrity violation such as a
    duplicated id."""


@dataclass(frozen=True)
class VisitorSnapshot:
    """One hourly visitor count for one grid cell."""

    cell_id: str
    timestamp: datetime
    visitors: int
    location: Wgs84Point


@dataclass(frozen=True)
class Poi:
    """A destination with coordinates, category, district and the
    official-attraction flag."""

    poi_id: str
    title: str
    address: str
    location: Wgs84Point
    category: str
    district: str
    official_attraction: bool


@dataclass(frozen=True)
class CellAccumulation:
    """Accumulated visitors for one cell over the analysis window."""

    cell_id: str
    location: Wgs84Point
    n_v: int


@dataclass(frozen=True)
class TimeWindow:
    """Closed interval of naive timestamps."""

    start: datetime
    end: datetime

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"window start {self.start} after end {self.end}")

    def contains(self, ts: datetime) -> bool:
        return self.start <= ts <= self.end


@dataclass
class BadRowReport:
    """Counts and samples of rows rejected during parsing."""

    total_rows: int = 0
    bad_rows: int = 0
    samples: list[str] = field(default_factory=list)

    def record(self, line_no: int, reason: str):
        self.bad_rows += 1
        if len(self.samples) < 10:
            self.samples.append(f"line {line_no}: {reason}")


def parse_timestamp(text: str) -> datetime:
    """Parse the feed's "YYYYMMDD-HH" timestamp."""
    ts = datetime.strptime(text.strip(), "%Y%m%d-%H")
    return ts


def _open_text(source) -> io.TextIOBase:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase):
        return source
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8", newline="")

def _reader(fh, required: tuple[str, ...], what: str) -> csv.DictReader:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        raise FormatError(f"{what}: empty file, missing header")
    fields = [f.strip().lower() for f in reader.fieldnames]
    reader.fieldnames = fields
    missing = [c for c in required if c not in fields]
    if missing:
        raise FormatError(f"{what}: missing header column(s) {', '.join(missing)}")
    return reader


def parse_visitor_file(
    source,
    coordinate_mode: str = "wgs84",
    max_bad_ratio: float = 0.01,
) -> tuple[list[VisitorSnapshot], BadRowReport]:
    """Parse a visitor snapshot file.

    coordinate_mode "wgs84" reads lat/lon degrees directly; "utmk" reads
    the lat column as northing and the lon column as easting in EPSG:5179
    metres and converts. Malformed rows are skipped and counted; the parse
    fails only when their ratio exceeds max_bad_ratio.
    """
    if coordinate_mode not in ("wgs84", "utmk"):
        raise ValueError(f"unknown coordinate_mode {coordinate_mode!r}")
    fh = _open_text(source)
    report = BadRowReport()
    snapshots: list[VisitorSnapshot] = []
    try:
        reader = _reader(fh, VISITOR_COLUMNS, "visitor file")
        for line_no, row in enumerate(reader, start=2):
            report.total_rows += 1
            try:
                cell_id = (row["cell_id"] or "").strip()
                if not cell_id:
                    raise ValueError("empty cell_id")
                ts = parse_timestamp(row["time"])
                visitors = int(row["visitors"])
                if visitors < 1:
                    raise ValueError(f"visitors {visitors} < 1")
                if coordinate_mode == "utmk":
                    loc = utmk_to_wgs84(
                        UtmkPoint(float(row["lon"]), float(row["lat"]))
                    )
                else:
                    loc = Wgs84Point(float(row["lat"]), float(row["lon"]))
                snapshots.append(VisitorSnapshot(cell_id, ts, visitors, loc))
            except (ValueError, TypeError, KeyError) as exc:
                report.record(line_no, str(exc))
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    if report.total_rows and report.bad_rows / report.total_rows > max_bad_ratio:
        raise DataQualityError(
            f"visitor file: {report.bad_rows}/{report.total_rows} malformed rows "
            f"exceeds the allowed ratio {max_bad_ratio}; "
            f"first failures: {'; '.join(report.samples[:3])}"
        )
    return snapshots, report


def _parse_bool(text: str) -> bool:
    token = text.strip().lower()
    if token in ("true", "1", "yes"):
        return True
    if token in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def district_from_address(address: str) -> str:
    """Best-effort district label from an address string ("...-Gu")."""
    m = DISTRICT_PATTERN.search(address)
    return m.group(1) if m else "unknown"


def parse_poi_file(source) -> list[Poi]:
    """Parse a POI file. A duplicate poi_id is fatal.

    An optional "district" column is honoured; otherwise the district is
    extracted from the address, falling back to "unknown".
    """
    fh = _open_text(source)
    pois: list[Poi] = []
    seen: set[str] = set()
    try:
        reader = _reader(fh, POI_COLUMNS, "poi file")
        has_district = "district" in (reader.fieldnames or [])
        for line_no, row in enumerate(reader, start=2):
            poi_id = (row["poi_id"] or "").strip()
            if not poi_id:
                raise DataQualityError(f"poi file line {line_no}: empty poi_id")
            if poi_id in seen:
                raise DataQualityError(f"poi file: duplicate poi_id {poi_id!r}")
            seen.add(poi_id)
            category = (row["categories"] or "").strip()
            if not category:
                raise DataQualityError(f"poi file line {line_no}: empty category "
                                       f"for {poi_id}")
            address = (row["address"] or "").strip()
            district = (row["district"].strip() if has_district and row.get("district")
                        else district_from_address(address))
            pois.append(Poi(
                poi_id=poi_id,
                title=(row["title"] or "").strip(),
                address=address,
                location=Wgs84Point(float(row["lat"]), float(row["lon"])),
                category=category,
                district=district,
                official_attraction=_parse_bool(row["official_attraction"]),
            ))
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    return pois


def accumulate_cells(
    snapshots: Iterable[VisitorSnapshot],
    window: TimeWindow,
) -> list[CellAccumulation]:
    """Group in-window snapshots by cell and sum visitor counts.

    The cell location comes from the first snapshot seen for that cell;
    a conflicting location later is a warning, first wins. Output is
    sorted by cell_id.
    """
    totals: dict[str, int] = {}
    locations: dict[str, Wgs84Point] = {}
    for snap in snapshots:
        if not window.contains(snap.timestamp):
            continue
        if snap.cell_id in locations:
            if locations[snap.cell_id] != snap.location:
                log.warning("cell %s has conflicting locations %s vs %s; keeping first",
                            snap.cell_id, locations[snap.cell_id], snap.location)
        else:
            locations[snap.cell_id] = snap.location
        totals[snap.cell_id] = totals.get(snap.cell_id, 0) + snap.visitors
    return [CellAccumulation(cid, locations[cid], totals[cid])
            for cid in sorted(totals)]


def verify_pois(
    pois: list[Poi],
    poi_cell_links: Iterable[tuple[str, str]],
    cells: list[CellAccumulation],
) -> tuple[list[Poi], list[Poi], dict[str, int]]:
    """Split POIs into kept/dropped by linked visitor volume.

    A POI's visitor total is the plain sum of n_v over its linked cells.
    POIs with zero linked visitors (including POIs with no links at all)
    are dropped.
    """
    n_v = {c.cell_id: c.n_v for c in cells}
    per_poi: dict[str, int] = {p.poi_id: 0 for p in pois}
    for poi_id, cell_id in poi_cell_links:
        if poi_id in per_poi:
            per_poi[poi_id] += n_v.get(cell_id, 0)
    kept = [p for p in pois if per_poi[p.poi_id] > 0]
    dropped = [p for p in pois if per_poi[p.poi_id] == 0]
    return kept, dropped, per_poi
