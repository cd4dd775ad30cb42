"""Planar geometry, a uniform-grid spatial index, and trip aggregation.

Containment uses even-odd ray casting on closed polygons: a point lying
exactly on a ring edge counts as contained. When several units contain a
point (shared edges, overlapping input) the unit that comes first in the
zoning's catalog order wins, both for the indexed lookup and for the
exhaustive scan.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

# Upper bound on point x edge products evaluated per vectorised block.
_BLOCK_ELEMENTS = 1 << 20


class ZoningError(ValueError):
    """Raised when a zoning or one of its polygons fails validation."""


class Point(NamedTuple):
    x: float
    y: float


class TripRecord(NamedTuple):
    pickup: Point
    dropoff: Point

    @classmethod
    def from_coords(cls, px: float, py: float, dx: float, dy: float) -> "TripRecord":
        values = (float(px), float(py), float(dx), float(dy))
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite trip coordinates: {values}")
        return cls(Point(values[0], values[1]), Point(values[2], values[3]))


def _as_ring(coords) -> np.ndarray:
    ring = np.asarray(coords, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] < 2:
        raise ZoningError("ring must be a sequence of (x, y) pairs")
    ring = ring[:, :2]
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring):
        # drop consecutive duplicate vertices
        keep = np.ones(len(ring), dtype=bool)
        keep[1:] = np.any(ring[1:] != ring[:-1], axis=1)
        ring = ring[keep]
    return np.ascontiguousarray(ring)


def _segments_touch(ax, ay, bx, by, cx, cy, dx, dy) -> np.ndarray:
    """Elementwise closed-segment intersection test for AB against CD."""

    def orient(px, py, qx, qy, rx, ry):
        return np.sign((qx - px) * (ry - py) - (qy - py) * (rx - px))

    def on_segment(px, py, qx, qy, rx, ry):
        return (
            (np.minimum(px, qx) <= rx) & (rx <= np.maximum(px, qx))
            & (np.minimum(py, qy) <= ry) & (ry <= np.maximum(py, qy))
        )

    o1 = orient(ax, ay, bx, by, cx, cy)
    o2 = orient(ax, ay, bx, by, dx, dy)
    o3 = orient(cx, cy, dx, dy, ax, ay)
    o4 = orient(cx, cy, dx, dy, bx, by)
    hit = (o1 * o2 < 0) & (o3 * o4 < 0)
    hit |= (o1 == 0) & on_segment(ax, ay, bx, by, cx, cy)
    hit |= (o2 == 0) & on_segment(ax, ay, bx, by, dx, dy)
    hit |= (o3 == 0) & on_segment(cx, cy, dx, dy, ax, ay)
    hit |= (o4 == 0) & on_segment(cx, cy, dx, dy, bx, by)
    return hit


def ring_is_simple(ring: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed ring touch."""
    n = len(ring)
    if n < 4:
        return True
    a = ring
    b = np.roll(ring, -1, axis=0)
    j = np.arange(n)
    block = max(1, _BLOCK_ELEMENTS // n)
    for start in range(0, n, block):
        i = np.arange(start, min(n, start + block))[:, None]
        # edges i and j are adjacent when they share a vertex
        mask = (j[None, :] > i + 1) & ~((i == 0) & (j[None, :] == n - 1))
        if not mask.any():
            continue
        hit = _segments_touch(
            a[i, 0], a[i, 1], b[i, 0], b[i, 1],
            a[None, :, 0], a[None, :, 1], b[None, :, 0], b[None, :, 1],
        )
        if np.any(hit & mask):
            return False
    return True


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class Polygon:
    """A polygon with one exterior ring and optional holes.

    Rings are stored open (the closing vertex is implied) as ``(n, 2)``
    float arrays.
    """

    exterior: np.ndarray
    holes: tuple[np.ndarray, ...] = ()

    @classmethod
    def from_coords(cls, exterior, holes=(), validate: bool = True) -> "Polygon":
        poly = cls(_as_ring(exterior), tuple(_as_ring(h) for h in holes))
        if validate:
            poly.validate()
        return poly

    @property
    def rings(self) -> tuple[np.ndarray, ...]:
        return (self.exterior, *self.holes)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        ext = self.exterior
        return (
            float(ext[:, 0].min()), float(ext[:, 1].min()),
            float(ext[:, 0].max()), float(ext[:, 1].max()),
        )

    def validate(self) -> None:
        for k, ring in enumerate(self.rings):
            label = "exterior" if k == 0 else f"hole {k - 1}"
            if len(ring) < 3:
                raise ZoningError(f"{label} ring has {len(ring)} distinct vertices (need >= 3)")
            if not np.all(np.isfinite(ring)):
                raise ZoningError(f"{label} ring has non-finite coordinates")
            if _signed_area(ring) == 0.0:
                raise ZoningError(f"{label} ring has zero area")
            if not ring_is_simple(ring):
                raise ZoningError(f"{label} ring is self-intersecting")

    def to_geojson(self) -> list:
        out = []
        for ring in self.rings:
            closed = np.vstack([ring, ring[:1]])
            out.append(closed.tolist())
        return out


def _ring_scan(x: float, y: float, ring: np.ndarray) -> tuple[bool, bool]:
    """Return ``(odd_crossings, on_boundary)`` for one ring, scalar path."""
    inside = False
    n = len(ring)
    for k in range(n):
        ax, ay = float(ring[k, 0]), float(ring[k, 1])
        bx, by = float(ring[(k + 1) % n, 0]), float(ring[(k + 1) % n, 1])
        if (
            (bx - ax) * (y - ay) - (by - ay) * (x - ax) == 0.0
            and min(ax, bx) <= x <= max(ax, bx)
            and min(ay, by) <= y <= max(ay, by)
        ):
            return inside, True
        if (ay > y) != (by > y):
            if x < (bx - ax) * (y - ay) / (by - ay) + ax:
                inside = not inside
    return inside, False


def point_in_polygon(p: Point, poly: Polygon) -> bool:
    """Closed even-odd containment; boundary points return True."""
    x, y = float(p[0]), float(p[1])
    minx, miny, maxx, maxy = poly.bounds
    if x < minx or x > maxx or y < miny or y > maxy:
        return False
    odd = False
    for ring in poly.rings:
        ring_odd, boundary = _ring_scan(x, y, ring)
        if boundary:
            return True
        odd ^= ring_odd
    return odd


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, poly: Polygon) -> np.ndarray:
    """Vectorised :func:`point_in_polygon`; same arithmetic, same boundary rule."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    result = np.zeros(xs.shape, dtype=bool)
    if xs.size == 0:
        return result
    minx, miny, maxx, maxy = poly.bounds
    sel = np.flatnonzero((xs >= minx) & (xs <= maxx) & (ys >= miny) & (ys <= maxy))
    if sel.size == 0:
        return result
    px = xs[sel][:, None]
    py = ys[sel][:, None]
    odd = np.zeros(sel.size, dtype=bool)
    boundary = np.zeros(sel.size, dtype=bool)
    for ring in poly.rings:
        n = len(ring)
        block = max(1, _BLOCK_ELEMENTS // max(1, sel.size))
        for start in range(0, n, block):
            stop = min(n, start + block)
            ax = ring[start:stop, 0][None, :]
            ay = ring[start:stop, 1][None, :]
            nxt = np.arange(start + 1, stop + 1) % n
            bx = ring[nxt, 0][None, :]
            by = ring[nxt, 1][None, :]
            on_edge = (
                ((bx - ax) * (py - ay) - (by - ay) * (px - ax) == 0.0)
                & (np.minimum(ax, bx) <= px) & (px <= np.maximum(ax, bx))
                & (np.minimum(ay, by) <= py) & (py <= np.maximum(ay, by))
            )
            boundary |= on_edge.any(axis=1)
            straddle = (ay > py) != (by > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = (bx - ax) * (py - ay) / (by - ay) + ax
            crossings = np.count_nonzero(straddle & (px < xint), axis=1)
            odd ^= (crossings % 2).astype(bool)
    result[sel] = boundary | odd
    return result


def representative_point(poly: Polygon) -> Point:
    """A point strictly inside ``poly`` (midpoint of the widest scanline span)."""
    minx, miny, maxx, maxy = poly.bounds
    vertex_ys = np.unique(np.concatenate([r[:, 1] for r in poly.rings]))
    # scan between two distinct vertex heights so no vertex lies on the line
    mid = 0.5 * (miny + maxy)
    above = vertex_ys[vertex_ys > mid]
    below = vertex_ys[vertex_ys <= mid]
    y = 0.5 * (below.max() + above.min()) if above.size and below.size else mid
    xs = []
    for ring in poly.rings:
        a = ring
        b = np.roll(ring, -1, axis=0)
        straddle = (a[:, 1] > y) != (b[:, 1] > y)
        ax, ay, bx, by = a[straddle, 0], a[straddle, 1], b[straddle, 0], b[straddle, 1]
        xs.extend((bx - ax) * (y - ay) / (by - ay) + ax)
    xs = np.sort(np.asarray(xs))
    if xs.size < 2:
        raise ZoningError("cannot find an interior point")
    widths = xs[1::2] - xs[0::2]
    k = int(np.argmax(widths))
    return Point(float(0.5 * (xs[2 * k] + xs[2 * k + 1])), float(y))


@dataclass
class Zoning:
    """Named spatial units, each one or more polygons, in catalog order."""

    level: str
    units: dict[str, list[Polygon]]
    residential: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.units:
            raise ZoningError(f"zoning {self.level!r} has no units")
        for uid, polys in self.units.items():
            if not isinstance(uid, str):
                raise ZoningError(f"unit id {uid!r} is not a string")
            if not polys:
                raise ZoningError(f"unit {uid!r} has no polygons")
        for uid in self.units:
            self.residential.setdefault(uid, True)
        extra = set(self.residential) - set(self.units)
        if extra:
            raise ZoningError(f"residential flags for unknown units: {sorted(extra)[:5]}")

    @property
    def unit_ids(self) -> list[str]:
        return list(self.units)

    def __len__(self) -> int:
        return len(self.units)

    @classmethod
    def from_geojson(
        cls, source: str | Path | Mapping, id_property: str, level: str | None = None
    ) -> "Zoning":
        if isinstance(source, Mapping):
            doc = source
            default_level = "zoning"
        else:
            path = Path(source)
            with open(path) as fh:
                doc = json.load(fh)
            default_level = path.stem
        if doc.get("type") != "FeatureCollection":
            raise ZoningError("zoning must be a GeoJSON FeatureCollection")
        units: dict[str, list[Polygon]] = {}
        residential: dict[str, bool] = {}
        for n, feat in enumerate(doc.get("features", [])):
            props = feat.get("properties") or {}
            if id_property not in props:
                raise ZoningError(f"feature {n} lacks id property {id_property!r}")
            raw_id = props[id_property]
            if isinstance(raw_id, bool) or not isinstance(raw_id, (str, int)):
                raise ZoningError(f"feature {n}: id {raw_id!r} is not a string")
            uid = str(raw_id)
            geom = feat.get("geometry") or {}
            gtype = geom.get("type")
            if gtype == "Polygon":
                parts = [geom["coordinates"]]
            elif gtype == "MultiPolygon":
                parts = geom["coordinates"]
            else:
                raise ZoningError(f"unit {uid!r}: unsupported geometry {gtype!r}")
            try:
                polys = [Polygon.from_coords(p[0], p[1:]) for p in parts]
            except ZoningError as exc:
                raise ZoningError(f"unit {uid!r}: {exc}") from None
            # repeated ids are merged into one multi-polygon unit
            units.setdefault(uid, []).extend(polys)
            flag = props.get("residential", True)
            if isinstance(flag, str):
                flag = flag.strip().lower() in ("1", "true", "yes")
            residential[uid] = residential.get(uid, True) and bool(flag)
        return cls(level or default_level, units, residential)

    def to_geojson(self, properties: Mapping[str, Mapping] | None = None) -> dict:
        features = []
        for uid, polys in self.units.items():
            props = {"unit_id": uid, "residential": self.residential[uid]}
            if properties is not None:
                props.update(properties.get(uid, {}))
            features.append(_feature(polys, props))
        return {"type": "FeatureCollection", "features": features}


def _feature(polys: list[Polygon], props: dict) -> dict:
    if len(polys) == 1:
        geom = {"type": "Polygon", "coordinates": polys[0].to_geojson()}
    else:
        geom = {"type": "MultiPolygon", "coordinates": [p.to_geojson() for p in polys]}
    return {"type": "Feature", "properties": props, "geometry": geom}


class SpatialIndex:
    """Uniform grid over polygon bounding boxes.

    Each cell keeps the catalog positions of units whose polygon bounding
    box overlaps it, so :meth:`candidates` is always a superset of the
    containing units, already in catalog order.
    """

    def __init__(self, zoning: Zoning, cells_per_polygon: float = 4.0, max_side: int = 512):
        self.zoning = zoning
        self._polys: list[list[Polygon]] = list(zoning.units.values())
        boxes = []
        owners = []
        for pos, polys in enumerate(self._polys):
            for poly in polys:
                boxes.append(poly.bounds)
                owners.append(pos)
        boxes = np.asarray(boxes)
        self.x0, self.y0 = float(boxes[:, 0].min()), float(boxes[:, 1].min())
        self.x1, self.y1 = float(boxes[:, 2].max()), float(boxes[:, 3].max())
        width = max(self.x1 - self.x0, 1e-12)
        height = max(self.y1 - self.y0, 1e-12)
        target = max(1.0, cells_per_polygon * len(boxes))
        nx = int(np.clip(round(math.sqrt(target * width / height)), 1, max_side))
        ny = int(np.clip(round(target / nx), 1, max_side))
        self.nx, self.ny = nx, ny
        self.cw, self.ch = width / nx, height / ny
        cells: list[set[int]] = [set() for _ in range(nx * ny)]
        for (bx0, by0, bx1, by1), pos in zip(boxes, owners):
            i0, j0 = self._cell_xy(bx0, by0)
            i1, j1 = self._cell_xy(bx1, by1)
            for j in range(j0, j1 + 1):
                for i in range(i0, i1 + 1):
                    cells[j * nx + i].add(pos)
        self._cells: list[tuple[int, ...]] = [tuple(sorted(c)) for c in cells]

    def _cell_xy(self, x: float, y: float) -> tuple[int, int]:
        i = min(self.nx - 1, max(0, int((x - self.x0) // self.cw)))
        j = min(self.ny - 1, max(0, int((y - self.y0) // self.ch)))
        return i, j

    def _cell_ids(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        i = np.clip(np.floor_divide(xs - self.x0, self.cw), 0, self.nx - 1).astype(np.int64)
        j = np.clip(np.floor_divide(ys - self.y0, self.ch), 0, self.ny - 1).astype(np.int64)
        cid = j * self.nx + i
        outside = (xs < self.x0) | (xs > self.x1) | (ys < self.y0) | (ys > self.y1)
        cid[outside] = -1
        return cid

    def candidates(self, p: Point) -> tuple[int, ...]:
        x, y = float(p[0]), float(p[1])
        if x < self.x0 or x > self.x1 or y < self.y0 or y > self.y1:
            return ()
        i, j = self._cell_xy(x, y)
        return self._cells[j * self.nx + i]

    def assign_many(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Catalog position of the containing unit per point, -1 when none."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        out = np.full(xs.shape, -1, dtype=np.int64)
        if xs.size == 0:
            return out
        cid = self._cell_ids(xs, ys)
        order = np.argsort(cid, kind="stable")
        sorted_cid = cid[order]
        cells, starts = np.unique(sorted_cid, return_index=True)
        ends = np.append(starts[1:], sorted_cid.size)
        for c, s, e in zip(cells, starts, ends):
            if c < 0:
                continue
            pending = order[s:e]
            for pos in self._cells[c]:
                if pending.size == 0:
                    break
                hit = np.zeros(pending.size, dtype=bool)
                for poly in self._polys[pos]:
                    hit |= points_in_polygon(xs[pending], ys[pending], poly)
                out[pending[hit]] = pos
                pending = pending[~hit]
        return out


def _unit_contains(polys: list[Polygon], p: Point) -> bool:
    return any(point_in_polygon(p, poly) for poly in polys)


def assign_unit(index: SpatialIndex, zoning: Zoning, p: Point) -> str | None:
    ids = zoning.unit_ids
    polys = index._polys
    for pos in index.candidates(p):
        if _unit_contains(polys[pos], p):
            return ids[pos]
    return None


def assign_unit_scan(zoning: Zoning, p: Point) -> str | None:
    """Exhaustive reference lookup over every unit in catalog order."""
    for uid, polys in zoning.units.items():
        if _unit_contains(polys, p):
            return uid
    return None


@dataclass
class ODFlowTable:
    """Trip counts per ordered (origin, destination) unit pair."""

    level: str
    counts: dict[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for pair, c in self.counts.items():
            if c < 0:
                raise ValueError(f"negative count {c} for pair {pair}")

    @property
    def total_trips(self) -> int:
        return int(sum(self.counts.values()))

    def __len__(self) -> int:
        return len(self.counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ODFlowTable):
            return NotImplemented
        return self.level == other.level and self.counts == other.counts

    def add(self, origin: str, destination: str, count: int = 1) -> None:
        key = (origin, destination)
        self.counts[key] = self.counts.get(key, 0) + int(count)

    def merge(self, other: "ODFlowTable") -> "ODFlowTable":
        merged = ODFlowTable(self.level, dict(self.counts))
        for (o, d), c in other.counts.items():
            merged.add(o, d, c)
        return merged

    def coarsen(self, mapping: Mapping[str, str], level: str) -> "ODFlowTable":
        """Aggregate to a coarser zoning through a fine-to-coarse unit map."""
        out = ODFlowTable(level)
        for (o, d), c in self.counts.items():
            out.add(mapping[o], mapping[d], c)
        return out

    def to_csv(self, path: str | Path, delimiter: str = ",") -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, delimiter=delimiter)
            writer.writerow(["origin_id", "destination_id", "count"])
            for (o, d), c in sorted(self.counts.items()):
                writer.writerow([o, d, c])

    @classmethod
    def from_csv(cls, path: str | Path, level: str, delimiter: str = ",") -> "ODFlowTable":
        table = cls(level)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh, delimiter=delimiter):
                table.add(row["origin_id"], row["destination_id"], int(row["count"]))
        return table


def containment_map(fine: Zoning, coarse: Zoning) -> dict[str, str]:
    """Map each fine unit to the coarse unit holding its interior point."""
    index = SpatialIndex(coarse)
    mapping = {}
    for uid, polys in fine.units.items():
        p = representative_point(polys[0])
        parent = assign_unit(index, coarse, p)
        if parent is None:
            raise ZoningError(f"fine unit {uid!r} is not inside any {coarse.level!r} unit")
        mapping[uid] = parent
    return mapping


class _Accumulator:
    def __init__(self, zoning: Zoning, index: SpatialIndex | None):
        self.zoning = zoning
        self.index = index if index is not None else SpatialIndex(zoning)
        self.n = len(zoning)
        self.pair_counts: dict[int, int] = {}
        self.dropped = 0

    def feed(self, block: np.ndarray) -> None:
        if block.size == 0:
            return
        o = self.index.assign_many(block[:, 0], block[:, 1])
        d = self.index.assign_many(block[:, 2], block[:, 3])
        ok = (o >= 0) & (d >= 0)
        self.dropped += int(ok.size - np.count_nonzero(ok))
        codes, counts = np.unique(o[ok] * self.n + d[ok], return_counts=True)
        pc = self.pair_counts
        for code, c in zip(codes.tolist(), counts.tolist()):
            pc[code] = pc.get(code, 0) + c

    def table(self) -> ODFlowTable:
        ids = self.zoning.unit_ids
        counts = {
            (ids[code // self.n], ids[code % self.n]): c
            for code, c in sorted(self.pair_counts.items())
        }
        return ODFlowTable(self.zoning.level, counts)


def filter_and_aggregate(
    trips: Iterable[TripRecord],
    zoning: Zoning,
    index: SpatialIndex | None = None,
    chunk_size: int = 100_000,
) -> tuple[ODFlowTable, int]:
    """Aggregate a trip stream to OD counts; returns ``(table, dropped)``.

    Trips with either endpoint outside every unit are dropped. The stream
    is consumed in fixed-size chunks so memory stays bounded.
    """
    acc = _Accumulator(zoning, index)
    buf: list[tuple[float, float, float, float]] = []
    for t in trips:
        buf.append((t.pickup[0], t.pickup[1], t.dropoff[0], t.dropoff[1]))
        if len(buf) >= chunk_size:
            acc.feed(np.asarray(buf, dtype=np.float64))
            buf.clear()
    if buf:
        acc.feed(np.asarray(buf, dtype=np.float64))
    return acc.table(), acc.dropped


@dataclass(frozen=True)
class TripColumns:
    pickup_x: str = "pickup_x"
    pickup_y: str = "pickup_y"
    dropoff_x: str = "dropoff_x"
    dropoff_y: str = "dropoff_y"


@dataclass
class IngestSummary:
    table: ODFlowTable
    rows: int
    dropped: int
    malformed: int

    @property
    def retained(self) -> int:
        return self.table.total_trips


class _TripFileReader:
    """Streams coordinate blocks from a delimited trip file.

    Rows with missing fields or non-finite/unparseable coordinates are
    counted in ``malformed`` and skipped. Blank lines are not rows.
    """

    def __init__(self, path, columns: TripColumns, delimiter: str, chunk_size: int):
        self.path = Path(path)
        self.columns = columns
        self.delimiter = delimiter
        self.chunk_size = chunk_size
        self.rows = 0
        self.malformed = 0

    def __iter__(self) -> Iterator[np.ndarray]:
        with open(self.path, newline="") as fh:
            reader = csv.reader(fh, delimiter=self.delimiter)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{self.path}: empty trip file (header row required)") from None
            header = [h.strip() for h in header]
            wanted = [
                self.columns.pickup_x, self.columns.pickup_y,
                self.columns.dropoff_x, self.columns.dropoff_y,
            ]
            missing = [c for c in wanted if c not in header]
            if missing:
                raise ValueError(f"{self.path}: trip file lacks columns {missing}")
            cols = [header.index(c) for c in wanted]
            width = max(cols) + 1
            c0, c1, c2, c3 = cols
            isfinite = math.isfinite
            buf = []
            for row in reader:
                if not row:
                    continue
                self.rows += 1
                if len(row) < width:
                    self.malformed += 1
                    continue
                try:
                    vals = (float(row[c0]), float(row[c1]), float(row[c2]), float(row[c3]))
                except ValueError:
                    self.malformed += 1
                    continue
                if not (isfinite(vals[0]) and isfinite(vals[1]) and isfinite(vals[2]) and isfinite(vals[3])):
                    self.malformed += 1
                    continue
                buf.append(vals)
                if len(buf) >= self.chunk_size:
                    yield np.asarray(buf, dtype=np.float64)
                    buf = []
            if buf:
                yield np.asarray(buf, dtype=np.float64)


def ingest_trips(
    path: str | Path,
    zonings: Zoning | list[Zoning],
    columns: TripColumns = TripColumns(),
    delimiter: str = ",",
    chunk_size: int = 200_000,
) -> IngestSummary | list[IngestSummary]:
    """Read a trip file once and aggregate it against one or more zonings."""
    single = isinstance(zonings, Zoning)
    zlist = [zonings] if single else list(zonings)
    accs = [_Accumulator(z, None) for z in zlist]
    reader = _TripFileReader(path, columns, delimiter, chunk_size)
    for block in reader:
        for acc in accs:
            acc.feed(block)
    summaries = [IngestSummary(acc.table(), reader.rows, acc.dropped, reader.malformed) for acc in accs]
    for s in summaries:
        logger.info(
            "%s: %d rows, %d retained, %d dropped, %d malformed",
            s.table.level, s.rows, s.retained, s.dropped, s.malformed,
        )
    return summaries[0] if single else summaries


def write_trips(path: str | Path, trips: Iterable[TripRecord], columns: TripColumns = TripColumns(),
                delimiter: str = ",") -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow([columns.pickup_x, columns.pickup_y, columns.dropoff_x, columns.dropoff_y])
        for t in trips:
            writer.writerow([repr(t.pickup[0]), repr(t.pickup[1]), repr(t.dropoff[0]), repr(t.dropoff[1])])
            n += 1
    return n
