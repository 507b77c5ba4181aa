"""Road network loading, validation, primal/dual graph views, and GeoJSON export.

The primal graph (intersections as vertices, segments as directed arcs) is the
routing view; the dual graph (segments as vertices, shared intersections as
edges) is the graph-convolution view.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

LOG = logging.getLogger(__name__)

CSV_HEADER = [
    "segment_id", "from_node", "to_node",
    "from_lat", "from_lon", "to_lat", "to_lon",
    "length_m", "width_m", "lanes", "speed_limit_kmh",
    "one_way", "bike_lane", "border", "double_level", "curve_radius_m",
]


class RoadNetError(Exception):
    pass


class MissingColumn(RoadNetError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"missing or misplaced column: {column!r}")


class BadValue(RoadNetError):
    def __init__(self, row: int, column: str, detail: str = ""):
        self.row = row
        self.column = column
        msg = f"row {row}, column {column!r}: bad value"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DuplicateSegmentId(RoadNetError):
    def __init__(self, row: int, segment_id: int):
        self.row = row
        self.segment_id = segment_id
        super().__init__(f"row {row}: duplicate segment_id {segment_id}")


class UnknownSegmentId(RoadNetError):
    def __init__(self, segment_id: int):
        self.segment_id = segment_id
        super().__init__(f"unknown segment_id {segment_id}")


class EmptyNetwork(RoadNetError):
    pass


@dataclass(frozen=True)
class SegmentRecord:
    segment_id: int
    from_node: int
    to_node: int
    from_lat: float
    from_lon: float
    to_lat: float
    to_lon: float
    length_m: float
    width_m: float
    lanes: int
    speed_limit_kmh: float
    one_way: bool
    bike_lane: bool
    border: bool
    double_level: bool
    curve_radius_m: float | None = None


def travel_time(seg: SegmentRecord) -> float:
    """Free-flow traversal time in seconds: length divided by the speed limit."""
    return seg.length_m / (seg.speed_limit_kmh / 3.6)


@dataclass(frozen=True)
class PrimalGraph:
    vertices: tuple[int, ...]
    # adjacency[node] -> ((to_node, segment_id, travel_time_s), ...), sorted for determinism
    adjacency: dict[int, tuple[tuple[int, int, float], ...]]
    arc_count: int

    def out_arcs(self, node: int) -> tuple[tuple[int, int, float], ...]:
        return self.adjacency.get(node, ())


@dataclass(frozen=True)
class DualGraph:
    """Segments as vertices; two segments are adjacent iff they share an intersection.

    Edge weights are symmetric-normalized: w_uv = 1/sqrt(deg(u) * deg(v)).
    """

    order: tuple[int, ...]                      # segment ids, ascending; row order of `matrix`
    index: dict[int, int]                       # segment id -> row
    neighbors: dict[int, tuple[tuple[int, float], ...]]
    matrix: sparse.csr_matrix = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.order)

    def degree(self, segment_id: int) -> int:
        return len(self.neighbors.get(segment_id, ()))


class RoadNetwork:
    """Immutable after construction; safe to share across concurrent readers."""

    def __init__(self, segments: list[SegmentRecord]):
        if not segments:
            raise EmptyNetwork("network has no segments")
        self.segments: dict[int, SegmentRecord] = {s.segment_id: s for s in segments}
        self.node_coords: dict[int, tuple[float, float]] = {}
        for s in segments:
            self.node_coords.setdefault(s.from_node, (s.from_lat, s.from_lon))
            self.node_coords.setdefault(s.to_node, (s.to_lat, s.to_lon))
        self.travel_times: dict[int, float] = {
            s.segment_id: travel_time(s) for s in segments
        }
        self.primal = self._build_primal(segments)
        self.dual = build_dual(self)
        self.connected = self._check_connected()

    def _build_primal(self, segments: list[SegmentRecord]) -> PrimalGraph:
        adj: dict[int, list[tuple[int, int, float]]] = {n: [] for n in self.node_coords}
        arc_count = 0
        for s in segments:
            tt = self.travel_times[s.segment_id]
            adj[s.from_node].append((s.to_node, s.segment_id, tt))
            arc_count += 1
            if not s.one_way:
                adj[s.to_node].append((s.from_node, s.segment_id, tt))
                arc_count += 1
        return PrimalGraph(
            vertices=tuple(sorted(adj)),
            adjacency={n: tuple(sorted(arcs)) for n, arcs in adj.items()},
            arc_count=arc_count,
        )

    def _check_connected(self) -> bool:
        # Weak connectivity over the primal graph; disconnection is a warning, not fatal.
        undirected: dict[int, set[int]] = {n: set() for n in self.node_coords}
        for s in self.segments.values():
            undirected[s.from_node].add(s.to_node)
            undirected[s.to_node].add(s.from_node)
        start = next(iter(undirected))
        seen = {start}
        stack = [start]
        while stack:
            for nb in undirected[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(undirected):
            LOG.warning(
                "DisconnectedNetwork: %d of %d intersections unreachable from node %d",
                len(undirected) - len(seen), len(undirected), start,
            )
            return False
        return True

    def segment(self, segment_id: int) -> SegmentRecord:
        try:
            return self.segments[segment_id]
        except KeyError:
            raise UnknownSegmentId(segment_id) from None


def build_dual(net: RoadNetwork) -> DualGraph:
    """Dual view: one vertex per segment, edges between segments sharing an intersection."""
    order = tuple(sorted(net.segments))
    index = {sid: i for i, sid in enumerate(order)}
    by_node: dict[int, list[int]] = {}
    for s in net.segments.values():
        by_node.setdefault(s.from_node, []).append(s.segment_id)
        by_node.setdefault(s.to_node, []).append(s.segment_id)
    neighbor_sets: dict[int, set[int]] = {sid: set() for sid in order}
    for sids in by_node.values():
        for u in sids:
            for v in sids:
                if u != v:
                    neighbor_sets[u].add(v)
    deg = {sid: len(nbrs) for sid, nbrs in neighbor_sets.items()}
    neighbors: dict[int, tuple[tuple[int, float], ...]] = {}
    rows, cols, vals = [], [], []
    for v in order:
        entries = []
        for u in sorted(neighbor_sets[v]):
            w = 1.0 / math.sqrt(deg[u] * deg[v])
            entries.append((u, w))
            rows.append(index[v])
            cols.append(index[u])
            vals.append(w)
        neighbors[v] = tuple(entries)
    matrix = sparse.csr_matrix(
        (np.array(vals, dtype=np.float64), (rows, cols)),
        shape=(len(order), len(order)),
    )
    return DualGraph(order=order, index=index, neighbors=neighbors, matrix=matrix)


def _parse_int(raw: str, row: int, column: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise BadValue(row, column, f"expected integer, got {raw!r}") from None


def _parse_float(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise BadValue(row, column, f"expected number, got {raw!r}") from None
    if not math.isfinite(value):
        raise BadValue(row, column, "non-finite")
    return value


def _parse_flag(raw: str, row: int, column: str) -> bool:
    if raw not in ("0", "1"):
        raise BadValue(row, column, f"expected 0/1 flag, got {raw!r}")
    return raw == "1"


def parse_segment_row(values: dict[str, str], row: int) -> SegmentRecord:
    seg_id = _parse_int(values["segment_id"], row, "segment_id")
    from_node = _parse_int(values["from_node"], row, "from_node")
    to_node = _parse_int(values["to_node"], row, "to_node")
    if from_node == to_node:
        raise BadValue(row, "to_node", "from_node equals to_node")
    length = _parse_float(values["length_m"], row, "length_m")
    if length <= 0:
        raise BadValue(row, "length_m", "must be > 0")
    width = _parse_float(values["width_m"], row, "width_m")
    if width <= 0:
        raise BadValue(row, "width_m", "must be > 0")
    lanes = _parse_int(values["lanes"], row, "lanes")
    if lanes < 1:
        raise BadValue(row, "lanes", "must be >= 1")
    speed = _parse_float(values["speed_limit_kmh"], row, "speed_limit_kmh")
    if speed <= 0:
        raise BadValue(row, "speed_limit_kmh", "must be > 0")
    curve_raw = values["curve_radius_m"].strip()
    curve = None
    if curve_raw:
        curve = _parse_float(curve_raw, row, "curve_radius_m")
        if curve <= 0:
            raise BadValue(row, "curve_radius_m", "must be > 0 when present")
    return SegmentRecord(
        segment_id=seg_id,
        from_node=from_node,
        to_node=to_node,
        from_lat=_parse_float(values["from_lat"], row, "from_lat"),
        from_lon=_parse_float(values["from_lon"], row, "from_lon"),
        to_lat=_parse_float(values["to_lat"], row, "to_lat"),
        to_lon=_parse_float(values["to_lon"], row, "to_lon"),
        length_m=length,
        width_m=width,
        lanes=lanes,
        speed_limit_kmh=speed,
        one_way=_parse_flag(values["one_way"], row, "one_way"),
        bike_lane=_parse_flag(values["bike_lane"], row, "bike_lane"),
        border=_parse_flag(values["border"], row, "border"),
        double_level=_parse_flag(values["double_level"], row, "double_level"),
        curve_radius_m=curve,
    )


def ingest_segments(path: str) -> RoadNetwork:
    """Load a segments CSV, validating every row; row numbers in diagnostics are 1-based."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyNetwork(f"{path}: empty file") from None
        for expected in CSV_HEADER:
            if expected not in header:
                raise MissingColumn(expected)
        if header != CSV_HEADER:
            raise MissingColumn(
                f"header mismatch: expected {','.join(CSV_HEADER)}"
            )
        segments: list[SegmentRecord] = []
        seen: set[int] = set()
        for row_num, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(CSV_HEADER):
                raise BadValue(row_num, "<row>", f"expected {len(CSV_HEADER)} fields, got {len(raw)}")
            rec = parse_segment_row(dict(zip(CSV_HEADER, raw)), row_num)
            if rec.segment_id in seen:
                raise DuplicateSegmentId(row_num, rec.segment_id)
            seen.add(rec.segment_id)
            segments.append(rec)
    return RoadNetwork(segments)


def snap(lat: float, lon: float, net: RoadNetwork) -> int:
    """Nearest intersection under a local equirectangular approximation.

    Ties broken by lowest intersection id.
    """
    if not net.node_coords:
        raise EmptyNetwork("no intersections to snap to")
    cos_lat = math.cos(math.radians(lat))
    best_id = None
    best_d = math.inf
    for node_id in sorted(net.node_coords):
        nlat, nlon = net.node_coords[node_id]
        dy = nlat - lat
        dx = (nlon - lon) * cos_lat
        d = dx * dx + dy * dy
        if d < best_d:
            best_d = d
            best_id = node_id
    return best_id


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def export_geojson(net: RoadNetwork, overlay: dict[int, float] | None = None) -> str:
    """One LineString feature per segment; coordinates rounded to 6 decimals.

    The output is canonical (sorted keys, fixed separators) so that
    export -> parse -> re-export is byte-identical.
    """
    overlay = overlay or {}
    for sid in overlay:
        if sid not in net.segments:
            raise UnknownSegmentId(sid)
    features = []
    for sid in sorted(net.segments):
        s = net.segments[sid]
        value = overlay.get(sid)
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [
                    [round(s.from_lon, 6), round(s.from_lat, 6)],
                    [round(s.to_lon, 6), round(s.to_lat, 6)],
                ],
            },
            "properties": {
                "segment_id": sid,
                "overlay": None if value is None else float(value),
            },
        })
    return canonical_json({"type": "FeatureCollection", "features": features})
