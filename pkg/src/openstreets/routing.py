"""Shortest-path machinery: trip assignment, k-shortest-path rerouting, and an
electrical-flow router for undirected subgraphs."""

from __future__ import annotations

import csv
import heapq
import logging
import math
from dataclasses import dataclass, field
from datetime import date as date_type
from datetime import datetime

import numpy as np

from .roadnet import PrimalGraph, RoadNetwork, snap

LOG = logging.getLogger(__name__)

DEFAULT_K = 3
GLOBAL_REROUTE_TRIP_GUARD = 50_000

TRIPS_HEADER = ["trip_id", "date", "pickup_lat", "pickup_lon", "dropoff_lat", "dropoff_lon", "count"]


class RoutingError(Exception):
    pass


class Unreachable(RoutingError):
    def __init__(self, target: int):
        self.target = target
        super().__init__(f"no directed path to {target}")


class NoPath(RoutingError):
    pass


class NoCarsToReroute(RoutingError):
    pass


class NoAlternativePath(RoutingError):
    pass


class InstanceTooLarge(RoutingError):
    pass


class Disconnected(RoutingError):
    pass


class SingularSystem(RoutingError):
    pass


@dataclass(frozen=True)
class TripRecord:
    trip_id: int
    date: date_type
    origin: int
    destination: int
    count: int


@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]
    segments: tuple[int, ...]
    cost: float


@dataclass(frozen=True)
class SourcePaths:
    source: int
    found: dict[int, Path]
    unreachable: frozenset[int]


@dataclass
class AssignmentResult:
    volumes: dict[int, float]
    unroutable: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class ReroutePlan:
    opened: int
    # (segment sequence, travel_time_s, share); shares sum to 1
    paths: tuple[tuple[tuple[int, ...], float, float], ...]


@dataclass
class PathAssignment:
    paths: list[tuple[tuple[int, ...], float, float]]
    volumes: dict[int, float]


def dijkstra(
    primal: PrimalGraph,
    source: int,
    targets: set[int] | None = None,
    banned_segments: frozenset[int] | set[int] = frozenset(),
    banned_nodes: frozenset[int] | set[int] = frozenset(),
) -> SourcePaths:
    """Single-source shortest paths by travel time.

    Paths are rebuilt from a predecessor structure filled once per source.
    Ties are deterministic: adjacency is sorted and relaxation is strict.
    """
    if targets is not None:
        remaining = set(targets)
    else:
        remaining = None
    dist: dict[int, float] = {source: 0.0}
    pred: dict[int, tuple[int, int]] = {}
    settled: set[int] = set()
    heap: list[tuple[float, int]] = [(0.0, source)]
    while heap:
        d, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if remaining is not None:
            remaining.discard(node)
            if not remaining:
                break
        for to, seg_id, tt in primal.out_arcs(node):
            if seg_id in banned_segments or to in banned_nodes:
                continue
            nd = d + tt
            if nd < dist.get(to, math.inf):
                dist[to] = nd
                pred[to] = (node, seg_id)
                heapq.heappush(heap, (nd, to))
    wanted = targets if targets is not None else settled
    found: dict[int, Path] = {}
    unreachable = set()
    for t in wanted:
        if t not in settled:
            unreachable.add(t)
            continue
        nodes = [t]
        segs = []
        cur = t
        while cur != source:
            prev, seg_id = pred[cur]
            nodes.append(prev)
            segs.append(seg_id)
            cur = prev
        found[t] = Path(tuple(reversed(nodes)), tuple(reversed(segs)), dist[t])
    return SourcePaths(source=source, found=found, unreachable=frozenset(unreachable))


def shortest_path(
    primal: PrimalGraph,
    source: int,
    target: int,
    banned_segments: frozenset[int] | set[int] = frozenset(),
    banned_nodes: frozenset[int] | set[int] = frozenset(),
) -> Path | None:
    result = dijkstra(primal, source, {target}, banned_segments, banned_nodes)
    return result.found.get(target)


def assign_trips(net: RoadNetwork, trips: list[TripRecord]) -> AssignmentResult:
    """Route every trip on its single shortest path and accumulate per-segment volume.

    Trips are grouped by origin so Dijkstra runs once per distinct origin.
    Output is deterministic and independent of input order.
    """
    volumes = {sid: 0.0 for sid in sorted(net.segments)}
    unroutable: list[dict] = []
    by_origin: dict[int, list[TripRecord]] = {}
    for trip in trips:
        by_origin.setdefault(trip.origin, []).append(trip)
    for origin in sorted(by_origin):
        group = sorted(by_origin[origin], key=lambda t: t.trip_id)
        destinations = {t.destination for t in group}
        result = dijkstra(net.primal, origin, destinations)
        for trip in group:
            path = result.found.get(trip.destination)
            if path is None:
                unroutable.append({"trip_id": trip.trip_id, "reason": "unroutable"})
                continue
            for seg_id in path.segments:
                volumes[seg_id] += trip.count
    return AssignmentResult(volumes=volumes, unroutable=unroutable)


def yen_ksp(
    primal: PrimalGraph,
    s: int,
    t: int,
    k: int,
    banned_segments: frozenset[int] | set[int] = frozenset(),
) -> list[Path]:
    """Up to k loopless shortest paths, sorted by (cost, lexicographic segment ids).

    The lexicographic tie-break makes replay runs reproducible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    first = shortest_path(primal, s, t, banned_segments)
    if first is None:
        raise NoPath(f"no directed path {s} -> {t}")
    accepted: list[Path] = [first]
    candidates: dict[tuple[int, ...], Path] = {}
    while True:
        prev = accepted[-1]
        for i in range(len(prev.nodes) - 1):
            spur_node = prev.nodes[i]
            root_nodes = prev.nodes[: i + 1]
            root_segs = prev.segments[:i]
            spur_banned = set(banned_segments)
            for p in accepted:
                if p.nodes[: i + 1] == root_nodes and len(p.segments) > i:
                    spur_banned.add(p.segments[i])
            blocked_nodes = set(root_nodes[:-1])
            spur = shortest_path(primal, spur_node, t, spur_banned, blocked_nodes)
            if spur is None:
                continue
            root_cost = _path_cost(primal, root_nodes, root_segs)
            cand = Path(
                nodes=root_nodes + spur.nodes[1:],
                segments=root_segs + spur.segments,
                cost=root_cost + spur.cost,
            )
            key = cand.segments
            if key not in candidates and all(a.segments != key for a in accepted):
                candidates[key] = cand
        if not candidates:
            break
        best_key = min(candidates, key=lambda segs: (candidates[segs].cost, segs))
        best = candidates.pop(best_key)
        if len(accepted) >= k:
            # Keep generating while candidates tie the k-th best cost: ranks
            # are (cost, lexicographic) and a tied path found later can still
            # displace one already accepted.
            kth_cost = sorted(p.cost for p in accepted)[k - 1]
            if best.cost > kth_cost:
                break
        accepted.append(best)
    accepted.sort(key=lambda p: (p.cost, p.segments))
    return accepted[:k]


def _path_cost(primal: PrimalGraph, nodes: tuple[int, ...], segs: tuple[int, ...]) -> float:
    cost = 0.0
    for a, seg_id in zip(nodes, segs):
        for to, sid, tt in primal.out_arcs(a):
            if sid == seg_id:
                cost += tt
                break
        else:
            raise RoutingError(f"segment {seg_id} does not leave node {a}")
    return cost


def path_shares(times: list[float], rule: str = "inverse") -> list[float]:
    """Traffic split over alternative paths.

    "inverse" sends more traffic to faster paths (1/t weighting); "literal"
    weights by raw travel time and is kept runnable for comparison.
    """
    if rule == "inverse":
        weights = [1.0 / t for t in times]
    elif rule == "literal":
        weights = list(times)
    else:
        raise ValueError(f"unknown share rule {rule!r}")
    total = sum(weights)
    return [w / total for w in weights]


def plan_local_reroute(
    net: RoadNetwork,
    opened: int,
    k: int = DEFAULT_K,
    closed: frozenset[int] | set[int] = frozenset(),
    share_rule: str = "inverse",
) -> ReroutePlan:
    """Top-k replacement paths between the opened segment's endpoints.

    The opened segment and every segment in `closed` are removed from the
    search graph. Raises NoAlternativePath when nothing survives.
    """
    seg = net.segment(opened)
    banned = frozenset(closed) | {opened}
    try:
        paths = yen_ksp(net.primal, seg.from_node, seg.to_node, k, banned)
    except NoPath:
        raise NoAlternativePath(
            f"no other directed path {seg.from_node} -> {seg.to_node}"
        ) from None
    shares = path_shares([p.cost for p in paths], share_rule)
    return ReroutePlan(
        opened=opened,
        paths=tuple((p.segments, p.cost, share) for p, share in zip(paths, shares)),
    )


def apply_reroute(volumes: dict[int, float], plan: ReroutePlan) -> dict[int, float]:
    """Move the opened segment's volume onto the plan's paths; total conserved."""
    moved = volumes.get(plan.opened, 0.0)
    out = dict(volumes)
    out[plan.opened] = 0.0
    for segs, _tt, share in plan.paths:
        for sid in segs:
            out[sid] = out.get(sid, 0.0) + share * moved
    return out


def local_reroute(
    volumes: dict[int, float],
    opened: int,
    net: RoadNetwork,
    k: int = DEFAULT_K,
    closed: frozenset[int] | set[int] = frozenset(),
    share_rule: str = "inverse",
) -> PathAssignment:
    """Redistribute the opened segment's volume over alternative paths.

    Path i with travel time t_i receives share (1/t_i) / sum_j (1/t_j) under
    the default rule. Raises NoCarsToReroute when the segment carries nothing.
    """
    if volumes.get(opened, 0.0) <= 0.0:
        raise NoCarsToReroute(f"segment {opened} has no cars to reroute")
    plan = plan_local_reroute(net, opened, k, closed, share_rule)
    return PathAssignment(paths=list(plan.paths), volumes=apply_reroute(volumes, plan))


def global_reroute(
    trips: list[TripRecord],
    open_set: frozenset[int] | set[int],
    net: RoadNetwork,
    force: bool = False,
) -> AssignmentResult:
    """Exact-but-slow mode: recompute every trip's shortest path with the open
    segments removed. Guarded against large instances unless forced."""
    if len(trips) > GLOBAL_REROUTE_TRIP_GUARD and not force:
        raise InstanceTooLarge(
            f"{len(trips)} trips exceeds the {GLOBAL_REROUTE_TRIP_GUARD} guard; pass force=True"
        )
    banned = frozenset(open_set)
    volumes = {sid: 0.0 for sid in sorted(net.segments)}
    unroutable: list[dict] = []
    by_origin: dict[int, list[TripRecord]] = {}
    for trip in trips:
        by_origin.setdefault(trip.origin, []).append(trip)
    for origin in sorted(by_origin):
        group = sorted(by_origin[origin], key=lambda t: t.trip_id)
        destinations = {t.destination for t in group}
        result = dijkstra(net.primal, origin, destinations, banned)
        for trip in group:
            path = result.found.get(trip.destination)
            if path is None:
                unroutable.append({"trip_id": trip.trip_id, "reason": "unroutable"})
                continue
            for seg_id in path.segments:
                volumes[seg_id] += trip.count
    for sid in open_set:
        volumes[sid] = 0.0
    return AssignmentResult(volumes=volumes, unroutable=unroutable)


def load_trips(path: str, net: RoadNetwork) -> list[TripRecord]:
    """Parse trips.csv, snapping GPS endpoints to intersections.

    Trips whose endpoints snap to the same intersection are dropped (they
    contribute no segment traffic).
    """
    trips: list[TripRecord] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRIPS_HEADER:
            raise RoutingError(
                f"trips header mismatch: expected {','.join(TRIPS_HEADER)}"
            )
        for row in reader:
            origin = snap(float(row["pickup_lat"]), float(row["pickup_lon"]), net)
            dest = snap(float(row["dropoff_lat"]), float(row["dropoff_lon"]), net)
            count = int(row["count"])
            if count < 1:
                raise RoutingError(f"trip {row['trip_id']}: count must be >= 1")
            if origin == dest:
                LOG.debug("trip %s endpoints snap to the same intersection; dropped", row["trip_id"])
                continue
            trips.append(TripRecord(
                trip_id=int(row["trip_id"]),
                date=datetime.strptime(row["date"], "%Y-%m-%d").date(),
                origin=origin,
                destination=dest,
                count=count,
            ))
    return trips


# --- Electrical flow on undirected subgraphs -------------------------------

@dataclass(frozen=True)
class UndirectedEdge:
    u: int
    v: int
    capacity: float


@dataclass
class ElectricalFlowResult:
    potentials: dict[int, float]
    flow: list[float]          # aligned with the input edge list, positive u -> v
    energy: float


def electrical_flow(edges: list[UndirectedEdge], s: int, t: int) -> ElectricalFlowResult:
    """Minimum-energy unit flow s -> t.

    Potentials solve the Laplacian system L phi = chi_st on the connected
    component; each edge carries capacity * (phi_u - phi_v) and the energy is
    sum flow^2 / capacity.
    """
    if s == t:
        raise ValueError("s and t must differ")
    for e in edges:
        if e.capacity <= 0:
            raise ValueError(f"capacity must be > 0 on edge ({e.u},{e.v})")
    adjacency: dict[int, set[int]] = {}
    for e in edges:
        adjacency.setdefault(e.u, set()).add(e.v)
        adjacency.setdefault(e.v, set()).add(e.u)
    if s not in adjacency or t not in adjacency:
        raise Disconnected(f"{s} and {t} are not connected")
    component = {s}
    stack = [s]
    while stack:
        for nb in adjacency[stack.pop()]:
            if nb not in component:
                component.add(nb)
                stack.append(nb)
    if t not in component:
        raise Disconnected(f"{s} and {t} are not connected")

    order = sorted(component)
    idx = {v: i for i, v in enumerate(order)}
    n = len(order)
    lap = np.zeros((n, n))
    for e in edges:
        if e.u not in component:
            continue
        i, j = idx[e.u], idx[e.v]
        lap[i, i] += e.capacity
        lap[j, j] += e.capacity
        lap[i, j] -= e.capacity
        lap[j, i] -= e.capacity
    chi = np.zeros(n)
    chi[idx[s]] = 1.0
    chi[idx[t]] = -1.0
    # Ground the last vertex; the reduced system is positive definite on a
    # connected component.
    try:
        phi_reduced = np.linalg.solve(lap[:-1, :-1], chi[:-1])
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    phi = np.append(phi_reduced, 0.0)
    residual = np.max(np.abs(lap @ phi - chi))
    if residual >= 1e-10:
        raise SingularSystem(f"solver residual {residual:.3e} exceeds 1e-10")

    potentials = {v: float(phi[idx[v]]) for v in order}
    flow = []
    energy = 0.0
    for e in edges:
        if e.u in component:
            f = e.capacity * (potentials[e.u] - potentials[e.v])
        else:
            f = 0.0
        flow.append(f)
        energy += f * f / e.capacity
    return ElectricalFlowResult(potentials=potentials, flow=flow, energy=float(energy))


def two_way_subgraph(net: RoadNetwork) -> tuple[list[UndirectedEdge], list[int]]:
    """The undirected (two-way segments only) view with lane-count capacities.

    Returned segment ids align with the edge list.
    """
    edges = []
    seg_ids = []
    for sid in sorted(net.segments):
        seg = net.segments[sid]
        if seg.one_way:
            continue
        edges.append(UndirectedEdge(seg.from_node, seg.to_node, float(seg.lanes)))
        seg_ids.append(sid)
    return edges, seg_ids
