"""Single-rider dispatch: request-vehicle graph and exact batch matching.

Each batch builds a bipartite graph of requests against the vehicles
that can still reach them in time, then solves a min-cost matching
whose weights encode the operator's priorities: drop as few previously
promised requests as possible, serve as many requests as possible,
then minimize the cost increase over the committed plans. Ties are
broken canonically (lowest request id, then lowest vehicle id), so the
same instance always yields the same assignment.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .model import Request, RequestStatus, Route, SystemState, CostWeights, route_cost, schedule_stops, plan_start
from .network import Network


class MatchingError(RuntimeError):
    """Raised when the matching layer hits an inconsistent input."""


@dataclass(frozen=True)
class RVEdge:
    """A feasible request-vehicle pairing with its replacement plan."""

    request_id: int
    vehicle_id: int
    cost: int
    route: Route


@dataclass
class RVGraph:
    """Per-batch feasibility graph for single-rider assignment."""

    request_ids: list[int]
    vehicle_ids: list[int]
    edges: dict[tuple[int, int], RVEdge]
    vehicles_for: dict[int, list[int]]
    prev_assigned: dict[int, int | None]
    baseline_cost: dict[int, int]

    def edge(self, request_id: int, vehicle_id: int) -> RVEdge:
        return self.edges[(request_id, vehicle_id)]


@dataclass
class AssignmentSolution:
    """Outcome of one batch optimization, for either service mode."""

    pairs: dict[int, int]
    routes: dict[int, Route]
    kept_previous: int
    assigned_count: int
    total_cost: int
    unassigned: list[int] = field(default_factory=list)
    dropped_previous: list[int] = field(default_factory=list)
    chosen_bundles: dict[int, int] = field(default_factory=dict)

    @property
    def value(self) -> tuple[int, int, int]:
        """(kept previous, assigned, cost) as optimized, for reporting."""
        return (self.kept_previous, self.assigned_count, self.total_cost)


def vehicle_release(vehicle, now: int) -> tuple[int, int]:
    """Node and time from which the vehicle can start a new pickup.

    Passengers already on board must reach their committed dropoffs
    first; a pending pickup is revocable and does not bind. A vehicle
    part way along an edge binds to that edge's far end.
    """
    release = None
    for stop in vehicle.remaining_stops():
        if stop.dropoffs & vehicle.onboard:
            release = stop
    if release is not None:
        return release.location, release.planned_arrival
    return plan_start(vehicle, now)


def _committed_dropoffs(vehicle) -> list[tuple[int, tuple, tuple[int, ...]]]:
    visits = []
    for stop in vehicle.remaining_stops():
        keep = stop.dropoffs & vehicle.onboard
        if keep:
            visits.append((stop.location, (), tuple(sorted(keep))))
    return visits


def candidate_route(
    vehicle, request: Request, now: int, net: Network
) -> Route:
    """Replacement plan: finish committed dropoffs, then serve the request."""
    visits = _committed_dropoffs(vehicle)
    visits.append((request.origin, (request.id,), ()))
    visits.append((request.destination, (), (request.id,)))
    node, time = plan_start(vehicle, now)
    return Route(schedule_stops(net, node, time, visits))


def retained_route(vehicle, now: int, net: Network) -> Route | None:
    """The plan a vehicle keeps when its pending pickup is withdrawn."""
    visits = _committed_dropoffs(vehicle)
    if not visits:
        return None
    node, time = plan_start(vehicle, now)
    return Route(schedule_stops(net, node, time, visits))


def feasible_vehicles(
    state: SystemState, net: Network, now: int
) -> dict[int, list[int]]:
    """Vehicles that can still reach each open request before its deadline.

    The test ignores revocable pickup commitments, so for a request the
    set can only shrink from batch to batch: vehicles drift away or
    bind to dropoffs, and the deadline never moves.
    """
    releases = {v.id: vehicle_release(v, now) for v in state.sorted_vehicles()}
    out: dict[int, list[int]] = {}
    for request in state.active_requests():
        fits = []
        for vid in sorted(releases):
            node, time = releases[vid]
            if time + net.travel_time(node, request.origin) <= request.latest_pickup:
                fits.append(vid)
        out[request.id] = fits
    return out


def build_rv_graph(
    state: SystemState,
    net: Network,
    now: int,
    weights: CostWeights,
) -> RVGraph:
    """Build the batch's feasibility graph with incremental plan costs.

    Edge cost is the candidate plan's cost minus the cost of what the
    vehicle is already committed to drive, so summing matched edge
    costs gives the assignment's true cost increase.
    """
    request_ids = [r.id for r in state.active_requests()]
    vehicle_ids = sorted(state.vehicles)
    vehicles_for = feasible_vehicles(state, net, now)
    baseline: dict[int, int] = {}
    for vid in vehicle_ids:
        vehicle = state.vehicles[vid]
        kept = retained_route(vehicle, now, net)
        baseline[vid] = (
            0 if kept is None else route_cost(kept, vehicle, now, net, weights, state.requests)
        )
    edges: dict[tuple[int, int], RVEdge] = {}
    for rid in request_ids:
        request = state.requests[rid]
        if net.travel_time(request.origin, request.destination) > request.max_ride:
            vehicles_for[rid] = []
            continue
        for vid in vehicles_for[rid]:
            vehicle = state.vehicles[vid]
            plan = candidate_route(vehicle, request, now, net)
            cost = route_cost(plan, vehicle, now, net, weights, state.requests) - baseline[vid]
            edges[(rid, vid)] = RVEdge(rid, vid, cost, plan)
    prev = {
        rid: state.requests[rid].assigned_vehicle
        if state.requests[rid].status is RequestStatus.WAITING
        else None
        for rid in request_ids
    }
    return RVGraph(request_ids, vehicle_ids, edges, vehicles_for, prev, baseline)


# -- exact solver ---------------------------------------------------------------

_ZERO3 = (0, 0, 0)


def _t_add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _t_sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _min_cost_matching(
    request_ids: list[int],
    vehicle_ids: list[int],
    weights: dict[tuple[int, int], tuple[int, int, int]],
) -> dict[int, int]:
    """Free-cardinality min-cost matching over 3-component weights.

    Weights add componentwise and compare lexicographically. Successive
    shortest augmenting paths with node potentials; the first Dijkstra
    round is a plain relaxation over single edges, which also absorbs
    the negative raw weights, and every later round runs on reduced
    weights that stay non-negative.
    """
    out: dict[int, list[tuple[int, tuple[int, int, int]]]] = {}
    for (rid, vid), w in sorted(weights.items()):
        out.setdefault(rid, []).append((vid, w))
    sources = [rid for rid in request_ids if rid in out]
    pi_r = {rid: _ZERO3 for rid in sources}
    pi_v = {vid: _ZERO3 for vid in vehicle_ids}
    match_rv: dict[int, int] = {}
    match_vr: dict[int, int] = {}

    while True:
        dist_r: dict[int, tuple] = {}
        dist_v: dict[int, tuple] = {}
        parent_v: dict[int, int] = {}
        heap: list = []
        for rid in sources:
            if rid not in match_rv:
                dist_r[rid] = _ZERO3
                heapq.heappush(heap, (_ZERO3, 0, rid))
        while heap:
            d, kind, node = heapq.heappop(heap)
            if kind == 0:
                if dist_r.get(node) != d:
                    continue
                for vid, w in out[node]:
                    if match_rv.get(node) == vid:
                        continue
                    nd = _t_add(d, _t_add(w, _t_sub(pi_r[node], pi_v[vid])))
                    if vid not in dist_v or nd < dist_v[vid]:
                        dist_v[vid] = nd
                        parent_v[vid] = node
                        heapq.heappush(heap, (nd, 1, vid))
            else:
                if dist_v.get(node) != d:
                    continue
                rid = match_vr.get(node)
                if rid is None:
                    continue
                w = weights[(rid, node)]
                nd = _t_add(d, _t_sub(_t_sub(pi_v[node], w), pi_r[rid]))
                if rid not in dist_r or nd < dist_r[rid]:
                    dist_r[rid] = nd
                    heapq.heappush(heap, (nd, 0, rid))

        best = None
        for vid in vehicle_ids:
            if vid in match_vr or vid not in dist_v:
                continue
            true_cost = _t_add(dist_v[vid], pi_v[vid])
            if best is None or (true_cost, vid) < best:
                best = (true_cost, vid)
        if best is None:
            return match_rv
        target = best[1]
        bound = dist_v[target]
        for rid in pi_r:
            if rid in dist_r:
                pi_r[rid] = _t_add(pi_r[rid], min(dist_r[rid], bound))
            else:
                pi_r[rid] = _t_add(pi_r[rid], bound)
        for vid in pi_v:
            if vid in dist_v:
                pi_v[vid] = _t_add(pi_v[vid], min(dist_v[vid], bound))
            else:
                pi_v[vid] = _t_add(pi_v[vid], bound)
        vid = target
        while True:
            rid = parent_v[vid]
            came_from = match_rv.get(rid)
            match_rv[rid] = vid
            match_vr[vid] = rid
            if came_from is None:
                break
            vid = came_from


def solve_hailing(graph: RVGraph, frozen: bool = False) -> AssignmentSolution:
    """Solve one batch exactly, with canonical tie-breaking.

    The objective is lexicographic: keep as many previously assigned
    requests assigned as possible, then assign as many requests as
    possible, then minimize total incremental cost. Among optima the
    solver prefers serving lower request ids and pairing each with the
    lowest workable vehicle id, so equal instances resolve equally.

    With frozen=True every previously assigned pair is locked in and
    only the remaining requests and vehicles are optimized.
    """
    fixed: dict[int, int] = {}
    used: set[int] = set()
    if frozen:
        for rid in graph.request_ids:
            vid = graph.prev_assigned.get(rid)
            if vid is None:
                continue
            if (rid, vid) not in graph.edges:
                raise MatchingError(
                    f"frozen pair ({rid}, {vid}) lost feasibility; commitments must hold"
                )
            if vid in used:
                raise MatchingError(f"vehicle {vid} frozen to two requests")
            fixed[rid] = vid
            used.add(vid)

    free_requests = [rid for rid in graph.request_ids if rid not in fixed]
    free_vehicles = [vid for vid in graph.vehicle_ids if vid not in used]
    free_request_set = set(free_requests)
    free_vehicle_set = set(free_vehicles)

    costs = {
        pair: edge.cost
        for pair, edge in graph.edges.items()
        if pair[0] in free_request_set and pair[1] in free_vehicle_set
    }
    matching: dict[int, int] = {}
    if costs:
        spread = 1 + sum(abs(c) for c in costs.values())
        drop_penalty = 1 + (len(graph.request_ids) + 2) * spread
        rank_r = {rid: i for i, rid in enumerate(graph.request_ids)}
        bits_r = len(graph.request_ids)
        ranked_edges = sorted(costs)
        bits_e = len(ranked_edges)
        rank_e = {pair: i for i, pair in enumerate(ranked_edges)}
        weights = {}
        for pair, cost in costs.items():
            rid = pair[0]
            w = cost - spread
            if graph.prev_assigned.get(rid) is not None:
                w -= drop_penalty
            weights[pair] = (
                w,
                -(1 << (bits_r - 1 - rank_r[rid])),
                -(1 << (bits_e - 1 - rank_e[pair])),
            )
        matching = _min_cost_matching(free_requests, free_vehicles, weights)

    pairs = dict(fixed)
    pairs.update(matching)
    routes = {vid: graph.edges[(rid, vid)].route for rid, vid in pairs.items()}
    total_cost = sum(graph.edges[(rid, vid)].cost for rid, vid in pairs.items())
    kept = sum(1 for rid in pairs if graph.prev_assigned.get(rid) is not None)
    unassigned = sorted(set(graph.request_ids) - set(pairs))
    dropped = [rid for rid in unassigned if graph.prev_assigned.get(rid) is not None]
    return AssignmentSolution(
        pairs=pairs,
        routes=routes,
        kept_previous=kept,
        assigned_count=len(pairs),
        total_cost=total_cost,
        unassigned=unassigned,
        dropped_previous=dropped,
    )


def competing_requests(graph: RVGraph, request_id: int) -> list[int]:
    """Other open requests contending for any of this request's vehicles."""
    mine = set(graph.vehicles_for.get(request_id, ()))
    rivals = [
        rid
        for rid in graph.request_ids
        if rid != request_id and mine & set(graph.vehicles_for.get(rid, ()))
    ]
    return rivals


def priority_matching_oracle(
    request_ids: list[int],
    vehicle_ids: list[int],
    costs: dict[tuple[int, int], int],
    prev_assigned: dict[int, int | None],
) -> tuple[int, int, int, dict[int, int]]:
    """Exhaustive reference matcher for small instances (<= 8 vehicles).

    Enumerates assignments by dynamic programming over vehicle subsets,
    ranking each complete matching by (kept previous, assigned count,
    cost) and then by the same canonical preference as the solver:
    include low request ids first, give each the lowest-id vehicle.
    Returns (kept, assigned, cost, pairs).
    """
    if len(vehicle_ids) > 8:
        raise ValueError("oracle is exhaustive; limit instances to 8 vehicles")
    request_ids = sorted(request_ids)
    vehicle_ids = sorted(vehicle_ids)
    big_v = len(vehicle_ids)
    memo: dict[tuple[int, int], tuple] = {}

    def best(i: int, mask: int) -> tuple:
        """Suffix value (-kept, -assigned, cost, skip flags, vehicle picks).

        The two key segments are compared whole, flags before picks, so
        which requests are served outranks which vehicle serves them.
        """
        if i == len(request_ids):
            return (0, 0, 0, (), ())
        key = (i, mask)
        if key in memo:
            return memo[key]
        rid = request_ids[i]
        skip = best(i + 1, mask)
        value = (skip[0], skip[1], skip[2], (1,) + skip[3], (big_v,) + skip[4])
        weight_prev = 1 if prev_assigned.get(rid) is not None else 0
        for j, vid in enumerate(vehicle_ids):
            if mask & (1 << j) or (rid, vid) not in costs:
                continue
            rest = best(i + 1, mask | (1 << j))
            cand = (
                rest[0] - weight_prev,
                rest[1] - 1,
                rest[2] + costs[(rid, vid)],
                (0,) + rest[3],
                (j,) + rest[4],
            )
            if cand < value:
                value = cand
        memo[key] = value
        return value

    value = best(0, 0)
    pairs: dict[int, int] = {}
    for i, rid in enumerate(request_ids):
        if value[3][i] == 0:
            pairs[rid] = vehicle_ids[value[4][i]]
    return (-value[0], -value[1], value[2], pairs)
