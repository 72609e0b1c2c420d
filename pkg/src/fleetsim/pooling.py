"""Shared-ride dispatch: trip bundles, routing, and exact assignment.

Open requests are grouped into bundles a single vehicle could serve
together. Bundles are grown level by level, each size admitted only
when all of its sub-bundles proved workable, and each carries the
cheapest feasible stop sequence per candidate vehicle. A branch and
bound search then picks at most one bundle per vehicle, covering each
request at most once, under the same lexicographic priorities as the
single-rider mode.
"""

from __future__ import annotations

from dataclasses import dataclass

from .matching import AssignmentSolution, MatchingError, retained_route
from .model import (
    CostWeights,
    RequestStatus,
    Route,
    SystemState,
    Vehicle,
    plan_start,
    route_cost,
    schedule_stops,
)
from .network import Network

_ORACLE_EDGE_LIMIT = 20


@dataclass(frozen=True)
class Bundle:
    """A set of requests considered for joint service."""

    id: int
    members: frozenset[int]

    def key(self) -> tuple[int, tuple[int, ...]]:
        return (len(self.members), tuple(sorted(self.members)))


@dataclass(frozen=True)
class VBEdge:
    """A vehicle that can serve a bundle, with the cheapest plan found."""

    bundle_id: int
    vehicle_id: int
    cost: int
    route: Route


@dataclass
class RTVGraph:
    """Per-batch shared-ride feasibility structure."""

    request_ids: list[int]
    vehicle_ids: list[int]
    bundles: list[Bundle]
    edges: dict[tuple[int, int], VBEdge]
    vehicles_for: dict[int, list[int]]
    bundles_with: dict[int, list[int]]
    vehicle_bundles: dict[int, list[int]]
    prev_assigned: dict[int, int | None]
    baseline_cost: dict[int, int]

    def edge(self, bundle_id: int, vehicle_id: int) -> VBEdge:
        return self.edges[(bundle_id, vehicle_id)]

    def members(self, bundle_id: int) -> frozenset[int]:
        return self.bundles[bundle_id].members


def divertable_vehicles(
    state: SystemState, net: Network, now: int
) -> dict[int, list[int]]:
    """Vehicles that could head straight to each request in time.

    Ignores every revocable commitment and any detour bookkeeping: the
    vehicle is imagined turning toward the request at the next node it
    reaches. The set can only shrink while a request stays open.
    """
    starts = {v.id: plan_start(v, now) for v in state.sorted_vehicles()}
    out: dict[int, list[int]] = {}
    for request in state.active_requests():
        fits = []
        for vid in sorted(starts):
            node, time = starts[vid]
            if time + net.travel_time(node, request.origin) <= request.latest_pickup:
                fits.append(vid)
        out[request.id] = fits
    return out


def best_route(
    vehicle: Vehicle,
    members,
    now: int,
    net: Network,
    requests,
    weights: CostWeights,
) -> tuple[Route, int] | None:
    """Cheapest feasible plan serving the bundle plus everyone on board.

    Searches stop sequences depth first with running lower bounds on
    every pending deadline and ride limit. Among equal-cost sequences
    the first in visit order (by request id, dropoffs before pickups)
    wins, so the result is deterministic for a given state.
    """
    new_ids = sorted(members)
    start_node, start_time = plan_start(vehicle, now)
    boarded: dict[int, int] = {}
    for rid in sorted(vehicle.onboard):
        pickup = requests[rid].pickup_time
        if pickup is None:
            raise MatchingError(f"request {rid} on board without a pickup time")
        boarded[rid] = pickup

    best: list = [None, None]  # cost, visit sequence

    def violates_bounds(node: int, time: int, picks, drops) -> bool:
        for rid in picks:
            if time + net.travel_time(node, requests[rid].origin) > requests[rid].latest_pickup:
                return True
        for rid in drops:
            request = requests[rid]
            if time + net.travel_time(node, request.destination) - boarded[rid] > request.max_ride:
                return True
        return False

    def extend(node, time, picks, drops, load, visits, cost):
        if best[0] is not None and cost > best[0]:
            return
        if not picks and not drops:
            if best[0] is None or cost < best[0]:
                best[0] = cost
                best[1] = tuple(visits)
            return
        options = sorted(
            [(rid, 0) for rid in drops] + [(rid, 1) for rid in picks]
        )
        for rid, kind in options:
            request = requests[rid]
            if kind == 1:
                if load >= vehicle.capacity:
                    continue
                target = request.origin
                leg = net.travel_time(node, target)
                arrival = time + leg
                if arrival > request.latest_pickup:
                    continue
                boarded[rid] = arrival
                step_cost = weights.drive * leg + weights.wait * (arrival - request.request_time)
                next_picks = picks - {rid}
                next_drops = drops | {rid}
                if not violates_bounds(target, arrival, next_picks, next_drops):
                    visits.append((rid, kind))
                    extend(target, arrival, next_picks, next_drops, load + 1, visits, cost + step_cost)
                    visits.pop()
                del boarded[rid]
            else:
                target = request.destination
                leg = net.travel_time(node, target)
                arrival = time + leg
                if arrival - boarded[rid] > request.max_ride:
                    continue
                step_cost = weights.drive * leg + weights.ride * (arrival - boarded[rid])
                next_drops = drops - {rid}
                if not violates_bounds(target, arrival, picks, next_drops):
                    visits.append((rid, kind))
                    extend(target, arrival, picks, next_drops, load - 1, visits, cost + step_cost)
                    visits.pop()

    picks = frozenset(new_ids)
    drops = frozenset(vehicle.onboard)
    if violates_bounds(start_node, start_time, picks, drops):
        return None
    extend(start_node, start_time, picks, drops, len(vehicle.onboard), [], 0)
    if best[0] is None:
        return None
    stops = []
    for rid, kind in best[1]:
        request = requests[rid]
        if kind == 1:
            stops.append((request.origin, (rid,), ()))
        else:
            stops.append((request.destination, (), (rid,)))
    route = Route(schedule_stops(net, start_node, start_time, stops))
    return route, best[0]


def build_rtv_graph(
    state: SystemState,
    net: Network,
    now: int,
    weights: CostWeights,
    max_bundle_size: int | None = None,
) -> RTVGraph:
    """Enumerate workable bundles and their vehicle edges for one batch.

    Bundles grow by one request per level; a candidate is admitted only
    if every sub-bundle one smaller already has an edge, and only
    vehicles workable for all those sub-bundles are tried. With
    max_bundle_size=None levels continue until none survives.
    """
    if max_bundle_size is not None and max_bundle_size < 1:
        raise ValueError("max_bundle_size must be positive or None")
    request_ids = [r.id for r in state.active_requests()]
    vehicle_ids = sorted(state.vehicles)
    vehicles_for = divertable_vehicles(state, net, now)
    baseline: dict[int, int] = {}
    for vid in vehicle_ids:
        vehicle = state.vehicles[vid]
        kept = retained_route(vehicle, now, net)
        baseline[vid] = (
            0 if kept is None else route_cost(kept, vehicle, now, net, weights, state.requests)
        )

    plans: dict[frozenset[int], dict[int, tuple[Route, int]]] = {}
    level: list[frozenset[int]] = []
    for rid in request_ids:
        group = frozenset({rid})
        fits: dict[int, tuple[Route, int]] = {}
        for vid in vehicles_for[rid]:
            found = best_route(state.vehicles[vid], group, now, net, state.requests, weights)
            if found is not None:
                fits[vid] = found
        if fits:
            plans[group] = fits
            level.append(group)

    size = 1
    while level and (max_bundle_size is None or size < max_bundle_size):
        size += 1
        seen: set[frozenset[int]] = set()
        grown: list[frozenset[int]] = []
        for i, left in enumerate(level):
            for right in level[i + 1:]:
                union = left | right
                if len(union) != size or union in seen:
                    continue
                seen.add(union)
                subsets = [union - {rid} for rid in sorted(union)]
                if any(sub not in plans for sub in subsets):
                    continue
                shared = set(plans[subsets[0]])
                for sub in subsets[1:]:
                    shared &= set(plans[sub])
                fits = {}
                for vid in sorted(shared):
                    found = best_route(
                        state.vehicles[vid], union, now, net, state.requests, weights
                    )
                    if found is not None:
                        fits[vid] = found
                if fits:
                    plans[union] = fits
                    grown.append(union)
        level = grown

    ordered = sorted(plans, key=lambda s: (len(s), tuple(sorted(s))))
    bundles = [Bundle(bid, group) for bid, group in enumerate(ordered)]
    edges: dict[tuple[int, int], VBEdge] = {}
    bundles_with: dict[int, list[int]] = {rid: [] for rid in request_ids}
    vehicle_bundles: dict[int, list[int]] = {vid: [] for vid in vehicle_ids}
    for bundle in bundles:
        for vid in sorted(plans[bundle.members]):
            route, cost = plans[bundle.members][vid]
            edges[(bundle.id, vid)] = VBEdge(bundle.id, vid, cost - baseline[vid], route)
            vehicle_bundles[vid].append(bundle.id)
        for rid in bundle.members:
            bundles_with[rid].append(bundle.id)
    prev = {
        rid: state.requests[rid].assigned_vehicle
        if state.requests[rid].status is RequestStatus.WAITING
        else None
        for rid in request_ids
    }
    return RTVGraph(
        request_ids=request_ids,
        vehicle_ids=vehicle_ids,
        bundles=bundles,
        edges=edges,
        vehicles_for=vehicles_for,
        bundles_with=bundles_with,
        vehicle_bundles=vehicle_bundles,
        prev_assigned=prev,
        baseline_cost=baseline,
    )


def competing_bundles(graph: RTVGraph, bundle_id: int) -> list[int]:
    """Bundles that cannot be chosen together with this one."""
    members = graph.members(bundle_id)
    rivals: set[int] = set()
    for rid in members:
        rivals.update(graph.bundles_with.get(rid, ()))
    rivals.discard(bundle_id)
    return sorted(rivals)


def _vehicle_options(graph: RTVGraph, frozen: bool):
    """Per-vehicle choice lists, most content-canonical first, None last."""
    frozen_map: dict[int, int] = {}
    if frozen:
        frozen_map = {
            rid: vid for rid, vid in graph.prev_assigned.items() if vid is not None
        }
    needs: dict[int, set[int]] = {}
    for rid, vid in frozen_map.items():
        needs.setdefault(vid, set()).add(rid)
    options: dict[int, list[int | None]] = {}
    for vid in graph.vehicle_ids:
        allowed: list[int | None] = []
        need = needs.get(vid, set())
        for bid in graph.vehicle_bundles.get(vid, ()):
            members = graph.members(bid)
            if frozen:
                if not need <= members:
                    continue
                if any(frozen_map.get(rid, vid) != vid for rid in members):
                    continue
            allowed.append(bid)
        if need and not allowed:
            raise MatchingError(
                f"vehicle {vid}: frozen commitment to {sorted(need)} has no workable bundle"
            )
        if not need:
            allowed.append(None)
        options[vid] = allowed
    return options


def _leaf_key(graph: RTVGraph, chosen: dict[int, int]):
    return tuple(
        sorted((tuple(sorted(graph.members(bid))), vid) for vid, bid in chosen.items())
    )


def _solution_from(graph: RTVGraph, chosen: dict[int, int]) -> AssignmentSolution:
    pairs: dict[int, int] = {}
    routes: dict[int, Route] = {}
    total = 0
    for vid, bid in sorted(chosen.items()):
        edge = graph.edge(bid, vid)
        routes[vid] = edge.route
        total += edge.cost
        for rid in sorted(graph.members(bid)):
            pairs[rid] = vid
    kept = sum(1 for rid in pairs if graph.prev_assigned.get(rid) is not None)
    unassigned = sorted(set(graph.request_ids) - set(pairs))
    dropped = [rid for rid in unassigned if graph.prev_assigned.get(rid) is not None]
    return AssignmentSolution(
        pairs=pairs,
        routes=routes,
        kept_previous=kept,
        assigned_count=len(pairs),
        total_cost=total,
        unassigned=unassigned,
        dropped_previous=dropped,
        chosen_bundles=dict(sorted(chosen.items())),
    )


def solve_pooling(
    graph: RTVGraph, frozen: bool = False, method: str = "exact"
) -> AssignmentSolution:
    """Pick at most one bundle per vehicle, covering each request once.

    The objective is lexicographic: keep previously assigned requests
    assigned, then cover as many requests as possible, then minimize
    total incremental cost. Ties resolve by comparing the chosen
    bundle contents and vehicles, so runs with the same alternatives
    land on the same answer regardless of internal ordering.

    method="bigm" solves the same problem through a single scalar
    objective with stacked penalty constants; it exists to cross-check
    the lexicographic search and must always agree with it.
    """
    if method not in ("exact", "bigm"):
        raise ValueError(f"unknown method {method!r}")
    options = _vehicle_options(graph, frozen)
    order = graph.vehicle_ids
    prev_members = {
        bid: sum(
            1 for rid in graph.members(bid) if graph.prev_assigned.get(rid) is not None
        )
        for bid in range(len(graph.bundles))
    }

    spread = 1 + sum(abs(edge.cost) for edge in graph.edges.values())
    drop_penalty = 1 + (len(graph.request_ids) + 2) * spread

    def score(p: int, n: int, c: int):
        if method == "exact":
            return (-p, -n, c)
        return c - n * spread - p * drop_penalty

    prev_set = frozenset(
        rid for rid, vid in graph.prev_assigned.items() if vid is not None
    )
    # Flatten every allowed (bundle, vehicle) choice and sort by the
    # canonical tie key. Walking assignments as increasing chains of
    # these pairs visits complete solutions in exactly tie-key order,
    # so the first solution seen at any score is the one the tie rule
    # would pick, and an equal-bound subtree can be dropped whole
    # instead of enumerated for key comparison.
    pairs = sorted(
        ((tuple(sorted(graph.members(bid))), vid), vid, bid)
        for vid in order
        for bid in options[vid]
        if bid is not None
    )
    choices = [
        (
            vid,
            bid,
            graph.edge(bid, vid).cost,
            prev_members[bid],
            graph.members(bid),
        )
        for _, vid, bid in pairs
    ]
    mandatory = frozenset(vid for vid in order if None not in options[vid])

    total = len(choices)
    suffix_req: list[frozenset[int]] = [frozenset()] * (total + 1)
    suffix_neg = [0] * (total + 1)
    for j in range(total - 1, -1, -1):
        suffix_req[j] = suffix_req[j + 1] | choices[j][4]
        suffix_neg[j] = suffix_neg[j + 1] + min(0, choices[j][2])

    incumbent: list = [None, None]  # score, chosen dict

    def walk(
        start: int,
        used_req: frozenset[int],
        used_veh: frozenset[int],
        chosen: dict[int, int],
        p: int,
        n: int,
        c: int,
    ):
        if mandatory <= used_veh:
            value = score(p, n, c)
            if incumbent[0] is None or value < incumbent[0]:
                incumbent[0] = value
                incumbent[1] = dict(chosen)
        for k in range(start, total):
            if incumbent[0] is not None:
                # most optimistic completion using any pairs from k on;
                # it only gets worse as k advances, hence the break
                open_req = suffix_req[k] - used_req
                bound = score(
                    p + len(open_req & prev_set),
                    n + len(open_req),
                    c + suffix_neg[k],
                )
                if bound >= incumbent[0]:
                    break
            vid, bid, cost, pm, members = choices[k]
            if vid in used_veh or used_req & members:
                continue
            chosen[vid] = bid
            walk(
                k + 1,
                used_req | members,
                used_veh | {vid},
                chosen,
                p + pm,
                n + len(members),
                c + cost,
            )
            del chosen[vid]

    walk(0, frozenset(), frozenset(), {}, 0, 0, 0)
    return _solution_from(graph, incumbent[1])


def exhaustive_pooling_oracle(graph: RTVGraph, frozen: bool = False) -> AssignmentSolution:
    """Reference solver: plain enumeration of every vehicle-bundle choice.

    Guarded to tiny instances so tests cannot accidentally explode.
    Applies the identical value ordering as solve_pooling, including
    the canonical tie key, with no bounding or pruning anywhere.
    """
    if len(graph.edges) > _ORACLE_EDGE_LIMIT:
        raise ValueError(
            f"oracle limited to {_ORACLE_EDGE_LIMIT} edges, got {len(graph.edges)}"
        )
    options = _vehicle_options(graph, frozen)
    order = graph.vehicle_ids
    results: list[tuple] = []

    def walk(i: int, used: set[int], chosen: dict[int, int], p: int, n: int, c: int):
        if i == len(order):
            results.append(((-p, -n, c, _leaf_key(graph, chosen)), dict(chosen)))
            return
        vid = order[i]
        for bid in options[vid]:
            if bid is None:
                walk(i + 1, used, chosen, p, n, c)
                continue
            members = graph.members(bid)
            if used & members:
                continue
            prev_gain = sum(
                1 for rid in members if graph.prev_assigned.get(rid) is not None
            )
            chosen[vid] = bid
            walk(
                i + 1,
                used | members,
                chosen,
                p + prev_gain,
                n + len(members),
                c + graph.edge(bid, vid).cost,
            )
            del chosen[vid]

    walk(0, set(), {}, 0, 0, 0)
    best = min(results, key=lambda item: item[0])
    return _solution_from(graph, best[1])
