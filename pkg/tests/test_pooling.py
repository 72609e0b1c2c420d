"""Tests for bundle routing, enumeration, and the shared-ride solver."""

from __future__ import annotations

import itertools
import random

import pytest

from fleetsim.matching import MatchingError
from fleetsim.model import (
    CostWeights,
    Request,
    Route,
    Stop,
    SystemState,
    Vehicle,
    route_cost,
    route_feasible,
)
from fleetsim.network import Network, grid_node
from fleetsim.pooling import (
    Bundle,
    RTVGraph,
    VBEdge,
    best_route,
    build_rtv_graph,
    competing_bundles,
    divertable_vehicles,
    exhaustive_pooling_oracle,
    solve_pooling,
)

_DUMMY_ROUTE = Route((Stop(0, frozenset({0}), frozenset(), 0),))
_W = CostWeights(1, 1, 1)


def make_request(rid, origin, destination, request_time=0, max_wait=5, max_ride=10):
    r = Request(rid, origin, destination, request_time, max_wait, max_ride)
    r.reveal()
    return r


# -- routing --------------------------------------------------------------------


def test_best_route_prefers_cheapest_then_lowest_sequence():
    net = Network.build_grid(5, 5)
    requests = {
        1: make_request(1, grid_node(5, 1, 0), grid_node(5, 3, 0)),
        2: make_request(2, grid_node(5, 2, 0), grid_node(5, 2, 2)),
    }
    vehicle = Vehicle(id=0, capacity=2, position=grid_node(5, 0, 0))
    route, cost = best_route(vehicle, {1, 2}, 0, net, requests, _W)
    assert cost == 15
    # the shared-ride interleaving ties at 15; the sequential order wins
    # because dropping request 1 sorts before picking request 2
    assert [(s.location, tuple(sorted(s.pickups)), tuple(sorted(s.dropoffs))) for s in route.stops] == [
        (grid_node(5, 1, 0), (1,), ()),
        (grid_node(5, 3, 0), (), (1,)),
        (grid_node(5, 2, 0), (2,), ()),
        (grid_node(5, 2, 2), (), (2,)),
    ]


def test_best_route_capacity_changes_the_answer():
    net = Network.build_grid(5, 5)
    requests = {
        1: make_request(1, grid_node(5, 1, 0), grid_node(5, 4, 0)),
        2: make_request(2, grid_node(5, 2, 0), grid_node(5, 3, 0)),
    }
    roomy = Vehicle(id=0, capacity=2, position=grid_node(5, 0, 0))
    route, cost = best_route(roomy, {1, 2}, 0, net, requests, _W)
    assert cost == 11  # ride both at once
    assert [s.location for s in route.stops] == [
        grid_node(5, 1, 0),
        grid_node(5, 2, 0),
        grid_node(5, 3, 0),
        grid_node(5, 4, 0),
    ]
    cramped = Vehicle(id=0, capacity=1, position=grid_node(5, 0, 0))
    route, cost = best_route(cramped, {1, 2}, 0, net, requests, _W)
    assert cost == 19  # forced one after the other, second request first


def test_best_route_inserts_before_committed_dropoff():
    net = Network.build_grid(5, 5)
    rider = make_request(9, grid_node(5, 3, 0), grid_node(5, 4, 0), max_ride=10)
    rider.assign(0)
    rider.board(0)
    requests = {
        9: rider,
        1: make_request(1, grid_node(5, 1, 0), grid_node(5, 2, 0), max_wait=3, max_ride=4),
    }
    vehicle = Vehicle(id=0, capacity=2, position=grid_node(5, 0, 0), onboard={9})
    route, cost = best_route(vehicle, {1}, 0, net, requests, _W)
    # detour first: pick at 1, drop at 2, then the promised dropoff at 4
    assert cost == 4 + 1 + (1 + 4)
    assert [s.location for s in route.stops] == [
        grid_node(5, 1, 0),
        grid_node(5, 2, 0),
        grid_node(5, 4, 0),
    ]
    ok, reason = route_feasible(vehicle, route, 0, net, requests)
    assert ok, reason


def test_best_route_infeasible_cases():
    net = Network.build_grid(5, 5)
    far = {1: make_request(1, grid_node(5, 4, 4), grid_node(5, 0, 4), max_wait=3)}
    vehicle = Vehicle(id=0, capacity=2, position=grid_node(5, 0, 0))
    assert best_route(vehicle, {1}, 0, net, far, _W) is None

    tight = {1: make_request(1, grid_node(5, 1, 0), grid_node(5, 4, 0), max_ride=2)}
    assert best_route(vehicle, {1}, 0, net, tight, _W) is None

    rider = make_request(9, grid_node(5, 0, 1), grid_node(5, 0, 4), max_ride=3)
    rider.assign(0)
    rider.board(1)
    loaded = Vehicle(id=0, capacity=1, position=grid_node(5, 0, 1), free_at=1, onboard={9})
    # no capacity for a pickup before the dropoff, and afterwards the
    # new request's deadline is gone
    near = {9: rider, 1: make_request(1, grid_node(5, 1, 1), grid_node(5, 1, 3), request_time=1, max_wait=2)}
    assert best_route(loaded, {1}, 1, net, near, _W) is None


def _route_signature(route):
    return [(s.location, tuple(sorted(s.pickups)), tuple(sorted(s.dropoffs)), s.planned_arrival) for s in route.stops]


def brute_force_route(vehicle, members, now, net, requests, weights):
    """Independent reference: try every visit order outright."""
    visits = []
    for rid in sorted(members):
        visits.append((rid, 1))
        visits.append((rid, 0))
    for rid in sorted(vehicle.onboard):
        visits.append((rid, 0))
    best = None
    from fleetsim.model import plan_start, schedule_stops

    node, time = plan_start(vehicle, now)
    for perm in itertools.permutations(visits):
        ok = True
        for rid in members:
            if perm.index((rid, 1)) > perm.index((rid, 0)):
                ok = False
                break
        if not ok:
            continue
        specs = []
        for rid, kind in perm:
            if kind == 1:
                specs.append((requests[rid].origin, (rid,), ()))
            else:
                specs.append((requests[rid].destination, (), (rid,)))
        route = Route(schedule_stops(net, node, time, specs))
        feasible, _ = route_feasible(vehicle, route, now, net, requests)
        if not feasible:
            continue
        cost = route_cost(route, vehicle, now, net, weights, requests)
        key = (cost, perm)
        if best is None or key < best[0]:
            best = (key, route)
    if best is None:
        return None
    return best[1], best[0][0]


def test_best_route_agrees_with_permutation_search():
    net = Network.build_grid(5, 5)
    rng = random.Random(20260818)
    found = 0
    for trial in range(90):
        nodes = list(net.nodes)
        vehicle = Vehicle(
            id=0,
            capacity=rng.randrange(1, 4),
            position=rng.choice(nodes),
            free_at=rng.randrange(0, 2),
        )
        requests = {}
        if rng.random() < 0.4:
            origin, destination = rng.sample(nodes, 2)
            rider = make_request(9, origin, destination, max_ride=net.travel_time(origin, destination) + rng.randrange(0, 5))
            rider.assign(0)
            rider.board(0)
            rider.pickup_time = 0
            vehicle.onboard.add(9)
            vehicle.position = origin
            requests[9] = rider
        members = set()
        for rid in range(1, rng.randrange(2, 4)):
            origin, destination = rng.sample(nodes, 2)
            requests[rid] = make_request(
                rid,
                origin,
                destination,
                max_wait=rng.randrange(3, 8),
                max_ride=net.travel_time(origin, destination) + rng.randrange(0, 5),
            )
            members.add(rid)
        got = best_route(vehicle, members, 0, net, requests, _W)
        want = brute_force_route(vehicle, members, 0, net, requests, _W)
        if want is None:
            assert got is None
            continue
        found += 1
        assert got is not None
        assert got[1] == want[1]
        assert _route_signature(got[0]) == _route_signature(want[0])
    assert found >= 25


# -- enumeration ----------------------------------------------------------------


def _abc_state(wait_b=4, wait_c=4, c_origin=(0, 2), c_destination=(3, 2), capacity=3):
    net = Network.build_grid(10, 10)
    state = SystemState(now=0)
    state.add_vehicle(Vehicle(id=0, capacity=capacity, position=grid_node(10, 0, 0)))
    a = make_request(1, grid_node(10, 0, 0), grid_node(10, 4, 4), max_wait=4, max_ride=8)
    b = make_request(2, grid_node(10, 2, 0), grid_node(10, 2, 3), max_wait=wait_b, max_ride=3)
    c = make_request(
        3,
        grid_node(10, *c_origin),
        grid_node(10, *c_destination),
        max_wait=wait_c,
        max_ride=net.travel_time(grid_node(10, *c_origin), grid_node(10, *c_destination)),
    )
    for r in (a, b, c):
        state.add_request(r)
    return net, state


def test_rtv_graph_sub_bundle_pruning_cuts_the_triple():
    net, state = _abc_state()
    graph = build_rtv_graph(state, net, 0, _W)
    groups = [tuple(sorted(b.members)) for b in graph.bundles]
    # three singles and two pairs; the pair (2, 3) never works, which
    # also rules the triple out before it is ever routed
    assert groups == [(1,), (2,), (3,), (1, 2), (1, 3)]
    assert [b.id for b in graph.bundles] == [0, 1, 2, 3, 4]
    singleton_a = graph.edge(0, 0)
    assert singleton_a.cost == 16  # drive 8 + ride 8 from the depot corner
    for (bid, vid), edge in graph.edges.items():
        ok, reason = route_feasible(state.vehicles[vid], edge.route, 0, net, state.requests)
        assert ok, reason
        for rid in graph.members(bid):
            assert vid in graph.vehicles_for[rid]
    assert graph.bundles_with[1] == [0, 3, 4]
    assert graph.bundles_with[2] == [1, 3]
    assert competing_bundles(graph, 0) == [3, 4]
    assert competing_bundles(graph, 1) == [3]


def test_rtv_graph_bundle_size_cap():
    # move request 3 next to request 2 so every pair and the triple work
    net, state = _abc_state(c_origin=(2, 1), c_destination=(2, 4))
    capped_1 = build_rtv_graph(state, net, 0, _W, max_bundle_size=1)
    assert [tuple(sorted(b.members)) for b in capped_1.bundles] == [(1,), (2,), (3,)]
    capped_2 = build_rtv_graph(state, net, 0, _W, max_bundle_size=2)
    assert max(len(b.members) for b in capped_2.bundles) == 2
    open_ended = build_rtv_graph(state, net, 0, _W, max_bundle_size=None)
    assert (1, 2, 3) in [tuple(sorted(b.members)) for b in open_ended.bundles]
    with pytest.raises(ValueError):
        build_rtv_graph(state, net, 0, _W, max_bundle_size=0)


def test_rtv_graph_matches_unpruned_subset_search():
    rng = random.Random(7)
    net = Network.build_grid(6, 6)
    for trial in range(25):
        state = SystemState(now=0)
        for vid in range(rng.randrange(1, 4)):
            state.add_vehicle(
                Vehicle(id=vid, capacity=rng.randrange(1, 4), position=rng.randrange(36))
            )
        rids = list(range(1, rng.randrange(2, 5)))
        for rid in rids:
            origin, destination = rng.sample(range(36), 2)
            state.add_request(
                make_request(
                    rid,
                    origin,
                    destination,
                    max_wait=rng.randrange(2, 7),
                    max_ride=net.travel_time(origin, destination) + rng.randrange(0, 4),
                )
            )
        graph = build_rtv_graph(state, net, 0, _W)
        got = {(tuple(sorted(graph.members(bid))), vid) for (bid, vid) in graph.edges}
        want = set()
        for size in range(1, len(rids) + 1):
            for combo in itertools.combinations(rids, size):
                for vid in state.vehicles:
                    found = best_route(
                        state.vehicles[vid], set(combo), 0, net, state.requests, _W
                    )
                    if found is not None:
                        want.add((combo, vid))
        assert got == want


def test_divertable_vehicles_boundary_and_commitment_blindness():
    net = Network.build_grid(5, 5)
    state = SystemState(now=2)
    # mid-edge vehicle: next node (3, 0) at time 3
    state.add_vehicle(Vehicle(id=0, capacity=2, position=grid_node(5, 3, 0), free_at=3))
    # committed to a dropoff far away, which divert-now reachability ignores
    rider = make_request(9, grid_node(5, 0, 4), grid_node(5, 4, 4))
    rider.assign(1)
    rider.board(0)
    busy = Vehicle(id=1, capacity=2, position=grid_node(5, 0, 4), onboard={9})
    busy.route = Route((Stop(grid_node(5, 4, 4), frozenset(), frozenset({9}), 6),))
    state.add_vehicle(busy)
    state.add_request(rider)

    reachable = make_request(1, grid_node(5, 4, 0), grid_node(5, 4, 3), request_time=2, max_wait=2)
    state.add_request(reachable)
    out = divertable_vehicles(state, net, 2)
    # vehicle 0: 3 + 1 = 4 == deadline; vehicle 1: 2 + 7 > 4
    assert out[1] == [0]


# -- assignment -----------------------------------------------------------------


def synth_graph(bundle_members, edge_costs, prev=None, vehicle_ids=None, extra_requests=()):
    groups = sorted(
        {frozenset(m) for m in bundle_members}, key=lambda s: (len(s), tuple(sorted(s)))
    )
    bundles = [Bundle(i, g) for i, g in enumerate(groups)]
    index = {b.members: b.id for b in bundles}
    vehicle_ids = sorted(
        set(vehicle_ids or []) | {vid for _, vid in edge_costs}
    )
    edges = {}
    vehicle_bundles = {vid: [] for vid in vehicle_ids}
    for (members, vid), cost in sorted(edge_costs.items(), key=lambda kv: (index[frozenset(kv[0][0])], kv[0][1])):
        bid = index[frozenset(members)]
        edges[(bid, vid)] = VBEdge(bid, vid, cost, _DUMMY_ROUTE)
        vehicle_bundles[vid].append(bid)
    request_ids = sorted(set().union(*groups, set(extra_requests)))
    bundles_with = {rid: [] for rid in request_ids}
    for b in bundles:
        for rid in b.members:
            bundles_with[rid].append(b.id)
    prev = dict(prev or {})
    return RTVGraph(
        request_ids=request_ids,
        vehicle_ids=vehicle_ids,
        bundles=bundles,
        edges=edges,
        vehicles_for={rid: vehicle_ids for rid in request_ids},
        bundles_with=bundles_with,
        vehicle_bundles=vehicle_bundles,
        prev_assigned={rid: prev.get(rid) for rid in request_ids},
        baseline_cost={vid: 0 for vid in vehicle_ids},
    )


def test_solver_keeps_previous_over_more_new_requests():
    graph = synth_graph(
        [(1, 2), (3,)],
        {((1, 2), 0): 0, ((3,), 0): 0},
        prev={3: 0},
    )
    solution = solve_pooling(graph)
    assert solution.pairs == {3: 0}
    assert solution.value == (1, 1, 0)
    assert solution.dropped_previous == []
    assert solution.unassigned == [1, 2]


def test_solver_coverage_beats_cost():
    graph = synth_graph([(1, 2), (1,)], {((1, 2), 0): 100, ((1,), 0): 0})
    solution = solve_pooling(graph)
    assert solution.pairs == {1: 0, 2: 0}
    assert solution.total_cost == 100


def test_solver_cost_then_canonical_tiebreak():
    graph = synth_graph([(1,)], {((1,), 0): 5, ((1,), 1): 3})
    assert solve_pooling(graph).pairs == {1: 1}
    graph = synth_graph([(1,), (2,)], {((1,), 0): 5, ((2,), 0): 5})
    solution = solve_pooling(graph)
    assert solution.pairs == {1: 0}
    assert solution.unassigned == [2]


def test_solver_frozen_requires_and_keeps_commitments():
    graph = synth_graph(
        [(1,), (1, 2), (2,), (3,)],
        {((1,), 0): 4, ((1, 2), 0): 9, ((2,), 1): 2, ((3,), 1): 1},
        prev={1: 0},
    )
    free = solve_pooling(graph)
    frozen = solve_pooling(graph, frozen=True)
    assert frozen.pairs[1] == 0
    assert frozen.kept_previous == 1
    # growing the committed bundle is allowed in frozen mode
    assert free.pairs[1] == 0

    poached = synth_graph(
        [(2,), (1, 2)],
        {((2,), 0): 4, ((1, 2), 1): 0},
        prev={1: 0},
    )
    with pytest.raises(MatchingError, match="frozen commitment"):
        solve_pooling(poached, frozen=True)


def test_stale_edgeless_requests_do_not_shift_the_answer():
    costs = {((1,), 0): 5, ((2,), 0): 3, ((2,), 1): 4, ((1, 2), 0): 6}
    base = solve_pooling(synth_graph([(1,), (2,), (1, 2)], costs))
    padded = solve_pooling(
        synth_graph([(1,), (2,), (1, 2)], costs, extra_requests=(0, 7))
    )
    assert padded.pairs == base.pairs
    assert padded.chosen_bundles == base.chosen_bundles
    assert padded.value == base.value


def _random_synth(rng):
    rids = sorted(rng.sample(range(1, 9), rng.randrange(2, 6)))
    vids = sorted(rng.sample(range(0, 5), rng.randrange(1, 4)))
    groups = set()
    for rid in rids:
        if rng.random() < 0.8:
            groups.add((rid,))
    for _ in range(rng.randrange(0, 5)):
        size = rng.randrange(2, min(4, len(rids) + 1))
        groups.add(tuple(sorted(rng.sample(rids, size))))
    edge_costs = {}
    for members in groups:
        for vid in vids:
            if rng.random() < 0.55 and len(edge_costs) < 18:
                edge_costs[(members, vid)] = rng.randrange(-12, 25)
    prev = {}
    claimed = set()
    for members, vid in sorted(edge_costs):
        if vid in claimed or len(members) != 1:
            continue
        if rng.random() < 0.35:
            prev[members[0]] = vid
            claimed.add(vid)
    groups = {m for m, _ in edge_costs}
    if not groups:
        return None
    return synth_graph(sorted(groups), edge_costs, prev=prev, extra_requests=rids)


def test_solver_matches_exhaustive_enumeration():
    rng = random.Random(424242)
    checked = 0
    for _ in range(120):
        graph = _random_synth(rng)
        if graph is None:
            continue
        checked += 1
        want = exhaustive_pooling_oracle(graph)
        got = solve_pooling(graph)
        assert got.pairs == want.pairs
        assert got.chosen_bundles == want.chosen_bundles
        assert got.value == want.value
        scalar = solve_pooling(graph, method="bigm")
        assert scalar.pairs == want.pairs
        assert scalar.chosen_bundles == want.chosen_bundles

        frozen_ok = all(
            any(
                frozenset({rid}) <= graph.members(bid)
                for (bid, evid) in graph.edges
                if evid == vid
            )
            for rid, vid in graph.prev_assigned.items()
            if vid is not None
        )
        if frozen_ok:
            want_frozen = exhaustive_pooling_oracle(graph, frozen=True)
            got_frozen = solve_pooling(graph, frozen=True)
            assert got_frozen.pairs == want_frozen.pairs
            assert got_frozen.chosen_bundles == want_frozen.chosen_bundles
    assert checked >= 80


def test_solver_end_to_end_against_oracle_on_real_graphs():
    rng = random.Random(11)
    net = Network.build_grid(6, 6)
    compared = 0
    for _ in range(40):
        state = SystemState(now=0)
        for vid in range(rng.randrange(1, 4)):
            state.add_vehicle(
                Vehicle(id=vid, capacity=rng.randrange(1, 4), position=rng.randrange(36))
            )
        for rid in range(1, rng.randrange(2, 5)):
            origin, destination = rng.sample(range(36), 2)
            state.add_request(
                make_request(
                    rid,
                    origin,
                    destination,
                    max_wait=rng.randrange(2, 6),
                    max_ride=net.travel_time(origin, destination) + rng.randrange(0, 4),
                )
            )
        graph = build_rtv_graph(state, net, 0, _W)
        if len(graph.edges) > 20:
            continue
        compared += 1
        want = exhaustive_pooling_oracle(graph)
        got = solve_pooling(graph)
        assert got.pairs == want.pairs
        assert got.value == want.value
    assert compared >= 20


def test_solution_bookkeeping_fields():
    graph = synth_graph(
        [(1,), (2, 3)],
        {((1,), 0): 7, ((2, 3), 1): -2},
        prev={1: 0},
        extra_requests=(5,),
    )
    solution = solve_pooling(graph)
    assert solution.pairs == {1: 0, 2: 1, 3: 1}
    assert solution.chosen_bundles == {0: 0, 1: 1}
    assert solution.total_cost == 5
    assert solution.unassigned == [5]
    assert solution.kept_previous == 1
