"""Tests for the batch control loop."""

from __future__ import annotations

import random

import pytest

from fleetsim.engine import (
    EngineConfig,
    EngineError,
    Event,
    EventKind,
    Mode,
    ObjectiveReport,
    Reassignment,
    RejectionPolicy,
    accumulate_objective,
    apply_assignment,
    reveal_requests,
    step,
    walkaway_sweep,
)
from fleetsim.matching import AssignmentSolution
from fleetsim.model import (
    LeaveReason,
    Request,
    RequestStatus,
    Route,
    Stop,
    SystemState,
    Vehicle,
)
from fleetsim.network import Network, grid_node


def fresh_request(rid, origin, destination, request_time=0, max_wait=5, max_ride=20):
    return Request(rid, origin, destination, request_time, max_wait, max_ride)


def run_batches(state, cfg, net, batches, observer=None):
    events = []
    total = ObjectiveReport()
    for _ in range(batches):
        batch_events, delta = step(state, cfg, net, observer)
        events += batch_events
        total = total + delta
    return events, total


def test_config_validation_and_coercion():
    cfg = EngineConfig(mode="pooling", rejection_policy="walk_away", reassignment="frozen")
    assert cfg.mode is Mode.POOLING
    assert cfg.rejection_policy is RejectionPolicy.WALK_AWAY
    assert cfg.reassignment is Reassignment.FROZEN
    with pytest.raises(ValueError):
        EngineConfig(batch_interval=0)
    with pytest.raises(ValueError):
        EngineConfig(horizon=0)
    with pytest.raises(ValueError):
        EngineConfig(max_bundle_size=0)
    with pytest.raises(ValueError):
        EngineConfig(mode="teleport")


def test_reveal_window_boundaries():
    state = SystemState(now=3)
    state.add_request(fresh_request(1, 0, 1, request_time=2))
    state.add_request(fresh_request(2, 0, 1, request_time=3))
    state.add_request(fresh_request(3, 0, 1, request_time=4))
    # the window is half-open: (2, 3] with a unit interval
    assert reveal_requests(state, 3, 1) == [2]
    assert state.requests[1].status is RequestStatus.UNREVEALED
    assert state.requests[3].status is RequestStatus.UNREVEALED
    assert reveal_requests(state, 3, 1) == []
    assert reveal_requests(state, 4, 1) == [3]


def test_single_request_hand_schedule():
    net = Network.build_grid(5, 5)
    state = SystemState()
    state.add_vehicle(Vehicle(id=0, capacity=1, position=grid_node(5, 0, 0)))
    state.add_request(
        fresh_request(7, grid_node(5, 1, 0), grid_node(5, 3, 0), max_wait=3)
    )
    cfg = EngineConfig(horizon=4)
    events, total = run_batches(state, cfg, net, 4)
    assert events == [
        Event(0, EventKind.REVEALED, 7, None, 0),
        Event(0, EventKind.ACCEPTED, 7, 0, 0),
        Event(0, EventKind.PICKED_UP, 7, 0, 1),
        Event(2, EventKind.DROPPED_OFF, 7, 0, 3),
    ]
    assert state.requests[7].status is RequestStatus.SERVED
    assert state.requests[7].pickup_time == 1
    assert state.requests[7].dropoff_time == 3
    assert state.vehicles[0].odometer == 3
    assert state.vehicles[0].position == grid_node(5, 3, 0)
    assert total == ObjectiveReport(0, 0, 3, 1, 2)


def _no_availability_state():
    net = Network.build_grid(5, 5)
    state = SystemState()
    state.add_vehicle(Vehicle(id=0, capacity=1, position=grid_node(5, 4, 4)))
    state.add_request(
        fresh_request(1, grid_node(5, 0, 0), grid_node(5, 2, 0), max_wait=2)
    )
    return net, state


def test_no_availability_under_both_policies():
    net, state = _no_availability_state()
    events, total = run_batches(state, EngineConfig(horizon=3), net, 3)
    assert Event(0, EventKind.REJECTED, 1, None, 0) in events
    assert state.requests[1].status is RequestStatus.LEFT
    assert state.requests[1].left_reason is LeaveReason.OPERATOR_REJECT
    assert total.p_minus_count == 1

    net, state = _no_availability_state()
    cfg = EngineConfig(rejection_policy=RejectionPolicy.WALK_AWAY, horizon=3)
    events, total = run_batches(state, cfg, net, 3)
    assert Event(1, EventKind.WALKED_AWAY, 1, None, 2) in events
    assert state.requests[1].left_reason is LeaveReason.WALK_AWAY
    assert state.requests[1].left_time == 2
    assert total.p_minus_count == 1


def test_apply_assignment_unassigns_and_strips_routes():
    net = Network.build_grid(5, 5)
    state = SystemState()
    vehicle = Vehicle(id=0, capacity=1, position=grid_node(5, 0, 0))
    state.add_vehicle(vehicle)
    request = fresh_request(1, grid_node(5, 2, 0), grid_node(5, 4, 0))
    state.add_request(request)
    request.reveal()
    request.assign(0)
    vehicle.route = Route(
        (
            Stop(grid_node(5, 2, 0), frozenset({1}), frozenset(), 2),
            Stop(grid_node(5, 4, 0), frozenset(), frozenset({1}), 4),
        )
    )
    empty = AssignmentSolution(
        pairs={}, routes={}, kept_previous=0, assigned_count=0,
        total_cost=0, unassigned=[1], dropped_previous=[1],
    )
    events = apply_assignment(state, empty, EngineConfig(), net)
    assert events == [Event(0, EventKind.UNASSIGNED, 1, 0, 0)]
    assert request.status is RequestStatus.NOT_ASSIGNED
    assert vehicle.route is None and vehicle.plan == []


def test_apply_assignment_reassignment_event():
    net = Network.build_grid(5, 5)
    state = SystemState()
    state.add_vehicle(Vehicle(id=0, capacity=1, position=grid_node(5, 0, 0)))
    state.add_vehicle(Vehicle(id=1, capacity=1, position=grid_node(5, 0, 1)))
    request = fresh_request(1, grid_node(5, 2, 0), grid_node(5, 4, 0))
    state.add_request(request)
    request.reveal()
    request.assign(0)
    moved = Route(
        (
            Stop(grid_node(5, 2, 0), frozenset({1}), frozenset(), 3),
            Stop(grid_node(5, 4, 0), frozenset(), frozenset({1}), 5),
        )
    )
    solution = AssignmentSolution(
        pairs={1: 1}, routes={1: moved}, kept_previous=1, assigned_count=1,
        total_cost=0, unassigned=[], dropped_previous=[],
    )
    events = apply_assignment(state, solution, EngineConfig(), net)
    assert events == [Event(0, EventKind.REASSIGNED, 1, 1, 0)]
    assert request.assigned_vehicle == 1
    assert state.vehicles[1].route == moved
    assert state.vehicles[0].route is None


def test_walkaway_sweep_guard_under_early_reject():
    state = SystemState(now=9)
    expired = fresh_request(1, 0, 1, request_time=0, max_wait=4)
    state.add_request(expired)
    expired.reveal()
    with pytest.raises(EngineError, match="expired despite early rejection"):
        walkaway_sweep(state, EngineConfig())
    events = walkaway_sweep(
        state, EngineConfig(rejection_policy=RejectionPolicy.WALK_AWAY)
    )
    assert [e.kind for e in events] == [EventKind.WALKED_AWAY]


def test_transition_binds_entered_edges_to_their_far_end():
    net = Network.from_edge_list("0 1 3\n1 0 3\n")
    state = SystemState()
    state.add_vehicle(Vehicle(id=0, capacity=1, position=0))
    state.add_request(fresh_request(1, 1, 0, max_wait=3, max_ride=3))
    cfg = EngineConfig(horizon=6)
    events, _ = run_batches(state, cfg, net, 1)
    vehicle = state.vehicles[0]
    # the edge was entered at t=0, so the vehicle already binds to node 1
    assert vehicle.position == 1
    assert vehicle.free_at == 3
    assert vehicle.odometer == 3
    events_rest, _ = run_batches(state, cfg, net, 5)
    timeline = [
        (e.kind, e.time)
        for e in events + events_rest
        if e.kind in (EventKind.PICKED_UP, EventKind.DROPPED_OFF)
    ]
    assert timeline == [
        (EventKind.PICKED_UP, 3),
        (EventKind.DROPPED_OFF, 6),
    ]
    assert vehicle.odometer == 6


def test_frozen_reassignment_blocks_the_swap():
    def build():
        net = Network.build_grid(7, 7)
        state = SystemState()
        state.add_vehicle(Vehicle(id=0, capacity=1, position=grid_node(7, 0, 0)))
        state.add_vehicle(Vehicle(id=1, capacity=1, position=grid_node(7, 6, 0)))
        state.add_request(
            fresh_request(1, grid_node(7, 3, 0), grid_node(7, 5, 0), max_wait=6)
        )
        state.add_request(
            fresh_request(
                2, grid_node(7, 0, 0), grid_node(7, 0, 2), request_time=1, max_wait=2
            )
        )
        return net, state

    net, state = build()
    cfg = EngineConfig(horizon=2)
    events, _ = run_batches(state, cfg, net, 2)
    assert Event(1, EventKind.REASSIGNED, 1, 1, 1) in events
    assert Event(1, EventKind.ACCEPTED, 2, 0, 1) in events

    net, state = build()
    cfg = EngineConfig(horizon=2, reassignment=Reassignment.FROZEN)
    events, _ = run_batches(state, cfg, net, 2)
    assert state.requests[1].assigned_vehicle == 0
    assert Event(1, EventKind.REJECTED, 2, None, 1) in events


def test_pooling_step_shares_one_vehicle():
    net = Network.build_grid(5, 5)
    state = SystemState()
    state.add_vehicle(Vehicle(id=0, capacity=2, position=grid_node(5, 0, 0)))
    state.add_request(fresh_request(1, grid_node(5, 1, 0), grid_node(5, 3, 0)))
    state.add_request(fresh_request(2, grid_node(5, 2, 0), grid_node(5, 2, 2)))
    cfg = EngineConfig(mode=Mode.POOLING, horizon=7)
    events, total = run_batches(state, cfg, net, 7)
    assert [e for e in events if e.kind is EventKind.ACCEPTED] == [
        Event(0, EventKind.ACCEPTED, 1, 0, 0),
        Event(0, EventKind.ACCEPTED, 2, 0, 0),
    ]
    assert state.requests[1].dropoff_time == 3
    assert state.requests[2].pickup_time == 4
    assert state.requests[2].dropoff_time == 6
    assert total == ObjectiveReport(0, 0, 6, 5, 4)


def test_step_deltas_telescope_to_full_log_totals():
    net = Network.build_grid(6, 6)
    rng = random.Random(99)
    state = SystemState()
    for vid in range(3):
        state.add_vehicle(Vehicle(id=vid, capacity=2, position=rng.randrange(36)))
    for rid in range(1, 9):
        origin, destination = rng.sample(range(36), 2)
        state.add_request(
            fresh_request(
                rid, origin, destination,
                request_time=rng.randrange(0, 8), max_wait=rng.randrange(3, 7),
            )
        )
    cfg = EngineConfig(mode=Mode.POOLING, rejection_policy=RejectionPolicy.WALK_AWAY, horizon=40)
    events, total = run_batches(state, cfg, net, 40)
    driven = sum(v.odometer for v in state.vehicles.values())
    assert accumulate_objective(events, state.requests, driven) == total
    assert total.driven_time == driven


@pytest.mark.parametrize("mode", [Mode.HAILING, Mode.POOLING])
@pytest.mark.parametrize(
    "policy", [RejectionPolicy.EARLY_REJECT, RejectionPolicy.WALK_AWAY]
)
def test_random_mini_runs_stay_clean(mode, policy):
    net = Network.build_grid(6, 6)

    def build(seed):
        rng = random.Random(seed)
        state = SystemState()
        for vid in range(3):
            state.add_vehicle(
                Vehicle(id=vid, capacity=2 if mode is Mode.POOLING else 1,
                        position=rng.randrange(36))
            )
        for rid in range(1, 10):
            origin, destination = rng.sample(range(36), 2)
            state.add_request(
                fresh_request(
                    rid, origin, destination,
                    request_time=rng.randrange(0, 12),
                    max_wait=rng.randrange(2, 6),
                    max_ride=net.travel_time(origin, destination) + rng.randrange(0, 4),
                )
            )
        return state

    for seed in range(6):
        cfg = EngineConfig(
            mode=mode, rejection_policy=policy, horizon=30,
            max_bundle_size=3 if mode is Mode.POOLING else None,
        )
        state = build(seed)
        events, total = run_batches(state, cfg, net, 30)
        # every request reached a terminal state and nobody was bumped
        assert total.p_plus_count == 0
        for request in state.requests.values():
            assert request.status in (RequestStatus.SERVED, RequestStatus.LEFT)
        # identical rebuild, identical log
        replay_events, _ = run_batches(build(seed), cfg, net, 30)
        assert replay_events == events
