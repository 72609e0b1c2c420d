"""Batch control loop: reveal, optimize, apply, move, expire.

Each step runs one batch. New requests are collected, the assignment
problem for the configured mode is solved from scratch on the current
state, the solution is written back as routes and status changes, the
fleet advances one interval, and finally users whose patience ran out
leave the system. Everything downstream of the solver is mechanical,
so the step is deterministic given the state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .matching import build_rv_graph, retained_route, solve_hailing
from .model import (
    CostWeights,
    LeaveReason,
    RequestStatus,
    Route,
    Stop,
    SystemState,
    Vehicle,
    plan_start,
    validate_state,
)
from .network import Network
from .pooling import build_rtv_graph, solve_pooling


class EngineError(RuntimeError):
    """The control loop reached a state it is never supposed to reach."""


class Mode(str, enum.Enum):
    HAILING = "hailing"
    POOLING = "pooling"


class RejectionPolicy(str, enum.Enum):
    # the operator answers at the end of the request's first batch
    EARLY_REJECT = "early_reject"
    # the operator stays silent; the user gives up at the deadline
    WALK_AWAY = "walk_away"


class Reassignment(str, enum.Enum):
    ALLOWED = "allowed"
    FROZEN = "frozen"


@dataclass
class EngineConfig:
    mode: Mode = Mode.HAILING
    rejection_policy: RejectionPolicy = RejectionPolicy.EARLY_REJECT
    reassignment: Reassignment = Reassignment.ALLOWED
    batch_interval: int = 1
    horizon: int = 1
    weights: CostWeights = field(default_factory=CostWeights)
    max_bundle_size: int | None = None

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)
        self.rejection_policy = RejectionPolicy(self.rejection_policy)
        self.reassignment = Reassignment(self.reassignment)
        if self.batch_interval < 1:
            raise ValueError("batch_interval must be at least 1")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.max_bundle_size is not None and self.max_bundle_size < 1:
            raise ValueError("max_bundle_size must be at least 1 or None")


class EventKind(str, enum.Enum):
    REVEALED = "revealed"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    REASSIGNED = "reassigned"
    UNASSIGNED = "unassigned"
    PICKED_UP = "picked_up"
    DROPPED_OFF = "dropped_off"
    WALKED_AWAY = "walked_away"


@dataclass(frozen=True)
class Event:
    batch: int
    kind: EventKind
    request: int
    vehicle: int | None
    time: int


@dataclass(frozen=True)
class ObjectiveReport:
    """Penalty counts plus the secondary cost components."""

    p_plus_count: int = 0
    p_minus_count: int = 0
    driven_time: int = 0
    waiting_time: int = 0
    riding_time: int = 0

    def __add__(self, other: "ObjectiveReport") -> "ObjectiveReport":
        return ObjectiveReport(
            self.p_plus_count + other.p_plus_count,
            self.p_minus_count + other.p_minus_count,
            self.driven_time + other.driven_time,
            self.waiting_time + other.waiting_time,
            self.riding_time + other.riding_time,
        )


@dataclass(frozen=True)
class PlanMove:
    source: int
    target: int
    depart: int
    arrive: int


@dataclass(frozen=True)
class PlanStop:
    stop: Stop


@dataclass(frozen=True)
class BatchContext:
    """Snapshot handed to observers after the solve, before write-back."""

    batch: int
    now: int
    state: SystemState
    graph: object
    solution: object


def reveal_requests(state: SystemState, t: int, batch_interval: int) -> list[int]:
    """Open every request whose arrival falls in (t - interval, t]."""
    revealed = []
    for rid in state.status_ids(RequestStatus.UNREVEALED):
        request = state.requests[rid]
        if t - batch_interval < request.request_time <= t:
            request.reveal()
            revealed.append(rid)
    return revealed


def optimize(state: SystemState, cfg: EngineConfig, net: Network):
    """Solve the batch assignment problem; returns (graph, solution)."""
    frozen = cfg.reassignment is Reassignment.FROZEN
    if cfg.mode is Mode.HAILING:
        graph = build_rv_graph(state, net, state.now, cfg.weights)
        return graph, solve_hailing(graph, frozen=frozen)
    graph = build_rtv_graph(
        state, net, state.now, cfg.weights, max_bundle_size=cfg.max_bundle_size
    )
    return graph, solve_pooling(graph, frozen=frozen)


def install_route(vehicle: Vehicle, route: Route | None, now: int, net: Network) -> None:
    """Replace the vehicle's committed route and rebuild its motion plan."""
    if route is None:
        vehicle.route = None
        vehicle.plan = []
        vehicle.plan_cursor = 0
        return
    node, time = plan_start(vehicle, now)
    entries: list[object] = []
    for stop in route.stops:
        path = net.shortest_path(node, stop.location).node_sequence
        for source, target in zip(path, path[1:]):
            leg = net.travel_time(source, target)
            entries.append(PlanMove(source, target, time, time + leg))
            time += leg
        if time != stop.planned_arrival:
            raise EngineError(
                f"vehicle {vehicle.id}: route promises arrival "
                f"{stop.planned_arrival} at {stop.location} but the plan "
                f"reaches it at {time}"
            )
        entries.append(PlanStop(stop))
        node = stop.location
    vehicle.route = route
    vehicle.plan = entries
    vehicle.plan_cursor = 0


def apply_assignment(state: SystemState, solution, cfg: EngineConfig, net: Network) -> list[Event]:
    """Write the solver's answer back into request and vehicle state."""
    batch, now = state.batch_index, state.now
    was_waiting = {
        rid: state.requests[rid].assigned_vehicle
        for rid in state.status_ids(RequestStatus.WAITING)
    }
    was_open = set(state.status_ids(RequestStatus.NOT_ASSIGNED))

    for rid in solution.pairs:
        if rid not in was_waiting and rid not in was_open:
            raise EngineError(f"solution pairs unknown or inactive request {rid}")
    for vid, route in solution.routes.items():
        if vid not in state.vehicles:
            raise EngineError(f"solution routes unknown vehicle {vid}")
        missing = {
            rid for rid in solution.pairs if solution.pairs[rid] == vid
        } - set(route.picked_ids())
        if missing:
            raise EngineError(
                f"vehicle {vid}: route omits assigned pickups {sorted(missing)}"
            )

    events = []
    for rid in sorted(set(was_waiting) | was_open):
        request = state.requests[rid]
        if rid in solution.pairs:
            vid = solution.pairs[rid]
            if rid in was_open:
                events.append(Event(batch, EventKind.ACCEPTED, rid, vid, now))
            elif was_waiting[rid] != vid:
                events.append(Event(batch, EventKind.REASSIGNED, rid, vid, now))
            request.assign(vid)
        elif rid in was_waiting:
            request.unassign()
            events.append(Event(batch, EventKind.UNASSIGNED, rid, was_waiting[rid], now))
        elif cfg.rejection_policy is RejectionPolicy.EARLY_REJECT:
            request.leave(LeaveReason.OPERATOR_REJECT, now)
            events.append(Event(batch, EventKind.REJECTED, rid, None, now))

    for vehicle in state.sorted_vehicles():
        if vehicle.id in solution.routes:
            install_route(vehicle, solution.routes[vehicle.id], now, net)
        else:
            install_route(vehicle, retained_route(vehicle, now, net), now, net)
    return events


def transition(state: SystemState, cfg: EngineConfig, net: Network) -> list[Event]:
    """Advance the fleet one interval, boarding and dropping along plans."""
    batch = state.batch_index
    t_end = state.now + cfg.batch_interval
    events = []
    for vehicle in state.sorted_vehicles():
        while vehicle.plan_cursor < len(vehicle.plan):
            entry = vehicle.plan[vehicle.plan_cursor]
            if isinstance(entry, PlanMove):
                # an edge is entered strictly before the batch boundary and,
                # once entered, binds the vehicle to its far end
                if entry.depart >= t_end:
                    break
                vehicle.position = entry.target
                vehicle.free_at = entry.arrive
                vehicle.odometer += entry.arrive - entry.depart
            else:
                stop = entry.stop
                if stop.planned_arrival > t_end:
                    break
                for rid in sorted(stop.dropoffs):
                    state.requests[rid].complete(stop.planned_arrival)
                    vehicle.onboard.discard(rid)
                    events.append(
                        Event(batch, EventKind.DROPPED_OFF, rid, vehicle.id, stop.planned_arrival)
                    )
                for rid in sorted(stop.pickups):
                    state.requests[rid].board(stop.planned_arrival)
                    vehicle.onboard.add(rid)
                    events.append(
                        Event(batch, EventKind.PICKED_UP, rid, vehicle.id, stop.planned_arrival)
                    )
            vehicle.plan_cursor += 1
        vehicle.plan = vehicle.plan[vehicle.plan_cursor :]
        vehicle.plan_cursor = 0
        left = tuple(e.stop for e in vehicle.plan if isinstance(e, PlanStop))
        vehicle.route = Route(left) if left else None
    state.now = t_end
    return events


def walkaway_sweep(state: SystemState, cfg: EngineConfig) -> list[Event]:
    """Expire open requests whose latest pickup time has passed."""
    batch = state.batch_index
    events = []
    for rid in state.status_ids(RequestStatus.NOT_ASSIGNED):
        request = state.requests[rid]
        if state.now < request.latest_pickup:
            continue
        if cfg.rejection_policy is RejectionPolicy.EARLY_REJECT:
            # early rejection answers every request in its first batch,
            # so nothing is ever left to time out
            raise EngineError(f"request {rid} expired despite early rejection")
        request.leave(LeaveReason.WALK_AWAY, state.now)
        events.append(Event(batch, EventKind.WALKED_AWAY, rid, None, state.now))
    return events


def accumulate_objective(events, requests=None, driven_time: int = 0) -> ObjectiveReport:
    """Tally penalties and realized cost components from an event slice.

    Waiting and riding times need each request's arrival and boarding
    times; they are read from REVEALED / PICKED_UP events in the slice
    when present, else from `requests`.
    """
    revealed: dict[int, int] = {}
    picked: dict[int, int] = {}
    for event in events:
        if event.kind is EventKind.REVEALED:
            revealed[event.request] = event.time
        elif event.kind is EventKind.PICKED_UP:
            picked[event.request] = event.time

    def requested_at(rid: int) -> int:
        if rid in revealed:
            return revealed[rid]
        if requests is not None:
            return requests[rid].request_time
        raise ValueError(f"request {rid}: arrival time not in slice; pass requests")

    def picked_at(rid: int) -> int:
        if rid in picked:
            return picked[rid]
        if requests is not None and requests[rid].pickup_time is not None:
            return requests[rid].pickup_time
        raise ValueError(f"request {rid}: pickup time not in slice; pass requests")

    p_plus = p_minus = waiting = riding = 0
    for event in events:
        if event.kind is EventKind.UNASSIGNED:
            p_plus += 1
        elif event.kind in (EventKind.REJECTED, EventKind.WALKED_AWAY):
            p_minus += 1
        elif event.kind is EventKind.PICKED_UP:
            waiting += event.time - requested_at(event.request)
        elif event.kind is EventKind.DROPPED_OFF:
            riding += event.time - picked_at(event.request)
    return ObjectiveReport(p_plus, p_minus, driven_time, waiting, riding)


def step(state: SystemState, cfg: EngineConfig, net: Network, observer=None):
    """Run one batch; returns (events, objective delta for the batch)."""
    batch = state.batch_index
    events = [
        Event(batch, EventKind.REVEALED, rid, None, state.requests[rid].request_time)
        for rid in reveal_requests(state, state.now, cfg.batch_interval)
    ]
    graph, solution = optimize(state, cfg, net)
    if observer is not None:
        observer(BatchContext(batch, state.now, state, graph, solution))
    events += apply_assignment(state, solution, cfg, net)
    driven_before = sum(v.odometer for v in state.vehicles.values())
    events += transition(state, cfg, net)
    events += walkaway_sweep(state, cfg)
    state.batch_index += 1
    problems = validate_state(state, net)
    if problems:
        raise EngineError(f"batch {batch} broke the state: " + "; ".join(problems))
    driven = sum(v.odometer for v in state.vehicles.values()) - driven_before
    return events, accumulate_objective(events, state.requests, driven)
