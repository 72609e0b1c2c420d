"""Domain model: requests, vehicles, routes, and the simulation state.

Requests move through an explicit status machine; vehicles carry a
committed route plus a node-granular motion plan. All times and costs
are integers, which keeps every comparison exact and every run
reproducible.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .network import Network


class StatusError(ValueError):
    """Raised on an illegal request status transition."""


class RouteStructureError(ValueError):
    """Raised for malformed routes (broken pickup/dropoff structure).

    Distinct from mere infeasibility: a structurally broken route is a
    programming error, not a constraint violation.
    """


class RequestStatus(str, enum.Enum):
    UNREVEALED = "unrevealed"
    NOT_ASSIGNED = "not_assigned"
    WAITING = "waiting"
    ON_BOARD = "on_board"
    SERVED = "served"
    LEFT = "left"


class LeaveReason(str, enum.Enum):
    OPERATOR_REJECT = "operator_reject"
    WALK_AWAY = "walk_away"


@dataclass
class Request:
    """One trip request with its service-quality bounds.

    Args:
        id: unique non-negative integer.
        origin: pickup node.
        destination: dropoff node, distinct from origin.
        request_time: submission time.
        max_wait: longest acceptable wait for pickup, positive.
        max_ride: longest acceptable pickup-to-dropoff time.
    """

    id: int
    origin: int
    destination: int
    request_time: int
    max_wait: int
    max_ride: int
    status: RequestStatus = RequestStatus.UNREVEALED
    assigned_vehicle: int | None = None
    pickup_time: int | None = None
    dropoff_time: int | None = None
    left_time: int | None = None
    left_reason: LeaveReason | None = None

    def __post_init__(self) -> None:
        if self.origin == self.destination:
            raise ValueError(f"request {self.id}: origin equals destination")
        if self.max_wait <= 0:
            raise ValueError(f"request {self.id}: max_wait must be positive")
        if self.max_ride <= 0:
            raise ValueError(f"request {self.id}: max_ride must be positive")
        if self.request_time < 0:
            raise ValueError(f"request {self.id}: request_time must be non-negative")

    @property
    def latest_pickup(self) -> int:
        """Hard pickup deadline: request time plus the wait tolerance."""
        return self.request_time + self.max_wait

    # -- status machine -------------------------------------------------------

    def reveal(self) -> None:
        self._expect(RequestStatus.UNREVEALED, "reveal")
        self.status = RequestStatus.NOT_ASSIGNED

    def assign(self, vehicle_id: int) -> None:
        if self.status not in (RequestStatus.NOT_ASSIGNED, RequestStatus.WAITING):
            raise StatusError(f"request {self.id}: cannot assign while {self.status.value}")
        self.status = RequestStatus.WAITING
        self.assigned_vehicle = vehicle_id

    def unassign(self) -> None:
        self._expect(RequestStatus.WAITING, "unassign")
        self.status = RequestStatus.NOT_ASSIGNED
        self.assigned_vehicle = None

    def board(self, time: int) -> None:
        self._expect(RequestStatus.WAITING, "board")
        self.status = RequestStatus.ON_BOARD
        self.pickup_time = time

    def complete(self, time: int) -> None:
        self._expect(RequestStatus.ON_BOARD, "complete")
        self.status = RequestStatus.SERVED
        self.dropoff_time = time
        self.assigned_vehicle = None

    def leave(self, reason: LeaveReason, time: int) -> None:
        self._expect(RequestStatus.NOT_ASSIGNED, "leave")
        self.status = RequestStatus.LEFT
        self.left_reason = reason
        self.left_time = time

    def _expect(self, status: RequestStatus, action: str) -> None:
        if self.status is not status:
            raise StatusError(
                f"request {self.id}: cannot {action} while {self.status.value}"
            )


@dataclass(frozen=True)
class Stop:
    """A scheduled halt: boardings and alightings at one node."""

    location: int
    pickups: frozenset[int]
    dropoffs: frozenset[int]
    planned_arrival: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "pickups", frozenset(self.pickups))
        object.__setattr__(self, "dropoffs", frozenset(self.dropoffs))
        if self.pickups & self.dropoffs:
            raise RouteStructureError("stop picks up and drops off the same request")
        if not self.pickups and not self.dropoffs:
            raise RouteStructureError("stop serves no request")
        if self.planned_arrival < 0:
            raise RouteStructureError("stop has negative planned arrival")


@dataclass(frozen=True)
class Route:
    """An ordered stop sequence a vehicle has committed to."""

    stops: tuple[Stop, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "stops", tuple(self.stops))

    def picked_ids(self) -> frozenset[int]:
        out: set[int] = set()
        for stop in self.stops:
            out |= stop.pickups
        return frozenset(out)

    def dropped_ids(self) -> frozenset[int]:
        out: set[int] = set()
        for stop in self.stops:
            out |= stop.dropoffs
        return frozenset(out)

    def validate_structure(self, onboard: Iterable[int] = ()) -> None:
        """Check pairing and precedence; raise RouteStructureError if broken.

        A request already on board must appear exactly once as a dropoff
        and never as a pickup. Any other request must appear as a pickup
        strictly before its dropoff, each exactly once.
        """
        onboard = set(onboard)
        pick_at: dict[int, int] = {}
        drop_at: dict[int, int] = {}
        for i, stop in enumerate(self.stops):
            for rid in stop.pickups:
                if rid in pick_at:
                    raise RouteStructureError(f"request {rid} picked up twice")
                if rid in onboard:
                    raise RouteStructureError(f"request {rid} is already on board")
                pick_at[rid] = i
            for rid in stop.dropoffs:
                if rid in drop_at:
                    raise RouteStructureError(f"request {rid} dropped off twice")
                drop_at[rid] = i
        for rid, i in drop_at.items():
            if rid in pick_at:
                if pick_at[rid] >= i:
                    raise RouteStructureError(f"request {rid} dropped before pickup")
            elif rid not in onboard:
                raise RouteStructureError(f"request {rid} dropped without pickup")
        for rid in pick_at:
            if rid not in drop_at:
                raise RouteStructureError(f"request {rid} picked up but never dropped")
        for rid in onboard:
            if rid not in drop_at:
                raise RouteStructureError(f"on-board request {rid} has no dropoff")


@dataclass
class Vehicle:
    """A fleet vehicle with its commitments and motion bookkeeping.

    `position` is the node the vehicle is at, or is about to arrive at
    when an edge traversal is in progress; `free_at` is the time it is
    (or will be) there. `plan` and `plan_cursor` hold the node-granular
    motion plan for the committed route and are engine-managed.
    """

    id: int
    capacity: int
    position: int
    free_at: int = 0
    onboard: set[int] = field(default_factory=set)
    route: Route | None = None
    odometer: int = 0
    plan: list = field(default_factory=list)
    plan_cursor: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"vehicle {self.id}: capacity must be positive")

    def remaining_stops(self) -> tuple[Stop, ...]:
        return self.route.stops if self.route is not None else ()


@dataclass(frozen=True)
class CostWeights:
    """Integer weights of the secondary objective components."""

    drive: int = 1
    wait: int = 1
    ride: int = 1

    def __post_init__(self) -> None:
        for name in ("drive", "wait", "ride"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"weight {name} must be a non-negative integer")


@dataclass
class SystemState:
    """Complete simulation state between two batches."""

    batch_index: int = 0
    now: int = 0
    requests: dict[int, Request] = field(default_factory=dict)
    vehicles: dict[int, Vehicle] = field(default_factory=dict)

    def add_request(self, request: Request) -> None:
        if request.id in self.requests:
            raise ValueError(f"duplicate request id {request.id}")
        self.requests[request.id] = request

    def add_vehicle(self, vehicle: Vehicle) -> None:
        if vehicle.id in self.vehicles:
            raise ValueError(f"duplicate vehicle id {vehicle.id}")
        self.vehicles[vehicle.id] = vehicle

    def sorted_vehicles(self) -> list[Vehicle]:
        return [self.vehicles[vid] for vid in sorted(self.vehicles)]

    def active_requests(self) -> list[Request]:
        """Open requests the dispatcher may (re)assign, in id order."""
        return [
            self.requests[rid]
            for rid in sorted(self.requests)
            if self.requests[rid].status
            in (RequestStatus.NOT_ASSIGNED, RequestStatus.WAITING)
        ]

    def status_ids(self, status: RequestStatus) -> list[int]:
        return [rid for rid in sorted(self.requests) if self.requests[rid].status is status]


# -- schedules ----------------------------------------------------------------


def plan_start(vehicle: Vehicle, now: int) -> tuple[int, int]:
    """Where and when a new plan for the vehicle can begin."""
    return vehicle.position, max(vehicle.free_at, now)


def schedule_stops(
    net: Network,
    start_node: int,
    start_time: int,
    visits: Sequence[tuple[int, Iterable[int], Iterable[int]]],
) -> tuple[Stop, ...]:
    """Turn (location, pickups, dropoffs) visits into timed stops.

    Arrival times accumulate shortest-path travel from the start; the
    vehicle never dwells, so consecutive visits at one node share a
    time. Visits at the same node back to back are merged into a
    single stop.
    """
    stops: list[Stop] = []
    node, time = start_node, start_time
    for location, pickups, dropoffs in visits:
        time += net.travel_time(node, location)
        node = location
        if stops and stops[-1].location == location and stops[-1].planned_arrival == time:
            last = stops.pop()
            stops.append(
                Stop(
                    location,
                    last.pickups | frozenset(pickups),
                    last.dropoffs | frozenset(dropoffs),
                    time,
                )
            )
        else:
            stops.append(Stop(location, frozenset(pickups), frozenset(dropoffs), time))
    return tuple(stops)


def route_feasible(
    vehicle: Vehicle,
    candidate: Route,
    now: int,
    net: Network,
    requests: Mapping[int, Request],
) -> tuple[bool, str | None]:
    """Check a candidate route against every service constraint.

    Returns (True, None) when the route can be driven as planned, else
    (False, reason) naming the first violated constraint. Structural
    defects raise RouteStructureError instead of counting as
    infeasible.
    """
    candidate.validate_structure(vehicle.onboard)
    node, time = plan_start(vehicle, now)
    load = len(vehicle.onboard)
    pickup_seen: dict[int, int] = {}
    for stop in candidate.stops:
        time += net.travel_time(node, stop.location)
        node = stop.location
        if stop.planned_arrival != time:
            return False, (
                f"stop at node {stop.location}: planned arrival "
                f"{stop.planned_arrival} is not realizable (drives to {time})"
            )
        load -= len(stop.dropoffs)
        for rid in sorted(stop.dropoffs):
            request = requests[rid]
            boarded = pickup_seen.get(rid, request.pickup_time)
            if boarded is None:
                raise RouteStructureError(f"request {rid}: no pickup time on record")
            if time - boarded > request.max_ride:
                return False, (
                    f"request {rid}: ride {time - boarded} exceeds max_ride "
                    f"{request.max_ride}"
                )
        load += len(stop.pickups)
        for rid in sorted(stop.pickups):
            request = requests[rid]
            if time > request.latest_pickup:
                return False, (
                    f"request {rid}: pickup at {time} misses latest_pickup "
                    f"{request.latest_pickup}"
                )
            pickup_seen[rid] = time
        if load > vehicle.capacity:
            return False, (
                f"stop at node {stop.location}: load {load} exceeds capacity "
                f"{vehicle.capacity}"
            )
    return True, None


def route_cost(
    candidate: Route,
    vehicle: Vehicle,
    now: int,
    net: Network,
    weights: CostWeights,
    requests: Mapping[int, Request],
) -> int:
    """Secondary cost of driving the candidate route from now.

    Sums the driving time the route adds, planned waits of requests
    picked up in the route, and rides of requests dropped off in it.
    Rides of passengers already on board count from their realized
    pickup, so rescheduling a dropoff is priced by the full delay.
    """
    node, time = plan_start(vehicle, now)
    drive = 0
    wait = 0
    ride = 0
    pickup_at: dict[int, int] = {}
    for stop in candidate.stops:
        leg = net.travel_time(node, stop.location)
        drive += leg
        time += leg
        node = stop.location
        for rid in stop.pickups:
            pickup_at[rid] = time
            wait += time - requests[rid].request_time
        for rid in stop.dropoffs:
            boarded = pickup_at.get(rid)
            if boarded is None:
                boarded = requests[rid].pickup_time
            if boarded is None:
                raise RouteStructureError(f"request {rid}: no pickup time on record")
            ride += time - boarded
    return weights.drive * drive + weights.wait * wait + weights.ride * ride


# -- state validation ----------------------------------------------------------


def validate_state(state: SystemState, net: Network | None = None) -> list[str]:
    """Collect consistency violations; an empty list means a sound state.

    Violations are returned as data rather than raised so callers can
    report several at once.
    """
    problems: list[str] = []
    waiting_refs: dict[int, list[int]] = {}
    onboard_refs: dict[int, list[int]] = {}
    for vehicle in state.sorted_vehicles():
        if len(vehicle.onboard) > vehicle.capacity:
            problems.append(
                f"vehicle {vehicle.id}: onboard {len(vehicle.onboard)} exceeds "
                f"capacity {vehicle.capacity}"
            )
        for rid in vehicle.onboard:
            onboard_refs.setdefault(rid, []).append(vehicle.id)
        if vehicle.route is not None:
            try:
                vehicle.route.validate_structure(vehicle.onboard)
            except RouteStructureError as exc:
                problems.append(f"vehicle {vehicle.id}: {exc}")
            for rid in vehicle.route.picked_ids():
                waiting_refs.setdefault(rid, []).append(vehicle.id)

    for rid in sorted(state.requests):
        request = state.requests[rid]
        status = request.status
        in_routes = waiting_refs.get(rid, [])
        in_onboard = onboard_refs.get(rid, [])
        if status is RequestStatus.WAITING:
            if len(in_routes) != 1:
                problems.append(
                    f"request {rid}: waiting but scheduled in {len(in_routes)} routes"
                )
            elif request.assigned_vehicle != in_routes[0]:
                problems.append(
                    f"request {rid}: assigned to vehicle {request.assigned_vehicle} "
                    f"but scheduled on {in_routes[0]}"
                )
            if in_onboard:
                problems.append(f"request {rid}: waiting yet on board {in_onboard}")
        elif status is RequestStatus.ON_BOARD:
            if len(in_onboard) != 1:
                problems.append(
                    f"request {rid}: on board {len(in_onboard)} vehicles"
                )
            elif request.assigned_vehicle != in_onboard[0]:
                problems.append(
                    f"request {rid}: on board {in_onboard[0]} but assigned to "
                    f"{request.assigned_vehicle}"
                )
            if request.pickup_time is None:
                problems.append(f"request {rid}: on board without pickup time")
            if in_routes:
                problems.append(f"request {rid}: on board yet scheduled for pickup")
        else:
            if in_routes:
                problems.append(
                    f"request {rid}: status {status.value} yet scheduled in a route"
                )
            if in_onboard:
                problems.append(
                    f"request {rid}: status {status.value} yet on board a vehicle"
                )
            if status is RequestStatus.SERVED:
                if request.pickup_time is None or request.dropoff_time is None:
                    problems.append(f"request {rid}: served without realized times")
            if status is RequestStatus.LEFT and request.left_reason is None:
                problems.append(f"request {rid}: left without a reason")

    if net is not None:
        for vehicle in state.sorted_vehicles():
            if vehicle.route is None:
                continue
            ok, reason = _schedule_consistent(vehicle, net, state)
            if not ok:
                problems.append(f"vehicle {vehicle.id}: {reason}")
    return problems


def _schedule_consistent(vehicle: Vehicle, net: Network, state: SystemState):
    node, time = vehicle.position, vehicle.free_at
    for stop in vehicle.remaining_stops():
        time += net.travel_time(node, stop.location)
        node = stop.location
        if stop.planned_arrival < time:
            return False, (
                f"stop at {stop.location} planned for {stop.planned_arrival} "
                f"but reachable only at {time}"
            )
        time = stop.planned_arrival
    return True, None
