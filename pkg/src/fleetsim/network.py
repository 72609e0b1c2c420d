"""Street network with integer travel times and reachability queries.

The network is a directed graph with strictly positive integer edge
times. It is immutable after construction: all query methods are pure
and safe to call from anywhere. Small networks precompute the full
travel-time table at load; larger ones fall back to memoized
single-source Dijkstra.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

# Above this node count the n*n table would dominate memory, so queries
# fall back to on-demand Dijkstra with per-source memoization.
_ALL_PAIRS_LIMIT = 1024

_INF = None  # sentinel for "unreached" inside Dijkstra scans


class NetworkError(ValueError):
    """Raised for malformed network definitions."""


class UnknownNodeError(KeyError):
    """Raised when a query names a node that is not in the network."""


@dataclass(frozen=True)
class PathResult:
    """A shortest path: total travel time plus the full node sequence."""

    total_time: int
    node_sequence: tuple[int, ...]


def grid_node(width: int, x: int, y: int) -> int:
    """Node id of grid cell (x, y) in a grid of the given width."""
    return y * width + x


class Network:
    """Directed street network over integer node ids.

    Args:
        edges: iterable of (from_node, to_node, travel_time) triples.
            Travel times must be positive integers; parallel edges keep
            the cheapest time. Every node mentioned becomes part of the
            network, and the result must be strongly connected.
    """

    def __init__(self, edges) -> None:
        cheapest: dict[tuple[int, int], int] = {}
        nodes: set[int] = set()
        for item in edges:
            try:
                u, v, t = item
            except (TypeError, ValueError):
                raise NetworkError(f"edge must be a (from, to, time) triple, got {item!r}")
            if not (isinstance(u, int) and isinstance(v, int) and isinstance(t, int)):
                raise NetworkError(f"edge {item!r}: endpoints and time must be integers")
            if u == v:
                raise NetworkError(f"edge {item!r}: self-loops are not allowed")
            if t < 1:
                # zero-time arcs would make the lexicographic path
                # tie-break ill-defined, so they are rejected outright
                raise NetworkError(f"edge {item!r}: travel time must be a positive integer")
            nodes.add(u)
            nodes.add(v)
            key = (u, v)
            if key not in cheapest or t < cheapest[key]:
                cheapest[key] = t
        if not nodes:
            raise NetworkError("network needs at least one edge")

        self._nodes: tuple[int, ...] = tuple(sorted(nodes))
        self._index: dict[int, int] = {n: i for i, n in enumerate(self._nodes)}
        n = len(self._nodes)
        self._adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        self._radj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for (u, v), t in cheapest.items():
            ui, vi = self._index[u], self._index[v]
            self._adj[ui].append((vi, t))
            self._radj[vi].append((ui, t))
        for rows in (self._adj, self._radj):
            for row in rows:
                row.sort()
        self._edge_count = len(cheapest)
        self._check_strongly_connected()

        self._table: list[list[int]] | None = None
        self._source_cache: dict[int, list[int]] = {}
        self._target_cache: dict[int, list[int]] = {}
        if n <= _ALL_PAIRS_LIMIT:
            self._table = [self._dijkstra(self._adj, i) for i in range(n)]

    # -- construction helpers -------------------------------------------------

    @classmethod
    def build_grid(cls, width: int, height: int, edge_time: int = 1) -> "Network":
        """Four-connected rectangular grid with bidirectional edges.

        Node ids are row-major: (x, y) -> y * width + x.
        """
        if width < 1 or height < 1:
            raise NetworkError("grid dimensions must be at least 1x1")
        if not isinstance(edge_time, int) or edge_time < 1:
            raise NetworkError("grid edge_time must be a positive integer")
        if width * height < 2:
            raise NetworkError("grid needs at least two nodes")
        edges = []
        for y in range(height):
            for x in range(width):
                a = grid_node(width, x, y)
                if x + 1 < width:
                    b = grid_node(width, x + 1, y)
                    edges.append((a, b, edge_time))
                    edges.append((b, a, edge_time))
                if y + 1 < height:
                    b = grid_node(width, x, y + 1)
                    edges.append((a, b, edge_time))
                    edges.append((b, a, edge_time))
        return cls(edges)

    @classmethod
    def from_edge_list(cls, text: str) -> "Network":
        """Parse an edge-list document: one `from to time` triple per line.

        Blank lines and `#` comments are ignored.
        """
        edges = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise NetworkError(f"line {lineno}: expected 'from to time', got {raw!r}")
            try:
                u, v, t = (int(p) for p in parts)
            except ValueError:
                raise NetworkError(f"line {lineno}: non-integer field in {raw!r}")
            edges.append((u, v, t))
        return cls(edges)

    @classmethod
    def load_edge_list(cls, path) -> "Network":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_edge_list(fh.read())

    # -- queries --------------------------------------------------------------

    @property
    def nodes(self) -> tuple[int, ...]:
        return self._nodes

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return self._edge_count

    def has_node(self, node: int) -> bool:
        return node in self._index

    def neighbors(self, node: int) -> tuple[tuple[int, int], ...]:
        """Outgoing (neighbor, travel_time) pairs, sorted by neighbor id."""
        i = self._require(node)
        return tuple((self._nodes[j], t) for j, t in self._adj[i])

    def travel_time(self, origin: int, destination: int) -> int:
        """Shortest travel time between two nodes; zero when they coincide."""
        a = self._require(origin)
        b = self._require(destination)
        if a == b:
            return 0
        dist = self._dist_from(a)
        return dist[b]

    def shortest_path(self, origin: int, destination: int) -> PathResult:
        """Minimum-time path, breaking ties by smallest node sequence.

        Among all minimum-cost paths the lexicographically smallest node
        sequence is returned, which makes route planning reproducible.
        """
        a = self._require(origin)
        b = self._require(destination)
        if a == b:
            return PathResult(0, (origin,))
        dist_to_target = self._dist_to(b)
        seq = [a]
        cur = a
        total = dist_to_target[a]
        while cur != b:
            remaining = dist_to_target[cur]
            # smallest next node that stays on a minimum-cost path
            nxt = None
            for j, t in self._adj[cur]:
                if t + dist_to_target[j] == remaining:
                    nxt = j
                    break
            if nxt is None:  # pragma: no cover - strong connectivity rules this out
                raise NetworkError("path reconstruction failed")
            seq.append(nxt)
            cur = nxt
        return PathResult(total, tuple(self._nodes[i] for i in seq))

    def backward_reachable(self, target: int, budget: int) -> dict[int, int]:
        """All nodes that can reach `target` within `budget` time units.

        Returns a mapping node -> travel time to target. The target maps
        to zero. A negative budget yields an empty mapping.
        """
        b = self._require(target)
        if budget < 0:
            return {}
        dist = self._dist_to(b)
        return {
            self._nodes[i]: d
            for i, d in enumerate(dist)
            if d is not _INF and d <= budget
        }

    def diameter(self) -> int:
        """Largest pairwise travel time in the network."""
        best = 0
        for i in range(len(self._nodes)):
            dist = self._dist_from(i)
            for d in dist:
                if d is not _INF and d > best:
                    best = d
        return best

    def edge_time(self, origin: int, destination: int) -> int:
        """Travel time of the direct edge origin -> destination."""
        a = self._require(origin)
        b = self._require(destination)
        for j, t in self._adj[a]:
            if j == b:
                return t
        raise UnknownNodeError(f"no edge {origin} -> {destination}")

    # -- internals ------------------------------------------------------------

    def _require(self, node: int) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise UnknownNodeError(f"unknown node id {node!r}")

    def _dijkstra(self, adj: list[list[tuple[int, int]]], source: int) -> list[int]:
        n = len(self._nodes)
        dist: list[int] = [_INF] * n
        dist[source] = 0
        heap = [(0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v, t in adj[u]:
                nd = d + t
                if dist[v] is _INF or nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    def _dist_from(self, source_idx: int) -> list[int]:
        if self._table is not None:
            return self._table[source_idx]
        row = self._source_cache.get(source_idx)
        if row is None:
            row = self._dijkstra(self._adj, source_idx)
            self._source_cache[source_idx] = row
        return row

    def _dist_to(self, target_idx: int) -> list[int]:
        if self._table is not None:
            col = self._target_cache.get(target_idx)
            if col is None:
                col = [row[target_idx] for row in self._table]
                self._target_cache[target_idx] = col
            return col
        col = self._target_cache.get(target_idx)
        if col is None:
            col = self._dijkstra(self._radj, target_idx)
            self._target_cache[target_idx] = col
        return col

    def _check_strongly_connected(self) -> None:
        n = len(self._nodes)
        for adj, label in ((self._adj, "forward"), (self._radj, "backward")):
            seen = [False] * n
            seen[0] = True
            stack = [0]
            count = 1
            while stack:
                u = stack.pop()
                for v, _ in adj[u]:
                    if not seen[v]:
                        seen[v] = True
                        count += 1
                        stack.append(v)
            if count != n:
                missing = self._nodes[seen.index(False)]
                raise NetworkError(
                    f"network is not strongly connected ({label} sweep "
                    f"cannot reach node {missing})"
                )
