"""Deterministic discrete-event network simulator.

Events pop in ``(time, tiebreak)`` order where the tiebreak is a counter
assigned at insertion, so a run is a pure function of its inputs. A node runs
one handler at a time: events reaching a busy node are re-queued for the
moment it frees up. Messages sent by a handler leave when the handler ends.
"""
from __future__ import annotations

import hashlib
import heapq
import re
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .learn import ConfigError

ARRIVAL = "arrival"
TIMER = "timer"
MESSAGE = "message"
FAULT = "fault"
SYSTEM = "system"

_SUBSTREAMS = {"arrivals": 1, "payloads": 2, "topology": 3, "faults": 4,
               "network": 5, "rule": 6, "oracle": 7}


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named source of randomness."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, _SUBSTREAMS[name]])


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------- topology

@dataclass(frozen=True)
class Topology:
    nodes: tuple
    edges: tuple
    kind: str

    def neighbors(self, i) -> list:
        return self._adj()[i]

    def _adj(self) -> dict:
        adj = {n: [] for n in self.nodes}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        for n in adj:
            adj[n].sort()
        return adj

    def is_acyclic(self) -> bool:
        return len(self.edges) == len(self.nodes) - len(components(self))


def _bfs(adj, src, allowed=None):
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in dist and (allowed is None or v in allowed):
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def components(topo: Topology, nodes=None, blocked=frozenset()) -> list:
    """Connected components over ``nodes`` with ``blocked`` edges removed."""
    nodes = set(topo.nodes if nodes is None else nodes)
    adj = {n: [] for n in nodes}
    for a, b in topo.edges:
        if a in nodes and b in nodes and frozenset((a, b)) not in blocked:
            adj[a].append(b)
            adj[b].append(a)
    seen, out = set(), []
    for n in sorted(nodes):
        if n not in seen:
            comp = set(_bfs(adj, n))
            seen |= comp
            out.append(frozenset(comp))
    return out


def diameter(topo: Topology, nodes=None) -> int:
    """Largest shortest-path distance, by BFS from every node."""
    nodes = list(topo.nodes if nodes is None else nodes)
    allowed = set(nodes)
    adj = topo._adj()
    best = 0
    for n in nodes:
        dist = _bfs(adj, n, allowed)
        if len(dist) != len(allowed):
            raise ConfigError("diameter of a disconnected node set")
        best = max(best, max(dist.values()))
    return best


def build_topology(spec, *, acyclic: bool = False, seed: int = 0) -> Topology:
    """Build a topology from ``star(k)``, ``path(k)``, ``random-tree(k[, seed])``
    or an explicit edge list (``[[a, b], ...]`` or ``{"edges": ...}``).

    Node ids are ``0..k-1`` for the generated shapes (the star hub is 0).
    """
    if isinstance(spec, dict):
        spec = spec.get("edges", spec)
    if isinstance(spec, str):
        m = re.fullmatch(r"\s*([a-z-]+)\(\s*(\d+)\s*(?:,\s*(?:seed\s*=\s*)?(\d+)\s*)?\)\s*", spec)
        if not m:
            raise ConfigError(f"unrecognised topology spec {spec!r}")
        shape, k = m.group(1), int(m.group(2))
        if k < 1:
            raise ConfigError("topology needs at least one node")
        nodes = tuple(range(k))
        if shape == "star":
            edges = tuple((0, i) for i in range(1, k))
            kind = "star"
        elif shape == "path":
            edges = tuple((i, i + 1) for i in range(k - 1))
            kind = "tree"
        elif shape == "random-tree":
            s = int(m.group(3)) if m.group(3) is not None else seed
            rng = np.random.default_rng([s, _SUBSTREAMS["topology"]])
            edges = tuple((int(rng.integers(0, i)), i) for i in range(1, k))
            kind = "tree"
        else:
            raise ConfigError(f"unknown topology shape {shape!r}")
    else:
        pairs = [tuple(int(x) for x in e) for e in spec]
        if any(len(p) != 2 or p[0] == p[1] for p in pairs):
            raise ConfigError("edges must be pairs of distinct node ids")
        nodes = tuple(sorted({x for p in pairs for x in p}))
        seen = set()
        for p in pairs:
            if frozenset(p) in seen:
                raise ConfigError(f"duplicate edge {p}")
            seen.add(frozenset(p))
        edges = tuple(tuple(sorted(p)) for p in pairs)
        kind = "general-acyclic"
    topo = Topology(nodes, edges, kind)
    if len(components(topo)) != 1:
        raise ConfigError("topology is disconnected")
    if not topo.is_acyclic():
        if acyclic:
            raise ConfigError("communication graph must be acyclic for this protocol")
        topo = Topology(nodes, edges, "general")
    return topo


def spanning_tree(topo: Topology, root, alive=None, blocked=frozenset()) -> dict:
    """BFS parent map of the component containing ``root`` (root maps to None)."""
    adj = topo._adj()
    alive = set(topo.nodes if alive is None else alive)
    parent = {root: None}
    q = deque([root])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v in alive and v not in parent and frozenset((u, v)) not in blocked:
                parent[v] = u
                q.append(v)
    return parent


# ---------------------------------------------------------------- link model and faults

@dataclass(frozen=True)
class LinkModel:
    """Latencies are drawn uniformly from ``[latency_min, latency_max]`` per
    message unless an edge override is given. ``handler_time`` is the base
    execution time of one handler; ``update_time`` is the extra time a
    predictor update takes."""

    latency_min: float = 0.5
    latency_max: float = 1.0
    handler_time: float = 0.0
    update_time: float = 0.0
    edge_latency: tuple = ()  # ((a, b, lo, hi), ...)

    def bounds(self, a, b):
        for x, y, lo, hi in self.edge_latency:
            if {x, y} == {a, b}:
                return lo, hi
        return self.latency_min, self.latency_max

    def max_latency(self) -> float:
        his = [hi for *_, hi in self.edge_latency]
        return max([self.latency_max] + his)


FAULT_KINDS = ("crash", "recover", "slowdown", "partition", "heal")


@dataclass(frozen=True)
class FaultEntry:
    time: float
    kind: str
    target: object = None  # node id, "master", or list of edges
    factor: float = 1.0

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {self.kind!r}")


@dataclass(frozen=True)
class FaultSchedule:
    entries: tuple = ()

    def sorted(self):
        return sorted(self.entries, key=lambda e: e.time)


_TICKS = float(2**20)


def arrival_stream(weights: dict, M: int, m: int, rng: np.random.Generator,
                   jitter: float = 0.5):
    """Arrival times and nodes for ``m`` examples at global rate ``M``.

    ``M`` is split into integer per-node rates by largest remainder over
    ``weights``; node i then sees inter-arrival gaps in
    ``[1/M_i, (1 + jitter)/M_i]`` from a random phase. Gaps of at least
    ``1/M_i`` mean any time window of length one holds at most ``M_i``
    arrivals at node i and at most ``M`` overall. Returns ``(times, nodes)``
    sorted by time; the index is the example's sequence id.
    """
    if M < 0 or m < 0:
        raise ConfigError("rate and count must be non-negative")
    if M == 0 or m == 0 or not weights:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    shares = apportion(weights, M)
    active = [(n, r) for n, r in shares.items() if r > 0]
    horizon = m / M * (1.0 + jitter) + 2.0
    times, nodes = [], []
    for n, r in active:
        count = int(horizon * r) + 2
        # integer ticks of 2**-20 keep differences exact, so gaps never round below 1/r
        gaps = np.ceil((1.0 + jitter * rng.random(count)) / r * _TICKS).astype(np.int64)
        phase = np.int64(np.floor(rng.random() / r * _TICKS))
        t = (phase + np.concatenate([[0], np.cumsum(gaps[:-1])])) / _TICKS
        times.append(t)
        nodes.append(np.full(count, n, dtype=np.int64))
    times = np.concatenate(times)
    nodes = np.concatenate(nodes)
    order = np.lexsort((nodes, times))
    return times[order][:m], nodes[order][:m]


def apportion(weights: dict, M: int) -> dict:
    """Largest-remainder split of integer ``M`` proportional to ``weights``."""
    total = float(sum(weights.values()))
    if total <= 0:
        raise ConfigError("arrival weights must be positive")
    raw = {n: M * w / total for n, w in weights.items()}
    out = {n: int(np.floor(v)) for n, v in raw.items()}
    rest = M - sum(out.values())
    for n in sorted(raw, key=lambda n: (-(raw[n] - out[n]), n))[:rest]:
        out[n] += 1
    return out


# ---------------------------------------------------------------- simulator

def _digest(obj) -> str:
    def enc(o):
        if isinstance(o, np.ndarray):
            return o.tobytes()
        if isinstance(o, (tuple, list)):
            return b"(" + b",".join(enc(x) for x in o) + b")"
        if isinstance(o, (set, frozenset)):
            return b"{" + b",".join(enc(x) for x in sorted(o, key=repr)) + b"}"
        if hasattr(o, "digest_parts"):
            return enc(o.digest_parts())
        return repr(o).encode()
    return f"{zlib.crc32(enc(obj)):08x}"


@dataclass
class Trace:
    """Append-only dispatch log with a running hash."""

    keep_lines: bool = False
    lines: list = field(default_factory=list)
    _h: object = field(default_factory=hashlib.sha256)
    records: list = field(default_factory=list)  # (time, kind, node) for scans

    def add(self, time, kind, node, payload):
        line = f"{time!r}\t{kind}\t{node}\t{_digest(payload)}"
        self._h.update(line.encode() + b"\n")
        self.records.append((time, kind, node))
        if self.keep_lines:
            self.lines.append(line)

    def hexdigest(self) -> str:
        return self._h.hexdigest()

    def write(self, path):
        with open(path, "w") as fh:
            for line in self.lines:
                fh.write(line + "\n")


class Simulator:
    """Single-threaded event loop over one topology.

    The protocol object passed to :meth:`attach` supplies ``on_arrival``,
    ``on_timer``, ``on_message``, ``on_crash``, ``on_recover`` and optionally
    ``on_system`` handlers.
    """

    def __init__(self, topology: Topology, link: LinkModel | None = None, seed: int = 0,
                 trace: bool = False, keep_trace_lines: bool = False):
        self.topology = topology
        self.link = link or LinkModel()
        self.now = 0.0
        self._heap = []
        self._seq = 0
        self.net_rng = substream(seed, "network")
        self.alive = {n: True for n in topology.nodes}
        self.incarnation = {n: 0 for n in topology.nodes}
        self.slowdown = {n: 1.0 for n in topology.nodes}
        self.busy_until = {n: 0.0 for n in topology.nodes}
        self.blocked = set()
        self.edge_epoch = {}
        self.trace = Trace(keep_trace_lines) if trace else None
        self.fault_log = []  # (time, kind, target, factor) as applied
        self.drops = {"crashed": 0, "partition": 0, "stale_timer": 0}
        self.lost_arrivals = []
        self.dispatched = 0
        self.arrivals_handled = 0
        self.messages_sent = 0
        self.send_log = None  # optional list of (time, src, dst)
        self.spans = [] if trace else None  # (node, start, end) per handler
        self.protocol = None
        self._current = None
        self._outbox = []
        self._extra_busy = 0.0
        self._adj = topology._adj()

    # -- wiring
    def attach(self, protocol):
        self.protocol = protocol
        protocol.sim = self

    def schedule(self, time: float, kind: str, node, payload=None):
        if time < self.now:
            raise SimulationError(f"event scheduled in the past: {time} < {self.now}")
        heapq.heappush(self._heap, (time, self._seq, kind, node, payload))
        self._seq += 1

    def schedule_arrivals(self, times, nodes):
        for seq, (t, n) in enumerate(zip(times.tolist(), nodes.tolist())):
            self.schedule(t, ARRIVAL, n, seq)

    def schedule_faults(self, schedule: FaultSchedule):
        for e in schedule.sorted():
            self.schedule(e.time, FAULT, None, e)

    # -- services for handlers
    def set_timer(self, node, delay: float, tag=None):
        self.schedule(self.now + delay, TIMER, node, (self.incarnation[node], tag))

    def send(self, src, dst, payload):
        """Queue a message; it departs when the current handler finishes."""
        self._outbox.append((src, dst, payload))

    def busy(self, dt: float):
        """Extend the running handler's execution time by ``dt``."""
        self._extra_busy += dt

    def neighbors(self, node):
        return self._adj[node]

    def latency(self, a, b) -> float:
        lo, hi = self.link.bounds(a, b)
        if hi <= lo:
            return lo
        return lo + (hi - lo) * self.net_rng.random()

    def handler_time(self, node) -> float:
        return self.link.handler_time * self.slowdown[node]

    # -- loop
    def pending_arrivals(self) -> bool:
        return any(ev[2] == ARRIVAL for ev in self._heap)

    def run_until(self, time: float | None = None, max_events: int | None = None):
        count = 0
        heap = self._heap
        while heap:
            if time is not None and heap[0][0] > time:
                break
            if max_events is not None and count >= max_events:
                break
            ev = heapq.heappop(heap)
            self.now = ev[0]
            self._dispatch(ev)
            count += 1
        if time is not None and time > self.now:
            self.now = time
        return self.trace

    def _dispatch(self, ev):
        t, _, kind, node, payload = ev
        if kind == FAULT:
            self._apply_fault(payload)
            return
        if kind == SYSTEM:
            self._record(t, kind, node, payload)
            self.protocol.on_system(payload)
            self._flush(t)
            return
        if not self.alive[node]:
            if kind == ARRIVAL:
                self.lost_arrivals.append(payload)
            self.drops["crashed"] += 1
            self._record(t, "drop", node, (kind, "crashed"))
            return
        if kind == TIMER and payload[0] != self.incarnation[node]:
            self.drops["stale_timer"] += 1
            return
        if kind == MESSAGE:
            src, dst_inc, edge_ep, body = payload
            key = frozenset((src, node))
            if dst_inc != self.incarnation[node]:
                self.drops["crashed"] += 1
                self._record(t, "drop", node, (kind, "crashed"))
                return
            if key in self.blocked or self.edge_epoch.get(key, 0) != edge_ep:
                self.drops["partition"] += 1
                self._record(t, "drop", node, (kind, "partition"))
                return
        if self.busy_until[node] > t:
            self.schedule(self.busy_until[node], kind, node, payload)
            return
        self._record(t, kind, node, payload)
        self._current = node
        self._extra_busy = 0.0
        p = self.protocol
        if kind == ARRIVAL:
            self.arrivals_handled += 1
            p.on_arrival(node, payload)
        elif kind == TIMER:
            p.on_timer(node, payload[1])
        else:
            p.on_message(node, payload[0], payload[3])
        done = t + self.handler_time(node) + self._extra_busy
        self._current = None
        if not self.alive[node]:  # crashed inside its own handler
            self._outbox = []
        else:
            self.busy_until[node] = done
            if self.spans is not None:
                self.spans.append((node, t, done))
        self._flush(done)
        self.dispatched += 1

    def _flush(self, depart: float):
        out, self._outbox = self._outbox, []
        for src, dst, body in out:
            key = frozenset((src, dst))
            self.messages_sent += 1
            if self.send_log is not None:
                self.send_log.append((self.now, src, dst))
            if key in self.blocked:
                self.drops["partition"] += 1
                continue
            arrive = depart + self.latency(src, dst)
            self.schedule(arrive, MESSAGE, dst,
                          (src, self.incarnation[dst], self.edge_epoch.get(key, 0), body))

    def _apply_fault(self, e: FaultEntry):
        target = e.target
        if hasattr(self.protocol, "resolve_fault_target"):
            target = self.protocol.resolve_fault_target(e)
            if target is None:  # protocol defers the fault
                return
        self.fault_log.append((self.now, e.kind, target, e.factor))
        self._record(self.now, FAULT, target, (e.kind, e.factor))
        if e.kind == "crash":
            self._crash(target)
        elif e.kind == "recover":
            if not self.alive[target]:
                self.alive[target] = True
                self.incarnation[target] += 1
                self.busy_until[target] = self.now
                self.protocol.on_recover(target)
                self._flush(self.now)
        elif e.kind == "slowdown":
            self.slowdown[target] = e.factor
        elif e.kind in ("partition", "heal"):
            edges = self.topology.edges if target in (None, "all") else target
            for a, b in edges:
                key = frozenset((a, b))
                if e.kind == "partition":
                    self.blocked.add(key)
                    self.edge_epoch[key] = self.edge_epoch.get(key, 0) + 1
                else:
                    self.blocked.discard(key)

    def _crash(self, node):
        if self.alive[node]:
            self.alive[node] = False
            self.incarnation[node] += 1
            self.protocol.on_crash(node)

    def crash_now(self, node):
        """Crash ``node`` immediately, e.g. from inside its own handler."""
        self.fault_log.append((self.now, "crash", node, 1.0))
        self._record(self.now, FAULT, node, ("crash", 1.0))
        self._crash(node)

    def inject_fault(self, entry: FaultEntry):
        self.schedule(max(entry.time, self.now), FAULT, None, entry)

    def _record(self, t, kind, node, payload):
        if self.trace is not None:
            self.trace.add(t, kind, node, payload)
