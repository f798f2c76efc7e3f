"""Good-node intervals, good time periods, and the propagation checks.

Everything here is a pure function of the scenario plus what the run
recorded (fault log, regret rows, ADMB state timeline).
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .simnet import Topology, components, diameter


def good_intervals(topo: Topology, good_set, link, fault_log, end: float,
                   start: float = 0.0) -> list:
    """Maximal ``[s, e)`` intervals during which every node of ``good_set`` is good.

    Good means: alive, handler time (after slowdown) at most one time-unit,
    every edge inside the set has latency at most one, and the set is
    connected once partitioned edges are removed.
    """
    K = set(good_set)
    for a, b in topo.edges:
        if a in K and b in K and link.bounds(a, b)[1] > 1.0:
            return []
    if link.handler_time > 1.0:
        return []
    alive = {n: True for n in K}
    slow = {n: 1.0 for n in K}
    blocked = set()

    def good():
        if not all(alive.values()):
            return False
        if any(link.handler_time * slow[n] > 1.0 for n in K):
            return False
        return len(components(topo, K, frozenset(blocked))) == 1

    out = []
    cur = start if good() else None
    events = sorted(fault_log, key=lambda e: e[0])
    i = 0
    while i < len(events):
        t = events[i][0]
        while i < len(events) and events[i][0] == t:
            _, kind, target, factor = events[i]
            if kind in ("crash", "recover") and target in K:
                alive[target] = kind == "recover"
            elif kind == "slowdown" and target in K:
                slow[target] = factor
            elif kind in ("partition", "heal"):
                edges = topo.edges if target in (None, "all") else target
                for a, b in edges:
                    key = frozenset((a, b))
                    if kind == "partition":
                        blocked.add(key)
                    else:
                        blocked.discard(key)
            i += 1
        ok = good()
        if cur is not None and not ok:
            if t > cur:
                out.append((cur, t))
            cur = None
        elif cur is None and ok:
            cur = t
    if cur is not None and end > cur:
        out.append((cur, end))
    return out


@dataclass
class GoodPeriodTracker:
    """Splits examples handled by the good set into good periods.

    A period is ``size`` consecutive examples inside one good interval, all
    arriving at least ``warmup`` after the interval began. A partial period
    cut by a fault is discarded.
    """

    intervals: list
    warmup: float
    size: int
    periods: list = field(default_factory=list)  # (start_time, end_time, [row indices])
    _current: list = field(default_factory=list)
    _interval: int = -1

    def _locate(self, t):
        starts = [s for s, _ in self.intervals]
        k = bisect.bisect_right(starts, t) - 1
        if k >= 0 and t < self.intervals[k][1]:
            return k
        return -1

    def feed(self, idx, t):
        k = self._locate(t)
        eligible = k >= 0 and t >= self.intervals[k][0] + self.warmup
        if not eligible or k != self._interval:
            self._current = []
            self._interval = k if eligible else -1
            if not eligible:
                return
        self._current.append((idx, t))
        if len(self._current) == self.size:
            rows = [i for i, _ in self._current]
            self.periods.append((self._current[0][1], self._current[-1][1], rows))
            self._current = []


def track_good_periods(times, nodes, good_set, intervals, t: float, d_prime: int, b: int,
                       M: float):
    """Tag example rows as inside or outside good periods.

    ``times``/``nodes`` are per-row arrival times and serving nodes. Returns
    ``(periods, in_period_mask, period_index)`` where ``period_index`` is -1
    outside periods. Period size is ``ceil(b + 2 (t+2) d' M)``.
    """
    size = max(1, math.ceil(b + 2.0 * (t + 2.0) * d_prime * M - 1e-9))
    tracker = GoodPeriodTracker(intervals, (t + 2.0) * d_prime, size)
    K = set(good_set)
    times = np.asarray(times)
    order = np.argsort(times, kind="stable")
    for idx in order.tolist():
        if nodes[idx] in K:
            tracker.feed(idx, float(times[idx]))
    mask = np.zeros(len(times), dtype=bool)
    which = np.full(len(times), -1, dtype=np.int64)
    for p, (_, _, rows) in enumerate(tracker.periods):
        mask[rows] = True
        which[rows] = p
    return tracker.periods, mask, which


# ------------------------------------------------------------------ timeline checks

class VTimeline:
    """Per-node update count as a right-continuous step function of time."""

    def __init__(self, timeline, nodes):
        self.nodes = list(nodes)
        self.t = {n: [] for n in self.nodes}
        self.v = {n: [] for n in self.nodes}
        self.key = {n: [] for n in self.nodes}
        for time, node, v, lineage, _ in timeline:
            if node not in self.t:
                continue
            ts = self.t[node]
            if ts and ts[-1] == time:
                self.v[node][-1] = v
                self.key[node][-1] = lineage
            else:
                ts.append(time)
                self.v[node].append(v)
                self.key[node].append(lineage)

    def at(self, node, time):
        k = bisect.bisect_right(self.t[node], time) - 1
        return self.v[node][k] if k >= 0 else 0

    def lineage_at(self, node, time):
        k = bisect.bisect_right(self.t[node], time) - 1
        return self.key[node][k] if k >= 0 else None

    def change_times(self):
        return sorted({x for ts in self.t.values() for x in ts})


def check_propagation(timeline, good_set, intervals, t: float, d_prime: int, end: float):
    """Every window ``[T0, T0 + (t+2) d']`` inside a good interval must end with
    all good nodes at or above the largest update count present at ``T0``.

    Returns ``(windows_checked, violations)``.
    """
    tl = VTimeline(timeline, good_set)
    span = (t + 2.0) * d_prime
    starts = set(tl.change_times()) | {s for s, _ in intervals}
    checked, bad = 0, []
    for T0 in sorted(starts):
        if not any(s <= T0 and T0 + span < e and T0 + span <= end for s, e in intervals):
            continue
        checked += 1
        need = max(tl.at(n, T0) for n in tl.nodes)
        have = min(tl.at(n, T0 + span) for n in tl.nodes)
        if have < need:
            bad.append((T0, need, have))
    return checked, bad


def check_update_cadence(timeline, good_set, intervals, example_times, example_nodes,
                         bound: float, end: float):
    """Within good intervals, whenever every good node has at least ``v`` updates,
    all of them reach ``v + 1`` before the good set serves more than ``bound``
    further examples.

    Returns ``(episodes_checked, violations, worst_count)``.
    """
    tl = VTimeline(timeline, good_set)
    K = set(good_set)
    ex = np.sort(np.asarray([tm for tm, n in zip(example_times, example_nodes) if n in K]))
    changes = tl.change_times()
    checked, bad, worst = 0, [], 0

    def min_v(time):
        return min(tl.at(n, time) for n in tl.nodes)

    for s, e in intervals:
        e = min(e, end)
        points = [s] + [x for x in changes if s < x < e]
        mins = [min_v(x) for x in points]
        monotone = all(a <= b for a, b in zip(mins, mins[1:]))
        for k, (T0, v0) in enumerate(zip(points, mins)):
            if k > 0 and mins[k] <= mins[k - 1]:
                continue
            if monotone:
                q = bisect.bisect_left(mins, v0 + 1, lo=k + 1)
                nxt = q if q < len(points) else None
            else:
                nxt = next((q for q in range(k + 1, len(points)) if mins[q] >= v0 + 1), None)
            T1 = points[nxt] if nxt is not None else e
            lo = bisect.bisect_right(ex, T0)
            hi = bisect.bisect_right(ex, T1) if nxt is not None else bisect.bisect_left(ex, T1)
            n_ex = hi - lo
            if nxt is not None or n_ex > bound:
                checked += 1
                worst = max(worst, n_ex)
                if n_ex > bound:
                    bad.append((T0, v0, n_ex))
    return checked, bad, worst
