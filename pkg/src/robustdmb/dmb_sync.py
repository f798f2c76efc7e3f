"""Synchronous distributed mini-batch baseline.

Every node predicts with the shared predictor and accumulates gradients.
Counts flow up a BFS spanning tree (rooted at the lowest live index) every
``t`` time-units; once the root sees at least ``b`` gradients it freezes the
tree, reduces the sums to the root, and broadcasts the averaged gradient back
down. Each node then applies the same deterministic update. Examples served
while a node is frozen are predicted on but their gradients are dropped.

Failure handling is deliberately crude: a watchdog with a perfect failure
detector aborts an unfinished reduction, discards that epoch's gradients and
rebuilds the tree over the live nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .learn import update_step
from .protocol import Protocol
from .simnet import SYSTEM, spanning_tree


@dataclass
class SyncNode:
    rule: object
    epoch: int = 0
    mode: str = "acc"  # acc | sum | joining
    g: np.ndarray = None
    c: int = 0
    ids: list = field(default_factory=list)
    child_counts: dict = field(default_factory=dict)
    pending: set = field(default_factory=set)
    part: tuple = None  # (g, c, ids) while reducing


class DmbSync(Protocol):
    name = "dmb-sync"

    def __init__(self, model, payloads, rule, b, *, report_period: float = 1.0,
                 health_period: float = 5.0, track: bool = True):
        super().__init__(model, payloads, rule, b, track=track)
        self.report_period = report_period
        self.health_period = health_period
        self.nodes = {}
        self.parent = {}
        self.children = {}
        self.root = None
        self.depth = 0
        self.epoch_predictors = {}  # epoch -> set of predictor bytes seen
        self.aborts = 0
        self._sum_started = None

    # ---------------------------------------------------------- setup
    def start(self):
        sim = self.sim
        for n in sim.topology.nodes:
            self.nodes[n] = self._fresh(self.rule0, 0)
        self._build_tree()
        for n in sim.topology.nodes:
            if n != self.root:
                sim.set_timer(n, self.report_period, "report")
        sim.schedule(self.health_period, SYSTEM, None, ("health",))

    def _fresh(self, rule, epoch):
        return SyncNode(rule=rule, epoch=epoch, g=np.zeros(self.model.dim))

    def _build_tree(self):
        sim = self.sim
        alive = [n for n in sim.topology.nodes if sim.alive[n]]
        if not alive:
            self.root, self.parent, self.children = None, {}, {}
            return
        self.root = min(alive)
        self.parent = spanning_tree(sim.topology, self.root, alive, sim.blocked)
        self.children = {n: [] for n in self.parent}
        for n, p in self.parent.items():
            if p is not None:
                self.children[p].append(n)
        depth = {self.root: 0}
        order = [self.root]
        for u in order:
            for v in self.children[u]:
                depth[v] = depth[u] + 1
                order.append(v)
        self.depth = max(depth.values())

    # ---------------------------------------------------------- handlers
    def on_arrival(self, node, seq):
        st = self.nodes[node]
        if st.mode == "joining" or node not in self.parent:
            self.sim.lost_arrivals.append(seq)
            return
        w = st.rule.w
        if self.track:
            self.epoch_predictors.setdefault(st.epoch, set()).add(w.tobytes())
        if st.mode == "acc":
            self.serve(node, seq, w, w, st.g, st.epoch)
            st.c += 1
            if self.track:
                st.ids.append(seq)
            if node == self.root:
                self._maybe_start()
        else:
            scratch = np.zeros(self.model.dim)
            self.serve(node, seq, w, w, scratch, st.epoch)
            self.dropped[st.epoch] += 1

    def on_timer(self, node, tag):
        st = self.nodes[node]
        if tag == "report":
            p = self.parent.get(node)
            if p is not None and st.mode == "acc":
                total = st.c + sum(st.child_counts.values())
                self.sim.send(node, p, ("count", st.epoch, total))
            self.sim.set_timer(node, self.report_period, "report")

    def on_message(self, node, src, msg):
        st = self.nodes[node]
        kind, epoch = msg[0], msg[1]
        if kind == "count":
            if epoch == st.epoch and self.parent.get(src) == node:
                st.child_counts[src] = msg[2]
                if node == self.root:
                    self._maybe_start()
        elif kind == "freeze":
            if epoch == st.epoch and st.mode == "acc":
                self._freeze(node)
        elif kind == "sum":
            if epoch == st.epoch and st.mode == "sum" and src in st.pending:
                g, c, ids = st.part
                st.part = (g + msg[2], c + msg[3], ids + msg[4])
                st.pending.discard(src)
                if not st.pending:
                    self._reduced(node)
        elif kind == "update":
            if epoch == st.epoch + 1 and st.mode != "joining":
                self._apply(node, msg[2], msg[3])

    def on_crash(self, node):
        st = self.nodes[node]
        self.lost_gradients += st.c
        self.nodes[node] = self._fresh(None, st.epoch)
        self.nodes[node].mode = "joining"

    def on_recover(self, node):
        st = self.nodes[node]
        st.mode = "joining"
        if node != self.root:
            self.sim.set_timer(node, self.report_period, "report")

    def on_system(self, payload):
        if payload[0] == "health":
            sim = self.sim
            alive = {n for n in sim.topology.nodes if sim.alive[n]}
            if set(self.parent) != alive or any(self.nodes[n].mode == "joining" for n in alive):
                self._rebuild()
            sim.schedule(sim.now + self.health_period, SYSTEM, None, ("health",))
        elif payload[0] == "deadline":
            root_state = self.nodes.get(self.root)
            if self._sum_started == payload[1] and (root_state is None or root_state.mode == "sum"):
                self.aborts += 1
                self._rebuild(abort=True)

    # ---------------------------------------------------------- reduction
    def _maybe_start(self):
        st = self.nodes[self.root]
        if st.mode == "acc" and st.c + sum(st.child_counts.values()) >= self.b:
            self._sum_started = st.epoch
            lat = self.sim.link.max_latency() + 10 * self.sim.link.handler_time + 1.0
            deadline = 2 * (self.depth + 1) * lat + self.sim.link.update_time + 1.0
            self.sim.schedule(self.sim.now + deadline, SYSTEM, None, ("deadline", st.epoch))
            self._freeze(self.root)

    def _freeze(self, node):
        st = self.nodes[node]
        st.mode = "sum"
        st.part = (st.g.copy(), st.c, list(st.ids))
        st.pending = set(self.children.get(node, ()))
        for ch in self.children.get(node, ()):
            self.sim.send(node, ch, ("freeze", st.epoch))
        if not st.pending:
            self._reduced(node)

    def _reduced(self, node):
        st = self.nodes[node]
        g, c, ids = st.part
        if node != self.root:
            self.sim.send(node, self.parent[node], ("sum", st.epoch, g, c, ids))
            return
        self.sim.busy(self.sim.link.update_time)
        avg = kernels.mean_of(g, c)
        if self.track and len(ids) != c:
            raise AssertionError("reduced count disagrees with provenance ledger")
        self.updates.append({"epoch": st.epoch, "count": c, "node": node, "time": self.sim.now,
                             "ids": ids if self.track else None})
        self._apply(node, avg, c)

    def _apply(self, node, avg, count):
        st = self.nodes[node]
        rule = update_step(st.rule, avg, count)
        new = self._fresh(rule, st.epoch + 1)
        self.nodes[node] = new
        for ch in self.children.get(node, ()):
            self.sim.send(node, ch, ("update", new.epoch, avg, count))

    def _rebuild(self, abort: bool = False):
        """Failure-detector oracle: rebuild the tree over live nodes."""
        sim = self.sim
        alive = [n for n in sim.topology.nodes if sim.alive[n]]
        if not alive:
            return
        live = [self.nodes[n] for n in alive if self.nodes[n].mode != "joining"]
        if not live:
            return
        best = max(live, key=lambda s: s.epoch)
        for n in alive:
            st = self.nodes[n]
            stale = st.mode == "joining" or st.epoch != best.epoch
            if abort or st.mode == "sum" or stale:
                if st.mode != "joining":
                    self.dropped[st.epoch] += st.c
                self.nodes[n] = self._fresh(best.rule, best.epoch)
            else:
                st.child_counts = {}
        self._sum_started = None
        self._build_tree()


def measure_mu(updates_or_dropped) -> int:
    """Largest number of inputs dropped in any single epoch."""
    dropped = updates_or_dropped
    if isinstance(dropped, dict):
        return max(dropped.values(), default=0)
    return max((r.get("dropped", 0) for r in dropped), default=0)
