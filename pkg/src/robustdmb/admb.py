"""Asynchronous decentralised mini-batching over an acyclic graph.

Each node keeps a state ``(w, w_bar, v)``, its own gradient sum and one sum
per neighbour. It predicts with ``w_bar``, computes gradients at ``w``,
gossips per-direction totals to each neighbour every ``t`` time-units, and
updates once the gradients it holds for its current ``w`` reach ``b``. A node
switches to a neighbour's state when that state has more updates, or the same
number of updates on a different predictor and higher precedence.

Predictor identity is a lineage tag ``(v, origin, nonce)`` rather than a float
comparison. With ``tiebreak="sender"`` ties between equal-``v`` states are
broken by the sending node's index exactly as written in the protocol; with
``tiebreak="origin"`` (default) the index of the node that produced the state
is compared instead, which gives a total order on states so the preferred
predictor floods the tree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .learn import ProtocolError, UpdateRule, update_step
from .protocol import Protocol

ZERO_LINEAGE = (0, -1, (0, 0))


@dataclass(frozen=True)
class NodeState:
    """Immutable ``(w, w_bar, v)`` plus the update rule's state and lineage tag."""

    rule: UpdateRule
    w_bar: np.ndarray
    v: int
    lineage: tuple = ZERO_LINEAGE

    @property
    def w(self) -> np.ndarray:
        return self.rule.w

    def digest_parts(self):
        return (self.rule.w, self.w_bar, self.v, self.lineage)


@dataclass(frozen=True)
class AdmbMessage:
    sender: int
    state: NodeState
    g: np.ndarray
    c: int
    ids: frozenset = frozenset()

    def digest_parts(self):
        return (self.sender, self.state, self.g, self.c)


def precedes(S_j: NodeState, j, S_i: NodeState, i) -> bool:
    """True iff a node with state ``S_i`` and index ``i`` must adopt ``S_j`` from ``j``."""
    if S_j.v > S_i.v:
        return True
    return S_j.v == S_i.v and S_j.lineage != S_i.lineage and j < i


def _rank(state: NodeState):
    _, origin, nonce = state.lineage
    return (origin, nonce)


@dataclass
class Slot:
    g: np.ndarray
    c: int = 0
    ids: frozenset = frozenset()


@dataclass
class AdmbNode:
    """Per-node protocol state. ``ids`` sets are only filled when tracking."""

    id: int
    state: NodeState
    own: Slot
    slots: dict
    updates_done: int = 0
    incarnation: int = 0

    def total_count(self) -> int:
        return self.own.c + sum(s.c for s in self.slots.values())


def _own(d) -> Slot:
    return Slot(np.zeros(d), 0, set())


def fresh_node(node_id, neighbors, rule0: UpdateRule, incarnation: int = 0) -> AdmbNode:
    d = rule0.w.shape[0]
    state = NodeState(rule0, np.zeros(d), 0, ZERO_LINEAGE)
    return AdmbNode(node_id, state, _own(d),
                    {j: Slot(np.zeros(d)) for j in neighbors}, 0, incarnation)


def outgoing(node: AdmbNode, dest) -> AdmbMessage:
    """Message for neighbour ``dest``: own sum plus every slot except ``dest``'s."""
    g = node.own.g.copy()
    c = node.own.c
    ids = frozenset(node.own.ids)
    for j, s in node.slots.items():
        if j != dest:
            g += s.g
            c += s.c
            if s.ids:
                ids = ids | s.ids
    return AdmbMessage(node.id, node.state, g, c, ids)


def update_predictor(node: AdmbNode, b_used=None) -> dict:
    """Apply the averaged held gradients; returns a record of the update."""
    total_c = node.total_count()
    if total_c < 1:
        raise ProtocolError("update_predictor with no gradients")
    g = node.own.g.copy()
    ids = list(node.own.ids)
    for s in node.slots.values():
        g += s.g
        ids.extend(s.ids)
    avg = kernels.mean_of(g, total_c)
    old = node.state
    rule = update_step(old.rule, avg, total_c)
    v = old.v
    w_bar = (v / (v + 1)) * old.w_bar + (1.0 / (v + 1)) * rule.w
    node.updates_done += 1
    lineage = (v + 1, node.id, (node.incarnation, node.updates_done))
    node.state = NodeState(rule, w_bar, v + 1, lineage)
    d = g.shape[0]
    node.own = _own(d)
    for j in node.slots:
        node.slots[j] = Slot(np.zeros(d))
    return {"parent": old.lineage, "lineage": lineage, "count": total_c, "ids": ids,
            "w": rule.w}


def handle_request(node: AdmbNode, kind: int, z, b: int, comp=None, seq=None):
    """Serve one example. Returns ``(loss_pred, loss_comp, update_record|None)``."""
    st = node.state
    comp = st.w_bar if comp is None else comp
    lp, lc = kernels.serve(kind, st.w_bar, st.w, comp, z, node.own.g)
    node.own.c += 1
    if seq is not None:
        node.own.ids.add(seq)
    rec = update_predictor(node) if node.total_count() >= b else None
    return lp, lc, rec


def receive_message(node: AdmbNode, msg: AdmbMessage, b: int, tiebreak: str = "origin"):
    """Process a neighbour's message.

    Returns ``(outcome, update_record|None)`` with outcome one of
    ``"adopt-updates"``, ``"adopt-index"``, ``"merge"``, ``"ignore"``, ``"malformed"``.
    """
    S_j, j = msg.state, msg.sender
    d = node.own.g.shape[0]
    if msg.c < 0 or np.shape(msg.g) != (d,) or j not in node.slots:
        return "malformed", None
    S_i = node.state
    if tiebreak == "origin":
        adopt = precedes(S_j, _rank(S_j), S_i, _rank(S_i))
    else:
        adopt = precedes(S_j, j, S_i, node.id)
    if adopt:
        node.state = S_j
        node.own = _own(d)
        for k in node.slots:
            node.slots[k] = Slot(np.zeros(d))
        node.slots[j] = Slot(msg.g, msg.c, msg.ids)
        return ("adopt-updates" if S_j.v > S_i.v else "adopt-index"), None
    if S_j.lineage == S_i.lineage:
        node.slots[j] = Slot(msg.g, msg.c, msg.ids)
        if node.total_count() >= b:
            return "merge", update_predictor(node)
        return "merge", None
    return "ignore", None


class Admb(Protocol):
    name = "admb"

    def __init__(self, model, payloads, rule, b, *, t: float = 1.0, tiebreak: str = "origin",
                 track: bool = True):
        super().__init__(model, payloads, rule, b, track=track)
        if tiebreak not in ("origin", "sender"):
            raise ValueError("tiebreak must be 'origin' or 'sender'")
        self.t = t
        self.tiebreak = tiebreak
        self.nodes = {}
        self.timeline = []  # (time, node, v, lineage, cause)
        self.adoptions = {"adopt-updates": 0, "adopt-index": 0}
        self.malformed = 0
        self.violations = []  # provenance invariant failures
        self.computed_at = {}  # seq -> lineage the gradient was computed under
        self.lineages = {ZERO_LINEAGE: (None, None)}  # lineage -> (parent, w)
        self.pending_log = []  # (time, node, total pending count) at send ticks
        self.lineage_ids = {}  # lineage -> example ids it applied (tracking only)

    def start(self):
        rng = self.sim.net_rng
        for n in self.sim.topology.nodes:
            self.nodes[n] = fresh_node(n, self.sim.neighbors(n), self.rule0)
            self.timeline.append((0.0, n, 0, ZERO_LINEAGE, "init"))
            self.sim.set_timer(n, self.t * (1.0 - rng.random()), "send")

    # -- simulator callbacks
    def on_arrival(self, node, seq):
        nd = self.nodes[node]
        if self.track:
            self.computed_at[seq] = nd.state.lineage
        lp, lc, rec = handle_request(nd, self.kind, self.payloads[seq], self.b, self.comp,
                                     seq if self.track else None)
        self.ledger.add(seq, node, lp, lc, nd.state.v if rec is None else rec["parent"][0],
                        self.sim.now)
        if rec is not None:
            self._record_update(node, rec)

    def on_timer(self, node, tag):
        nd = self.nodes[node]
        for j in self.sim.neighbors(node):
            self.sim.send(node, j, outgoing(nd, j))
        self.pending_log.append((self.sim.now, node, nd.total_count()))
        self.sim.set_timer(node, self.t, "send")

    def on_message(self, node, src, msg):
        nd = self.nodes[node]
        before = nd.state
        outcome, rec = receive_message(nd, msg, self.b, self.tiebreak)
        if outcome == "malformed":
            self.malformed += 1
        elif outcome.startswith("adopt"):
            self.adoptions[outcome] += 1
            if nd.state.v < before.v:
                self.violations.append(("v-decrease", self.sim.now, node))
            self.timeline.append((self.sim.now, node, nd.state.v, nd.state.lineage, outcome))
        if rec is not None:
            self._record_update(node, rec)

    def on_crash(self, node):
        self.lost_gradients += self.nodes[node].own.c

    def on_recover(self, node):
        inc = self.sim.incarnation[node]
        self.nodes[node] = fresh_node(node, self.sim.neighbors(node), self.rule0, inc)
        self.timeline.append((self.sim.now, node, 0, ZERO_LINEAGE, "recover"))
        self.sim.set_timer(node, self.t * (1.0 - self.sim.net_rng.random()), "send")

    # -- bookkeeping
    def _record_update(self, node, rec):
        now = self.sim.now
        self.lineages[rec["lineage"]] = (rec["parent"], rec["w"])
        self.timeline.append((now, node, rec["lineage"][0], rec["lineage"], "update"))
        row = {"epoch": rec["lineage"][0], "count": rec["count"], "node": node, "time": now}
        if self.track:
            ids = rec["ids"]
            if len(ids) != rec["count"] or len(set(ids)) != len(ids):
                self.violations.append(("duplicate-in-update", now, node))
            stale = [s for s in ids if self.computed_at.get(s) != rec["parent"]]
            if stale:
                self.violations.append(("stale-gradient", now, node, len(stale)))
            row["ids"] = ids
            self.lineage_ids[rec["lineage"]] = ids
        self.updates.append(row)

    def chain(self, lineage) -> list:
        """Predictors along a lineage, oldest first."""
        out = []
        while lineage in self.lineages and self.lineages[lineage][0] is not None:
            parent, w = self.lineages[lineage]
            out.append(w)
            lineage = parent
        return out[::-1]

    def ancestry_reuse(self) -> int:
        """Examples applied more than once along some live node's chain of updates."""
        seen_chains, worst = set(), 0
        for nd in self.nodes.values():
            lin = nd.state.lineage
            if lin in seen_chains:
                continue
            seen_chains.add(lin)
            used, dup = set(), 0
            while lin in self.lineages and self.lineages[lin][0] is not None:
                for s in self.lineage_ids.get(lin, ()):
                    if s in used:
                        dup += 1
                    used.add(s)
                lin = self.lineages[lin][0]
            worst += dup
        return worst

    def running_average_error(self) -> float:
        """Max |w_bar - mean(chain)| over live nodes."""
        worst = 0.0
        for nd in self.nodes.values():
            ws = self.chain(nd.state.lineage)
            if not ws:
                continue
            mean = np.array([math.fsum(col) / len(ws) for col in np.asarray(ws).T])
            worst = max(worst, float(np.max(np.abs(mean - nd.state.w_bar))))
        return worst
