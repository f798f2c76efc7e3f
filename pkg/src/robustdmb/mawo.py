"""Master-worker mini-batching, plus the shared-store variant without a master.

Workers predict with the last predictor they heard of, sum gradients, and
ship ``(g, count, epoch)`` every ``T`` time-units. The master adds messages
from its current epoch and, once it holds ``b`` gradients, updates and
broadcasts ``(w, epoch + 1)``. Workers drop whatever they held when a newer
epoch arrives. In the store variant every worker locks a shared record,
adds its sums, and performs the update itself if it crossed ``b``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .learn import ConfigError, UpdateRule, update_step
from .protocol import Protocol


@dataclass
class WorkerState:
    w: np.ndarray
    j: int = 1
    g: np.ndarray = None
    count: int = 0
    ids: list = field(default_factory=list)
    last_send: float = float("-inf")

    def __post_init__(self):
        if self.g is None:
            self.g = np.zeros(self.w.shape[0])

    def reset(self):
        self.g = np.zeros(self.w.shape[0])
        self.count = 0
        self.ids = []


@dataclass(frozen=True)
class WorkerMessage:
    g: np.ndarray
    count: int
    j: int
    ids: tuple = ()

    def digest_parts(self):
        return (self.g, self.count, self.j)


@dataclass(frozen=True)
class Broadcast:
    w: np.ndarray
    j: int

    def digest_parts(self):
        return (self.w, self.j)


@dataclass
class MasterState:
    rule: UpdateRule
    j: int = 1
    g: np.ndarray = None
    count: int = 0
    ids: list = field(default_factory=list)

    def __post_init__(self):
        if self.g is None:
            self.g = np.zeros(self.rule.w.shape[0])


def worker_on_example(state: WorkerState, kind: int, z, comp=None, seq=None):
    """Predict with ``state.w`` and add the example's gradient to the worker sum.

    Returns ``(loss_at_prediction, loss_at_comp)``.
    """
    comp = state.w if comp is None else comp
    lp, lc = kernels.serve(kind, state.w, state.w, comp, z, state.g)
    state.count += 1
    if seq is not None:
        state.ids.append(seq)
    return lp, lc


def worker_timer(state: WorkerState, now: float, period: float):
    if state.count > 0 and now - state.last_send >= period:
        msg = WorkerMessage(state.g, state.count, state.j, tuple(state.ids))
        state.reset()
        state.last_send = now
        return msg
    return None


def worker_on_broadcast(state: WorkerState, msg) -> int:
    """Adopt a strictly newer predictor; returns how many gradients were discarded."""
    if msg.j <= state.j:
        return 0
    dropped = state.count
    state.w = msg.w
    state.j = msg.j
    state.reset()
    return dropped


def master_on_message(master: MasterState, msg: WorkerMessage, b: int):
    """Accumulate a current-epoch message; returns a Broadcast once ``b`` is reached.

    The average divides by the gradients actually held, which may exceed ``b``.
    """
    if msg.j != master.j:
        return None
    master.g = master.g + msg.g
    master.count += msg.count
    master.ids.extend(msg.ids)
    if master.count < b:
        return None
    avg = kernels.mean_of(master.g, master.count)
    master.rule = update_step(master.rule, avg, master.count)
    master.j += 1
    master.g = np.zeros(master.g.shape[0])
    master.count = 0
    master.ids = []
    return Broadcast(master.rule.w, master.j)


class MaWo(Protocol):
    name = "mawo"

    def __init__(self, model, payloads, rule, b, *, send_period: float = 1.0,
                 master: int = 0, track: bool = True):
        super().__init__(model, payloads, rule, b, track=track)
        self.T = send_period
        self.master_id = master
        self.master = MasterState(rule)
        self.workers = {}
        self.adoptions = {}  # epoch -> set of predictor bytes adopted by workers
        self.applied = []  # id tuples per update, for the no-double-use check

    def _new_worker(self):
        return WorkerState(self.rule0.w.copy())

    def start(self):
        rng = self.sim.net_rng
        for n in self.sim.topology.nodes:
            if n != self.master_id:
                self.workers[n] = self._new_worker()
                self.sim.set_timer(n, self.T * (1.0 - rng.random()), "send")

    def resolve_fault_target(self, entry):
        return self.master_id if entry.target == "master" else entry.target

    def on_arrival(self, node, seq):
        if node == self.master_id:
            raise ConfigError("the master serves no examples")
        st = self.workers[node]
        lp, lc = worker_on_example(st, self.kind, self.payloads[seq], self.comp,
                                   seq if self.track else None)
        self.ledger.add(seq, node, lp, lc, st.j, self.sim.now)

    def on_timer(self, node, tag):
        st = self.workers[node]
        msg = worker_timer(st, self.sim.now, self.T)
        if msg is not None:
            self.sim.send(node, self.master_id, msg)
        self.sim.set_timer(node, self.T, "send")

    def on_message(self, node, src, msg):
        if node == self.master_id:
            if msg.j != self.master.j:
                self.dropped[msg.j] += msg.count
                return
            ids = list(self.master.ids) + list(msg.ids)
            epoch = self.master.j
            bc = master_on_message(self.master, msg, self.b)
            if bc is not None:
                self.sim.busy(self.sim.link.update_time)
                self.updates.append({"epoch": epoch, "count": len(ids) if self.track else None,
                                     "node": node, "time": self.sim.now})
                if self.track:
                    self.applied.append(tuple(ids))
                for wk in self.workers:
                    self.sim.send(node, wk, bc)
        else:
            st = self.workers[node]
            old = st.j
            lost = worker_on_broadcast(st, msg)
            if st.j != old:
                self.dropped[old] += lost
                self.adoptions.setdefault(st.j, set()).add(st.w.tobytes())

    def on_crash(self, node):
        if node != self.master_id:
            self.lost_gradients += self.workers[node].count

    def on_recover(self, node):
        if node == self.master_id:
            raise ConfigError("master recovery is not supported; use mawo-db")
        self.workers[node] = self._new_worker()
        self.sim.set_timer(node, self.T, "send")


# ------------------------------------------------------------------ shared store

@dataclass
class SharedStore:
    """Lockable record ``(g, count, j, rule)``; mutations only under the lock."""

    rule: UpdateRule
    j: int = 1
    g: np.ndarray = None
    count: int = 0
    ids: list = field(default_factory=list)
    holder: object = None
    serial: int = 0
    lease_until: float = 0.0
    _snapshot: tuple = None

    def __post_init__(self):
        if self.g is None:
            self.g = np.zeros(self.rule.w.shape[0])

    @property
    def locked(self) -> bool:
        return self.holder is not None

    def acquire(self, holder, now: float, lease: float) -> int:
        if self.locked:
            raise RuntimeError("store already locked")
        self.holder = holder
        self.serial += 1
        self.lease_until = now + lease
        self._snapshot = (self.g.copy(), self.count, list(self.ids))
        return self.serial

    def _check(self, holder):
        if self.holder != holder:
            raise RuntimeError(f"store mutation by {holder} without the lock")

    def add(self, holder, g, count, ids=()):
        self._check(holder)
        self.g = self.g + g
        self.count += count
        self.ids.extend(ids)

    def commit(self, holder, rule: UpdateRule):
        self._check(holder)
        self.rule = rule
        self.j += 1
        self.g = np.zeros(self.g.shape[0])
        self.count = 0
        self.ids = []

    def release(self, holder):
        self._check(holder)
        self.holder = None
        self._snapshot = None

    def rollback(self) -> int:
        """Lease expired: restore the pre-lock record. Returns gradients lost."""
        g, count, ids = self._snapshot
        lost = self.count - count
        self.g, self.count, self.ids = g, count, ids
        self.holder = None
        self._snapshot = None
        return lost


def db_worker_flush(worker: WorkerState, store: SharedStore, b: int, worker_id, now: float = 0.0,
                    lease: float = 5.0):
    """One flush executed without network delay.

    Returns ``None`` when the store stayed below ``b`` (or the worker's epoch
    was stale, in which case its gradients are discarded), else the update
    record ``(epoch, count, ids)`` after the worker has performed the update
    and posted the new predictor.
    """
    if worker.count == 0:
        return None
    store.acquire(worker_id, now, lease)
    g, c, ids, j = worker.g, worker.count, list(worker.ids), worker.j
    worker.reset()
    if j != store.j:
        store.release(worker_id)
        return None
    store.add(worker_id, g, c, ids)
    if store.count < b:
        store.release(worker_id)
        return None
    epoch, total, used = store.j, store.count, list(store.ids)
    rule = update_step(store.rule, kernels.mean_of(store.g, store.count), store.count)
    store.commit(worker_id, rule)
    store.release(worker_id)
    worker_on_broadcast(worker, Broadcast(rule.w, store.j))
    return epoch, total, used


class MaWoDB(Protocol):
    """Shared-store variant: node ``store`` hosts the record and is assumed reliable."""

    name = "mawo-db"

    def __init__(self, model, payloads, rule, b, *, send_period: float = 1.0,
                 poll_period: float = 1.0, lease: float = 5.0, store: int = 0,
                 track: bool = True):
        super().__init__(model, payloads, rule, b, track=track)
        self.T = send_period
        self.poll_period = poll_period
        self.lease = lease
        self.store_id = store
        self.store = SharedStore(rule)
        self.queue = deque()
        self.workers = {}
        self.pending_master_crash = False
        self.master_crash_time = None
        self.master_crashed = None
        self.rollbacks = 0
        self.crossings = []  # (serial, time lock granted for an update)
        self.applied = []
        self.last_updater = None

    def start(self):
        rng = self.sim.net_rng
        for n in self.sim.topology.nodes:
            if n != self.store_id:
                self.workers[n] = WorkerState(self.rule0.w.copy())
                self.sim.set_timer(n, self.T * (1.0 - rng.random()), "flush")
                self.sim.set_timer(n, self.poll_period * (1.0 - rng.random()), "poll")

    def resolve_fault_target(self, entry):
        if entry.target == "master":
            if entry.kind != "crash":
                raise ConfigError("only crash faults may target the master")
            self.pending_master_crash = True
            return None
        if entry.target == self.store_id and entry.kind == "crash":
            raise ConfigError("the shared store is assumed reliable")
        return entry.target

    def on_arrival(self, node, seq):
        st = self.workers[node]
        lp, lc = worker_on_example(st, self.kind, self.payloads[seq], self.comp,
                                   seq if self.track else None)
        self.ledger.add(seq, node, lp, lc, st.j, self.sim.now)

    def on_timer(self, node, tag):
        if node == self.store_id:
            self._lease_expired(tag[1])
            return
        st = self.workers[node]
        if tag == "flush":
            msg = worker_timer(st, self.sim.now, self.T)
            if msg is not None:
                self.sim.send(node, self.store_id, ("flush", msg))
            self.sim.set_timer(node, self.T, "flush")
        else:
            self.sim.send(node, self.store_id, ("poll", st.j))
            self.sim.set_timer(node, self.poll_period, "poll")

    def on_message(self, node, src, msg):
        kind = msg[0]
        if node == self.store_id:
            if kind == "flush":
                self.queue.append((src, msg[1]))
                self._grant_next()
            elif kind == "commit":
                self._commit(src, msg[1], msg[2])
            elif kind == "poll":
                if self.store.j > msg[1]:
                    self.sim.send(node, src, ("state", Broadcast(self.store.rule.w, self.store.j)))
            return
        st = self.workers[node]
        if kind == "grant":
            if self.pending_master_crash:
                self.pending_master_crash = False
                self.master_crash_time = self.sim.now
                self.master_crashed = node
                self.sim.crash_now(node)
                return
            _, serial, g, c, rule = msg
            self.sim.busy(self.sim.link.update_time)
            new_rule = update_step(rule, kernels.mean_of(g, c), c)
            self.sim.send(node, self.store_id, ("commit", serial, new_rule))
        elif kind in ("state", "ack"):
            old = st.j
            lost = worker_on_broadcast(st, msg[1])
            if st.j != old:
                self.dropped[old] += lost

    def _grant_next(self):
        store, sim = self.store, self.sim
        while not store.locked and self.queue:
            src, wm = self.queue.popleft()
            serial = store.acquire(src, sim.now, self.lease)
            if wm.j != store.j:
                self.dropped[wm.j] += wm.count
                store.release(src)
                continue
            store.add(src, wm.g, wm.count, wm.ids)
            if store.count < self.b:
                store.release(src)
                continue
            self.crossings.append((serial, sim.now))
            sim.send(self.store_id, src, ("grant", serial, store.g.copy(), store.count, store.rule))
            sim.set_timer(self.store_id, self.lease, ("lease", serial))

    def _commit(self, src, serial, rule):
        store = self.store
        if store.holder != src or store.serial != serial or self.sim.now > store.lease_until:
            return  # late commit after rollback
        epoch, count, ids = store.j, store.count, list(store.ids)
        store.commit(src, rule)
        store.release(src)
        self.last_updater = src
        self.updates.append({"epoch": epoch, "count": count, "node": src, "time": self.sim.now,
                             "serial": serial})
        if self.track:
            self.applied.append(tuple(ids))
        self.sim.send(self.store_id, src, ("ack", Broadcast(rule.w, store.j)))
        self._grant_next()

    def _lease_expired(self, serial):
        store = self.store
        if store.locked and store.serial == serial:
            self.dropped[store.j] += store.rollback()
            self.rollbacks += 1
            self._grant_next()

    def on_crash(self, node):
        if node in self.workers:
            self.lost_gradients += self.workers[node].count

    def on_recover(self, node):
        self.workers[node] = WorkerState(self.rule0.w.copy())
        self.sim.set_timer(node, self.T, "flush")
        self.sim.set_timer(node, self.poll_period, "poll")
