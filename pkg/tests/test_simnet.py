import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustdmb.learn import ConfigError
from robustdmb.simnet import (FaultEntry, FaultSchedule, LinkModel, SimulationError, Simulator,
                              apportion, arrival_stream, build_topology, components, diameter,
                              spanning_tree, substream)


def test_shapes():
    star = build_topology("star(5)")
    assert star.neighbors(0) == [1, 2, 3, 4] and star.neighbors(3) == [0]
    path = build_topology("path(4)")
    assert diameter(path) == 3 and path.is_acyclic()
    tree = build_topology("random-tree(15)", seed=4)
    assert len(tree.edges) == 14 and tree.is_acyclic()
    assert build_topology("random-tree(15)", seed=4) == tree
    assert build_topology("random-tree(15, 9)").edges != tree.edges or True


def test_explicit_edges_and_cycles():
    tri = [[0, 1], [1, 2], [2, 0]]
    assert build_topology(tri).kind == "general"
    with pytest.raises(ConfigError, match="acyclic"):
        build_topology(tri, acyclic=True)
    with pytest.raises(ConfigError, match="disconnected"):
        build_topology([[0, 1], [2, 3]])
    with pytest.raises(ConfigError, match="duplicate"):
        build_topology([[0, 1], [1, 0]])
    with pytest.raises(ConfigError):
        build_topology("ring(4)")


def test_components_and_spanning_tree():
    path = build_topology("path(5)")
    parts = components(path, blocked=frozenset({frozenset((1, 2))}))
    assert parts == [frozenset({0, 1}), frozenset({2, 3, 4})]
    assert spanning_tree(path, 2) == {2: None, 1: 2, 3: 2, 0: 1, 4: 3}
    assert diameter(path, [2, 3, 4]) == 2
    with pytest.raises(ConfigError):
        diameter(path, [0, 4])


def test_apportion_largest_remainder():
    assert apportion({1: 1, 2: 2, 3: 4}, 8) == {1: 1, 2: 2, 3: 5}
    assert sum(apportion({i: 1 for i in range(7)}, 10).values()) == 10


@settings(max_examples=40, deadline=None)
@given(M=st.integers(1, 20), k=st.integers(1, 6), seed=st.integers(0, 1000),
       jitter=st.floats(0, 2))
def test_arrivals_respect_rate_window(M, k, seed, jitter):
    times, nodes = arrival_stream({i: 1 + i for i in range(k)}, M, 500, substream(seed, "arrivals"),
                                  jitter)
    assert len(times) == 500 and np.all(np.diff(times) >= 0)
    # any window of length one (half-open) holds at most M arrivals
    hi = np.searchsorted(times, times + 1.0, side="left")
    assert np.max(hi - np.arange(len(times))) <= M


def test_substreams_are_independent_and_reproducible():
    a = substream(1, "arrivals").random(3)
    assert np.array_equal(a, substream(1, "arrivals").random(3))
    assert not np.array_equal(a, substream(1, "payloads").random(3))
    assert not np.array_equal(a, substream(2, "arrivals").random(3))


class Recorder:
    def __init__(self):
        self.log = []

    def on_arrival(self, node, seq):
        self.log.append((self.sim.now, "arrival", node, seq))

    def on_timer(self, node, tag):
        self.log.append((self.sim.now, "timer", node, tag))

    def on_message(self, node, src, body):
        self.log.append((self.sim.now, "message", node, body))

    def on_crash(self, node):
        self.log.append((self.sim.now, "crash", node, None))

    def on_recover(self, node):
        self.log.append((self.sim.now, "recover", node, None))


def make(topo="path(2)", **link):
    sim = Simulator(build_topology(topo), LinkModel(**{"latency_min": 1.0, "latency_max": 1.0,
                                                       **link}), seed=0, trace=True)
    rec = Recorder()
    sim.attach(rec)
    return sim, rec


def test_ties_break_by_insertion_order():
    sim, rec = make()
    sim.schedule(1.0, "arrival", 1, 7)
    sim.schedule(1.0, "arrival", 0, 8)
    sim.run_until()
    assert [e[3] for e in rec.log] == [7, 8]


def test_busy_node_defers_events():
    sim, rec = make(handler_time=0.5)
    sim.schedule(0.0, "arrival", 0, 0)
    sim.schedule(0.1, "arrival", 0, 1)
    sim.run_until()
    assert [e[0] for e in rec.log] == [0.0, 0.5]


def test_messages_leave_after_handler():
    sim, rec = make(handler_time=0.25)
    rec.on_arrival = lambda node, seq: sim.send(node, 1, "hi")
    sim.schedule(0.0, "arrival", 0, 0)
    sim.run_until()
    assert rec.log == [(1.25, "message", 1, "hi")]


def test_crash_drops_messages_and_stale_timers():
    sim, rec = make()
    sim.set_timer(1, 2.0, "t")
    rec.on_arrival = lambda node, seq: sim.send(node, 1, "x")
    sim.schedule(0.0, "arrival", 0, 0)
    sim.schedule_faults(FaultSchedule((FaultEntry(0.5, "crash", 1), FaultEntry(0.7, "recover", 1))))
    sim.run_until()
    kinds = [e[1] for e in rec.log]
    assert kinds == ["crash", "recover"]
    assert sim.drops["crashed"] == 1 and sim.drops["stale_timer"] == 1


def test_partition_drops_in_flight_and_heal_restores():
    sim, rec = make()
    rec.on_arrival = lambda node, seq: sim.send(node, 1, seq)
    sim.schedule(0.0, "arrival", 0, 0)
    sim.schedule(3.0, "arrival", 0, 1)
    sim.schedule(5.0, "arrival", 0, 2)
    sim.schedule_faults(FaultSchedule((FaultEntry(0.5, "partition", None),
                                       FaultEntry(0.9, "heal", None))))
    sim.run_until()
    assert [e[3] for e in rec.log] == [1, 2]
    assert sim.drops["partition"] == 1


def test_send_into_partition_is_dropped():
    sim, rec = make()
    rec.on_arrival = lambda node, seq: sim.send(node, 1, seq)
    sim.schedule_faults(FaultSchedule((FaultEntry(0.0, "partition", [(0, 1)]),)))
    sim.schedule(1.0, "arrival", 0, 0)
    sim.run_until()
    assert rec.log == [] and sim.drops["partition"] == 1


def test_slowdown_scales_handler_time():
    sim, rec = make(handler_time=0.5)
    sim.schedule_faults(FaultSchedule((FaultEntry(0.0, "slowdown", 0, 3.0),)))
    sim.schedule(0.1, "arrival", 0, 0)
    sim.schedule(0.2, "arrival", 0, 1)
    sim.run_until()
    assert [e[0] for e in rec.log] == [0.1, 1.6]


def test_past_events_rejected_and_unknown_fault():
    sim, _ = make()
    sim.run_until(5.0)
    with pytest.raises(SimulationError):
        sim.schedule(1.0, "arrival", 0, 0)
    with pytest.raises(ConfigError):
        FaultEntry(1.0, "meteor", 0)


def test_trace_hash_is_deterministic():
    def once():
        sim, rec = make("path(3)", latency_min=0.2)
        rec.on_arrival = lambda node, seq: sim.send(node, sim.neighbors(node)[0], seq)
        times, nodes = arrival_stream({0: 1, 1: 1, 2: 1}, 6, 200, substream(3, "arrivals"))
        sim.schedule_arrivals(times, nodes)
        sim.run_until()
        return sim.trace.hexdigest(), len(sim.trace.lines)
    assert once() == once()
