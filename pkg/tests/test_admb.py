import math

import numpy as np
import pytest

from robustdmb.admb import (ZERO_LINEAGE, Admb, AdmbMessage, NodeState, fresh_node,
                            handle_request, outgoing, precedes, receive_message, update_predictor)
from robustdmb.learn import make_rule, quadratic_model, sample_payloads
from robustdmb.simnet import LinkModel, Simulator, arrival_stream, build_topology, substream

MODEL = quadratic_model([0.5, 0.2], 1.0, 1.0)
RULE = make_rule(MODEL, 4)


def state(v, origin=0, nonce=(0, 1)):
    lin = ZERO_LINEAGE if v == 0 else (v, origin, nonce)
    return NodeState(RULE, np.zeros(2), v, lin)


def test_precedence_rules():
    assert precedes(state(3), 5, state(2), 0)  # more updates always win
    assert not precedes(state(2), 0, state(3), 5)
    assert precedes(state(2, 1), 0, state(2, 2), 1)  # tie, different predictor, lower index
    assert not precedes(state(2, 1), 1, state(2, 2), 0)
    assert not precedes(state(2, 1), 0, state(2, 1), 1)  # same predictor: no switch


def test_request_updates_at_b():
    nd = fresh_node(0, [1], RULE)
    z = np.array([0.3, 0.1])
    for k in range(3):
        assert handle_request(nd, 0, z, 4, seq=k)[2] is None
    lp, lc, rec = handle_request(nd, 0, z, 4, seq=3)
    assert rec["count"] == 4 and sorted(rec["ids"]) == [0, 1, 2, 3]
    assert nd.state.v == 1 and nd.total_count() == 0
    assert rec["parent"] == ZERO_LINEAGE and rec["lineage"] == (1, 0, (0, 1))


def test_prediction_uses_running_average():
    nd = fresh_node(0, [], RULE)
    nd.state = NodeState(RULE, np.array([0.2, 0.0]), 1, (1, 0, (0, 1)))
    z = np.array([0.0, 0.0])
    lp, _, _ = handle_request(nd, 0, z, 100)
    assert lp == pytest.approx(0.5 * 0.04)


def test_outgoing_excludes_destination_slot():
    nd = fresh_node(1, [0, 2], RULE)
    nd.own.g[:] = [1.0, 0.0]
    nd.own.c = 1
    nd.slots[0].g[:] = [0.0, 5.0]
    nd.slots[0].c = 5
    nd.slots[2].g[:] = [7.0, 0.0]
    nd.slots[2].c = 7
    to0 = outgoing(nd, 0)
    assert to0.c == 8 and to0.g.tolist() == [8.0, 0.0]
    to2 = outgoing(nd, 2)
    assert to2.c == 6 and to2.g.tolist() == [1.0, 5.0]


def test_merge_replaces_slot_and_can_trigger_update():
    nd = fresh_node(0, [1], RULE)
    msg = AdmbMessage(1, nd.state, np.array([1.0, 1.0]), 2)
    assert receive_message(nd, msg, 4) == ("merge", None)
    assert nd.total_count() == 2
    # the neighbour resends its running total; it replaces, not adds
    msg = AdmbMessage(1, nd.state, np.array([2.0, 2.0]), 3)
    assert receive_message(nd, msg, 4) == ("merge", None)
    assert nd.total_count() == 3
    msg = AdmbMessage(1, nd.state, np.array([3.0, 3.0]), 4)
    outcome, rec = receive_message(nd, msg, 4)
    assert outcome == "merge" and rec["count"] == 4


def test_adopting_newer_state_discards_held_gradients():
    nd = fresh_node(0, [1, 2], RULE)
    nd.own.c = 3
    newer = state(2, 1)
    outcome, rec = receive_message(nd, AdmbMessage(1, newer, np.ones(2), 1), 10)
    assert outcome == "adopt-updates" and rec is None
    assert nd.state is newer and nd.own.c == 0
    assert nd.slots[1].c == 1 and nd.slots[2].c == 0


def test_tiebreak_variants():
    a = fresh_node(2, [1], RULE)
    a.state = state(1, 2)
    msg = AdmbMessage(1, state(1, 0), np.zeros(2), 0)
    assert receive_message(a, msg, 5, "origin")[0] == "adopt-index"
    b = fresh_node(0, [1], RULE)
    b.state = state(1, 3)
    msg = AdmbMessage(1, state(1, 2), np.zeros(2), 0)
    # sender 1 > receiver 0: the literal rule keeps its own state, origin ranks adopt
    assert receive_message(b, msg, 5, "sender")[0] == "ignore"
    assert receive_message(b, msg, 5, "origin")[0] == "adopt-index"


def test_older_or_unrelated_states_ignored_and_bad_input_flagged():
    nd = fresh_node(0, [1], RULE)
    nd.state = state(3, 0)
    assert receive_message(nd, AdmbMessage(1, state(2, 1), np.ones(2), 1), 4) == ("ignore", None)
    assert receive_message(nd, AdmbMessage(1, nd.state, np.ones(3), 1), 4)[0] == "malformed"
    assert receive_message(nd, AdmbMessage(9, nd.state, np.ones(2), 1), 4)[0] == "malformed"
    assert receive_message(nd, AdmbMessage(1, nd.state, np.ones(2), -1), 4)[0] == "malformed"


def test_running_average_matches_shadow_list():
    nd = fresh_node(0, [], RULE)
    rng = np.random.default_rng(0)
    ws = []
    for _ in range(300):
        nd.own.g[:] = rng.normal(size=2)
        nd.own.c = 2
        ws.append(update_predictor(nd)["w"])
    exact = [math.fsum(c) / len(ws) for c in np.asarray(ws).T]
    assert np.max(np.abs(nd.state.w_bar - exact)) <= 1e-12


def run_admb(topo="path(4)", m=4000, b=8, faults=(), tiebreak="origin", seed=0):
    from robustdmb.simnet import FaultSchedule
    T = build_topology(topo, acyclic=True, seed=seed)
    pay = sample_payloads(MODEL, substream(seed, "payloads"), m)
    times, nodes = arrival_stream({n: 1 for n in T.nodes}, 8, m, substream(seed, "arrivals"))
    sim = Simulator(T, LinkModel(), seed)
    p = Admb(MODEL, pay, make_rule(MODEL, b), b, tiebreak=tiebreak)
    sim.attach(p)
    p.start()
    sim.schedule_arrivals(times, nodes)
    sim.schedule_faults(FaultSchedule(tuple(faults)))
    sim.run_until(float(times[-1]))
    return p, sim


def test_simulated_run_keeps_invariants():
    p, _ = run_admb()
    assert len(p.ledger) == 4000 and p.violations == [] and p.ancestry_reuse() == 0
    assert p.running_average_error() <= 1e-12
    assert p.adoptions["adopt-updates"] > 0


def test_recovered_node_restarts_fresh_and_catches_up():
    from robustdmb.simnet import FaultEntry
    p, sim = run_admb(faults=[FaultEntry(50.0, "crash", 2), FaultEntry(60.0, "recover", 2)])
    assert sim.incarnation[2] == 2
    assert any(c == "recover" for *_, c in p.timeline)
    assert p.nodes[2].state.v > 0 and p.violations == []


def test_sender_tiebreak_also_runs():
    p, _ = run_admb(tiebreak="sender", m=2000)
    assert p.violations == []
