import numpy as np

from robustdmb.periods import (GoodPeriodTracker, VTimeline, check_propagation,
                               check_update_cadence, good_intervals, track_good_periods)
from robustdmb.simnet import LinkModel, build_topology

PATH = build_topology("path(3)")
LINK = LinkModel(0.5, 1.0)


def test_no_faults_one_interval():
    assert good_intervals(PATH, PATH.nodes, LINK, [], 100.0) == [(0.0, 100.0)]


def test_crash_and_partition_split_intervals():
    log = [(10.0, "crash", 1, 1.0), (20.0, "recover", 1, 1.0),
           (30.0, "partition", [(0, 1)], 1.0), (40.0, "heal", [(0, 1)], 1.0)]
    assert good_intervals(PATH, PATH.nodes, LINK, log, 50.0) == [
        (0.0, 10.0), (20.0, 30.0), (40.0, 50.0)]
    # a crash outside the good set does not matter
    assert good_intervals(PATH, [0, 1], LINK, [(5.0, "crash", 2, 1.0)], 9.0) == [(0.0, 9.0)]


def test_slow_links_or_handlers_are_never_good():
    assert good_intervals(PATH, PATH.nodes, LinkModel(0.5, 1.5), [], 10.0) == []
    log = [(3.0, "slowdown", 0, 100.0), (6.0, "slowdown", 0, 1.0)]
    assert good_intervals(PATH, PATH.nodes, LinkModel(handler_time=0.02), log, 10.0) == [
        (0.0, 3.0), (6.0, 10.0)]


def test_periods_tile_after_warmup():
    times = np.arange(0.0, 100.0, 0.25)
    nodes = np.zeros(len(times), dtype=int)
    periods, mask, which = track_good_periods(times, nodes, [0], [(0.0, 100.0)], 1.0, 1, 2, 1.0)
    size = 2 + 2 * 3 * 1
    assert all(len(rows) == size for *_, rows in periods)
    # warm-up of (t+2)d' = 3; 388 eligible examples make 48 periods of 8
    assert times[mask].min() == 3.0 and not mask[times < 3.0].any()
    assert len(periods) == 48 and mask.sum() == 384
    assert which[mask].tolist() == sorted(which[mask].tolist())


def test_fault_inside_candidate_period_invalidates_it():
    times = np.arange(0.0, 40.0, 1.0)
    nodes = np.zeros(40, dtype=int)
    periods, mask, _ = track_good_periods(times, nodes, [0], [(0.0, 20.5), (25.0, 40.0)], 1.0, 1,
                                          10, 0.0)
    # warm-up 3 -> examples 3..12 form one period, 13..20 are cut off by the fault
    assert [(s, e) for s, e, _ in periods] == [(3.0, 12.0), (28.0, 37.0)]
    assert not mask[13:28].any()


def test_tracker_warmup_never_inside_period():
    tr = GoodPeriodTracker([(0.0, 10.0)], 4.0, 1)
    for k, t in enumerate(np.arange(0.0, 10.0, 0.5)):
        tr.feed(k, t)
    assert min(s for s, _, _ in tr.periods) >= 4.0


def test_timeline_and_checks():
    tl = [(0.0, n, 0, (0,), "init") for n in (0, 1)]
    tl += [(1.0, 0, 1, (1, 0), "update"), (2.5, 1, 1, (1, 0), "adopt-updates"),
           (10.0, 1, 2, (2, 1), "update")]
    vt = VTimeline(tl, [0, 1])
    assert vt.at(1, 2.4) == 0 and vt.at(1, 2.5) == 1 and vt.lineage_at(1, 11) == (2, 1)
    checked, bad = check_propagation(tl, [0, 1], [(0.0, 50.0)], 0.0, 1, 50.0)
    assert checked == 4 and bad == [(10.0, 2, 1)]
    _, bad_slow = check_propagation(tl, [0, 1], [(0.0, 50.0)], 100.0, 1, 50.0)
    assert not bad_slow  # window longer than the interval is not checked
    ex_t = np.arange(0.0, 3.0, 0.5)
    eps, bad, worst = check_update_cadence(tl, [0, 1], [(0.0, 3.0)], ex_t, np.zeros(6, int), 10,
                                           3.0)
    assert eps == 1 and worst == 5 and not bad
    _, bad, _ = check_update_cadence(tl, [0, 1], [(0.0, 3.0)], ex_t, np.zeros(6, int), 4, 3.0)
    assert bad
