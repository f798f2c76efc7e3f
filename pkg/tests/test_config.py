import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustdmb.config import dump_config, parse_config
from robustdmb.learn import ConfigError

MINIMAL = "protocol: admb\nb: 8\n"


def test_minimal_config_fills_defaults_and_round_trips():
    cfg = parse_config(MINIMAL)
    assert cfg.topology == "path(4)" and cfg.m == 10000 and cfg.latency["max"] == 1.0
    assert cfg.loss["kind"] == "quadratic" and len(cfg.loss["mean"]) == 2
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert dump_config(parse_config(text)) == text


def test_rho_open_interval():
    with pytest.raises(ConfigError, match=r"rho.*\(0, 1/2\)"):
        parse_config("rho: 0.5\n")
    with pytest.raises(ConfigError, match="rho"):
        parse_config("rho: 0\n")
    assert parse_config("rho: 0.3\nm: 100000\n").batch == 32


def test_admb_rejects_cycles():
    with pytest.raises(ConfigError, match="acyclic"):
        parse_config("protocol: admb\nb: 4\ntopology: [[0, 1], [1, 2], [2, 0]]\n")
    # other protocols accept it
    parse_config("protocol: dmb-sync\nb: 4\ntopology: [[0, 1], [1, 2], [2, 0]]\n")


def test_all_violations_reported_together():
    with pytest.raises(ConfigError) as err:
        parse_config("protocol: quantum\nbogus: 1\nm: -3\nlatency: {min: 2, max: 1, speed: 3}\n")
    msg = str(err.value)
    for part in ("protocol", "bogus", "m:", "latency.max", "speed", "give either b or rho"):
        assert part in msg


def test_fault_validation():
    bad = ("b: 4\nfaults: [{at: 0.5, time: 3, kind: crash, target: 1},"
           " {at: 2.0, kind: heal}, {at: 0.1, kind: recover, target: master},"
           " {at: 0.1, kind: slowdown}]\n")
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    msg = str(err.value)
    assert "faults[0]" in msg and "faults[1].at" in msg and "faults[2]" in msg and "faults[3]" in msg


def test_mawo_needs_star_hub():
    with pytest.raises(ConfigError, match="star"):
        parse_config("protocol: mawo\nb: 4\ntopology: path(3)\n")


def test_dim_inferred_from_vectors():
    cfg = parse_config("b: 2\nloss: {kind: logistic, theta: [1, 2, 3]}\n")
    assert cfg.dim == 3
    with pytest.raises(ConfigError, match="theta"):
        parse_config("b: 2\ndim: 2\nloss: {kind: logistic, theta: [1, 2, 3]}\n")


def test_fault_times_scale_with_horizon():
    cfg = parse_config("b: 2\nfaults: [{at: 0.5, kind: partition, edges: [[0, 1]]},"
                       " {time: 7, kind: crash, target: 2}]\n")
    sched = cfg.fault_schedule(40.0)
    assert [(e.time, e.kind) for e in sched.entries] == [(20.0, "partition"), (7.0, "crash")]
    assert sched.entries[0].target == ((0, 1),)


@settings(max_examples=40, deadline=None)
@given(protocol=st.sampled_from(["serial", "dmb-sync", "admb"]), b=st.integers(1, 64),
       m=st.integers(1, 10**6), t=st.floats(0.1, 5), M=st.integers(0, 50),
       seed=st.integers(0, 2**32))
def test_round_trip_property(protocol, b, m, t, M, seed):
    cfg = parse_config(dict(protocol=protocol, b=b, m=m, t=t, M=M, seed=seed))
    assert parse_config(dump_config(cfg)) == cfg
