"""Scenario configuration: YAML in, validated frozen config out."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from .bounds import batch_size_policy
from .learn import ConfigError
from .simnet import FAULT_KINDS, FaultEntry, FaultSchedule, LinkModel, build_topology

PROTOCOLS = ("serial", "dmb-sync", "mawo", "mawo-db", "admb")

_LOSS_KEYS = {"kind", "mean", "std", "radius", "theta", "feature_std", "oracle_samples"}
_LATENCY_KEYS = {"min", "max", "handler_time", "update_time", "edges"}
_RULE_KEYS = {"kind", "noise"}
_FAULT_KEYS = {"time", "at", "kind", "target", "factor", "edges"}


@dataclass(frozen=True)
class ScenarioConfig:
    protocol: str = "admb"
    topology: object = "path(4)"
    dim: int = 2
    loss: dict = field(default_factory=dict)
    b: int | None = None
    rho: float | None = None
    t: float = 1.0
    T: float = 1.0
    M: int = 8
    m: int = 10000
    latency: dict = field(default_factory=dict)
    rates: dict | None = None
    faults: tuple = ()
    good_set: tuple | None = None
    rule: dict = field(default_factory=dict)
    tiebreak: str = "origin"
    lease: float = 5.0
    poll_period: float = 1.0
    jitter: float = 0.5
    checkpoints: tuple = ()
    track: bool = True
    seed: int = 0

    # -- derived
    @property
    def batch(self) -> int:
        return self.b if self.b is not None else batch_size_policy(self.m, self.rho)

    def link(self) -> LinkModel:
        lat = self.latency
        edges = tuple((int(e[0]), int(e[1]), float(e[2]), float(e[3])) for e in lat.get("edges", ()))
        return LinkModel(float(lat["min"]), float(lat["max"]), float(lat["handler_time"]),
                         float(lat["update_time"]), edges)

    def build_topology(self):
        return build_topology(self.topology, acyclic=self.protocol == "admb", seed=self.seed)

    def fault_schedule(self, horizon: float) -> FaultSchedule:
        out = []
        for f in self.faults:
            time = f["time"] if "time" in f else f["at"] * horizon
            target = f.get("target")
            if f["kind"] in ("partition", "heal"):
                target = None if f.get("edges") in (None, "all") else tuple(tuple(e) for e in f["edges"])
            out.append(FaultEntry(float(time), f["kind"], target, float(f.get("factor", 1.0))))
        return FaultSchedule(tuple(out))

    def with_(self, **changes) -> "ScenarioConfig":
        return parse_config(dump_config(dataclasses.replace(self, **changes)))


DEFAULT_LOSS = {"kind": "quadratic", "std": 1.0, "radius": 1.0}
DEFAULT_LATENCY = {"min": 0.5, "max": 1.0, "handler_time": 0.0, "update_time": 0.0}
DEFAULT_RULE = {"kind": "projected-gradient", "noise": 0.0}


def _num(errors, name, value, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    try:
        x = int(value) if integer else float(value)
        if integer and float(value) != x:
            raise ValueError
    except (TypeError, ValueError):
        errors.append(f"{name}: expected a {'whole number' if integer else 'number'}, got {value!r}")
        return value
    if lo is not None and (x < lo or (lo_open and x == lo)):
        errors.append(f"{name}: must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (x > hi or (hi_open and x == hi)):
        errors.append(f"{name}: must be {'<' if hi_open else '<='} {hi}")
    return x


def _unknown(errors, where, got, allowed):
    for k in sorted(set(got) - set(allowed), key=str):
        errors.append(f"{where}: unknown key {k!r}")


def parse_config(text_or_mapping) -> ScenarioConfig:
    """Validate a YAML document (or mapping). Raises ConfigError listing every violation."""
    raw = text_or_mapping
    if isinstance(raw, str):
        raw = yaml.safe_load(raw) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    errors: list[str] = []
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    _unknown(errors, "config", raw, names)
    d = {k: raw[k] for k in raw if k in names}

    protocol = d.get("protocol", "admb")
    if protocol not in PROTOCOLS:
        errors.append(f"protocol: must be one of {', '.join(PROTOCOLS)}")
    loss_in = d.get("loss") or {}
    vec = loss_in.get("mean", loss_in.get("theta"))
    dim = _num(errors, "dim", d.get("dim", len(vec) if isinstance(vec, list) else 2), lo=1,
               integer=True)
    m = _num(errors, "m", d.get("m", 10000), lo=1, integer=True)
    M = _num(errors, "M", d.get("M", 8), lo=0, integer=True)
    seed = _num(errors, "seed", d.get("seed", 0), lo=0, integer=True)
    t = _num(errors, "t", d.get("t", 1.0), lo=0, lo_open=True)
    T = _num(errors, "T", d.get("T", 1.0), lo=0, lo_open=True)
    lease = _num(errors, "lease", d.get("lease", 5.0), lo=0, lo_open=True)
    poll = _num(errors, "poll_period", d.get("poll_period", 1.0), lo=0, lo_open=True)
    jitter = _num(errors, "jitter", d.get("jitter", 0.5), lo=0)

    b, rho = d.get("b"), d.get("rho")
    if b is not None:
        b = _num(errors, "b", b, lo=1, integer=True)
    if rho is not None:
        rho = _num(errors, "rho", rho, lo=0, hi=0.5, lo_open=True, hi_open=True)
        if isinstance(rho, float) and not 0 < rho < 0.5:
            errors.append("rho: batch size b = m^rho requires rho in the open interval (0, 1/2)")
    if b is None and rho is None:
        errors.append("b: give either b or rho")
    if b is not None and rho is not None:
        errors.append("b: give only one of b and rho")

    loss = dict(DEFAULT_LOSS)
    loss.update(d.get("loss") or {})
    _unknown(errors, "loss", loss, _LOSS_KEYS)
    if loss["kind"] not in ("quadratic", "logistic"):
        errors.append("loss.kind: must be quadratic or logistic")
    _num(errors, "loss.radius", loss["radius"], lo=0, lo_open=True)
    _num(errors, "loss.std", loss["std"], lo=0)
    if loss["kind"] == "quadratic":
        if "mean" not in loss and isinstance(dim, int):
            loss["mean"] = [round(0.6 / math.sqrt(dim), 12)] * dim
        if isinstance(dim, int) and len(loss.get("mean", [])) != dim:
            errors.append("loss.mean: length must equal dim")
        loss["mean"] = [float(x) for x in loss.get("mean", [])]
    else:
        loss.setdefault("feature_std", 1.0)
        loss.setdefault("oracle_samples", 1_000_000)
        if isinstance(dim, int) and len(loss.get("theta", [])) != dim:
            errors.append("loss.theta: length must equal dim")
    loss["std"] = float(loss["std"])
    loss["radius"] = float(loss["radius"])

    latency = dict(DEFAULT_LATENCY)
    latency.update(d.get("latency") or {})
    _unknown(errors, "latency", latency, _LATENCY_KEYS)
    lo = _num(errors, "latency.min", latency["min"], lo=0)
    hi = _num(errors, "latency.max", latency["max"], lo=0)
    if isinstance(lo, float) and isinstance(hi, float) and hi < lo:
        errors.append("latency.max: must be >= latency.min")
    _num(errors, "latency.handler_time", latency["handler_time"], lo=0)
    _num(errors, "latency.update_time", latency["update_time"], lo=0)
    if "edges" in latency:
        latency["edges"] = [list(e) for e in latency["edges"]]
    for k in ("min", "max", "handler_time", "update_time"):
        latency[k] = float(latency[k])

    rule = dict(DEFAULT_RULE)
    rule.update(d.get("rule") or {})
    _unknown(errors, "rule", rule, _RULE_KEYS)
    if rule["kind"] not in ("projected-gradient", "dual-averaging"):
        errors.append("rule.kind: must be projected-gradient or dual-averaging")
    rule["noise"] = float(rule["noise"])

    tiebreak = d.get("tiebreak", "origin")
    if tiebreak not in ("origin", "sender"):
        errors.append("tiebreak: must be origin or sender")

    topo_spec = d.get("topology", "path(4)")
    if isinstance(topo_spec, list):
        topo_spec = [list(e) for e in topo_spec]
    topo = None
    try:
        topo = build_topology(topo_spec, acyclic=protocol == "admb",
                              seed=seed if isinstance(seed, int) else 0)
    except ConfigError as exc:
        msg = str(exc)
        if "acyclic" in msg:
            msg += " (nodes gossip along some bounded-degree acyclic graph)"
        errors.append(f"topology: {msg}")
    if topo is not None and protocol in ("mawo", "mawo-db"):
        hub_edges = all(0 in e for e in topo.edges)
        if not hub_edges:
            errors.append("topology: master-worker protocols need a star with node 0 at the hub")

    faults = []
    for k, f in enumerate(d.get("faults") or ()):
        f = dict(f)
        _unknown(errors, f"faults[{k}]", f, _FAULT_KEYS)
        if f.get("kind") not in FAULT_KINDS:
            errors.append(f"faults[{k}].kind: must be one of {', '.join(FAULT_KINDS)}")
        if ("time" in f) == ("at" in f):
            errors.append(f"faults[{k}]: give exactly one of time (absolute) or at (fraction of run)")
        if "at" in f:
            f["at"] = _num(errors, f"faults[{k}].at", f["at"], lo=0, hi=1)
        if "time" in f:
            f["time"] = _num(errors, f"faults[{k}].time", f["time"], lo=0)
        if f.get("kind") in ("crash", "recover", "slowdown") and "target" not in f:
            errors.append(f"faults[{k}]: {f.get('kind')} needs a target node")
        if f.get("kind") == "recover" and f.get("target") == "master":
            errors.append(f"faults[{k}]: a crashed master does not come back")
        if f.get("kind") == "slowdown":
            f["factor"] = _num(errors, f"faults[{k}].factor", f.get("factor", 1.0), lo=0, lo_open=True)
        if "edges" in f and f["edges"] != "all":
            f["edges"] = [list(e) for e in f["edges"]]
        faults.append(f)

    rates = d.get("rates")
    if rates is not None:
        rates = {int(k): float(v) for k, v in rates.items()}
        if topo is not None and not set(rates) <= set(topo.nodes):
            errors.append("rates: unknown node ids")
    good_set = d.get("good_set")
    if good_set is not None:
        good_set = tuple(int(x) for x in good_set)

    checkpoints = tuple(int(x) for x in d.get("checkpoints") or ())
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return ScenarioConfig(
        protocol=protocol, topology=topo_spec, dim=dim, loss=loss, b=b, rho=rho, t=t, T=T, M=M,
        m=m, latency=latency, rates=rates, faults=tuple(faults), good_set=good_set, rule=rule,
        tiebreak=tiebreak, lease=lease, poll_period=poll, jitter=jitter, checkpoints=checkpoints,
        track=bool(d.get("track", True)), seed=seed)


def config_dict(cfg: ScenarioConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = [dict(x) if isinstance(x, dict) else x for x in v]
        out[f.name] = v
    return out


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(config_dict(cfg), sort_keys=True, default_flow_style=None)
