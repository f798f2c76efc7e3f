"""Acceptance suite: one function per criterion, each returning a CheckResult."""
from __future__ import annotations

import filecmp
import math
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import bounds
from .admb import Admb, fresh_node, update_predictor
from .config import ScenarioConfig, parse_config
from .harness import compare_protocols, run_experiment
from .learn import (loss_gradient, loss_value, logistic_model, make_rule, project,
                    quadratic_model)
from .simnet import build_topology, diameter, substream


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _cfg(**kw) -> ScenarioConfig:
    return parse_config(kw)


# ------------------------------------------------------------------ scenario families

def uniqueness_scenarios(seeds=range(20), sizes=(3, 7, 15), m=10_000):
    out = []
    for seed in seeds:
        rng = substream(seed, "faults")
        for k in sizes:
            topo = build_topology(f"random-tree({k})", seed=seed)
            faults = []
            for _ in range(3):
                node = int(rng.integers(k))
                a = float(rng.uniform(0.05, 0.8))
                faults += [{"at": a, "kind": "crash", "target": node},
                           {"at": min(1.0, a + float(rng.uniform(0.02, 0.15))), "kind": "recover",
                            "target": node}]
            if topo.edges:
                e = topo.edges[int(rng.integers(len(topo.edges)))]
                a = float(rng.uniform(0.05, 0.8))
                faults += [{"at": a, "kind": "partition", "edges": [list(e)]},
                           {"at": min(1.0, a + float(rng.uniform(0.02, 0.15))), "kind": "heal",
                            "edges": [list(e)]}]
            out.append(_cfg(protocol="admb", topology=f"random-tree({k})", m=m, b=16, M=8,
                            seed=seed, faults=faults))
    return out


def good_node_scenarios(n=20, m=5_000):
    out = []
    for seed in range(n):
        rng = np.random.default_rng([seed, 2024])
        k = int(rng.integers(2, 10))
        lo = float(rng.uniform(0.0, 0.6))
        out.append(_cfg(
            protocol="admb", topology=f"random-tree({k})", m=m, b=int(rng.integers(4, 40)),
            M=int(rng.integers(2, 13)), t=float(rng.choice([0.5, 1.0, 2.0])), seed=seed,
            latency={"min": lo, "max": float(rng.uniform(lo, 1.0)),
                     "handler_time": float(rng.uniform(0.0, 0.02))}))
    return out


def mawo_scenarios(n=12, m=20_000):
    out = []
    for seed in range(n):
        rng = np.random.default_rng([seed, 77])
        groups = int(rng.integers(1, 3))
        k = 3 * groups
        rates = {i + 1: [1, 2, 4][i % 3] for i in range(k)}
        out.append(_cfg(
            protocol="mawo", topology=f"star({k + 1})", rates=rates, m=m, rho=0.3,
            M=int(rng.integers(4, 17)), T=float(rng.choice([0.5, 1.0, 2.0])), seed=seed,
            latency={"min": 0.1, "max": float(rng.uniform(0.2, 1.5)),
                     "update_time": float(rng.uniform(0.0, 0.5))}))
    return out


def dmb_scenarios(seeds=range(10)):
    return [_cfg(protocol="dmb-sync", topology="path(4)", m=100_000, rho=0.3, M=8, seed=s)
            for s in seeds]


def admb_path_scenarios(seeds=range(10)):
    return [_cfg(protocol="admb", topology="path(4)", m=100_000, rho=0.3, M=8, seed=s)
            for s in seeds]


LEADING_LOSS = {"mean": [0.9, 0.0], "std": 0.3}


def leading_term_pair():
    serial = _cfg(protocol="serial", m=100_000, b=1, loss=LEADING_LOSS)
    dist = _cfg(protocol="dmb-sync", topology="path(4)", m=100_000, rho=0.3, M=8,
                loss=LEADING_LOSS)
    return serial, dist


def failover_scenarios(seeds=range(5)):
    return [_cfg(protocol="mawo-db", topology="star(5)", m=100_000, rho=0.3, M=8, seed=s,
                 faults=[{"at": 0.25, "kind": "crash", "target": "master"}]) for s in seeds]


def partition_scenarios(seeds=range(6)):
    out = []
    for seed in seeds:
        spec = "path(6)" if seed % 2 == 0 else "random-tree(9)"
        topo = build_topology(spec, seed=seed)
        rng = substream(seed, "faults")
        cut = list(topo.edges[int(rng.integers(len(topo.edges)))])
        out.append(_cfg(protocol="admb", topology=spec, m=20_000, b=16, M=8, seed=seed,
                        faults=[{"at": 0.5, "kind": "partition", "edges": [cut]},
                                {"at": 0.75, "kind": "heal", "edges": [cut]}]))
    return out


# ------------------------------------------------------------------ criteria

def criterion_1() -> CheckResult:
    runs = [run_experiment(c) for c in uniqueness_scenarios()]
    bad = sum(int(r.summary["reuse_violations"]) for r in runs)
    updates = sum(len(r.updates) for r in runs)
    return CheckResult(1, "gradient uniqueness (admb)", bad == 0,
                       f"{len(runs)} runs, {updates} updates, {bad} reused gradients")


def _good_runs():
    return [run_experiment(c) for c in good_node_scenarios()]


_GOOD_CACHE = {}


def _good_cached():
    if "runs" not in _GOOD_CACHE:
        _GOOD_CACHE["runs"] = _good_runs()
    return _GOOD_CACHE["runs"]


def criterion_2() -> CheckResult:
    runs = _good_cached()
    windows = sum(int(r.summary["propagation_windows"]) for r in runs)
    bad = sum(int(r.summary["propagation_violations"]) for r in runs)
    ok = bad == 0 and all(int(r.summary["propagation_windows"]) > 0 for r in runs)
    return CheckResult(2, "propagation within (t+2)d'", ok,
                       f"{len(runs)} scenarios, {windows} windows, {bad} late")


def criterion_3() -> CheckResult:
    runs = _good_cached()
    eps = sum(int(r.summary["cadence_episodes"]) for r in runs)
    bad = sum(int(r.summary["cadence_violations"]) for r in runs)
    slack = min(float(r.summary["cadence_bound"]) - int(r.summary["cadence_worst"]) for r in runs)
    ok = bad == 0 and all(int(r.summary["cadence_episodes"]) > 0 for r in runs)
    return CheckResult(3, "update cadence b+2(t+2)d'M", ok,
                       f"{eps} episodes, {bad} over the cap, min slack {slack:.0f} examples")


def criterion_4() -> CheckResult:
    runs = [run_experiment(c) for c in mawo_scenarios()]
    ok = all(r.summary["mu_pass"] for r in runs)
    ratio = max(r.summary["mu_measured"] / r.summary["mu_bound"] for r in runs)
    return CheckResult(4, "mawo dropped inputs per epoch", ok,
                       f"{len(runs)} runs, worst dropped/bound {ratio:.2f}")


def criterion_5() -> CheckResult:
    runs = [run_experiment(c) for c in dmb_scenarios()]
    mean = float(np.mean([r.summary["regret"] for r in runs]))
    bound = min(r.summary["bound_value"] for r in runs)
    return CheckResult(5, "dmb-sync regret vs bound", mean <= bound,
                       f"mean regret {mean:.1f} <= {bound:.1f} "
                       f"(max mu {max(r.summary['mu_measured'] for r in runs)})")


def criterion_6() -> CheckResult:
    runs = [run_experiment(c) for c in admb_path_scenarios()]
    mean = float(np.mean([r.summary["bound_regret"] for r in runs]))
    bound = min(r.summary["bound_value"] for r in runs)
    return CheckResult(6, "admb good-period regret vs closed form", mean <= bound,
                       f"mean regret {mean:.1f} <= {bound:.1f}")


def criterion_7() -> CheckResult:
    serial, dist = leading_term_pair()
    cps = (1_000, 10_000, 100_000)
    rows = compare_protocols(serial, dist, range(10), cps)
    ratios = {}
    for seed, cp, _, _, r in rows:
        ratios.setdefault(seed, []).append(r)
    final = [v[-1] for v in ratios.values()]
    trend = sum(all(a >= b for a, b in zip(v, v[1:])) for v in ratios.values())
    ok = all(0.5 <= r <= 2.0 for r in final) and trend >= 8
    return CheckResult(7, "serial vs dmb-sync leading term", ok,
                       f"final ratios {min(final):.2f}..{max(final):.2f}, "
                       f"non-increasing in {trend}/10 seeds")


def criterion_8() -> CheckResult:
    notes, ok = [], True
    for cfg in failover_scenarios():
        r = run_experiment(cfg)
        p = r.protocol
        crash = p.master_crash_time
        if crash is None:
            ok = False
            notes.append(f"seed {cfg.seed}: master never crashed")
            continue
        before = [u["epoch"] for u in p.updates if u["time"] < crash]
        after = [u["epoch"] for u in p.updates if u["time"] >= crash]
        rising = bool(after) and all(b > a for a, b in zip(after, after[1:])) and (
            not before or after[0] > before[-1])
        ok &= rising and p.rollbacks >= 1 and bool(r.summary["bound_pass"])
        notes.append(f"{len(after)} post-crash updates")
    return CheckResult(8, "shared-store failover", ok,
                       f"{len(notes)} seeds; " + ", ".join(notes[:3]))


def _dominates(a, b) -> bool:
    """Lineage ``a`` is at least as preferred as ``b`` (more updates, then lower origin)."""
    if a[0] != b[0]:
        return a[0] > b[0]
    return (a[1], a[2]) <= (b[1], b[2])


def criterion_9() -> CheckResult:
    from .periods import VTimeline

    ok, worst_gap = True, 0.0
    for cfg in partition_scenarios():
        r = run_experiment(cfg)
        p, sim = r.protocol, r.sim
        topo = sim.topology
        log = [(t, k, tg) for t, k, tg, _ in sim.fault_log]
        split = next(t for t, k, _ in log if k == "partition")
        heal = next(t for t, k, _ in log if k == "heal")
        cut = {frozenset(e) for e in next(tg for _, k, tg in log if k == "partition")}
        from .simnet import components

        comps = components(topo, blocked=frozenset(cut))
        tl = VTimeline(p.timeline, topo.nodes)
        for comp in comps:
            grew = max(tl.at(n, heal) for n in comp) > max(tl.at(n, split) for n in comp)
            ok &= grew
        span = bounds.propagation_bound(cfg.t, diameter(topo))
        best = tl.lineage_at(topo.nodes[0], heal)
        for n in topo.nodes:
            lin = tl.lineage_at(n, heal)
            if _dominates(lin, best):
                best = lin
        for n in topo.nodes:
            ok &= _dominates(tl.lineage_at(n, heal + span), best)
            # time at which n first held a state at least as preferred as best
            ts = [t for t, k in zip(tl.t[n], tl.key[n]) if t >= heal and _dominates(k, best)]
            if ts:
                worst_gap = max(worst_gap, (ts[0] - heal) / span)
    return CheckResult(9, "partition resilience", ok,
                       f"both sides progressed; slowest post-heal catch-up {worst_gap:.2f} of (t+2)d'")


def _families():
    serial, dist = leading_term_pair()
    return {
        "uniqueness": uniqueness_scenarios(seeds=[0])[:3],
        "good-node": good_node_scenarios(n=1),
        "mawo": mawo_scenarios(n=1),
        "dmb-sync": dmb_scenarios([0]),
        "admb-path": admb_path_scenarios([0]),
        "leading-serial": [serial],
        "leading-dmb": [dist],
        "failover": failover_scenarios([0]),
        "partition": partition_scenarios([0]),
    }


def criterion_10() -> CheckResult:
    diffs = []
    count = 0
    with tempfile.TemporaryDirectory() as tmp:
        for fam, cfgs in _families().items():
            for k, cfg in enumerate(cfgs):
                a = os.path.join(tmp, f"{fam}{k}a")
                b = os.path.join(tmp, f"{fam}{k}b")
                run_experiment(cfg, a, trace=True)
                run_experiment(cfg, b, trace=True)
                names = sorted(os.listdir(a))
                _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
                diffs += [f"{fam}/{n}" for n in mismatch + errors]
                count += 1
    return CheckResult(10, "determinism", not diffs,
                       f"{count} scenarios re-run, {len(diffs)} differing files")


def criterion_11() -> CheckResult:
    rng = np.random.default_rng(11)
    notes, ok = [], True
    # finite differences
    quad = quadratic_model([0.3, -0.2, 0.5], 1.0, 2.0)
    logi = logistic_model([1.0, -2.0, 0.5], 1.0, 2.0, seed=1, n_oracle=20_000)
    worst_fd = 0.0
    for model in (quad, logi):
        for _ in range(20):
            w = project(rng.normal(size=3), 2.0)
            z = rng.normal(size=model.payload_dim)
            if model.kind == "logistic":
                z[-1] = 1.0 if rng.random() < 0.5 else -1.0
            g = loss_gradient(model, w, z)
            h = 1e-6
            fd = np.array([(loss_value(model, w + h * e, z) - loss_value(model, w - h * e, z))
                           / (2 * h) for e in np.eye(3)])
            worst_fd = max(worst_fd, float(np.max(np.abs(fd - g))))
    ok &= worst_fd <= 1e-6
    notes.append(f"fd err {worst_fd:.1e}")
    # projection idempotence
    idem = 0.0
    for _ in range(200):
        w = rng.normal(size=4) * 3
        p1 = project(w, 1.5)
        idem = max(idem, float(np.max(np.abs(project(p1, 1.5) - p1))))
    ok &= idem == 0.0
    notes.append(f"projection drift {idem:.1e}")
    # running average vs shadow list
    rule = make_rule(quad, 4)
    node = fresh_node(0, [], rule)
    shadow, avg_err = [], 0.0
    for _ in range(500):
        node.own.g[:] = rng.normal(size=3)
        node.own.c = 4
        rec = update_predictor(node)
        shadow.append(rec["w"])
        exact = np.array([math.fsum(col) / len(shadow) for col in np.asarray(shadow).T])
        avg_err = max(avg_err, float(np.max(np.abs(exact - node.state.w_bar))))
    ok &= avg_err <= 1e-12
    notes.append(f"running-average err {avg_err:.1e}")
    # closed form caps the exact sum
    grid_bad = 0
    for _ in range(50):
        b = int(rng.integers(1, 200))
        t = float(rng.uniform(0.1, 5))
        dp = int(rng.integers(1, 20))
        M = float(rng.uniform(0.5, 50))
        mu = bounds.good_period_examples_bound(b, t, dp, M)
        m = int(mu * 10 ** rng.uniform(0, 4)) + 1
        ab = bounds.admb_regret_bound(b, t, dp, M, float(rng.uniform(0.1, 10)),
                                      float(rng.uniform(0.1, 10)), float(rng.uniform(0, 10)), m)
        grid_bad += ab.exact > ab.closed_form
    ok &= grid_bad == 0
    notes.append(f"grid {50 - grid_bad}/50")
    return CheckResult(11, "numeric core", bool(ok), ", ".join(notes))


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


def run_criterion(number: int) -> CheckResult:
    t0 = time.perf_counter()
    res = CRITERIA[number]()
    res.seconds = time.perf_counter() - t0
    return res


def run_all(numbers=None):
    for n in numbers or sorted(CRITERIA):
        yield run_criterion(n)
