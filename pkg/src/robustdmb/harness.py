"""Run one scenario end to end and emit CSV metrics with embedded bound checks."""
from __future__ import annotations

import csv
import functools
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bounds, kernels
from .admb import Admb
from .config import ScenarioConfig
from .dmb_sync import DmbSync
from .learn import LossModel, logistic_model, make_rule, quadratic_model, sample_payloads
from .mawo import MaWo, MaWoDB
from .periods import check_propagation, check_update_cadence, good_intervals, track_good_periods
from .serial import run_serial
from .simnet import SimulationError, Simulator, arrival_stream, diameter, substream

SCHEMA = "robustdmb-v1"

SUMMARY_FIELDS = (
    "protocol", "seed", "backend", "m", "serviced", "lost", "b", "D", "L", "sigma2",
    "regret", "mu_measured", "mu_bound", "mu_pass", "bound_name", "bound_regret",
    "bound_value", "bound_pass", "admb_exact", "good_examples", "periods",
    "propagation_windows", "propagation_violations",
    "cadence_episodes", "cadence_worst", "cadence_bound",
    "cadence_violations", "reuse_violations", "rows_complete", "partitions", "trace_hash",
    "all_pass",
)
REGRET_FIELDS = ("seq", "node", "time", "epoch", "loss_pred", "loss_comp", "excess", "period")
UPDATE_FIELDS = ("update", "epoch", "node", "time", "count", "dropped")
PERIOD_FIELDS = ("period", "start_time", "end_time", "examples", "regret")


@functools.lru_cache(maxsize=8)
def _logistic(theta: tuple, feature_std: float, radius: float, seed: int, n: int) -> LossModel:
    return logistic_model(theta, feature_std, radius, seed=seed, n_oracle=n)


def build_model(cfg: ScenarioConfig) -> LossModel:
    loss = cfg.loss
    if loss["kind"] == "quadratic":
        return quadratic_model(loss["mean"], loss["std"], loss["radius"])
    seed = int(substream(cfg.seed, "oracle").integers(2**62))
    return _logistic(tuple(float(x) for x in loss["theta"]), float(loss["feature_std"]),
                     loss["radius"], seed, int(loss["oracle_samples"]))


@dataclass
class RunResult:
    config: ScenarioConfig
    summary: dict
    ledger: object  # RegretLedger in seq order
    updates: list
    periods: list = field(default_factory=list)
    in_period: np.ndarray | None = None
    protocol: object = None
    sim: object = None

    @property
    def passed(self) -> bool:
        return bool(self.summary["all_pass"])

    def regret_at(self, checkpoint: int) -> float:
        """Regret over examples with sequence id below ``checkpoint``."""
        seq = np.asarray(self.ledger.seq)
        return math.fsum(self.ledger.excess()[seq < checkpoint])


def _protocol(cfg, model, payloads, rule, b):
    p = cfg.protocol
    if p == "dmb-sync":
        return DmbSync(model, payloads, rule, b, report_period=cfg.t, track=cfg.track)
    if p == "mawo":
        return MaWo(model, payloads, rule, b, send_period=cfg.T, track=cfg.track)
    if p == "mawo-db":
        return MaWoDB(model, payloads, rule, b, send_period=cfg.T, poll_period=cfg.poll_period,
                      lease=cfg.lease, track=cfg.track)
    return Admb(model, payloads, rule, b, t=cfg.t, tiebreak=cfg.tiebreak, track=cfg.track)


def _weights(cfg, topo):
    hub = cfg.protocol in ("mawo", "mawo-db")
    w = {n: 1.0 for n in topo.nodes if not (hub and n == 0)}
    if cfg.rates:
        w = {n: cfg.rates.get(n, 0.0) for n in w}
        w = {n: r for n, r in w.items() if r > 0}
    return w


def run_experiment(cfg: ScenarioConfig, out_dir=None, *, trace: bool = False) -> RunResult:
    """Simulate ``cfg`` and compare the outcome against the relevant bounds.

    Writes regret.csv, updates.csv, periods.csv, summary.csv (and trace.log
    when ``trace``) into ``out_dir`` if given.
    """
    model = build_model(cfg)
    b = cfg.batch
    payloads = sample_payloads(model, substream(cfg.seed, "payloads"), cfg.m)
    rule_seed = int(substream(cfg.seed, "rule").integers(2**62))
    rule = make_rule(model, b, cfg.rule["kind"], cfg.rule["noise"], rule_seed)
    D, L, s2 = model.diameter, model.lipschitz, model.variance
    summary = {k: "" for k in SUMMARY_FIELDS}
    summary.update(protocol=cfg.protocol, seed=cfg.seed, backend=kernels.BACKEND, m=cfg.m, b=b,
                   D=D, L=L, sigma2=s2)
    checks = []

    if cfg.protocol == "serial":
        ledger, _ = run_serial(model, payloads, rule, b)
        regret = ledger.cumulative()
        bound = bounds.dmb_regret_bound(b, 0, D, L, s2, cfg.m)
        summary.update(serviced=len(ledger), lost=0, regret=regret, bound_name="serial",
                       bound_regret=regret, bound_value=bound, rows_complete=True)
        checks.append(regret <= bound)
        updates = [{"epoch": j, "count": b, "node": 0, "time": float(min(cfg.m, (j + 1) * b) - 1)}
                   for j in range(cfg.m // b)]
        result = RunResult(cfg, summary, ledger, updates)
        summary["bound_pass"] = checks[-1]
        summary["all_pass"] = all(checks)
        if out_dir is not None:
            write_outputs(result, out_dir)
        return result

    topo = cfg.build_topology()
    link = cfg.link()
    times, nodes = arrival_stream(_weights(cfg, topo), cfg.M, cfg.m,
                                  substream(cfg.seed, "arrivals"), cfg.jitter)
    if len(times) < cfg.m:
        raise SimulationError("arrival rate M must be positive")
    horizon = float(times[-1])
    faults = cfg.fault_schedule(horizon)
    sim = Simulator(topo, link, cfg.seed, trace=trace, keep_trace_lines=trace)
    proto = _protocol(cfg, model, payloads, rule, b)
    sim.attach(proto)
    proto.start()
    sim.schedule_arrivals(times, nodes)
    sim.schedule_faults(faults)
    try:
        sim.run_until(horizon)
        while sim.pending_arrivals():
            sim.run_until(sim.now + 1.0)
    except Exception as exc:
        if sim.trace is not None and sim.trace.lines:
            tail = "\n".join(sim.trace.lines[-20:])
            raise SimulationError(f"{exc}\ntrace tail:\n{tail}") from exc
        raise
    end = sim.now

    ledger = proto.ledger.in_seq_order()
    regret = ledger.cumulative()
    lost = len(sim.lost_arrivals)
    complete = len(ledger) + lost == cfg.m
    checks.append(complete)
    summary.update(serviced=len(ledger), lost=lost, regret=regret, rows_complete=complete)
    partitions = _fault_spans(sim.fault_log)
    summary["partitions"] = partitions

    result = RunResult(cfg, summary, ledger, [dict(u) for u in proto.updates],
                       protocol=proto, sim=sim)
    for u in result.updates:
        u["dropped"] = proto.dropped.get(u["epoch"], 0) if cfg.protocol != "admb" else ""

    if cfg.protocol in ("dmb-sync", "mawo", "mawo-db"):
        dropped = dict(proto.dropped)
        if cfg.protocol == "mawo-db" and proto.master_crash_time is not None:
            after = min((u["epoch"] for u in proto.updates
                         if u["time"] >= proto.master_crash_time), default=None)
            dropped = {e: c for e, c in dropped.items() if after is not None and e >= after}
        mu = max(dropped.values(), default=0)
        bound = bounds.dmb_regret_bound(b, mu, D, L, s2, cfg.m)
        summary.update(mu_measured=mu, bound_name="dmb", bound_regret=regret, bound_value=bound,
                       bound_pass=regret <= bound)
        checks.append(regret <= bound)
        if cfg.protocol == "mawo":
            tau_c = link.max_latency()
            tau_u = link.update_time + link.handler_time
            mub = bounds.mawo_mu_bound(cfg.M, cfg.T, tau_c, tau_u)
            worst = max(proto.dropped.values(), default=0)
            summary.update(mu_bound=mub, mu_pass=worst <= mub)
            checks.append(worst <= mub)
        if cfg.track and cfg.protocol != "dmb-sync":
            reuse = _reuse(proto.applied)
            summary["reuse_violations"] = reuse
            checks.append(reuse == 0)
    else:
        _admb_checks(cfg, proto, sim, ledger, result, summary, checks, end, b, D, L, s2)

    if sim.trace is not None:
        summary["trace_hash"] = sim.trace.hexdigest()
    summary["all_pass"] = all(bool(c) for c in checks)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _admb_checks(cfg, proto, sim, ledger, result, summary, checks, end, b, D, L, s2):
    topo = sim.topology
    good = cfg.good_set or topo.nodes
    d_prime = diameter(topo, good)
    intervals = good_intervals(topo, good, sim.link, sim.fault_log, end)
    periods, mask, which = track_good_periods(ledger.time, ledger.node, good, intervals, cfg.t,
                                              d_prime, b, cfg.M)
    result.in_period = which
    exc = ledger.excess()
    result.periods = [(p, s, e, len(rows), math.fsum(exc[rows]))
                      for p, (s, e, rows) in enumerate(periods)]
    m_good = int(mask.sum())
    good_regret = math.fsum(exc[mask])
    summary.update(good_examples=m_good, periods=len(periods), bound_name="admb",
                   bound_regret=good_regret)
    if m_good:
        ab = bounds.admb_regret_bound(b, cfg.t, d_prime, cfg.M, D, L, s2, m_good)
        summary.update(mu_bound=ab.period, admb_exact=ab.exact, bound_value=ab.closed_form,
                       bound_pass=good_regret <= ab.closed_form)
        checks.append(good_regret <= ab.closed_form)
    windows, bad = check_propagation(proto.timeline, good, intervals, cfg.t, d_prime, end)
    summary.update(propagation_windows=windows, propagation_violations=len(bad))
    checks.append(not bad)
    cap = bounds.good_period_examples_bound(b, cfg.t, d_prime, cfg.M)
    eps, bad2, worst = check_update_cadence(proto.timeline, good, intervals, ledger.time,
                                            ledger.node, cap, end)
    summary.update(cadence_episodes=eps, cadence_worst=worst, cadence_bound=cap,
                   cadence_violations=len(bad2))
    checks.append(not bad2)
    if cfg.track:
        reuse = len(proto.violations) + proto.ancestry_reuse()
        summary["reuse_violations"] = reuse
        checks.append(reuse == 0)


def _reuse(applied) -> int:
    seen, dup = set(), 0
    for ids in applied:
        for s in ids:
            if s in seen:
                dup += 1
            seen.add(s)
    return dup


def _fault_spans(fault_log) -> str:
    """Partition intervals as ``start-end`` pairs separated by ``;``."""
    spans, open_at = [], None
    for time, kind, _, _ in fault_log:
        if kind == "partition" and open_at is None:
            open_at = time
        elif kind == "heal" and open_at is not None:
            spans.append(f"{open_at!r}-{time!r}")
            open_at = None
    if open_at is not None:
        spans.append(f"{open_at!r}-end")
    return ";".join(spans)


# ------------------------------------------------------------------ output

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_outputs(result: RunResult, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    led = result.ledger
    exc = led.excess()
    which = result.in_period
    _write_csv(os.path.join(out_dir, "regret.csv"), REGRET_FIELDS, (
        (led.seq[i], led.node[i], led.time[i], led.epoch[i], led.loss_pred[i], led.loss_comp[i],
         exc[i], "" if which is None else int(which[i]))
        for i in range(len(led))))
    _write_csv(os.path.join(out_dir, "updates.csv"), UPDATE_FIELDS, (
        (k, u["epoch"], u["node"], u["time"], "" if u["count"] is None else u["count"],
         u.get("dropped", ""))
        for k, u in enumerate(result.updates)))
    _write_csv(os.path.join(out_dir, "periods.csv"), PERIOD_FIELDS, result.periods)
    _write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_FIELDS,
               [[result.summary[k] for k in SUMMARY_FIELDS]])
    if result.sim is not None and result.sim.trace is not None:
        result.sim.trace.write(os.path.join(out_dir, "trace.log"))


def read_summary(path) -> dict:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("".join(lines))))
    return rows[0]


# ------------------------------------------------------------------ comparisons and sweeps

def compare_protocols(serial_cfg: ScenarioConfig, dist_cfg: ScenarioConfig, seeds,
                      checkpoints) -> list:
    """Paired runs on identical streams; one row per (seed, checkpoint).

    Each row is ``(seed, checkpoint, serial_regret, dist_regret, ratio)``
    with ratio = distributed / serial.
    """
    rows = []
    for seed in seeds:
        s = run_experiment(serial_cfg.with_(seed=seed))
        d = run_experiment(dist_cfg.with_(seed=seed))
        for cp in checkpoints:
            rs, rd = s.regret_at(cp), d.regret_at(cp)
            rows.append((seed, cp, rs, rd, rd / rs if rs else math.inf))
    return rows


def _sweep_one(args):
    text, out_dir, trace = args
    from .config import parse_config

    res = run_experiment(parse_config(text), out_dir, trace=trace)
    return res.summary


def sweep(configs, out_root, *, workers: int | None = None, trace: bool = False) -> list:
    """Run many scenarios in parallel, one output directory each.

    Returns the summaries in input order; the merged table is written to
    ``out_root/summary.csv``.
    """
    from .config import dump_config

    jobs = [(dump_config(c), os.path.join(out_root, f"run{k:04d}"), trace)
            for k, c in enumerate(configs)]
    if workers == 1 or len(jobs) <= 1:
        summaries = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_sweep_one, jobs))
    os.makedirs(out_root, exist_ok=True)
    _write_csv(os.path.join(out_root, "summary.csv"), ("run",) + SUMMARY_FIELDS,
               [[k] + [s[f] for f in SUMMARY_FIELDS] for k, s in enumerate(summaries)])
    return summaries
