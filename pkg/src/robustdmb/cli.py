"""Command-line entry point: ``robustdmb run | sweep | check | describe``."""
from __future__ import annotations

import itertools
import math
import sys

import click
import numpy as np

from . import bounds
from .config import ScenarioConfig, dump_config, parse_config
from .learn import ConfigError


def _load(path, seed) -> ScenarioConfig:
    with open(path) as fh:
        text = fh.read()
    cfg = parse_config(text)
    if seed is not None:
        cfg = cfg.with_(seed=seed)
    return cfg


def _parse_range(text: str) -> list:
    """``a,b,c`` or ``start:stop[:step]`` (stop inclusive)."""
    def num(s):
        v = float(s)
        return int(v) if v.is_integer() and "." not in s else v
    if ":" in text:
        parts = [num(p) for p in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        vals = list(np.arange(start, stop + step / 2, step))
        return [int(v) if all(isinstance(p, int) for p in parts) else float(v) for v in vals]
    return [num(p) for p in text.split(",")]


def _guard(fn):
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except ConfigError as exc:
            raise click.ClickException(str(exc)) from exc
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
def main():
    """Simulate distributed mini-batch learners and check their regret bounds."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", default="runs/latest", show_default=True)
@click.option("--trace", is_flag=True, help="Write trace.log and record the trace hash.")
@_guard
def run(config_path, seed, out_dir, trace):
    """Run one scenario and write its CSV files."""
    from .harness import run_experiment

    cfg = _load(config_path, seed)
    res = run_experiment(cfg, out_dir, trace=trace)
    s = res.summary
    click.echo(f"{cfg.protocol}: regret {s['regret']:.4f} over {s['serviced']} examples")
    if s["bound_value"] != "":
        click.echo(f"  {s['bound_name']} bound {s['bound_value']:.4f} "
                   f"({'ok' if s['bound_pass'] else 'VIOLATED'})")
    click.echo(f"  outputs in {out_dir}")
    sys.exit(0 if res.passed else 1)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--sweep", "sweeps", multiple=True, required=True,
              help="KEY=RANGE, e.g. b=8,16,32 or seed=0:9. Repeat for a grid.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", default="runs/sweep", show_default=True)
@click.option("--trace", is_flag=True)
@click.option("--workers", type=int, default=None, help="Process pool size.")
@_guard
def sweep(config_path, sweeps, seed, out_dir, trace, workers):
    """Run a grid of scenarios in parallel."""
    from .harness import sweep as run_sweep

    base = _load(config_path, seed)
    axes = []
    for item in sweeps:
        key, _, rng = item.partition("=")
        if not rng:
            raise click.BadParameter(f"expected KEY=RANGE, got {item!r}")
        axes.append((key.strip(), _parse_range(rng)))
    configs = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        changes = dict(zip((k for k, _ in axes), combo))
        if "b" in changes:
            changes["rho"] = None
        configs.append(parse_config({**_as_mapping(base), **changes}))
    summaries = run_sweep(configs, out_dir, workers=workers, trace=trace)
    failed = sum(not s["all_pass"] for s in summaries)
    click.echo(f"{len(summaries)} runs, {failed} with a failed bound check; table in {out_dir}")
    sys.exit(1 if failed else 0)


def _as_mapping(cfg):
    import yaml

    return yaml.safe_load(dump_config(cfg))


@main.command()
@click.option("--only", multiple=True, type=int, help="Criterion numbers to run.")
def check(only):
    """Run the acceptance suite and print one line per criterion."""
    from .acceptance import run_all

    failed = 0
    for res in run_all(list(only) or None):
        click.echo(res.line())
        failed += not res.passed
    sys.exit(1 if failed else 0)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--mu", type=int, default=None, help="Dropped inputs per batch for the dmb bound.")
@_guard
def describe(config_path, seed, mu):
    """Print the bounds that apply to a config without simulating."""
    from .harness import build_model

    cfg = _load(config_path, seed)
    model = build_model(cfg)
    b = cfg.batch
    D, L, s2 = model.diameter, model.lipschitz, model.variance
    link = cfg.link()
    click.echo(dump_config(cfg).rstrip())
    click.echo("---")
    click.echo(f"b = {b}, D = {D}, L = {L}, sigma^2 = {s2:.6g}")
    click.echo(f"serial psi(sigma^2, m)     = {bounds.serial_psi_bound(D, L, s2, cfg.m):.6g}")
    mub = bounds.mawo_mu_bound(cfg.M, cfg.T, link.max_latency(),
                               link.update_time + link.handler_time)
    click.echo(f"master-worker mu bound     = {mub:.6g}")
    use_mu = math.ceil(mub) if mu is None else mu
    dmb = bounds.dmb_regret_bound(b, use_mu, D, L, s2, cfg.m)
    click.echo(f"dmb bound (mu = {use_mu})".ljust(27) + f"= {dmb:.6g}")
    if cfg.protocol == "admb":
        topo = cfg.build_topology()
        from .simnet import diameter

        dp = diameter(topo, cfg.good_set or topo.nodes)
        ab = bounds.admb_regret_bound(b, cfg.t, dp, cfg.M, D, L, s2, cfg.m)
        click.echo(f"d' = {dp}, propagation (t+2)d' = {bounds.propagation_bound(cfg.t, dp):.6g}")
        click.echo(f"good period examples       = {ab.period:.6g}")
        click.echo(f"admb bound exact sum       = {ab.exact:.6g}")
        click.echo(f"admb bound closed form     = {ab.closed_form:.6g}")


if __name__ == "__main__":
    main()
