"""Compare the compiled and pure-Python kernels on the serial hot loop and on
a short ADMB simulation. Run: python benchmarks/bench_kernels.py"""
import os
import subprocess
import sys


SNIPPET = r"""
import time, numpy as np
from robustdmb import kernels, quadratic_model, make_rule, parse_config, run_experiment
from robustdmb.serial import run_serial
from robustdmb.learn import sample_payloads
m = quadratic_model([0.5, 0.3, 0.1, -0.2], 1.0, 1.0)
Z = sample_payloads(m, np.random.default_rng(0), 50_000)
t0 = time.perf_counter(); run_serial(m, Z, make_rule(m, 1), 1); a = time.perf_counter() - t0
cfg = parse_config({"protocol": "admb", "topology": "path(4)", "m": 10_000, "b": 16})
t0 = time.perf_counter(); r = run_experiment(cfg); b = time.perf_counter() - t0
print(kernels.BACKEND, a, b, repr(r.summary["regret"]))
"""


def run(pure: bool):
    env = dict(os.environ, ROBUSTDMB_PURE="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True,
                         text=True, check=True).stdout.split()
    return out[0], float(out[1]), float(out[2]), out[3]


def main():
    rows = [run(False), run(True)]
    print(f"{'backend':8s} {'serial 50k (s)':>15s} {'admb 10k (s)':>13s}  regret")
    for name, a, b, reg in rows:
        print(f"{name:8s} {a:15.3f} {b:13.3f}  {reg}")
    if rows[0][0] == rows[1][0]:
        print("compiled extension not available; both rows used the same backend")
    else:
        print(f"speed-up: serial x{rows[1][1] / rows[0][1]:.1f}, admb x{rows[1][2] / rows[0][2]:.1f}; "
              f"identical regret: {rows[0][3] == rows[1][3]}")


if __name__ == "__main__":
    main()
