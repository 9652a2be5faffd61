#!/usr/bin/env python3
"""Compiled versus pure-numpy kernels on one ion trajectory and a phase scan.

Each path runs in its own interpreter because the switch is read at import:

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, time
import ioncool._jit as jit
from ioncool import dynamics
from ioncool.design import PhysicalConstraints, solve_boundaries
from ioncool.trajectory import AnsatzParams, Protocol

D = solve_boundaries(PhysicalConstraints.from_ratios(0.5118819640617263, 5.0, 1.1, 39.96))
p = Protocol(D, AnsatzParams(5.5, 4000.0, 16.5))
cfg = dynamics.SimConfig(E_in=(10 * D.quantum, 0.0))

t0 = time.perf_counter()
dynamics.simulate(p, cfg)  # includes compilation or cache load
dynamics.phase_averaged_energy(p, 0.0, cfg.E_in, 5, cfg)
first = time.perf_counter() - t0

def best(fn, n):
    out = []
    for _ in range(n):
        t0 = time.perf_counter(); fn(); out.append(time.perf_counter() - t0)
    return min(out)

sim = best(lambda: dynamics.simulate(p, cfg), REPEAT)
scan = best(lambda: dynamics.phase_averaged_energy(p, 0.0, cfg.E_in, 5, cfg), max(1, REPEAT // 3))
out = dynamics.simulate(p, cfg)
print(json.dumps({"numba": jit.NUMBA_ENABLED, "first_call": first, "simulate": sim, "phase_scan_5": scan,
                  "E_ex_1": out.E_ex_1, "steps": out.n_steps}))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    if disable:
        env["IONCOOL_DISABLE_NUMBA"] = "1"
    else:
        env.pop("IONCOOL_DISABLE_NUMBA", None)
    code = WORKLOAD.replace("REPEAT", str(repeat))
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast = run(False, args.repeat)
    slow = run(True, max(1, args.repeat // 5))
    print(f"{'path':8s} {'first':>9s} {'simulate':>10s} {'scan(5)':>10s} {'steps':>6s}")
    for name, r in (("numba", fast), ("numpy", slow)):
        print(f"{name:8s} {r['first_call']:9.3f} {r['simulate']:10.4f} {r['phase_scan_5']:10.4f} {r['steps']:6d}")
    print(f"speed-up simulate x{slow['simulate'] / fast['simulate']:.0f}, "
          f"phase scan x{slow['phase_scan_5'] / fast['phase_scan_5']:.0f}")
    rel = abs(fast["E_ex_1"] - slow["E_ex_1"]) / abs(fast["E_ex_1"])
    print(f"E_ex_1 agreement between paths: {rel:.1e} relative")


if __name__ == "__main__":
    main()
