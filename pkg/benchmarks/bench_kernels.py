"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat 5]

Times each kernel on representative sizes, checks that both backends agree,
and then times one full Fig. 1 jet propagation with each backend.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from qupid.kernels import backends


def _inputs(rng, d):
    e = np.sort(rng.normal(size=d))
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    b = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return e, a, b


def kernel_table(repeat):
    found = backends()
    if "compiled" not in found:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'dim':>5}" + "".join(f"{name + ' [ms]':>16}" for name in found) + f"{'speedup':>10}")
    for d in (2, 8, 32):
        e, a, b = _inputs(rng, d)
        g = found["python"].second_divided_differences(e, 0.05, 1e-7)
        h = rng.normal(size=(64, d, d)) * 0.05 - 0.05j * rng.normal(size=(64, d, d))
        psi = rng.normal(size=(64, d, 1)) + 0j
        cases = {
            "first_divided_differences": lambda m: m.first_divided_differences(e, 0.05, 1e-7),
            "second_divided_differences": lambda m: m.second_divided_differences(e, 0.05, 1e-7),
            "contract_second": lambda m: m.contract_second(a, b, g),
            "expm_action (batch 64)": lambda m: m.expm_action(h, psi),
        }
        for name, call in cases.items():
            results = {k: call(m) for k, m in found.items()}
            ref = results["python"]
            for k, r in results.items():
                assert np.allclose(r, ref, rtol=1e-10, atol=1e-12), f"{name} d={d}: {k} disagrees"
            times = {k: min(timeit.repeat(lambda m=m: call(m), number=3, repeat=repeat)) / 3 * 1e3
                     for k, m in found.items()}
            speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            print(f"{name:<28}{d:>5}" + "".join(f"{t:>16.4f}" for t in times.values()) + f"{speed:>10.1f}")


SCENARIO = """
import time
from qupid.kernels import BACKEND
from qupid.scenarios import fig1_scenario, run_qupid
sc = fig1_scenario()
run_qupid(sc)
t0 = time.perf_counter()
run_qupid(sc)
print(BACKEND, time.perf_counter() - t0)
"""


def scenario_table():
    print("\nFig. 1 jet propagation (600 steps, 2 parameters)")
    for pure in ("", "1"):
        env = dict(os.environ, QUPID_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", SCENARIO], env=env, capture_output=True, text=True, check=True)
        name, seconds = out.stdout.split()
        print(f"  {name:<10}{float(seconds) * 1e3:10.1f} ms")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    kernel_table(args.repeat)
    scenario_table()


if __name__ == "__main__":
    main()
