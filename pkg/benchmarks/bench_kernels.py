"""Compiled build against the pure-Python fallback, plus batch throughput.

    python benchmarks/bench_kernels.py [--runs 1000] [--parallelism 8]
"""

import argparse
import os
import subprocess
import sys
import timeit

from resusim import _purecore, engine, kernels
from resusim.scenario import default_scenario

try:
    from resusim import _fastcore
except ImportError:
    _fastcore = None

PATIENT_ARGS = (0.7, 60.0, False, True, 600, 0.002, 0.0005, 0.01, 2.0, 40.0, 10.0)


def bench(label, fn, number):
    best = min(timeit.repeat(fn, number=number, repeat=5)) / number
    print(f"  {label:<10} {best * 1e6:10.2f} us/call")
    return best


def kernel_section():
    backends = [("python", _purecore)] + ([("cython", _fastcore)] if _fastcore else [])
    if _fastcore is None:
        print("compiled core not built; only the fallback is timed")
    cases = [
        ("advance_patient, 600 steps", lambda m: m.advance_patient(*PATIENT_ARGS), 2000),
        ("advance_patient, 1 step", lambda m: m.advance_patient(*PATIENT_ARGS[:4], 1, *PATIENT_ARGS[5:]), 20000),
        ("mw_null_counts(8, 8)", lambda m: m.mw_null_counts(8, 8), 200),
        ("mw_null_counts(20, 20)", lambda m: m.mw_null_counts(20, 20), 20),
    ]
    for title, call, number in cases:
        print(title)
        times = {name: bench(name, lambda m=mod: call(m), number) for name, mod in backends}
        if len(times) == 2:
            same = call(_purecore) == call(_fastcore)
            print(f"  speed-up   {times['python'] / times['cython']:10.1f}x   results equal: {same}")


ENGINE_TIMER = """
import time, resusim
from resusim import engine
from resusim.scenario import default_scenario
sc = default_scenario()
t = time.perf_counter()
engine.run_many(sc, range({runs}))
print(time.perf_counter() - t, any(resusim.compiled().values()))
"""


def engine_section(runs):
    """Serial runs in a fresh interpreter, once per build."""
    times = {}
    for label, pure in (("python", True), ("compiled", False)):
        env = {k: v for k, v in os.environ.items() if k != "RESUSIM_PURE"}
        if pure:
            env["RESUSIM_PURE"] = "1"
        out = subprocess.run([sys.executable, "-c", ENGINE_TIMER.format(runs=runs)],
                             capture_output=True, text=True, env=env, check=True).stdout.split()
        times[label] = float(out[0])
        print(f"  {label:<10} {times[label] / runs * 1e3:8.2f} ms/run (extensions loaded: {out[1]})")
    print(f"  speed-up   {times['python'] / times['compiled']:8.1f}x")


def throughput_section(runs, parallelism):
    import time

    sc = default_scenario()
    for p in sorted({1, parallelism}):
        t0 = time.perf_counter()
        summary = engine.monte_carlo(sc, runs, parallelism=p)
        dt = time.perf_counter() - t0
        print(f"  {runs} runs, parallelism {p}: {dt:6.2f} s ({dt / runs * 1e3:.2f} ms/run, "
              f"ROSC {summary['rosc_rate']:.3f})")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=1000)
    ap.add_argument("--parallelism", type=int, default=8)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}; cpus: {os.cpu_count()}")
    kernel_section()
    print("whole simulation, serial, 300 runs")
    engine_section(300)
    print("full simulation throughput")
    throughput_section(args.runs, args.parallelism)


if __name__ == "__main__":
    main()
