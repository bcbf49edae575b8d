"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--dtype float32|float64]

Prints kernel and per-stage forward timings at paper-default sizes for
every importable backend, then checks the budget of 2 s per forward pass.
"""
import argparse

from siamtrack.bench import run_bench
from siamtrack.config import Config

BUDGET_MS = 2000.0


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--dtype", default="float32")
    args = ap.parse_args()
    report = run_bench(Config(dtype=args.dtype), repeats=args.repeats)
    print(report.to_text())
    for name in report.stages:
        ms = report.forward_ms(name)
        print(f"{name}: forward {ms:.0f} ms ({'within' if ms < BUDGET_MS else 'OVER'} the {BUDGET_MS:.0f} ms budget)")


if __name__ == "__main__":
    main()
