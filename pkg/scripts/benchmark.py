"""Runtime versus time-domain error for full models and the ROM on the street fixture."""

from __future__ import annotations

import argparse
from pathlib import Path

from hydronet.simulation import write_benchmark_csv
from hydronet.workflow import ReductionConfig

from _common import scenarios, street_bench


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--resolutions", default="1,2,4,8")
    p.add_argument("--integrators", default="euler,trapezoidal")
    p.add_argument("--signal", choices=("in_sample", "out_of_sample"), default="out_of_sample")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", type=Path, default=Path("benchmark.csv"))
    args = p.parse_args()

    resolutions = [float(x) for x in args.resolutions.split(",")]
    integrators = args.integrators.split(",")
    wb = street_bench()
    sc = scenarios(wb)
    rom = wb.reduce(max(resolutions), sc["in_sample"], ReductionConfig()).rom
    rows, _ = wb.benchmark(sc[args.signal], resolutions, integrators, [("ROM", rom)], args.repeats)
    write_benchmark_csv(rows, args.out)
    for r in sorted(rows, key=lambda r: r.runtime_s):
        print(f"{r.model:>4} {r.resolution:>4} n={r.order:<6} {r.integrator:>12} "
              f"{r.runtime_s:8.3f} s  error {r.delta_t:.2e}")


if __name__ == "__main__":
    main()
