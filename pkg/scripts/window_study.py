"""Effect of the frequency-window width on reduced order and time-domain error."""

from __future__ import annotations

import argparse

from hydronet.simulation import time_error
from hydronet.workflow import ReductionConfig

from _common import scenarios, street_bench


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--resolution", type=float, default=4.0)
    p.add_argument("--factors", default="1,2,4,8")
    args = p.parse_args()

    wb = street_bench()
    sc = scenarios(wb)
    refs = {k: wb.reference(s, args.resolution, 4.0) for k, s in sc.items()}
    for factor in (float(x) for x in args.factors.split(",")):
        rom = wb.reduce(args.resolution, sc["in_sample"], ReductionConfig(window_factor=factor)).rom
        errs = {k: time_error(refs[k], wb.simulate(rom, s)).delta for k, s in sc.items()}
        print(f"window {factor:g} x top input frequency: r={rom.order:3d}, "
              f"in-sample {errs['in_sample']:.2e}, out-of-sample {errs['out_of_sample']:.2e}")


if __name__ == "__main__":
    main()
