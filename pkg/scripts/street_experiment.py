"""Reduce the street fixture and compare ROM outputs with the finest full model.

Writes one CSV per signal with the reference and reduced output of a few
consumers, and prints the maximum relative l2 error over all 32 outputs.
"""

from __future__ import annotations

import argparse
import csv
import time
from dataclasses import replace
from pathlib import Path

from hydronet.mor import save_rom
from hydronet.simulation import time_error
from hydronet.workflow import ReductionConfig

from _common import scenarios, street_bench


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--resolution", type=float, default=8.0)
    p.add_argument("--reference-factor", type=float, default=4.0)
    p.add_argument("--Delta-bar", dest="Delta_bar", type=float, default=1e-2)
    p.add_argument("--window-factor", type=float, default=4.0)
    p.add_argument("--out", type=Path, default=Path("street_out"))
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    wb = street_bench()
    sc = scenarios(wb)
    cfg = ReductionConfig(Delta_bar=args.Delta_bar, window_factor=args.window_factor)
    start = time.perf_counter()
    outcome = wb.reduce(args.resolution, sc["in_sample"], cfg)
    rom = outcome.rom
    print(f"full order {wb.model(args.resolution).order}, reduced order {rom.order}, "
          f"max error over D {outcome.greedy.delta_max:.2e}, {time.perf_counter() - start:.1f} s")
    save_rom(rom, args.out / "rom.npz")

    ids = [c.id for c in wb.topology.consumers]
    shown = [0, len(ids) // 2, len(ids) - 1]
    for name, scenario in sc.items():
        ref = wb.reference(scenario, args.resolution, args.reference_factor)
        red = wb.simulate(rom, scenario)
        fom = wb.simulate(wb.model(args.resolution), replace(scenario, integrator="euler"))
        print(f"{name:>14}: ROM error {time_error(ref, red).delta:.2e} "
              f"({red.runtime:.2f} s), FOM c_r={args.resolution:g} error "
              f"{time_error(ref, fom).delta:.2e} ({fom.runtime:.2f} s)")
        with open(args.out / f"outputs_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"{ids[h]}_{kind}" for h in shown for kind in ("ref", "rom")])
            for k, t in enumerate(ref.times):
                w.writerow([t] + [f"{v:.8g}" for h in shown
                                  for v in (ref.outputs[k, h], red.outputs[k, h])])


if __name__ == "__main__":
    main()
