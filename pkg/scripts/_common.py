"""Shared setup for the experiment scripts: the street fixture and its scenarios."""

from __future__ import annotations

import numpy as np

from hydronet.generators import default_demands, street_network
from hydronet.simulation import DemandProfile, Scenario, make_signal
from hydronet.workflow import Workbench


def street_bench(seed: int = 7) -> Workbench:
    top = street_network(seed=seed)
    return Workbench(top, default_demands(top))


def scenarios(wb: Workbench, dt: float = 20.0, integrator: str = "trapezoidal"):
    demands = DemandProfile(np.asarray(wb.demands))
    return {
        "in_sample": Scenario(make_signal("in_sample"), demands, 14000.0, dt, integrator),
        "out_of_sample": Scenario(make_signal("out_of_sample"), demands, 28000.0, dt, integrator),
    }
