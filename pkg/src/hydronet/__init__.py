"""District-heating network transport with stable reduced surrogates."""

__version__ = "0.1.0"

from .hydraulics import NewtonConfig, solve_flows
from .mor import (FrequencyWindow, ReducedModel, frequency_greedy, load_rom, project,
                  reduce_decomposed, save_rom, weighted_h2_norm, weighted_irka)
from .network import (CellGrid, NetworkTopology, build_flow_basis, decompose, distribute_cells,
                      load_network, parse_network, save_network)
from .simulation import Scenario, make_signal, simulate, time_error, training_signal
from .transport import FullOrderModel, assemble_upwind, build_energy_matrix, check_lyapunov
from .workflow import ReductionConfig, Workbench
