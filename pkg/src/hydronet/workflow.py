"""End-to-end recipes shared by the command line, the scripts and the tests."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import mor
from .network import CellGrid, FlowBasis, NetworkTopology, build_flow_basis
from .simulation import (BenchmarkRow, Scenario, TrajectoryResult, benchmark, build_grid,
                         collect_snapshots, simulate, training_signal)
from .transport import FullOrderModel

__all__ = ["ReductionConfig", "Workbench", "ReductionOutcome"]


@dataclass(frozen=True)
class ReductionConfig:
    """Knobs of the training run and the greedy basis construction.

    ``window_high`` is in rad/s; ``None`` means ``window_factor`` times the top
    input frequency, leaving room for harmonics created by the flow modulation.
    ``n_init`` limits how many candidates are tried as greedy seeds.
    """

    delta_bar: float = 5e-3
    Delta_bar: float = 1e-2
    svd_decay: float = 8.0
    irka_iterations: int = 5
    irka_order: int = 6
    window_high: float | None = None
    window_factor: float = 4.0
    window_nodes: int = 200
    snapshots: int = 32
    n_init: int | None = None
    calibrate: bool = False


@dataclass
class ReductionOutcome:
    greedy: mor.GreedyResult
    training: TrajectoryResult
    snapshots: list
    window: mor.FrequencyWindow

    @property
    def rom(self) -> mor.ReducedModel:
        return self.greedy.rom


@dataclass
class Workbench:
    """A network with its hydraulics basis, demands and lazily built full models."""

    topology: NetworkTopology
    demands: np.ndarray
    basis: FlowBasis = None
    _models: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.basis is None:
            self.basis = build_flow_basis(self.topology)
        self.demands = np.asarray(self.demands, dtype=float)

    def grid(self, resolution: float, n_min: int = 1) -> CellGrid:
        return build_grid(self.topology, self.basis, self.demands, resolution, n_min)

    def model(self, resolution: float, n_min: int = 1) -> FullOrderModel:
        key = (float(resolution), int(n_min))
        if key not in self._models:
            self._models[key] = FullOrderModel(self.topology, self.grid(resolution, n_min), self.basis)
        return self._models[key]

    def model_for_counts(self, counts) -> FullOrderModel:
        grid = CellGrid(tuple(int(c) for c in counts), tuple(self.topology.lengths))
        return FullOrderModel(self.topology, grid, self.basis)

    def simulate(self, model, scenario: Scenario) -> TrajectoryResult:
        return simulate(model, scenario, self.basis)

    def training_scenario(self, scenario: Scenario) -> Scenario:
        """Worst-case training input spanning the admissible range of ``scenario``."""
        b = scenario.signal.bounds
        sig = training_signal(b.u_l, b.u_h, b.omega_hat, u_d=b.u_d)
        horizon = sig.period
        n = max(1, int(round(horizon / scenario.dt)))
        return replace(scenario, signal=sig, horizon=n * scenario.dt, initial=None)

    def reduce(self, resolution: float, scenario: Scenario, cfg: ReductionConfig = ReductionConfig(),
               training: Scenario | None = None) -> ReductionOutcome:
        """Training run, flow snapshots, then the frequency greedy."""
        model = self.model(resolution)
        train_sc = training if training is not None else self.training_scenario(scenario)
        traj = simulate(model, train_sc, self.basis)
        D = collect_snapshots(traj, cfg.snapshots)
        high = cfg.window_high
        if high is None:
            high = cfg.window_factor * train_sc.signal.max_frequency
        window = mor.FrequencyWindow(0.0, high, cfg.window_nodes)
        if cfg.calibrate:
            form, q = model.form_for(D[0]), D[0]
            window = mor.calibrate_window(window, lambda w: mor.eval_transfer(form, q, 1j * w))
        irka = mor.IrkaConfig(cfg.irka_order, cfg.irka_iterations, cfg.delta_bar)
        result = mor.frequency_greedy(model, D, cfg.delta_bar, cfg.Delta_bar, cfg.svd_decay, irka,
                                      window, cfg.n_init)
        result.rom.metadata.update({
            "resolution": float(resolution),
            "cell_counts": list(model.grid.counts),
            "network_sha256": mor.network_hash(self.topology),
        })
        return ReductionOutcome(result, traj, D, window)

    def attach(self, rom: mor.ReducedModel) -> mor.ReducedModel:
        """Reconnect a loaded ROM to its full model so unseen flow patterns can be projected."""
        expected = rom.metadata.get("network_sha256")
        if expected is not None and expected != mor.network_hash(self.topology):
            raise mor.ReductionError("ROM was built for a different network")
        counts = rom.metadata.get("cell_counts")
        if counts is not None:
            rom.source = self.model_for_counts(counts).coenergy
        return rom

    def reference(self, scenario: Scenario, finest: float, factor: float = 4.0,
                  integrator: str = "euler") -> TrajectoryResult:
        """Finest full model at ``factor`` times the finest benchmarked resolution."""
        return simulate(self.model(finest * factor), replace(scenario, integrator=integrator),
                        self.basis)

    def benchmark(self, scenario: Scenario, resolutions, integrators, roms=(), repeats: int = 3,
                  reference: TrajectoryResult | None = None, factor: float = 4.0
                  ) -> tuple[list[BenchmarkRow], TrajectoryResult]:
        resolutions = sorted(float(r) for r in resolutions)
        if reference is None:
            reference = self.reference(scenario, resolutions[-1], factor)
        models = [("FOM", _fmt(r), self.model(r)) for r in resolutions]
        for label, rom in roms:
            models.append((label, _fmt(rom.metadata.get("resolution", "-")), rom))
        rows = benchmark(models, scenario, integrators, reference, self.basis, repeats)
        return rows, reference


def _fmt(x) -> str:
    try:
        x = float(x)
    except (TypeError, ValueError):
        return str(x)
    return str(int(x)) if x.is_integer() else repr(x)
