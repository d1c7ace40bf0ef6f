"""Inputs, time integration of the coupled network DAE, errors and benchmarks.

Each output step is split semi-explicitly: read the consumer outputs, solve
the hydraulics for the flows, then advance the linear transport with the
flows frozen.  The same driver runs full and reduced models.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spsla
from scipy.integrate import solve_ivp

from .hydraulics import HydraulicsError, NewtonConfig, solve_flows
from .network import CellGrid, FlowBasis, NetworkTopology, distribute_cells

__all__ = [
    "SimulationError",
    "SignalError",
    "SignalBounds",
    "InputSignal",
    "DemandProfile",
    "Scenario",
    "TrajectoryResult",
    "ErrorReport",
    "BenchmarkRow",
    "make_signal",
    "training_signal",
    "load_scenario",
    "scenario_from_dict",
    "steady_velocities",
    "build_grid",
    "step_dae",
    "simulate",
    "collect_snapshots",
    "time_error",
    "benchmark",
    "write_benchmark_csv",
    "BENCHMARK_HEADER",
    "INTEGRATORS",
]

logger = logging.getLogger(__name__)

INTEGRATORS = ("euler", "trapezoidal", "adaptive")
BENCHMARK_HEADER = ("model", "resolution", "order", "integrator", "runtime_s", "delta_t")
GRID_PER_PERIOD = 1000


class SimulationError(RuntimeError):
    pass


class SignalError(ValueError):
    def __init__(self, message: str, bound: str, time: float | None = None):
        super().__init__(message)
        self.bound = bound
        self.time = time


# ----------------------------------------------------------------------- inputs

@dataclass(frozen=True)
class SignalBounds:
    """Admissible range, slope limit and top frequency (rad/s) for supply inputs."""

    u_l: float = 0.2
    u_h: float = 0.6
    u_d: float = 1e-4
    omega_hat: float = 2 * np.pi / 14000.0


@dataclass(frozen=True)
class InputSignal:
    """Periodic supply energy density ``c0 + sum_k a_k cos(k w t) + b_k sin(k w t)``."""

    c0: float
    cos: tuple[float, ...]
    sin: tuple[float, ...]
    omega: float
    bounds: SignalBounds = SignalBounds()

    def __post_init__(self):
        if len(self.sin) > len(self.cos):
            object.__setattr__(self, "cos", tuple(self.cos) + (0.0,) * (len(self.sin) - len(self.cos)))
        object.__setattr__(self, "sin", tuple(self.sin) + (0.0,) * (len(self.cos) - len(self.sin)))
        object.__setattr__(self, "cos", tuple(float(c) for c in self.cos))
        if self.cos and not self.omega > 0:
            raise SignalError("base frequency must be positive", "omega")

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega if self.omega > 0 else np.inf

    @property
    def max_frequency(self) -> float:
        nz = [k + 1 for k, (a, b) in enumerate(zip(self.cos, self.sin)) if a or b]
        return max(nz, default=0) * self.omega

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.c0)
        for k, (a, b) in enumerate(zip(self.cos, self.sin), start=1):
            out = out + a * np.cos(k * self.omega * t) + b * np.sin(k * self.omega * t)
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for k, (a, b) in enumerate(zip(self.cos, self.sin), start=1):
            w = k * self.omega
            out = out - a * w * np.sin(w * t) + b * w * np.cos(w * t)
        return out if out.ndim else float(out)

    def sample_grid(self) -> np.ndarray:
        period = self.period if np.isfinite(self.period) else 1.0
        return np.linspace(0.0, period, GRID_PER_PERIOD, endpoint=False)

    def check_admissible(self) -> None:
        b = self.bounds
        tol = 1e-12
        if self.max_frequency > b.omega_hat * (1 + tol):
            raise SignalError(f"top frequency {self.max_frequency:.6g} rad/s exceeds "
                              f"{b.omega_hat:.6g} rad/s", "omega_hat")
        t = self.sample_grid()
        u = self(t)
        du = np.abs(self.derivative(t))
        k = int(np.argmin(u))
        if u[k] < b.u_l - tol:
            raise SignalError(f"value {u[k]:.6g} below u_l={b.u_l} at t={t[k]:.6g} s", "u_l", t[k])
        k = int(np.argmax(u))
        if u[k] > b.u_h + tol:
            raise SignalError(f"value {u[k]:.6g} above u_h={b.u_h} at t={t[k]:.6g} s", "u_h", t[k])
        k = int(np.argmax(du))
        if du[k] > b.u_d * (1 + tol):
            raise SignalError(f"slope {du[k]:.6g} exceeds u_d={b.u_d} at t={t[k]:.6g} s", "u_d", t[k])

    def to_dict(self) -> dict:
        return {"kind": "custom", "c0": self.c0, "cos": list(self.cos), "sin": list(self.sin),
                "omega": self.omega, "bounds": vars(self.bounds).copy()}


IN_SAMPLE_PERIOD = 14000.0
OUT_OF_SAMPLE_PERIOD = 28000.0
OUT_OF_SAMPLE_COEFFS = (0.37, -0.078, 0.089)


def make_signal(kind: str = "in_sample", bounds: SignalBounds | None = None, **params) -> InputSignal:
    """Build and validate one of the reference inputs or a custom Fourier series.

    ``custom`` takes ``c0``, ``cos``, ``sin`` and either ``omega`` (rad/s) or
    ``period`` (s).  The out-of-sample default bounds start at 0.19 because
    its trough (about 0.1964) lies slightly below the training range.
    """
    if kind == "in_sample":
        period = params.get("period", IN_SAMPLE_PERIOD)
        sig = InputSignal(0.4, (0.2,), (0.0,), 2 * np.pi / period, bounds or SignalBounds())
    elif kind == "out_of_sample":
        period = params.get("period", OUT_OF_SAMPLE_PERIOD)
        c0, c1, c2 = OUT_OF_SAMPLE_COEFFS
        sig = InputSignal(c0, (c1, c2), (c1, -c1), 2 * np.pi / period,
                          bounds or replace(SignalBounds(), u_l=0.19))
    elif kind == "custom":
        if "omega" in params:
            omega = float(params["omega"])
        elif "period" in params:
            omega = 2 * np.pi / float(params["period"])
        else:
            omega = 0.0
        sig = InputSignal(float(params.get("c0", 0.4)), tuple(params.get("cos", ())),
                          tuple(params.get("sin", ())), omega, bounds or SignalBounds())
    else:
        raise SignalError(f"unknown signal kind {kind!r}", "kind")
    sig.check_admissible()
    return sig


def training_signal(u_l: float, u_h: float, omega_hat: float, m: int = 1,
                    u_d: float | None = None, ripple: float = 0.1) -> InputSignal:
    """Worst-case training input spanning ``[u_l, u_h]`` with its top harmonic at ``omega_hat``.

    A base cosine at ``omega_hat / m`` plus a small ``m``-th harmonic ripple,
    affinely rescaled so the sampled extrema hit the bounds exactly.
    """
    if not u_l < u_h:
        raise SignalError("need u_l < u_h", "u_l")
    if not omega_hat > 0:
        raise SignalError("top frequency must be positive", "omega_hat")
    if m < 1:
        raise SignalError("harmonic count must be at least 1", "m")
    omega = omega_hat / m
    cos = np.zeros(m)
    cos[0] = 1.0 - (ripple if m > 1 else 0.0)
    if m > 1:
        cos[-1] += ripple
    shape = InputSignal(0.0, tuple(cos), (0.0,) * m, omega)
    t = np.linspace(0.0, shape.period, 50 * GRID_PER_PERIOD, endpoint=False)
    vals = shape(t)
    lo, hi = vals.min(), vals.max()
    scale = (u_h - u_l) / (hi - lo)
    coeffs = tuple(scale * cos)
    c0 = u_l - scale * lo
    if u_d is None:
        u_d = float(np.max(np.abs(InputSignal(c0, coeffs, (0.0,) * m, omega).derivative(t))))
    sig = InputSignal(c0, coeffs, (0.0,) * m, omega, SignalBounds(u_l, u_h, u_d, omega_hat))
    sig.check_admissible()
    return sig


@dataclass(frozen=True)
class DemandProfile:
    """Per-house demands, constant or piecewise linear in time (held beyond the table)."""

    values: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", values)
        if self.times is not None:
            times = np.asarray(self.times, dtype=float)
            if values.ndim != 2 or values.shape[0] != times.size:
                raise SimulationError("demand table needs one row per time stamp")
            if np.any(np.diff(times) <= 0):
                raise SimulationError("demand time stamps must increase")
            object.__setattr__(self, "times", times)
        if np.any(values <= 0):
            raise SimulationError("demands must be positive")

    @property
    def n_consumers(self) -> int:
        return self.values.shape[-1]

    def __call__(self, t: float) -> np.ndarray:
        if self.times is None:
            return self.values
        return np.array([np.interp(t, self.times, col) for col in self.values.T])

    def mean(self) -> np.ndarray:
        return self.values if self.times is None else self.values.mean(axis=0)


@dataclass(frozen=True)
class Scenario:
    """Input, demands, horizon and integrator settings for one run.

    ``dt`` is the output step; the explicit scheme substeps it to respect
    the CFL limit.  ``initial`` defaults to the input value at ``t = 0``.
    """

    signal: InputSignal
    demands: DemandProfile
    horizon: float
    dt: float = 20.0
    integrator: str = "trapezoidal"
    rtol: float = 1e-6
    atol: float = 1e-9
    initial: float | None = None

    def __post_init__(self):
        if not self.horizon >= 0:
            raise SimulationError("horizon must be nonnegative")
        if not self.dt > 0:
            raise SimulationError("time step must be positive")
        if self.integrator not in INTEGRATORS:
            raise SimulationError(f"unknown integrator {self.integrator!r}; choose from {INTEGRATORS}")

    @property
    def initial_value(self) -> float:
        return float(self.signal(0.0)) if self.initial is None else float(self.initial)

    def times(self) -> np.ndarray:
        n = int(round(self.horizon / self.dt))
        if not np.isclose(n * self.dt, self.horizon, rtol=1e-9, atol=1e-9):
            raise SimulationError("horizon must be a whole number of steps")
        return self.dt * np.arange(n + 1)

    def to_dict(self) -> dict:
        d = {"signal": self.signal.to_dict(), "horizon_s": self.horizon, "dt_s": self.dt,
             "integrator": self.integrator, "rtol": self.rtol, "atol": self.atol}
        if self.demands.times is None:
            d["demands"] = self.demands.values.tolist()
        else:
            d["demands"] = {"times_s": self.demands.times.tolist(),
                            "values": self.demands.values.tolist()}
        if self.initial is not None:
            d["initial"] = self.initial
        return d


def scenario_from_dict(data: dict, topology: NetworkTopology) -> Scenario:
    from .generators import default_demands

    sig = dict(data.get("signal", {"kind": "in_sample"}))
    kind = sig.pop("kind", "custom")
    bounds = sig.pop("bounds", None)
    if "period_s" in sig:
        sig["period"] = sig.pop("period_s")
    signal = make_signal(kind, SignalBounds(**bounds) if bounds else None, **sig)
    raw = data.get("demands")
    H = topology.n_consumers
    if raw is None:
        demands = DemandProfile(default_demands(topology))
    elif isinstance(raw, (int, float)):
        demands = DemandProfile(np.full(H, float(raw)))
    elif isinstance(raw, dict):
        demands = DemandProfile(np.asarray(raw["values"], dtype=float), np.asarray(raw["times_s"]))
    else:
        demands = DemandProfile(np.asarray(raw, dtype=float))
    if demands.n_consumers != H:
        raise SimulationError(f"scenario lists {demands.n_consumers} demands for {H} consumers")
    horizon = float(data.get("horizon_s", signal.period if np.isfinite(signal.period) else 0.0))
    return Scenario(signal, demands, horizon, float(data.get("dt_s", 20.0)),
                    data.get("integrator", "trapezoidal"), float(data.get("rtol", 1e-6)),
                    float(data.get("atol", 1e-9)), data.get("initial"))


def load_scenario(path: str | Path, topology: NetworkTopology) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    with open(path) as fh:
        return scenario_from_dict(json.load(fh), topology)


# ------------------------------------------------------------------ resolution

def steady_velocities(basis: FlowBasis, demands: np.ndarray, value: float,
                      floor: float = 1e-6) -> np.ndarray:
    """Edge speeds of the steady state at a uniform energy density, floored away from zero."""
    state = solve_flows(basis, np.full(basis.n_consumers, float(value)), demands)
    speed = np.abs(state.v)
    return np.maximum(speed, floor * max(speed.max(), floor))


def build_grid(topology: NetworkTopology, basis: FlowBasis, demands: np.ndarray,
               c_r: float, n_min: int = 1, value: float = 0.4) -> CellGrid:
    return distribute_cells(topology, c_r, n_min, steady_velocities(basis, demands, value))


# ------------------------------------------------------------------ integration

@dataclass
class TrajectoryResult:
    """Time-stamped outputs and flows; ``outputs[k]`` and ``flows[k]`` belong to ``times[k]``."""

    times: np.ndarray
    outputs: np.ndarray
    flows: np.ndarray
    runtime: float
    model: str
    order: int
    integrator: str
    steps: int = 0
    substeps: int = 0
    rejected: int = 0
    switches: int = 0
    reassemblies: int = 0
    residuals: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    def write_csv(self, path: str | Path, ids: Sequence) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [str(i) for i in ids])
            for t, row in zip(self.times, self.outputs):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


class _Stepper:
    """Per-run state: current flows, active pattern and its system matrices."""

    def __init__(self, model, basis: FlowBasis, scenario: Scenario, newton: NewtonConfig):
        self.model = model
        self.basis = basis
        self.scenario = scenario
        self.newton = newton
        self.pattern = None
        self.switches = 0
        self.substeps = 0
        self.dense = getattr(model, "kind", "FOM") == "ROM"

    def flows(self, x, t, q_prev):
        y = self.model.outputs(x)
        if np.any(y <= 0):
            raise SimulationError(f"non-positive consumer energy density at t={t:.6g} s")
        state = solve_flows(self.basis, y, self.scenario.demands(t), q_prev, self.newton)
        pattern = self.model.pattern(state.q)
        if self.pattern is None:
            self.pattern = pattern
        elif not np.array_equal(pattern, self.pattern):
            changed = np.flatnonzero(pattern != self.pattern)
            self.switches += int(changed.size)
            logger.info("flow direction changed at t=%.6g s on edges %s", t, changed.tolist())
            self.pattern = pattern
        return state

    def system(self, q):
        return self.model.system(q, self.pattern)

    def advance(self, x, q, t, dt, integrator):
        A, B, d = self.system(q)
        u = self.scenario.signal
        if integrator == "euler":
            rate = self.model.max_rate(q)
            n_sub = max(1, int(np.ceil(dt * rate * (1 - 1e-12))))
            h = dt / n_sub
            if h * rate > 1 + 1e-12:
                raise SimulationError(f"CFL violated at t={t:.6g} s")
            for k in range(n_sub):
                x = x + h * (A @ x + B * u(t + k * h) + d)
            self.substeps += n_sub
            return x
        if integrator == "trapezoidal":
            rhs = x + 0.5 * dt * (A @ x) + 0.5 * dt * B * (u(t) + u(t + dt)) + dt * d
            if self.dense:
                return np.linalg.solve(np.eye(A.shape[0]) - 0.5 * dt * A, rhs)
            M = sp.identity(A.shape[0], format="csc") - 0.5 * dt * A.tocsc()
            return spsla.splu(M.tocsc()).solve(rhs)
        raise SimulationError(f"unknown integrator {integrator!r}")


def step_dae(x, q_prev, t: float, dt: float, model, basis: FlowBasis, scenario: Scenario,
             integrator: str | None = None, newton: NewtonConfig = NewtonConfig()):
    """One semi-explicit step: outputs, hydraulics, then transport with frozen flows."""
    stepper = _Stepper(model, basis, scenario, newton)
    state = stepper.flows(x, t, q_prev)
    return stepper.advance(x, state.q, t, dt, integrator or scenario.integrator), state.q


def simulate(model, scenario: Scenario, basis: FlowBasis | None = None,
             newton: NewtonConfig = NewtonConfig()) -> TrajectoryResult:
    """Integrate ``model`` over the scenario; runtime covers the stepping loop only."""
    basis = basis if basis is not None else getattr(model, "basis", None)
    if basis is None:
        raise SimulationError("reduced models need the network's flow basis")
    if scenario.demands.n_consumers != basis.n_consumers:
        raise SimulationError("demand count does not match the consumers")
    times = scenario.times()
    x = model.initial_state(scenario.initial_value)
    stepper = _Stepper(model, basis, scenario, newton)
    integrator = scenario.integrator
    n_out = len(times)
    outputs = np.empty((n_out, model.n_outputs))
    flows = np.empty((n_out, basis.n_flows))
    residuals = np.empty(n_out)
    before = getattr(model, "assemblies", getattr(model, "reassemblies", 0))
    q = None
    stats = {}
    start = time.perf_counter()
    try:
        if integrator == "adaptive":
            x, q, stats = _adaptive(stepper, x, times, outputs, flows, residuals)
        else:
            for k, t in enumerate(times):
                state = stepper.flows(x, t, q)
                q = state.q
                outputs[k] = model.outputs(x)
                flows[k] = q
                residuals[k] = state.residual_norm
                if k + 1 < n_out:
                    x = stepper.advance(x, q, t, times[k + 1] - t, integrator)
                    if not np.all(np.isfinite(x)):
                        raise SimulationError(f"state became non-finite at t={times[k + 1]:.6g} s")
    except HydraulicsError as exc:
        raise SimulationError(f"hydraulics failed: {exc}") from exc
    runtime = time.perf_counter() - start
    after = getattr(model, "assemblies", getattr(model, "reassemblies", 0))
    return TrajectoryResult(times, outputs, flows, runtime, getattr(model, "kind", "FOM"),
                            model.order, integrator, max(0, n_out - 1), stepper.substeps,
                            int(stats.get("rejected", 0)), stepper.switches, after - before,
                            residuals, stats)


def _adaptive(stepper: _Stepper, x0, times, outputs, flows, residuals):
    """Stiff BDF integration with the hydraulics solved inside the right-hand side."""
    model = stepper.model
    u = stepper.scenario.signal
    cache = {"q": None}

    def current(t, x):
        state = stepper.flows(x, t, cache["q"])
        cache["q"] = state.q
        return state.q

    def rhs(t, x):
        q = current(t, x)
        A, B, d = stepper.system(q)
        return A @ x + B * u(t) + d

    def jac(t, x):
        A, _, _ = stepper.system(current(t, x))
        return A

    sol = solve_ivp(rhs, (times[0], times[-1]), x0, method="BDF", t_eval=times, jac=jac,
                    rtol=stepper.scenario.rtol, atol=stepper.scenario.atol)
    if not sol.success:
        raise SimulationError(f"adaptive integration failed: {sol.message}")
    q = None
    for k, t in enumerate(times):
        xk = sol.y[:, k]
        state = stepper.flows(xk, t, q)
        q = state.q
        outputs[k] = model.outputs(xk)
        flows[k] = q
        residuals[k] = state.residual_norm
    stats = {"nfev": int(sol.nfev), "njev": int(sol.njev), "nlu": int(sol.nlu), "rejected": 0}
    return sol.y[:, -1], q, stats


# ------------------------------------------------------------ snapshots, errors

def collect_snapshots(trajectory: TrajectoryResult, count: int = 32, rtol: float = 1e-3
                      ) -> list[np.ndarray]:
    """``count`` flow vectors evenly spaced in time, dropping near duplicates."""
    n = trajectory.flows.shape[0]
    if n == 0:
        raise SimulationError("empty trajectory")
    idx = np.unique(np.round(np.linspace(0, n - 1, min(count, n))).astype(int))
    kept: list[np.ndarray] = []
    for k in idx:
        q = trajectory.flows[k]
        if all(np.linalg.norm(q - p) > rtol * np.linalg.norm(p) for p in kept):
            kept.append(q.copy())
    return kept


@dataclass(frozen=True)
class ErrorReport:
    per_output: np.ndarray
    reference: str = "reference"

    @property
    def delta(self) -> float:
        return float(np.max(self.per_output))


def time_error(reference: TrajectoryResult, test: TrajectoryResult, label: str = "reference"
               ) -> ErrorReport:
    """Per-output relative l2 errors after linear interpolation onto the reference grid."""
    ref = reference.outputs
    if ref.shape[1] != test.outputs.shape[1]:
        raise SimulationError("output counts differ")
    same = test.times.shape == reference.times.shape and np.array_equal(test.times, reference.times)
    errs = np.empty(ref.shape[1])
    for h in range(ref.shape[1]):
        y = test.outputs[:, h] if same else np.interp(reference.times, test.times, test.outputs[:, h])
        norm = np.linalg.norm(ref[:, h])
        if norm == 0:
            raise SimulationError(f"reference output {h} has zero norm")
        errs[h] = np.linalg.norm(ref[:, h] - y) / norm
    return ErrorReport(errs, label)


# -------------------------------------------------------------------- benchmark

@dataclass(frozen=True)
class BenchmarkRow:
    model: str
    resolution: str
    order: int
    integrator: str
    runtime_s: float
    delta_t: float

    def as_tuple(self):
        return (self.model, self.resolution, self.order, self.integrator, self.runtime_s, self.delta_t)


def benchmark(models: Sequence[tuple], scenario: Scenario, integrators: Sequence[str],
              reference: TrajectoryResult, basis: FlowBasis | None = None, repeats: int = 3
              ) -> list[BenchmarkRow]:
    """Median runtime and error versus ``reference`` for each (model, integrator) cell.

    ``models`` holds ``(label, resolution, model)`` triples.  Cells run one
    after another so timings do not compete for cores.
    """
    if repeats < 1:
        raise ValueError("at least one repetition")
    rows = []
    for label, resolution, model in models:
        for integ in integrators:
            sc = replace(scenario, integrator=integ)
            runs = [simulate(model, sc, basis) for _ in range(repeats)]
            err = time_error(reference, runs[0]).delta
            rows.append(BenchmarkRow(label, str(resolution), int(model.order), integ,
                                     float(np.median([r.runtime for r in runs])), err))
            logger.info("benchmark %s %s %s: %.4g s, error %.3e", label, resolution, integ,
                        rows[-1].runtime_s, err)
    return rows


def write_benchmark_csv(rows: Sequence[BenchmarkRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCHMARK_HEADER)
        for r in rows:
            w.writerow([r.model, r.resolution, r.order, r.integrator,
                        f"{r.runtime_s:.6g}", repr(float(r.delta_t))])
