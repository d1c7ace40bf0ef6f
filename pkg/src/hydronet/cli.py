"""``hydronet`` command line: generate, simulate, reduce, verify, benchmark.

Exit codes: 0 on success, 1 on a model or verification failure, 2 when an
input file is missing.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import generators, mor
from .hydraulics import HydraulicsError
from .network import NetworkError, build_flow_basis, load_network, save_network
from .simulation import (INTEGRATORS, SignalError, SimulationError, load_scenario,
                         write_benchmark_csv)
from .transport import TransportError, build_energy_matrix, check_lyapunov
from .workflow import ReductionConfig, Workbench

logger = logging.getLogger("hydronet")

MODULE_ERRORS = (NetworkError, HydraulicsError, SimulationError, SignalError, TransportError,
                 mor.ReductionError, ValueError)


class VerificationFailure(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, args: argparse.Namespace, inputs: dict, extra: dict | None = None):
    from . import __version__

    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
              if k != "func"}
    manifest = {
        "command": args.command,
        "config": config,
        "seed": args.seed,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items() if p},
        "versions": {"hydronet": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    if extra:
        manifest["results"] = extra
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise argparse.ArgumentTypeError(f"--{what} is required")
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return Path(path)


def _bench(args) -> tuple[Workbench, object]:
    topology = load_network(_require(args.network, "network"))
    from .generators import default_demands

    wb = Workbench(topology, default_demands(topology))
    scenario = None
    if getattr(args, "scenario", None) is not None:
        scenario = load_scenario(_require(args.scenario, "scenario"), topology)
        wb = Workbench(topology, scenario.demands.mean(), wb.basis)
    return wb, scenario


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    out = _out(args)
    extra = {}
    if args.kind == "street":
        topology = generators.street_network(seed=args.seed)
    elif args.kind == "district":
        topology, reversal, roots = generators.district_network(seed=args.seed)
        extra = {"flux_reversal_edges": reversal, "branch_roots": roots}
        (out / "decomposition.json").write_text(json.dumps(extra, indent=2))
    elif args.kind == "single":
        topology = generators.single_pipe()
    elif args.kind == "parallel":
        topology = generators.parallel_pipes()
    else:
        topology = generators.random_network(np.random.default_rng(args.seed))
    save_network(topology, out / "network.json")
    demands = generators.default_demands(topology, seed=args.seed).tolist()
    for kind, horizon in (("in_sample", 14000.0), ("out_of_sample", 28000.0)):
        scenario = {"signal": {"kind": kind}, "demands": demands, "horizon_s": horizon,
                    "dt_s": 20.0, "integrator": "trapezoidal"}
        (out / f"scenario_{kind}.json").write_text(json.dumps(scenario, indent=2))
    _write_manifest(out, args, {}, {"edges": topology.n_edges, "consumers": topology.n_consumers,
                                    "flows": topology.n_flows, **extra})
    print(f"wrote {out / 'network.json'} ({topology.n_edges} edges, "
          f"{topology.n_consumers} consumers, {topology.n_flows} independent flows)")
    return 0


def cmd_simulate(args) -> int:
    wb, scenario = _bench(args)
    if scenario is None:
        raise argparse.ArgumentTypeError("--scenario is required")
    if args.integrator:
        scenario = replace(scenario, integrator=args.integrator)
    out = _out(args)
    if args.rom:
        model = wb.attach(mor.load_rom(_require(args.rom, "rom")))
    else:
        model = wb.model(args.resolution)
    result = wb.simulate(model, scenario)
    result.write_csv(out / "results.csv", [c.id for c in wb.topology.consumers])
    _write_manifest(out, args, {"network": args.network, "scenario": args.scenario, "rom": args.rom},
                    {"model": result.model, "order": result.order, "steps": result.steps,
                     "runtime_s": result.runtime, "flow_direction_switches": result.switches})
    print(f"{result.model} order {result.order}: {result.steps} steps in {result.runtime:.3f} s "
          f"-> {out / 'results.csv'}")
    return 0


def cmd_reduce(args) -> int:
    wb, scenario = _bench(args)
    if scenario is None:
        from .simulation import DemandProfile, Scenario, make_signal

        scenario = Scenario(make_signal("in_sample"), DemandProfile(wb.demands), 14000.0, 20.0)
    out = _out(args)
    cfg = ReductionConfig(
        delta_bar=args.delta_bar, Delta_bar=args.Delta_bar, svd_decay=args.svd_decay,
        irka_iterations=args.irka_iters, irka_order=args.irka_order,
        window_high=None if args.window_hz is None else 2 * math.pi * args.window_hz,
        snapshots=args.snapshots, n_init=args.n_init)
    outcome = wb.reduce(args.resolution, scenario, cfg)
    rom = outcome.rom
    mor.save_rom(rom, out / "rom.npz")
    with open(out / "scatter.csv", "w") as fh:
        fh.write("init,order,delta_max,steps\n")
        for row in outcome.greedy.scatter:
            fh.write(f"{row['init']},{row['order']},{row['delta_max']!r},{row['steps']}\n")
    _write_manifest(out, args, {"network": args.network, "scenario": args.scenario},
                    {"order": rom.order, "Delta_delta": outcome.greedy.delta_max,
                     "snapshots": len(outcome.snapshots), "full_order": wb.model(args.resolution).order,
                     "window_rad_s": outcome.window.to_dict()})
    print(f"ROM order {rom.order} (full {wb.model(args.resolution).order}), "
          f"max relative error over D {outcome.greedy.delta_max:.3e} -> {out / 'rom.npz'}")
    return 0


def cmd_verify(args) -> int:
    wb, _ = _bench(args)
    out = _out(args)
    model = wb.model(args.resolution)
    basis = wb.basis
    Q = build_energy_matrix(model.grid, wb.topology)
    rng = np.random.default_rng(args.seed)
    H, L = basis.n_consumers, basis.n_flows
    records = []
    worst = None
    for k in range(args.samples):
        q = np.zeros(L)
        if k:
            q[:H] = rng.uniform(0.2, 1.8, H) * wb.demands / 0.4
            if L > H:
                q[H:] = rng.normal(0.0, 2.0 * q[:H].mean() + 1e-12, L - H)
        A = model.operator(model.pattern(q)).A(q)
        chk = check_lyapunov(A, Q, q, basis)
        records.append({"sample": k, "lambda_max": chk.lambda_max, "norm": chk.norm,
                        "diagonal_nonpositive": chk.diagonal_nonpositive,
                        "diagonally_dominant": chk.diagonally_dominant, "passed": chk.passed})
        if not chk.passed and worst is None:
            worst = (k, q)
    lam = max(r["lambda_max"] for r in records)
    report = {"samples": len(records), "max_lambda": lam,
              "all_diagonal_nonpositive": all(r["diagonal_nonpositive"] for r in records),
              "all_diagonally_dominant": all(r["diagonally_dominant"] for r in records),
              "patterns": model.patterns_seen, "passed": worst is None}
    (out / "verify.json").write_text(json.dumps({"summary": report, "samples": records}, indent=2))
    _write_manifest(out, args, {"network": args.network}, report)
    print(f"max lambda_max over {len(records)} flows: {lam:.3e}; "
          f"{'passed' if worst is None else 'FAILED'}")
    if worst is not None:
        raise VerificationFailure(f"Lyapunov check failed at sample {worst[0]}, q={worst[1].tolist()}")
    return 0


def cmd_benchmark(args) -> int:
    wb, scenario = _bench(args)
    if scenario is None:
        raise argparse.ArgumentTypeError("--scenario is required")
    out = _out(args)
    resolutions = _float_list(args.resolutions)
    integrators = [s.strip() for s in args.integrators.split(",") if s.strip()]
    bad = [s for s in integrators if s not in INTEGRATORS]
    if bad:
        raise ValueError(f"unknown integrators {bad}; choose from {INTEGRATORS}")
    roms = []
    for k, path in enumerate(args.rom or []):
        roms.append((f"ROM{k}" if len(args.rom) > 1 else "ROM",
                     wb.attach(mor.load_rom(_require(Path(path), "rom")))))
    rows, _ = wb.benchmark(scenario, resolutions, integrators, roms, args.repeats,
                           factor=args.reference_factor)
    write_benchmark_csv(rows, out / "benchmark.csv")
    with open(out / "benchmark_long.dat", "w") as fh:
        fh.write("# model resolution order integrator runtime_s delta_t\n")
        for r in rows:
            fh.write(f"{r.model} {r.resolution} {r.order} {r.integrator} {r.runtime_s:.6g} "
                     f"{r.delta_t:.6e}\n")
    (out / "benchmark.gp").write_text(
        "set logscale xy\nset xlabel 'runtime [s]'\nset ylabel 'max relative l2 error'\n"
        "plot 'benchmark_long.dat' using 5:6:(sprintf('%s-%s',stringcolumn(1),stringcolumn(2)))"
        " with labels point pt 7 offset char 1,1 notitle\n")
    _write_manifest(out, args, {"network": args.network, "scenario": args.scenario},
                    {"rows": len(rows)})
    for r in rows:
        print(f"{r.model:>5} {r.resolution:>6} {r.order:>6} {r.integrator:>12} "
              f"{r.runtime_s:9.4f} s  {r.delta_t:.3e}")
    return 0


# ------------------------------------------------------------------------ parser

def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydronet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, network=True, scenario=False):
        if network:
            sp.add_argument("--network", type=Path)
        if scenario:
            sp.add_argument("--scenario", type=Path)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("generate", help="write a synthetic network and scenarios")
    common(g, network=False)
    g.add_argument("--kind", choices=("street", "district", "single", "parallel", "random"),
                   default="street")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="simulate a full or reduced model")
    common(s, scenario=True)
    s.add_argument("--resolution", type=_positive(float), default=4.0,
                   help="cells on the reference pipe")
    s.add_argument("--integrator", choices=INTEGRATORS)
    s.add_argument("--rom", type=Path, help="simulate this reduced model instead")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reduce", help="build a reduced model by the frequency greedy")
    common(r, scenario=True)
    r.add_argument("--resolution", type=_positive(float), default=8.0)
    r.add_argument("--delta-bar", type=_positive(float), default=5e-3)
    r.add_argument("--Delta-bar", dest="Delta_bar", type=_positive(float), default=1e-2)
    r.add_argument("--svd-decay", type=_positive(float), default=8.0)
    r.add_argument("--irka-iters", type=_positive(int), default=5)
    r.add_argument("--irka-order", type=_positive(int), default=6)
    r.add_argument("--window-hz", type=_positive(float), default=None,
                   help="upper edge of the frequency window in Hz")
    r.add_argument("--snapshots", type=_positive(int), default=32)
    r.add_argument("--n-init", type=_positive(int), default=None)
    r.set_defaults(func=cmd_reduce)

    v = sub.add_parser("verify", help="sample flows and check the Lyapunov inequality")
    common(v)
    v.add_argument("--samples", type=_positive(int), default=100)
    v.add_argument("--resolution", type=_positive(float), default=2.0)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("benchmark", help="runtime versus error table")
    common(b, scenario=True)
    b.add_argument("--resolutions", default="1,2,4,8")
    b.add_argument("--integrators", default="euler,trapezoidal")
    b.add_argument("--rom", action="append", help="reduced model file (repeatable)")
    b.add_argument("--repeats", type=_positive(int), default=3)
    b.add_argument("--reference-factor", type=_positive(float), default=4.0)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VerificationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MODULE_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        table = getattr(exc, "table", None)
        if table:
            for row in table:
                print(f"  {row}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
