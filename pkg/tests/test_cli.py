import csv
import json

import numpy as np
import pytest

from hydronet.cli import main
from hydronet.mor import FrequencyWindow, load_rom, relative_error
from hydronet.network import load_network
from hydronet.workflow import Workbench
from hydronet.generators import default_demands


@pytest.fixture(scope="module")
def street_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("street")
    assert main(["generate", "--kind", "street", "--out", str(out)]) == 0
    return out


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_generate_writes_street(street_dir):
    data = json.loads((street_dir / "network.json").read_text())
    assert len(data["consumers"]) == 32 and len(data["edges"]) == 81
    assert json.loads((street_dir / "scenario_out_of_sample.json").read_text())["horizon_s"] == 28000.0


def test_simulate_csv_has_one_column_per_consumer(street_dir, tmp_path):
    code = main(["simulate", "--network", str(street_dir / "network.json"), "--scenario",
                 str(street_dir / "scenario_in_sample.json"), "--resolution", "1", "--out",
                 str(tmp_path)])
    assert code == 0
    rows = _read_csv(tmp_path / "results.csv")
    assert rows[0][0] == "time" and len(rows[0]) == 33
    assert len(rows) == 1 + 701
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["inputs"]["scenario"]["sha256"]
    assert manifest["config"]["resolution"] == 1.0


def test_simulate_is_deterministic(street_dir, tmp_path):
    args = ["simulate", "--network", str(street_dir / "network.json"), "--scenario",
            str(street_dir / "scenario_in_sample.json"), "--resolution", "1", "--integrator", "euler"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_missing_scenario_exit_code(street_dir, tmp_path, capsys):
    missing = tmp_path / "absent_scenario.json"
    code = main(["simulate", "--network", str(street_dir / "network.json"), "--scenario",
                 str(missing), "--out", str(tmp_path)])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_module_error_exit_code(street_dir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"signal": {"kind": "custom", "c0": 0.9}, "horizon_s": 100}')
    code = main(["simulate", "--network", str(street_dir / "network.json"), "--scenario", str(bad),
                 "--out", str(tmp_path)])
    assert code == 1
    assert "u_h" in capsys.readouterr().err


@pytest.fixture(scope="module")
def unbounded_rom(street_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("rom")
    code = main(["reduce", "--network", str(street_dir / "network.json"), "--scenario",
                 str(street_dir / "scenario_in_sample.json"), "--resolution", "1",
                 "--Delta-bar", "inf", "--snapshots", "6", "--n-init", "1", "--out", str(out)])
    assert code == 0
    return out


def test_unbounded_reduce_uses_one_local_space(unbounded_rom):
    rom = load_rom(unbounded_rom / "rom.npz")
    assert rom.metadata["anchors"] == [0]
    rows = _read_csv(unbounded_rom / "scatter.csv")
    assert rows[0] == ["init", "order", "delta_max", "steps"] and len(rows) == 2
    assert int(rows[1][3]) == 1


def test_reloaded_rom_reproduces_stored_error(street_dir, unbounded_rom):
    rom = load_rom(unbounded_rom / "rom.npz")
    top = load_network(street_dir / "network.json")
    wb = Workbench(top, default_demands(top))
    wb.attach(rom)
    model = wb.model_for_counts(rom.metadata["cell_counts"])
    window = FrequencyWindow(**rom.metadata["window"])
    errs = [relative_error(q, rom, model.form_for(q), window) for q in rom.snapshots]
    assert max(errs) == pytest.approx(rom.metadata["Delta_delta"], rel=1e-12, abs=0)


def test_rom_simulation_runs(street_dir, unbounded_rom, tmp_path):
    code = main(["simulate", "--network", str(street_dir / "network.json"), "--scenario",
                 str(street_dir / "scenario_in_sample.json"), "--rom",
                 str(unbounded_rom / "rom.npz"), "--out", str(tmp_path)])
    assert code == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["results"]["model"] == "ROM"


def test_rom_for_other_network_rejected(unbounded_rom, tmp_path):
    assert main(["generate", "--kind", "single", "--out", str(tmp_path)]) == 0
    code = main(["simulate", "--network", str(tmp_path / "network.json"), "--scenario",
                 str(tmp_path / "scenario_in_sample.json"), "--rom",
                 str(unbounded_rom / "rom.npz"), "--out", str(tmp_path)])
    assert code == 1


def test_verify_single_pipe(tmp_path):
    assert main(["generate", "--kind", "single", "--out", str(tmp_path)]) == 0
    assert main(["verify", "--network", str(tmp_path / "network.json"), "--samples", "10",
                 "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "verify.json").read_text())
    lams = [r["lambda_max"] for r in report["samples"]]
    assert lams[0] == 0.0
    assert all(lam < 0 for lam in lams[1:])


def test_verify_reversed_street(street_dir, tmp_path):
    data = json.loads((street_dir / "network.json").read_text())
    for e in data["edges"]:
        if e["id"].startswith(("t", "s", "ring")):
            e["from"], e["to"] = e["to"], e["from"]
    path = tmp_path / "reversed.json"
    path.write_text(json.dumps(data))
    assert main(["verify", "--network", str(path), "--samples", "20", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "verify.json").read_text())["summary"]["passed"]


def test_benchmark_single_row_and_repeatable(street_dir, tmp_path):
    args = ["benchmark", "--network", str(street_dir / "network.json"), "--scenario",
            str(street_dir / "scenario_in_sample.json"), "--resolutions", "1", "--integrators",
            "trapezoidal", "--repeats", "1", "--reference-factor", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = _read_csv(tmp_path / "a" / "benchmark.csv"), _read_csv(tmp_path / "b" / "benchmark.csv")
    assert a[0] == ["model", "resolution", "order", "integrator", "runtime_s", "delta_t"]
    assert len(a) == 2
    assert a[1][5] == b[1][5]
    assert float(a[1][5]) > 0
    assert (tmp_path / "a" / "benchmark.gp").exists()


def test_benchmark_rejects_unknown_integrator(street_dir, tmp_path):
    code = main(["benchmark", "--network", str(street_dir / "network.json"), "--scenario",
                 str(street_dir / "scenario_in_sample.json"), "--integrators", "rk4",
                 "--out", str(tmp_path)])
    assert code == 1
