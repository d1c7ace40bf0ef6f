import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hydronet.generators import district_network, parallel_pipes, random_network, single_pipe, street_network
from hydronet.network import (CellGrid, Consumer, NetworkError, NetworkTopology, PipeEdge,
                              build_flow_basis, decompose, distribute_cells, network_to_dict,
                              parse_network, save_network)

from conftest import conservative_flows


def _series(n_pipes=3, diameter=0.1):
    edges = tuple(PipeEdge(f"p{k}", f"N{k}", f"N{k + 1}", 50.0, diameter, 0.02) for k in range(n_pipes))
    return NetworkTopology(edges, (Consumer("h", f"p{n_pipes - 1}"),), "N0")


def test_single_pipe_counts():
    top = single_pipe()
    assert (top.n_edges, top.n_consumers, top.n_flows) == (1, 1, 1)


def test_parallel_pipes_have_one_cycle():
    top = parallel_pipes()
    assert top.n_cycles == 1
    assert top.n_flows == top.n_consumers + 1


def test_street_fixture_statistics():
    top = street_network()
    assert top.n_consumers == 32
    assert top.n_cycles == 1
    assert top.n_flows == 33


def test_negative_diameter_rejected():
    data = network_to_dict(single_pipe())
    data["edges"][0]["diameter_m"] = -0.1
    with pytest.raises(NetworkError):
        parse_network(data)


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.pop("edges"), "edges"),
    (lambda d: d.update(source_node=["S", "T"]), "source"),
    (lambda d: d["edges"][0].update(length_m=0.0), "length"),
    (lambda d: d["edges"][0].update(lambda_="x") or d["edges"][0].update({"lambda": "x"}), "lambda"),
])
def test_schema_violations(mutate, message):
    data = network_to_dict(street_network(n_pairs=4))
    mutate(data)
    with pytest.raises(NetworkError, match=message):
        parse_network(data)


def test_disconnected_graph_rejected():
    data = network_to_dict(single_pipe())
    data["edges"].append({"id": "x", "from": "A", "to": "B", "length_m": 1.0, "diameter_m": 0.1,
                          "lambda": 0.02})
    with pytest.raises(NetworkError):
        parse_network(data)


def test_missing_file_raises_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.json"):
        parse_network(tmp_path / "nope.json")


def test_round_trip_is_lossless(tmp_path):
    top = street_network(seed=3)
    path = tmp_path / "net.json"
    save_network(top, path)
    again = parse_network(path)
    assert network_to_dict(again) == network_to_dict(top)
    raw = json.loads(path.read_text())
    assert raw["edges"][1]["length_m"] == top.edges[1].length


def test_series_path_basis_column():
    top = _series(3)
    basis = build_flow_basis(top)
    phi = top.edges[0].cross_section
    np.testing.assert_allclose(basis.K[:, 0], np.full(3, 1 / phi), rtol=1e-15)


def test_parallel_loop_column_signs():
    top = parallel_pipes()
    basis = build_flow_basis(top)
    phi = top.edges[0].cross_section
    loop = basis.K[:2, 1] * phi
    assert sorted(loop.tolist()) == [-1.0, 1.0]
    assert basis.K[2, 1] == 0


@given(st.integers(0, 10_000))
def test_random_network_conserves_volume(seed):
    rng = np.random.default_rng(seed)
    top = random_network(rng)
    basis = build_flow_basis(top)
    q = conservative_flows(basis, rng)
    flows = basis.edge_flows(q)
    # brute-force node balance over every junction, from the edge list alone
    for node in top.junctions():
        name = top.nodes[node]
        net = sum(f for e, f in zip(top.edges, flows) if e.to_node == name) \
            - sum(f for e, f in zip(top.edges, flows) if e.from_node == name)
        assert abs(net) <= 1e-12 * max(np.abs(flows).max(), 1e-300)
    assert top.n_flows == top.n_consumers + top.n_cycles


def test_distribute_cells_reference_point():
    top = _series(1)
    grid = distribute_cells(top, 5, 1, [1.0])
    assert grid.counts == (5,)


def test_distribute_cells_floor():
    edges = (PipeEdge("a", "S", "X", 100.0, 0.1, 0.02), PipeEdge("b", "X", "H", 10.0, 0.1, 0.02))
    top = NetworkTopology(edges, (Consumer("h", "b"),), "S")
    grid = distribute_cells(top, 5, 2, [1.0, 1.0])
    # edge b has the largest v/L and is the reference; edge a gets 50
    assert grid.counts == (50, 5)
    top2 = NetworkTopology((PipeEdge("a", "S", "X", 100.0, 0.1, 0.02),
                            PipeEdge("b", "X", "H", 10.0, 0.1, 0.02)), (Consumer("h", "b"),), "S")
    grid2 = distribute_cells(top2, 5, 2, [10.0, 0.1])
    # reference is a (v/L = 0.1 vs 0.01); b: 5 * 0.1 * 100 = 50, a: 5
    assert grid2.counts == (5, 50)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_reference_pipe_receives_fewest_cells(seed, c_r):
    # the reference has the largest v/L, so every other edge gets at least c_r cells
    rng = np.random.default_rng(seed)
    top = random_network(rng, max_edges=20)
    v = rng.uniform(0.01, 1.0, top.n_edges)
    grid = distribute_cells(top, c_r, 1, v)
    assert min(grid.counts) == c_r


def test_distribute_cells_rejects_zero_velocity():
    with pytest.raises(NetworkError):
        distribute_cells(_series(2), 4, 1, [1.0, 0.0])


@given(st.integers(0, 10_000))
def test_cfl_variance_not_worse_than_uniform(seed):
    rng = np.random.default_rng(seed)
    top = random_network(rng, max_edges=30)
    v = rng.uniform(0.05, 1.0, top.n_edges)
    grid = distribute_cells(top, 8, 1, v)
    cfl = np.array(grid.counts) * v / top.lengths
    uniform = 8 * v / top.lengths
    # compare spread relative to the mean so the two assignments are on one scale
    assert np.var(cfl / cfl.mean()) <= np.var(uniform / uniform.mean()) + 1e-12


@given(st.integers(0, 10_000))
def test_cell_ordering_is_bijective(seed):
    rng = np.random.default_rng(seed)
    counts = tuple(int(c) for c in rng.integers(1, 6, rng.integers(1, 12)))
    grid = CellGrid(counts, (1.0,) * len(counts))
    seen = set()
    for e, n in enumerate(counts):
        for c in range(n):
            k = grid.index(e, c)
            assert grid.locate(k) == (e, c)
            seen.add(k)
    assert seen == set(range(grid.n))


def test_identity_decomposition():
    top = street_network(n_pairs=4)
    plan = decompose(top)
    assert plan.n_parts == 1 and not plan.subnetworks


def test_single_branch_cut():
    top, reversal, _ = district_network()
    plan = decompose(top, reversal)
    assert len(plan.subnetworks) == 1
    sub = plan.subnetworks[0]
    assert sub.root == "loopA" and sub.reversing
    assert [top.edges[i].id for i in sub.interface_edges] == ["loop_in"]


def test_source_inside_subnetwork_rejected():
    top = street_network(n_pairs=4)
    with pytest.raises(NetworkError):
        decompose(top, ["feed"])


@given(st.integers(0, 3), st.integers(1, 5))
def test_plan_partitions_grid(n_roots, cells):
    top, reversal, roots = district_network()
    plan = decompose(top, reversal, roots[:n_roots])
    grid = CellGrid.uniform(top, cells)
    sets = plan.cell_sets(grid)
    union = np.concatenate(sets)
    assert np.array_equal(np.sort(union), np.arange(grid.n))
    # every subnetwork input is an interface cell of the main network
    main = set(sets[0].tolist())
    for iface in plan.interface_cells(grid):
        assert iface.size and set(iface.tolist()) <= main
