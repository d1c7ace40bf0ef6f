import numpy as np
import pytest
from hypothesis import given, strategies as st

from hydronet.generators import random_network, single_pipe, street_network
from hydronet.network import CellGrid, Consumer, NetworkTopology, PipeEdge, build_flow_basis
from hydronet.transport import (EnergyMatrix, FullOrderModel, SignPatternError, SinkTerm,
                                TransportError, assemble_upwind, build_energy_matrix,
                                check_lyapunov, evaluate_operator, export_operator,
                                junction_mixing, sign_pattern_of, to_coenergy)

import oracles
from conftest import conservative_flows


def _operator_for(top, grid, q, sink=None):
    basis = build_flow_basis(top)
    return assemble_upwind(top, grid, basis, sign_pattern_of(basis, q), sink), basis


def test_mixing_single_input():
    assert junction_mixing([0.7], [2.0]) == 0.7


def test_mixing_equal_weights():
    assert junction_mixing([1.0, 3.0], [1.0, 1.0]) == 2.0


def test_mixing_stagnant_reported():
    with pytest.raises(TransportError):
        junction_mixing([1.0, 2.0], [0.0, 0.0])


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(1e-6, 10)), min_size=1, max_size=6))
def test_mixing_is_convex(pairs):
    values, flows = map(np.array, zip(*pairs))
    mixed = junction_mixing(values, flows)
    assert values.min() - 1e-12 <= mixed <= values.max() + 1e-12
    assert mixed == pytest.approx(sum(v * f for v, f in pairs) / flows.sum(), rel=1e-12, abs=1e-15)


def test_two_cell_pipe_stencil():
    top = single_pipe(length=2.0, diameter=np.sqrt(4 / np.pi))  # cross-section 1 m^2, h = 1 m
    grid = CellGrid.uniform(top, 2)
    q = np.array([0.3])
    op, _ = _operator_for(top, grid, q)
    A, B = evaluate_operator(op, q)
    Q = build_energy_matrix(grid, top).matrix()
    np.testing.assert_allclose((Q @ A).toarray(), [[-0.3, 0], [0.3, -0.3]], rtol=1e-15)
    np.testing.assert_allclose(Q @ B, [0.3, 0], rtol=1e-15)


@given(st.integers(0, 10_000))
def test_constants_are_steady(seed):
    rng = np.random.default_rng(seed)
    top = random_network(rng, max_edges=30)
    grid = CellGrid.uniform(top, int(rng.integers(1, 4)))
    q = conservative_flows(build_flow_basis(top), rng)
    op, _ = _operator_for(top, grid, q)
    A, B = evaluate_operator(op, q)
    row = np.asarray(A.sum(axis=1)).ravel() + B
    assert np.max(np.abs(row)) <= 1e-12 * max(np.abs(A).max(), 1e-300)


def test_merge_node_coefficient_is_linear():
    # two feeders merge at X into a single outgoing pipe
    edges = (PipeEdge("a", "S", "X", 20.0, 0.1, 0.02), PipeEdge("b", "S", "Y", 5.0, 0.1, 0.02),
             PipeEdge("c", "Y", "X", 5.0, 0.1, 0.02), PipeEdge("d", "X", "H", 10.0, 0.08, 0.02))
    top = NetworkTopology(edges, (Consumer("h", "d"),), "S")
    basis = build_flow_basis(top)
    grid = CellGrid.uniform(top, 2)
    q = np.array([1e-3, 0.0])
    q[1] = (0.3e-3 - basis.P[0, 0] * q[0]) / basis.P[0, 1]
    flows = basis.edge_flows(q)
    op, _ = _operator_for(top, grid, q)
    A = op.A(q).toarray()
    first_d = grid.index(3, 0)
    vol_d = top.edges[3].cross_section * grid.cell_lengths[3]
    assert A[first_d, grid.index(0, 1)] == pytest.approx(abs(flows[0]) / vol_d, rel=1e-14)
    assert A[first_d, grid.index(2, 1)] == pytest.approx(abs(flows[2]) / vol_d, rel=1e-14)
    assert op.n_rational == 0


def test_zero_flow_gives_zero_operator():
    top = street_network(n_pairs=4)
    basis = build_flow_basis(top)
    op = assemble_upwind(top, CellGrid.uniform(top, 2), basis)
    A, B = evaluate_operator(op, np.zeros(basis.n_flows))
    assert A.count_nonzero() == 0 and not np.any(B)


@given(st.integers(0, 10_000))
def test_homogeneous_on_trees(seed):
    rng = np.random.default_rng(seed)
    top = random_network(rng, max_loops=0)
    basis = build_flow_basis(top)
    q = conservative_flows(basis, rng)
    op = assemble_upwind(top, CellGrid.uniform(top, 2), basis, sign_pattern_of(basis, q))
    np.testing.assert_allclose(op.A(2 * q).toarray(), 2 * op.A(q).toarray(), rtol=1e-15, atol=0)


@given(st.integers(0, 10_000))
def test_affine_family_matches_direct_assembly(seed):
    rng = np.random.default_rng(seed)
    top = random_network(rng)
    grid = CellGrid(tuple(int(c) for c in rng.integers(1, 4, top.n_edges)), tuple(top.lengths))
    q = conservative_flows(build_flow_basis(top), rng)
    op, basis = _operator_for(top, grid, q)
    A, B = evaluate_operator(op, q)
    A_ref, B_ref = oracles.direct_upwind(top, grid, basis, q)
    scale = np.abs(A_ref).max()
    assert np.max(np.abs(A.toarray() - A_ref)) <= 1e-14 * scale
    assert np.max(np.abs(B - B_ref)) <= 1e-14 * scale


def test_sign_mismatch_names_edges():
    top = street_network(n_pairs=4)
    basis = build_flow_basis(top)
    op = assemble_upwind(top, CellGrid.uniform(top, 1), basis)
    q = np.full(basis.n_flows, 1e-4)
    q[-1] = -1.0
    with pytest.raises(SignPatternError) as info:
        evaluate_operator(op, q)
    assert "ring" in info.value.edges


def test_reversed_consumer_pattern_rejected():
    top = single_pipe()
    with pytest.raises(TransportError):
        assemble_upwind(top, CellGrid.uniform(top, 1), build_flow_basis(top), [-1])


def test_energy_matrix_unit_volumes():
    top = single_pipe(length=3.0, diameter=np.sqrt(4 / np.pi))
    Q = build_energy_matrix(CellGrid.uniform(top, 3), top)
    np.testing.assert_allclose(Q.diagonal, np.ones(3), rtol=1e-15)


def test_energy_matrix_entries():
    top = single_pipe(length=4.0, diameter=np.sqrt(4 * 0.01 / np.pi))
    Q = build_energy_matrix(CellGrid.uniform(top, 2), top)
    np.testing.assert_allclose(Q.diagonal, [0.02, 0.02], rtol=1e-14)
    L = np.diag(Q.scaling)
    np.testing.assert_allclose(L.T @ np.diag(Q.diagonal) @ L, np.eye(2), rtol=1e-15)


@given(st.integers(0, 10_000))
def test_energy_matrix_trace_is_water_volume(seed):
    top = random_network(np.random.default_rng(seed))
    grid = CellGrid.uniform(top, 3)
    expected = sum(e.cross_section * e.length for e in top.edges)
    assert build_energy_matrix(grid, top).diagonal.sum() == pytest.approx(expected, rel=1e-12)


def test_lyapunov_two_cell_pipe():
    top = single_pipe(length=2.0, diameter=np.sqrt(4 / np.pi))
    grid = CellGrid.uniform(top, 2)
    op, basis = _operator_for(top, grid, np.array([1.0]))
    chk = check_lyapunov(op.A(np.array([1.0])), build_energy_matrix(grid, top))
    assert chk.lambda_max == pytest.approx(-1.0, rel=1e-14)
    assert chk.passed


def test_lyapunov_zero_flow():
    top = single_pipe()
    grid = CellGrid.uniform(top, 2)
    op, _ = _operator_for(top, grid, np.array([0.0]))
    chk = check_lyapunov(op.A(np.zeros(1)), build_energy_matrix(grid, top))
    assert chk.lambda_max == 0.0 and chk.passed


def test_lyapunov_rejects_nonconservative_flows():
    top = street_network(n_pairs=4)
    basis = build_flow_basis(top)
    grid = CellGrid.uniform(top, 1)
    q = np.full(basis.n_flows, 1e-4)
    A = assemble_upwind(top, grid, basis).A(q)

    class Broken:
        def __getattr__(self, name):
            return getattr(basis, name)

        def node_residual(self, q):
            return np.ones(3)

    with pytest.raises(TransportError):
        check_lyapunov(A, build_energy_matrix(grid, top), q, Broken())


@given(st.integers(0, 10_000), st.booleans())
def test_lyapunov_on_street_variants(seed, flip):
    rng = np.random.default_rng(seed)
    top = street_network(n_pairs=6, seed=seed % 50)
    if flip:
        edges = tuple(PipeEdge(e.id, e.to_node, e.from_node, e.length, e.diameter, e.friction)
                      if (rng.random() < 0.5 and not e.id.startswith("h")) else e for e in top.edges)
        top = NetworkTopology(edges, top.consumers, top.source)
    basis = build_flow_basis(top)
    grid = CellGrid.uniform(top, 2)
    q = conservative_flows(basis, rng)
    op, _ = _operator_for(top, grid, q)
    chk = check_lyapunov(op.A(q), build_energy_matrix(grid, top), q, basis)
    assert chk.passed, chk


def test_coenergy_identity_scaling():
    top = single_pipe(length=3.0, diameter=np.sqrt(4 / np.pi))
    grid = CellGrid.uniform(top, 3)
    op, _ = _operator_for(top, grid, np.array([1.0]))
    form = to_coenergy(op, build_energy_matrix(grid, top))
    q = np.array([0.7])
    np.testing.assert_allclose(form.A(q).toarray(), op.A(q).toarray(), rtol=1e-15)
    np.testing.assert_allclose(form.B(q), op.B(q), rtol=1e-15)


def test_coenergy_two_cell_pipe_is_dissipative():
    top = single_pipe(length=2.0, diameter=0.3)
    grid = CellGrid.uniform(top, 2)
    q = np.array([0.05])
    op, _ = _operator_for(top, grid, q)
    Ae = to_coenergy(op, build_energy_matrix(grid, top)).A(q).toarray()
    assert np.linalg.eigvalsh(Ae + Ae.T).max() <= 1e-14


@given(st.integers(0, 10_000), st.floats(1e-5, 1e-1))
def test_coenergy_preserves_transfer_function(seed, omega):
    rng = np.random.default_rng(seed)
    top = random_network(rng, max_edges=20)
    grid = CellGrid.uniform(top, 2)
    q = conservative_flows(build_flow_basis(top), rng)
    op, _ = _operator_for(top, grid, q)
    form = to_coenergy(op, build_energy_matrix(grid, top))
    s = 1j * omega
    h_phys = oracles.dense_transfer(op.A(q).toarray(), op.B(q), op.C.toarray(), s)
    h_co = oracles.dense_transfer(form.A(q).toarray(), form.B(q), form.C.toarray(), s)
    assert np.max(np.abs(h_phys - h_co)) <= 1e-12 * max(1.0, np.abs(h_phys).max())


@given(st.integers(0, 10_000))
def test_galerkin_projection_inherits_stability(seed):
    rng = np.random.default_rng(seed)
    top = random_network(rng, max_edges=20)
    grid = CellGrid.uniform(top, 2)
    q = conservative_flows(build_flow_basis(top), rng)
    op, _ = _operator_for(top, grid, q)
    Ae = to_coenergy(op, build_energy_matrix(grid, top)).A(q).toarray()
    V, _ = np.linalg.qr(rng.standard_normal((grid.n, max(1, grid.n // 3))))
    full = np.linalg.eigvalsh(Ae + Ae.T).max()
    red = np.linalg.eigvalsh(V.T @ (Ae + Ae.T) @ V).max()
    assert red <= full + 1e-12 * np.abs(Ae).max()
    assert full <= 1e-10 * np.linalg.norm(Ae, 2)


def test_sink_term_only_when_requested():
    top = single_pipe()
    object.__setattr__(top.edges[0], "heat_transfer", 2.0)
    grid = CellGrid.uniform(top, 2)
    basis = build_flow_basis(top)
    plain = assemble_upwind(top, grid, basis)
    lossy = assemble_upwind(top, grid, basis, sink=SinkTerm(ambient=0.1))
    q = np.array([1e-3])
    rate = 4 * 2.0 / (top.edges[0].diameter * 4.18e6)
    diff = (lossy.A(q) - plain.A(q)).toarray()
    np.testing.assert_allclose(diff, -rate * np.eye(2), rtol=1e-14)
    np.testing.assert_allclose(lossy.forcing, rate * 0.1 * np.ones(2), rtol=1e-14)
    assert not plain.has_sink and not np.any(plain.forcing)


def test_export_writes_one_file_per_matrix(tmp_path):
    top = street_network(n_pairs=4)
    op = assemble_upwind(top, CellGrid.uniform(top, 2), build_flow_basis(top))
    paths = export_operator(op, tmp_path)
    assert len(paths) == op.n_f + 1
    header = paths[0].read_text().splitlines()[0]
    assert f"n={op.n}" in header and f"n_f={op.n_f}" in header and "pattern=" in header
    data = np.loadtxt(paths[0], ndmin=2)
    A0 = op.basis_matrices()[0].tocoo()
    assert data.shape[0] == A0.nnz


def test_full_model_caches_patterns():
    top = street_network(n_pairs=4)
    model = FullOrderModel(top, CellGrid.uniform(top, 1))
    q = np.full(model.basis.n_flows, 1e-4)
    model.system(q)
    model.system(2 * q)
    assert model.assemblies == 1
    q[-1] = -1.0
    model.system(q)
    assert model.assemblies == 2
