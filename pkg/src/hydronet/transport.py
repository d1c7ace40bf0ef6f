"""Upwind finite-volume transport on the network as an affine operator family.

For a fixed sign pattern (flow direction per edge) the semi-discrete transport

    dphi/dt = A(q) phi + B(q) u_T + d

is written as ``A(q) = sum_i f_i(q) A_i`` with weights ``f = [q, rational, 1]``:
the independent flows, rational mixing weights for junctions with at least two
inflows and two outflows, and a constant weight for the optional heat-loss sink.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sp
import scipy.sparse.linalg as spsla

from .network import CellGrid, FlowBasis, NetworkTopology

__all__ = [
    "TransportError",
    "SignPatternError",
    "SinkTerm",
    "AffineOperator",
    "CoEnergyForm",
    "EnergyMatrix",
    "LyapunovCheck",
    "junction_mixing",
    "sign_pattern_of",
    "assemble_upwind",
    "evaluate_operator",
    "build_energy_matrix",
    "check_lyapunov",
    "to_coenergy",
    "output_cells",
    "default_pattern",
    "FullOrderModel",
    "export_operator",
]


class TransportError(ValueError):
    pass


class SignPatternError(TransportError):
    def __init__(self, edges):
        self.edges = list(edges)
        super().__init__(f"flow direction differs from the operator sign pattern on edges {self.edges}")


def junction_mixing(values, flows) -> float:
    """Energy density leaving a node under perfect mixing of the incoming flows."""
    values = np.asarray(values, dtype=float)
    flows = np.asarray(flows, dtype=float)
    if np.any(flows < 0):
        raise TransportError("incoming flows must be nonnegative")
    total = flows.sum()
    if not total > 0:
        raise TransportError("stagnant junction: all incoming flows are zero")
    return float(flows @ values / total)


@dataclass(frozen=True)
class SinkTerm:
    """Linear heat loss ``-(4k / (d rho c_p)) (phi - ambient)``; off unless requested."""

    ambient: float = 0.0
    heat_capacity: float = 4.18e6

    def rates(self, topology: NetworkTopology) -> np.ndarray:
        k = np.array([e.heat_transfer for e in topology.edges])
        return 4.0 * k / (topology.diameters * self.heat_capacity)


def sign_pattern_of(basis: FlowBasis, q) -> np.ndarray:
    """Per-edge flow direction relative to the reference orientation (zero flow counts as +1)."""
    flows = basis.edge_flows(q)
    return np.where(flows < 0, -1, 1).astype(np.int8)


def default_pattern(topology: NetworkTopology) -> np.ndarray:
    """Reference orientation everywhere except consumer pipes, which point to their house."""
    pattern = np.ones(topology.n_edges, dtype=np.int8)
    for e_idx, leaf in zip(topology.consumer_edges, topology.consumer_nodes):
        if topology.edges[e_idx].from_node == leaf:
            pattern[e_idx] = -1
    return pattern


def output_cells(topology: NetworkTopology, grid: CellGrid) -> np.ndarray:
    """Cell adjacent to each consumer's leaf node."""
    cells = []
    for e_idx, leaf in zip(topology.consumer_edges, topology.consumer_nodes):
        e = topology.edges[e_idx]
        cells.append(grid.index(e_idx, grid.counts[e_idx] - 1) if e.to_node == leaf
                     else grid.index(e_idx, 0))
    return np.array(cells, dtype=int)


@dataclass(frozen=True)
class AffineOperator:
    """Affine family ``A(q) = sum f_i(q) A_i``, ``B(q) = sum f_i(q) B_i``, output map ``C``.

    ``A_i`` share one CSR sparsity structure; ``W`` maps the weight vector to
    the CSR data array, so one evaluation costs a sparse mat-vec with ``W``.
    """

    topology: NetworkTopology
    grid: CellGrid
    basis: FlowBasis
    pattern: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    W: sp.csr_matrix
    WB: sp.csr_matrix
    C: sp.csr_matrix
    forcing: np.ndarray
    rational: tuple[np.ndarray, np.ndarray, np.ndarray]
    has_sink: bool
    scaling: np.ndarray | None = None
    sink: SinkTerm | None = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def n_q(self) -> int:
        return self.basis.n_flows

    @property
    def n_rational(self) -> int:
        return self.rational[0].shape[0]

    @property
    def n_f(self) -> int:
        return self.n_q + self.n_rational + int(self.has_sink)

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def pattern_key(self) -> bytes:
        return np.asarray(self.pattern, dtype=np.int8).tobytes()

    def weights(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return rational_weights(self.rational, q, self.has_sink)

    def check_pattern(self, q, rtol: float = 1e-12) -> None:
        flows = self.basis.edge_flows(q)
        scale = np.max(np.abs(flows)) if flows.size else 0.0
        bad = np.flatnonzero(self.pattern * flows < -rtol * scale)
        if bad.size:
            raise SignPatternError([self.topology.edges[i].id for i in bad])

    def A(self, q) -> sp.csr_matrix:
        data = self.W @ self.weights(q)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def B(self, q) -> np.ndarray:
        return self.WB @ self.weights(q)

    def basis_matrices(self) -> list[sp.csr_matrix]:
        mats = []
        W = self.W.tocsc()
        for j in range(self.n_f):
            data = W[:, j].toarray().ravel()
            m = sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))
            m.eliminate_zeros()
            mats.append(m)
        return mats

    def input_matrix(self) -> np.ndarray:
        """``n x n_f`` array whose columns are the ``B_i``."""
        return self.WB.toarray()


CoEnergyForm = AffineOperator


def rational_weights(rational, q: np.ndarray, has_sink: bool) -> np.ndarray:
    num_a, num_b, den = rational
    parts = [q]
    if num_a.shape[0]:
        a, b, c = num_a @ q, num_b @ q, den @ q
        with np.errstate(divide="ignore", invalid="ignore"):
            parts.append(np.where(c > 0, a * b / np.where(c > 0, c, 1.0), 0.0))
    if has_sink:
        parts.append(np.ones(1))
    return np.concatenate(parts)


def _node_flows(topology: NetworkTopology, pattern: np.ndarray):
    tail, head = topology.endpoints()
    ins = [[] for _ in range(topology.n_nodes)]
    outs = [[] for _ in range(topology.n_nodes)]
    for i in range(topology.n_edges):
        up, down = (tail[i], head[i]) if pattern[i] > 0 else (head[i], tail[i])
        outs[up].append(i)
        ins[down].append(i)
    ins[topology.node_index[topology.source]].insert(0, "src")
    return ins, outs


def assemble_upwind(topology: NetworkTopology, grid: CellGrid, basis: FlowBasis,
                    sign_pattern=None, sink: SinkTerm | None = None) -> AffineOperator:
    """Assemble the affine upwind family for one flow-direction pattern.

    Interior cells get ``-(v_i/h_i)(phi_j - phi_{j-1})``; the first cell in flow
    direction couples to the mixed energy density of its upstream node, the
    source node mixing in ``u_T`` with the total consumer flow.
    """
    if grid.n == 0 or len(grid.counts) != topology.n_edges:
        raise TransportError("cell grid does not match the topology")
    if sign_pattern is None:
        sign_pattern = default_pattern(topology)
    pattern = np.asarray(sign_pattern, dtype=np.int8).copy()
    if pattern.shape != (topology.n_edges,) or not np.all(np.abs(pattern) == 1):
        raise TransportError("sign pattern must hold +1/-1 per edge")
    for e_idx, leaf in zip(topology.consumer_edges, topology.consumer_nodes):
        expected = 1 if topology.edges[e_idx].to_node == leaf else -1
        if pattern[e_idx] != expected:
            raise TransportError(
                f"sign pattern reverses consumer edge {topology.edges[e_idx].id!r}")
    pattern.setflags(write=False)

    H, L = basis.n_consumers, basis.n_flows
    coef = basis.P * pattern[:, None]
    src_coef = np.zeros(L)
    src_coef[:H] = 1.0
    volume = topology.cross_sections * grid.cell_lengths
    ins, outs = _node_flows(topology, pattern)
    tail, head = topology.endpoints()

    rat_a, rat_b, rat_c = [], [], []
    a_rows, a_cols, a_w, a_v = [], [], [], []
    b_rows, b_w, b_v = [], [], []

    def linear(rows, cols, w, v, row, col, vec, scale):
        nz = np.flatnonzero(vec)
        rows.extend([row] * nz.size)
        if cols is not None:
            cols.extend([col] * nz.size)
        w.extend(nz.tolist())
        v.extend((vec[nz] * scale).tolist())

    for i in range(topology.n_edges):
        cells = grid.edge_cells(i)
        if pattern[i] < 0:
            cells = cells[::-1]
        inv_vol = 1.0 / volume[i]
        for j, c in enumerate(cells):
            linear(a_rows, a_cols, a_w, a_v, c, c, coef[i], -inv_vol)
            if j:
                linear(a_rows, a_cols, a_w, a_v, c, cells[j - 1], coef[i], inv_vol)
        node = tail[i] if pattern[i] > 0 else head[i]
        node_in, node_out = ins[node], outs[node]
        first = cells[0]
        for src in node_in:
            src_vec = src_coef if src == "src" else coef[src]
            if len(node_in) == 1:
                vec = coef[i]
            elif len(node_out) == 1:
                vec = src_vec
            else:
                vec = None
            if src == "src":
                if vec is not None:
                    linear(b_rows, None, b_w, b_v, first, None, vec, inv_vol)
                else:
                    b_rows.append(first)
                    b_w.append(L + len(rat_a))
                    b_v.append(inv_vol)
            else:
                outlet = grid.edge_cells(src)[-1] if pattern[src] > 0 else grid.edge_cells(src)[0]
                if vec is not None:
                    linear(a_rows, a_cols, a_w, a_v, first, outlet, vec, inv_vol)
                else:
                    a_rows.append(first)
                    a_cols.append(outlet)
                    a_w.append(L + len(rat_a))
                    a_v.append(inv_vol)
            if vec is None:
                total = sum((src_coef if k == "src" else coef[k]) for k in node_in)
                rat_a.append(coef[i])
                rat_b.append(src_vec)
                rat_c.append(total)

    n_rat = len(rat_a)
    has_sink = sink is not None
    n_f = L + n_rat + int(has_sink)
    forcing = np.zeros(grid.n)
    if has_sink:
        rates = sink.rates(topology)
        for i in range(topology.n_edges):
            for c in grid.edge_cells(i):
                if rates[i] > 0:
                    a_rows.append(c)
                    a_cols.append(c)
                    a_w.append(n_f - 1)
                    a_v.append(-rates[i])
                    forcing[c] = rates[i] * sink.ambient

    n = grid.n
    pos = np.asarray(a_rows, dtype=np.int64) * n + np.asarray(a_cols, dtype=np.int64)
    # cells always carry a diagonal entry; keep it even when its coefficient cancels
    pos = np.concatenate([pos, np.arange(n, dtype=np.int64) * (n + 1)])
    uniq, inverse = np.unique(pos, return_inverse=True)
    inverse = inverse[: len(a_rows)]
    W = sp.csr_matrix((a_v, (inverse, a_w)), shape=(uniq.size, n_f))
    W.sum_duplicates()
    rows, cols = np.divmod(uniq, n)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))]).astype(np.int64)
    WB = sp.csr_matrix((b_v, (b_rows, b_w)), shape=(n, n_f))
    WB.sum_duplicates()
    out = output_cells(topology, grid)
    C = sp.csr_matrix((np.ones(out.size), (np.arange(out.size), out)), shape=(out.size, n))
    shape = (0, L)
    rational = (np.array(rat_a).reshape(-1, L) if n_rat else np.zeros(shape),
                np.array(rat_b).reshape(-1, L) if n_rat else np.zeros(shape),
                np.array(rat_c).reshape(-1, L) if n_rat else np.zeros(shape))
    return AffineOperator(topology, grid, basis, pattern, indptr, cols.astype(np.int64), W, WB,
                          C, forcing, rational, has_sink, None, sink)


def evaluate_operator(affine: AffineOperator, q) -> tuple[sp.csr_matrix, np.ndarray]:
    """Concrete ``A(q), B(q)`` for a flow vector compatible with the sign pattern."""
    affine.check_pattern(q)
    return affine.A(q), affine.B(q)


@dataclass(frozen=True)
class EnergyMatrix:
    """Diagonal energy matrix of cell volumes ``Phi_i h_i``."""

    diagonal: np.ndarray

    def __post_init__(self):
        if np.any(self.diagonal <= 0):
            raise TransportError("energy matrix must be positive definite")

    @property
    def sqrt(self) -> np.ndarray:
        return np.sqrt(self.diagonal)

    @property
    def scaling(self) -> np.ndarray:
        """Diagonal of ``L`` with ``L^T Q L = I``."""
        return 1.0 / np.sqrt(self.diagonal)

    def matrix(self) -> sp.dia_matrix:
        return sp.diags(self.diagonal)


def build_energy_matrix(grid: CellGrid, topology: NetworkTopology) -> EnergyMatrix:
    volume = topology.cross_sections * grid.cell_lengths
    return EnergyMatrix(np.repeat(volume, grid.counts))


@dataclass(frozen=True)
class LyapunovCheck:
    lambda_max: float
    norm: float
    diagonal_nonpositive: bool
    diagonally_dominant: bool
    worst_row_excess: float

    @property
    def passed(self) -> bool:
        return (self.lambda_max <= 1e-10 * max(self.norm, np.finfo(float).tiny)
                and self.diagonal_nonpositive and self.diagonally_dominant)


def check_lyapunov(A, Q, flows=None, basis: FlowBasis | None = None,
                   dense_limit: int = 4000) -> LyapunovCheck:
    """Largest eigenvalue of ``M = (QA)^T + QA`` plus the diagonal-dominance audit.

    If ``flows`` (independent flows) and ``basis`` are given, volume
    conservation at every junction is checked first.
    """
    if flows is not None and basis is not None:
        res = basis.node_residual(flows)
        scale = max(np.max(np.abs(basis.edge_flows(flows))), np.finfo(float).tiny)
        if res.size and np.max(np.abs(res)) > 1e-10 * scale:
            raise TransportError("flows violate volume conservation")
    q_diag = Q.diagonal if isinstance(Q, EnergyMatrix) else np.asarray(Q, dtype=float)
    QA = sp.diags(q_diag) @ sp.csr_matrix(A)
    M = (QA + QA.T).tocsr()
    n = M.shape[0]
    diag = M.diagonal()
    off = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(diag)
    scale = max(np.max(np.abs(diag)) if n else 0.0, np.finfo(float).tiny)
    excess = off - np.abs(diag)
    dominant = bool(np.all(excess <= 1e-12 * scale))
    if n <= dense_limit:
        Md = M.toarray()
        lam = float(spla.eigvalsh(Md)[-1]) if n else 0.0
        norm = float(np.linalg.norm(QA.toarray(), 2)) if n else 0.0
    else:
        lam = float(spsla.eigsh(M, k=1, which="LA", return_eigenvectors=False)[0])
        norm = float(spsla.svds(QA, k=1, return_singular_vectors=False)[0])
    return LyapunovCheck(lam, norm, bool(np.all(diag <= 0)), dominant,
                         float(excess.max()) if n else 0.0)


def to_coenergy(affine: AffineOperator, Q: EnergyMatrix) -> CoEnergyForm:
    """Transform to scaled co-energy coordinates ``e = L^{-1} phi``, ``L = Q^{-1/2}``."""
    if affine.scaling is not None:
        raise TransportError("operator is already in co-energy coordinates")
    s = Q.sqrt
    n = affine.n
    rows = np.repeat(np.arange(n), np.diff(affine.indptr))
    factor = s[rows] / s[affine.indices]
    W = sp.diags(factor) @ affine.W
    WB = sp.diags(s) @ affine.WB
    C = affine.C @ sp.diags(1.0 / s)
    return replace(affine, W=sp.csr_matrix(W), WB=sp.csr_matrix(WB), C=sp.csr_matrix(C),
                   forcing=affine.forcing * s, scaling=s)


def export_operator(affine: AffineOperator, directory: str | Path) -> list[Path]:
    """Write each ``A_i`` (and the ``B_i`` block) as coordinate-list text files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pattern = "".join("+" if s > 0 else "-" for s in affine.pattern)
    header = f"n={affine.n} n_f={affine.n_f} pattern={pattern}"
    paths = []
    for j, m in enumerate(affine.basis_matrices()):
        coo = m.tocoo()
        path = directory / f"A_{j:03d}.txt"
        np.savetxt(path, np.column_stack([coo.row, coo.col, coo.data]),
                   fmt=["%d", "%d", "%.17g"], header=f"{header} matrix=A_{j} row col value")
        paths.append(path)
    coo = affine.WB.tocoo()
    path = directory / "B.txt"
    np.savetxt(path, np.column_stack([coo.row, coo.col, coo.data]),
               fmt=["%d", "%d", "%.17g"], header=f"{header} matrix=B row weight value")
    paths.append(path)
    return paths


class FullOrderModel:
    """Upwind model of one network at one resolution, with per-pattern operator caching.

    Physical operators drive the simulation; co-energy operators feed the
    reduction.  Both are assembled lazily for every flow-direction pattern met.
    """

    kind = "FOM"

    def __init__(self, topology: NetworkTopology, grid: CellGrid, basis: FlowBasis | None = None,
                 sink: SinkTerm | None = None):
        from .network import build_flow_basis

        self.topology = topology
        self.grid = grid
        self.basis = basis if basis is not None else build_flow_basis(topology)
        self.sink = sink
        self.energy = build_energy_matrix(grid, topology)
        self._physical: dict[bytes, AffineOperator] = {}
        self._coenergy: dict[bytes, CoEnergyForm] = {}
        self.assemblies = 0

    @property
    def order(self) -> int:
        return self.grid.n

    @property
    def n_outputs(self) -> int:
        return self.topology.n_consumers

    @property
    def patterns_seen(self) -> int:
        return len(self._physical)

    def pattern(self, q) -> np.ndarray:
        return sign_pattern_of(self.basis, q)

    def operator(self, pattern) -> AffineOperator:
        key = np.asarray(pattern, dtype=np.int8).tobytes()
        op = self._physical.get(key)
        if op is None:
            op = assemble_upwind(self.topology, self.grid, self.basis, pattern, self.sink)
            self._physical[key] = op
            self.assemblies += 1
        return op

    def coenergy(self, pattern) -> CoEnergyForm:
        key = np.asarray(pattern, dtype=np.int8).tobytes()
        form = self._coenergy.get(key)
        if form is None:
            form = to_coenergy(self.operator(pattern), self.energy)
            self._coenergy[key] = form
        return form

    def form_for(self, q) -> CoEnergyForm:
        return self.coenergy(self.pattern(q))

    # simulation interface
    def initial_state(self, value: float) -> np.ndarray:
        return np.full(self.grid.n, float(value))

    def outputs(self, x: np.ndarray) -> np.ndarray:
        return x[output_cells(self.topology, self.grid)]

    def system(self, q, pattern=None):
        op = self.operator(self.pattern(q) if pattern is None else pattern)
        return op.A(q), op.B(q), op.forcing

    def max_rate(self, q) -> float:
        """Largest cell outflow rate ``|q_i| / (Phi_i h_i)``; explicit steps need ``dt * rate <= 1``."""
        flows = np.abs(self.basis.edge_flows(q))
        volume = self.topology.cross_sections * self.grid.cell_lengths
        return float(np.max(flows / volume))
