"""Network topology, independent-flow basis, cell grids and decomposition plans.

Edges carry a reference orientation ``from_node -> to_node``.  Consumers sit at
leaf nodes and withdraw the whole flow of their connection pipe; the source
node injects the sum of all consumer flows.  Volume flows are parameterized by
``L = H + #cycles`` independent coordinates: one per consumer followed by one
per fundamental cycle of a spanning tree rooted at the source.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Hashable, Iterable, Sequence

import numpy as np

__all__ = [
    "NetworkError",
    "PipeEdge",
    "Consumer",
    "NetworkTopology",
    "FlowBasis",
    "CellGrid",
    "Subnetwork",
    "DecompositionPlan",
    "parse_network",
    "load_network",
    "network_to_dict",
    "save_network",
    "build_flow_basis",
    "distribute_cells",
    "decompose",
]


class NetworkError(ValueError):
    """Invalid network description or inconsistent network request."""


@dataclass(frozen=True)
class PipeEdge:
    id: Hashable
    from_node: Hashable
    to_node: Hashable
    length: float
    diameter: float
    friction: float
    heat_transfer: float = 0.0
    height_delta: float = 0.0

    def __post_init__(self):
        for name in ("length", "diameter"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise NetworkError(f"edge {self.id!r}: {name} must be > 0, got {value!r}")
        if not (np.isfinite(self.friction) and self.friction >= 0):
            raise NetworkError(f"edge {self.id!r}: friction must be >= 0, got {self.friction!r}")
        if not (np.isfinite(self.heat_transfer) and self.heat_transfer >= 0):
            raise NetworkError(f"edge {self.id!r}: heat transfer must be >= 0")
        if not np.isfinite(self.height_delta):
            raise NetworkError(f"edge {self.id!r}: height delta must be finite")
        if self.from_node == self.to_node:
            raise NetworkError(f"edge {self.id!r}: self loops are not allowed")

    @property
    def cross_section(self) -> float:
        return math.pi * self.diameter**2 / 4.0


@dataclass(frozen=True)
class Consumer:
    id: Hashable
    edge: Hashable


@dataclass(frozen=True)
class NetworkTopology:
    """Validated, immutable pipe network.

    Attributes
    ----------
    edges
        Pipes in global order; the order fixes the cell ordering function.
    consumers
        Houses; each is attached to the outlet of a leaf pipe.
    source
        Node where the plant feeds the input energy density.
    """

    edges: tuple[PipeEdge, ...]
    consumers: tuple[Consumer, ...]
    source: Hashable
    nodes: tuple[Hashable, ...] = field(init=False)
    edge_index: dict = field(init=False, repr=False, compare=False)
    node_index: dict = field(init=False, repr=False, compare=False)
    consumer_edges: tuple[int, ...] = field(init=False, repr=False, compare=False)
    consumer_nodes: tuple[Hashable, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = tuple(self.edges)
        consumers = tuple(self.consumers)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "consumers", consumers)
        if not edges:
            raise NetworkError("network has no edges")
        edge_index = {}
        for i, e in enumerate(edges):
            if e.id in edge_index:
                raise NetworkError(f"duplicate edge id {e.id!r}")
            edge_index[e.id] = i
        nodes = []
        node_index = {}
        for e in edges:
            for nd in (e.from_node, e.to_node):
                if nd not in node_index:
                    node_index[nd] = len(nodes)
                    nodes.append(nd)
        if self.source not in node_index:
            raise NetworkError(f"source node {self.source!r} is not incident to any edge")
        object.__setattr__(self, "nodes", tuple(nodes))
        object.__setattr__(self, "edge_index", edge_index)
        object.__setattr__(self, "node_index", node_index)

        degree = np.zeros(len(nodes), dtype=int)
        for e in edges:
            degree[node_index[e.from_node]] += 1
            degree[node_index[e.to_node]] += 1
        if not _is_connected(nodes, edges, node_index):
            raise NetworkError("network graph is not connected")

        seen_ids = set()
        cedges, cnodes = [], []
        for c in consumers:
            if c.id in seen_ids:
                raise NetworkError(f"duplicate consumer id {c.id!r}")
            seen_ids.add(c.id)
            if c.edge not in edge_index:
                raise NetworkError(f"consumer {c.id!r} refers to unknown edge {c.edge!r}")
            e = edges[edge_index[c.edge]]
            leaves = [nd for nd in (e.to_node, e.from_node)
                      if degree[node_index[nd]] == 1 and nd != self.source]
            if not leaves:
                raise NetworkError(
                    f"consumer {c.id!r}: edge {c.edge!r} does not end in a leaf node")
            if leaves[0] in cnodes:
                raise NetworkError(f"consumer {c.id!r} shares its leaf node with another consumer")
            cedges.append(edge_index[c.edge])
            cnodes.append(leaves[0])
        if not consumers:
            raise NetworkError("network has no consumers")
        object.__setattr__(self, "consumer_edges", tuple(cedges))
        object.__setattr__(self, "consumer_nodes", tuple(cnodes))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_consumers(self) -> int:
        return len(self.consumers)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cycles(self) -> int:
        return self.n_edges - self.n_nodes + 1

    @property
    def n_flows(self) -> int:
        return self.n_consumers + self.n_cycles

    @property
    def lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.edges])

    @property
    def diameters(self) -> np.ndarray:
        return np.array([e.diameter for e in self.edges])

    @property
    def cross_sections(self) -> np.ndarray:
        return np.array([e.cross_section for e in self.edges])

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Node indices ``(from, to)`` of every edge."""
        tail = np.array([self.node_index[e.from_node] for e in self.edges])
        head = np.array([self.node_index[e.to_node] for e in self.edges])
        return tail, head

    def incidence(self) -> np.ndarray:
        """Node-edge incidence, +1 where an edge enters a node, -1 where it leaves."""
        inc = np.zeros((self.n_nodes, self.n_edges))
        tail, head = self.endpoints()
        inc[tail, np.arange(self.n_edges)] -= 1.0
        inc[head, np.arange(self.n_edges)] += 1.0
        return inc

    def junctions(self) -> list[int]:
        """Indices of nodes where volume conservation holds (neither source nor consumer)."""
        excluded = {self.node_index[self.source]}
        excluded.update(self.node_index[nd] for nd in self.consumer_nodes)
        return [k for k in range(self.n_nodes) if k not in excluded]

    def total_volume(self) -> float:
        return float(np.sum(self.cross_sections * self.lengths))

    def relabeled(self, permutation: Sequence[int]) -> "NetworkTopology":
        """Same network with edges listed in the order ``permutation``."""
        return NetworkTopology(tuple(self.edges[i] for i in permutation), self.consumers, self.source)


def _is_connected(nodes, edges, node_index) -> bool:
    adj = [[] for _ in nodes]
    for e in edges:
        a, b = node_index[e.from_node], node_index[e.to_node]
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        k = stack.pop()
        for m in adj[k]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return len(seen) == len(nodes)


# --------------------------------------------------------------------------- JSON

_EDGE_KEYS = ("id", "from", "to", "length_m", "diameter_m", "lambda")


def parse_network(data: dict | str | Path) -> NetworkTopology:
    """Build a topology from the network JSON schema (a dict or a file path)."""
    if not isinstance(data, dict):
        path = Path(data)
        if not path.exists():
            raise FileNotFoundError(f"network file not found: {path}")
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise NetworkError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise NetworkError("network JSON must be an object")
    for key in ("edges", "consumers", "source_node"):
        if key not in data:
            raise NetworkError(f"network JSON lacks required key {key!r}")
    source = data["source_node"]
    if isinstance(source, (list, tuple, dict)):
        raise NetworkError("exactly one source node is supported")
    if not isinstance(data["edges"], list) or not isinstance(data["consumers"], list):
        raise NetworkError("'edges' and 'consumers' must be lists")

    edges = []
    for k, rec in enumerate(data["edges"]):
        if not isinstance(rec, dict):
            raise NetworkError(f"edge #{k} is not an object")
        missing = [key for key in _EDGE_KEYS if key not in rec]
        if missing:
            raise NetworkError(f"edge #{k} lacks keys {missing}")
        try:
            edges.append(PipeEdge(
                id=rec["id"],
                from_node=rec["from"],
                to_node=rec["to"],
                length=_number(rec["length_m"], "length_m"),
                diameter=_number(rec["diameter_m"], "diameter_m"),
                friction=_number(rec["lambda"], "lambda"),
                heat_transfer=_number(rec.get("k_W_m2K", 0.0), "k_W_m2K"),
                height_delta=_number(rec.get("dz_m", 0.0), "dz_m"),
            ))
        except TypeError as exc:
            raise NetworkError(f"edge #{k}: {exc}") from exc
    consumers = []
    for k, rec in enumerate(data["consumers"]):
        if not isinstance(rec, dict) or "id" not in rec or "edge" not in rec:
            raise NetworkError(f"consumer #{k} must have 'id' and 'edge'")
        consumers.append(Consumer(rec["id"], rec["edge"]))
    return NetworkTopology(tuple(edges), tuple(consumers), source)


def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkError(f"{name} must be a number, got {value!r}")
    return float(value)


load_network = parse_network


def network_to_dict(topology: NetworkTopology) -> dict:
    return {
        "edges": [
            {
                "id": e.id,
                "from": e.from_node,
                "to": e.to_node,
                "length_m": e.length,
                "diameter_m": e.diameter,
                "lambda": e.friction,
                "k_W_m2K": e.heat_transfer,
                "dz_m": e.height_delta,
            }
            for e in topology.edges
        ],
        "consumers": [{"id": c.id, "edge": c.edge} for c in topology.consumers],
        "source_node": topology.source,
    }


def save_network(topology: NetworkTopology, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(topology), fh, indent=1)
        fh.write("\n")


# --------------------------------------------------------------------- flow basis

@dataclass(frozen=True)
class FlowBasis:
    """Independent-flow parameterization ``v = K q``.

    Attributes
    ----------
    K
        ``E x L`` map from independent volume flows to edge velocities.
    P
        ``E x L`` map to signed edge volume flows, ``P = diag(Phi) K``.
    G
        ``(L - H) x E`` friction weights ``lambda rho L_i / (2 d_i)`` with cycle
        signs, acting on ``v_i |v_i|``; rows are loop pressure sums in Pa.
    tree_edges, chords
        Spanning tree (rooted at the source) and its complement.
    cycles
        For every chord, the list of ``(edge index, sign)`` around its cycle.
    """

    topology: NetworkTopology
    K: np.ndarray
    P: np.ndarray
    G: np.ndarray
    tree_edges: tuple[int, ...]
    chords: tuple[int, ...]
    cycles: tuple[tuple[tuple[int, int], ...], ...]
    rho: float

    @property
    def n_flows(self) -> int:
        return self.K.shape[1]

    @property
    def n_consumers(self) -> int:
        return self.topology.n_consumers

    @property
    def n_loops(self) -> int:
        return self.K.shape[1] - self.topology.n_consumers

    def velocities(self, q: np.ndarray) -> np.ndarray:
        return self.K @ np.asarray(q, dtype=float)

    def edge_flows(self, q: np.ndarray) -> np.ndarray:
        return self.P @ np.asarray(q, dtype=float)

    def node_residual(self, q: np.ndarray) -> np.ndarray:
        """Net volume inflow at each junction (zero for conservative flows)."""
        inc = self.topology.incidence()
        return inc[self.topology.junctions()] @ self.edge_flows(q)


def _tree_paths(topology: NetworkTopology):
    """BFS spanning tree from the source: parent node, parent edge, edge direction."""
    n = topology.n_nodes
    adj = [[] for _ in range(n)]
    tail, head = topology.endpoints()
    for i in range(topology.n_edges):
        adj[tail[i]].append((head[i], i, +1))
        adj[head[i]].append((tail[i], i, -1))
    root = topology.node_index[topology.source]
    parent = [-1] * n
    parent_edge = [-1] * n
    parent_sign = [0] * n
    depth = [0] * n
    seen = [False] * n
    seen[root] = True
    queue = deque([root])
    tree = []
    while queue:
        k = queue.popleft()
        for m, i, sgn in adj[k]:
            if not seen[m]:
                seen[m] = True
                parent[m], parent_edge[m], parent_sign[m] = k, i, sgn
                depth[m] = depth[k] + 1
                tree.append(i)
                queue.append(m)
    if not all(seen):
        raise NetworkError("isolated node: incidence structure is singular")
    return parent, parent_edge, parent_sign, depth, tree


def _path_from_root(node, parent, parent_edge, parent_sign):
    """Edges (with sign of traversal root -> node) on the tree path to ``node``."""
    path = []
    while parent[node] != -1:
        path.append((parent_edge[node], parent_sign[node]))
        node = parent[node]
    return path[::-1]


def build_flow_basis(topology: NetworkTopology, rho: float = 1000.0) -> FlowBasis:
    """Spanning-tree / fundamental-cycle basis with consumer flows first."""
    E, H = topology.n_edges, topology.n_consumers
    parent, parent_edge, parent_sign, depth, tree = _tree_paths(topology)
    tree_set = set(tree)
    chords = [i for i in range(E) if i not in tree_set]
    L = H + len(chords)
    phi = topology.cross_sections
    P = np.zeros((E, L))
    for h, nd in enumerate(topology.consumer_nodes):
        k = topology.node_index[nd]
        for i, sgn in _path_from_root(k, parent, parent_edge, parent_sign):
            P[i, h] += sgn

    tail, head = topology.endpoints()
    cycles = []
    for c, i in enumerate(chords):
        # chord a -> b, then back along the tree from b to a
        a, b = tail[i], head[i]
        cyc = {i: +1}
        pa = _path_from_root(a, parent, parent_edge, parent_sign)
        pb = _path_from_root(b, parent, parent_edge, parent_sign)
        common = 0
        while common < min(len(pa), len(pb)) and pa[common][0] == pb[common][0]:
            common += 1
        for j, sgn in pb[common:]:
            cyc[j] = cyc.get(j, 0) - sgn
        for j, sgn in pa[common:]:
            cyc[j] = cyc.get(j, 0) + sgn
        entries = tuple((j, s) for j, s in sorted(cyc.items()) if s != 0)
        cycles.append(entries)
        for j, s in entries:
            P[j, H + c] = s

    K = P / phi[:, None]
    weights = np.array([e.friction * rho * e.length / (2.0 * e.diameter) for e in topology.edges])
    G = np.zeros((len(chords), E))
    for c, entries in enumerate(cycles):
        for j, s in entries:
            G[c, j] = s * weights[j]
    return FlowBasis(topology, K, P, G, tuple(sorted(tree_set)), tuple(chords), tuple(cycles), rho)


# ------------------------------------------------------------------------ cells

@dataclass(frozen=True)
class CellGrid:
    """Finite-volume cells per edge and the global ordering ``f(e, c) = c + sum_{k<e} n_k``.

    Cells of an edge are numbered from its ``from_node`` end; indices are 0-based.
    """

    counts: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        if len(counts) != len(self.lengths):
            raise NetworkError("cell counts and lengths differ in size")
        if any(c < 1 for c in counts):
            raise NetworkError("every edge needs at least one cell")

    @classmethod
    def uniform(cls, topology: NetworkTopology, cells: int) -> "CellGrid":
        return cls((cells,) * topology.n_edges, tuple(topology.lengths))

    @property
    def n(self) -> int:
        return int(sum(self.counts))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(int)

    @property
    def cell_lengths(self) -> np.ndarray:
        """Per-edge cell length ``h_i``."""
        return np.asarray(self.lengths) / np.asarray(self.counts)

    def index(self, edge: int, cell: int) -> int:
        if not 0 <= cell < self.counts[edge]:
            raise IndexError(f"edge {edge} has {self.counts[edge]} cells, asked for {cell}")
        return int(self.offsets[edge]) + cell

    def locate(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.n:
            raise IndexError(k)
        e = int(np.searchsorted(np.cumsum(self.counts), k, side="right"))
        return e, k - int(self.offsets[e])

    def edge_of_cell(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.counts)), self.counts)

    def edge_cells(self, edge: int) -> np.ndarray:
        start = int(self.offsets[edge])
        return np.arange(start, start + self.counts[edge])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def distribute_cells(topology: NetworkTopology, c_r: float, n_min: int,
                     v_ref: Sequence[float]) -> CellGrid:
    """Cells per edge equalizing the CFL ratios ``n_i v_i / L_i``.

    The reference pipe is the one with the largest ``v_i / L_i``; it receives
    ``c_r`` cells and every other edge ``max(n_min, round(c_r L_i v_r / (L_r v_i)))``.
    """
    if n_min < 1 or c_r < n_min:
        raise NetworkError(f"need c_r >= n_min >= 1, got c_r={c_r}, n_min={n_min}")
    v = np.abs(np.asarray(v_ref, dtype=float))
    if v.shape != (topology.n_edges,):
        raise NetworkError("one reference velocity per edge is required")
    if np.any(v == 0) or not np.all(np.isfinite(v)):
        raise NetworkError("reference velocities must be nonzero and finite")
    lengths = topology.lengths
    r = int(np.argmax(v / lengths))
    ratio = c_r * (lengths / lengths[r]) * (v[r] / v)
    counts = [max(int(n_min), _round_half_up(x)) for x in ratio]
    return CellGrid(tuple(counts), tuple(lengths))


# ---------------------------------------------------------------- decomposition

@dataclass(frozen=True)
class Subnetwork:
    root: Hashable
    edges: tuple[int, ...]
    interface_edges: tuple[int, ...]
    reversing: bool


@dataclass(frozen=True)
class DecompositionPlan:
    """Main network (contains the source) plus downstream branches.

    Each subnetwork hangs off its ``root`` node, which belongs to the main
    network; its only input is the energy density delivered by the main-network
    edges incident to the root (``interface_edges``).
    """

    topology: NetworkTopology
    main_edges: tuple[int, ...]
    subnetworks: tuple[Subnetwork, ...]

    @property
    def n_parts(self) -> int:
        return 1 + len(self.subnetworks)

    def part_edges(self) -> list[tuple[int, ...]]:
        return [self.main_edges] + [s.edges for s in self.subnetworks]

    def cell_sets(self, grid: CellGrid) -> list[np.ndarray]:
        return [np.concatenate([grid.edge_cells(i) for i in part]).astype(int)
                if part else np.zeros(0, dtype=int)
                for part in self.part_edges()]

    def interface_cells(self, grid: CellGrid) -> list[np.ndarray]:
        """Main-network cells adjacent to each subnetwork root."""
        top = self.topology
        out = []
        for sub in self.subnetworks:
            cells = []
            for i in sub.interface_edges:
                e = top.edges[i]
                cells.append(grid.index(i, grid.counts[i] - 1) if e.to_node == sub.root
                             else grid.index(i, 0))
            out.append(np.array(cells, dtype=int))
        return out


def _branch_edges(topology: NetworkTopology, root: int, seeds: Iterable[int]) -> set[int] | None:
    """Edges reachable from ``seeds`` without crossing node ``root``; None if the source is reached."""
    tail, head = topology.endpoints()
    inc = [[] for _ in range(topology.n_nodes)]
    for i in range(topology.n_edges):
        inc[tail[i]].append(i)
        inc[head[i]].append(i)
    src = topology.node_index[topology.source]
    edges = set()
    stack = list(seeds)
    while stack:
        i = stack.pop()
        if i in edges:
            continue
        edges.add(i)
        for nd in (tail[i], head[i]):
            if nd == root:
                continue
            if nd == src:
                return None
            stack.extend(j for j in inc[nd] if j not in edges)
    return edges


def _components(topology: NetworkTopology, edge_set: set[int]) -> list[set[int]]:
    tail, head = topology.endpoints()
    remaining = set(edge_set)
    comps = []
    while remaining:
        first = remaining.pop()
        comp = {first}
        nodes = {tail[first], head[first]}
        grown = True
        while grown:
            grown = False
            for i in list(remaining):
                if tail[i] in nodes or head[i] in nodes:
                    remaining.discard(i)
                    comp.add(i)
                    nodes.update((tail[i], head[i]))
                    grown = True
        comps.append(comp)
    return comps


def decompose(topology: NetworkTopology, flux_reversal_edges: Iterable = (),
              branch_roots: Iterable = ()) -> DecompositionPlan:
    """Split off every flux-reversing region (and optional extra branches).

    Parameters
    ----------
    flux_reversal_edges
        Edge ids (or indices) whose flow direction may change.  Each connected
        group becomes one subnetwork: the whole branch hanging off the node
        that separates it from the source.
    branch_roots
        Additional node ids; everything downstream of each becomes a subnetwork.
    """
    marked = {_edge_idx(topology, e) for e in flux_reversal_edges}
    _, _, _, depth, _ = _tree_paths(topology)
    tail, head = topology.endpoints()
    src = topology.node_index[topology.source]

    subs = []
    for comp in _components(topology, marked):
        nodes = sorted({tail[i] for i in comp} | {head[i] for i in comp}, key=lambda k: depth[k])
        if src in nodes:
            raise NetworkError("the source lies inside a requested subnetwork")
        branch = None
        for k in nodes:
            branch = _branch_edges(topology, k, comp)
            if branch is not None:
                root = k
                break
        if branch is None:
            raise NetworkError("flux-reversing edges are not separable from the source by one node")
        subs.append((root, branch, True))
    for nd in branch_roots:
        if nd not in topology.node_index:
            raise NetworkError(f"unknown branch root {nd!r}")
        k = topology.node_index[nd]
        if k == src:
            raise NetworkError("the source cannot root a subnetwork")
        seeds = [i for i in range(topology.n_edges)
                 if (tail[i] == k or head[i] == k)
                 and _branch_edges(topology, k, [i]) is not None]
        if not seeds:
            raise NetworkError(f"node {nd!r} has no downstream branch")
        subs.append((k, _branch_edges(topology, k, seeds), False))

    claimed = set()
    for _, branch, _ in subs:
        if claimed & branch:
            raise NetworkError("subnetworks overlap; nested decompositions are not supported")
        claimed |= branch
    main = tuple(i for i in range(topology.n_edges) if i not in claimed)
    out = []
    for root, branch, reversing in subs:
        iface = tuple(i for i in main if tail[i] == root or head[i] == root)
        if not iface:
            raise NetworkError("subnetwork root is not attached to the main network")
        out.append(Subnetwork(topology.nodes[root], tuple(sorted(branch)), iface, reversing))
    return DecompositionPlan(topology, main, tuple(out))


def _edge_idx(topology: NetworkTopology, e) -> int:
    if e in topology.edge_index:
        return topology.edge_index[e]
    if isinstance(e, (int, np.integer)) and 0 <= e < topology.n_edges:
        return int(e)
    raise NetworkError(f"unknown edge {e!r}")
