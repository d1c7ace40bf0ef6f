"""Independent reference computations used by the tests.

None of these reuse the package's assembly or solver code paths: the upwind
operator is built straight from edge flows and perfect mixing, hydraulics are
solved by bisection on the loop flow, and transfer functions come from dense
linear algebra or closed forms.
"""

from __future__ import annotations

import numpy as np


def edge_flows(topology, basis, q):
    return basis.P @ np.asarray(q, dtype=float)


def direct_upwind(topology, grid, basis, q):
    """Dense ``A(q), B(q)`` from per-edge flows and node mixing, no affine weights."""
    flows = edge_flows(topology, basis, q)
    n = grid.n
    A = np.zeros((n, n))
    B = np.zeros(n)
    src_total = float(np.sum(q[: basis.n_consumers]))
    index = {node: k for k, node in enumerate(topology.nodes)}
    inflow = {k: [] for k in range(len(topology.nodes))}
    ends = {}
    for i, e in enumerate(topology.edges):
        cells = list(range(grid.offsets[i], grid.offsets[i] + grid.counts[i]))
        up, down = index[e.from_node], index[e.to_node]
        if flows[i] < 0:
            cells.reverse()
            up, down = down, up
        ends[i] = (cells, up, down)
        inflow[down].append(i)
    source = index[topology.source]
    for i, e in enumerate(topology.edges):
        cells, up, _ = ends[i]
        volume = e.cross_section * e.length / grid.counts[i]
        a = abs(flows[i]) / volume
        for j, c in enumerate(cells):
            A[c, c] -= a
            if j:
                A[c, cells[j - 1]] += a
        total = sum(abs(flows[k]) for k in inflow[up]) + (src_total if up == source else 0.0)
        if total == 0:
            continue
        for k in inflow[up]:
            outlet = ends[k][0][-1]
            A[cells[0], outlet] += a * abs(flows[k]) / total
        if up == source:
            B[cells[0]] += a * src_total / total
    return A, B


def output_selector(topology, grid):
    C = np.zeros((topology.n_consumers, grid.n))
    for h, c in enumerate(topology.consumers):
        i = topology.edge_index[c.edge]
        e = topology.edges[i]
        leaf = e.to_node if e.to_node != topology.source and _degree(topology, e.to_node) == 1 \
            else e.from_node
        cell = grid.offsets[i] + (grid.counts[i] - 1 if e.to_node == leaf else 0)
        C[h, cell] = 1.0
    return C


def _degree(topology, node):
    return sum((e.from_node == node) + (e.to_node == node) for e in topology.edges)


def dense_transfer(A, B, C, s):
    n = A.shape[0]
    return C @ np.linalg.solve(s * np.eye(n) - A, B.astype(complex))


def bisect(fn, lo, hi, tol=1e-15, iters=400):
    flo = fn(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def single_loop_flows(topology, basis, y, u_H, rho=1000.0):
    """Flows of a one-loop network: consumers from the demand identity, loop flow by bisection.

    Each edge's pressure drop is accumulated around the chord's cycle from
    the edge list directly.
    """
    H = basis.n_consumers
    q = np.zeros(basis.n_flows)
    q[:H] = np.asarray(u_H) / np.asarray(y)
    if basis.n_flows == H:
        return q
    assert basis.n_flows == H + 1

    def cycle_pressure(t):
        q[H] = t
        flows = basis.P @ q
        total = 0.0
        for i, e in enumerate(topology.edges):
            sign = basis.P[i, H]
            if sign == 0:
                continue
            v = flows[i] / e.cross_section
            total += sign * e.friction * rho * e.length / (2 * e.diameter) * v * abs(v)
        return total

    scale = 10 * np.sum(q[:H]) + 1e-12
    t = bisect(cycle_pressure, -scale, scale)
    q[H] = t
    return q


def first_order_chain(a, m, omega):
    """Magnitude and phase of ``(a/(s+a))^m`` at ``s = i omega``."""
    mag = (a / np.sqrt(omega ** 2 + a ** 2)) ** m
    phase = -m * np.arctan(omega / a)
    return mag, phase
