"""Synthetic network fixtures.

The street and district generators mimic the statistics of the reference
networks (a street with 32 consumers and one loop, and a district made of
several streets with a looped, flux-reversing branch).  ``random_network``
draws small looped topologies for property tests.
"""

from __future__ import annotations

import numpy as np

from .network import Consumer, NetworkTopology, PipeEdge

__all__ = ["street_network", "district_network", "random_network", "single_pipe",
           "parallel_pipes", "default_demands"]

FRICTION = 0.025


def single_pipe(length: float = 100.0, diameter: float = 0.1) -> NetworkTopology:
    return NetworkTopology(
        (PipeEdge("p0", "S", "H0", length, diameter, FRICTION),),
        (Consumer("h0", "p0"),),
        "S",
    )


def parallel_pipes(length: float = 100.0, diameter: float = 0.1) -> NetworkTopology:
    """Two identical pipes from the source to a junction, then one house pipe."""
    edges = (
        PipeEdge("a", "S", "X", length, diameter, FRICTION),
        PipeEdge("b", "S", "X", length, diameter, FRICTION),
        PipeEdge("c", "X", "H0", 10.0, diameter, FRICTION),
    )
    return NetworkTopology(edges, (Consumer("h0", "c"),), "S")


def street_network(n_pairs: int = 16, seed: int = 7, loop: bool = True) -> NetworkTopology:
    """A street: feed pipe, trunk with consumer pairs (service + house pipe), one bypass loop.

    With the defaults the network has 32 consumers, 81 pipes and 33 independent flows.
    """
    rng = np.random.default_rng(seed)
    edges = [PipeEdge("feed", "S", "J0", 120.0, 0.125, FRICTION)]
    consumers = []
    diam = np.linspace(0.1, 0.05, n_pairs)
    for k in range(n_pairs):
        if k + 1 < n_pairs:
            edges.append(PipeEdge(f"t{k}", f"J{k}", f"J{k + 1}",
                                  float(np.round(rng.uniform(30.0, 50.0), 2)),
                                  float(diam[k]), FRICTION))
        for side in "ab":
            edges.append(PipeEdge(f"s{k}{side}", f"J{k}", f"N{k}{side}",
                                  float(np.round(rng.uniform(8.0, 16.0), 2)), 0.032, FRICTION))
            edges.append(PipeEdge(f"h{k}{side}", f"N{k}{side}", f"H{k}{side}",
                                  float(np.round(rng.uniform(4.0, 8.0), 2)), 0.025, FRICTION))
            consumers.append(Consumer(f"c{k}{side}", f"h{k}{side}"))
    if loop and n_pairs >= 4:
        # a thin bypass keeps every trunk flow positive for all admissible demands
        a, b = max(1, n_pairs // 8), n_pairs // 2
        edges.append(PipeEdge("ring", f"J{a}", f"J{b}", 400.0, 0.05, FRICTION))
    return NetworkTopology(tuple(edges), tuple(consumers), "S")


def district_network(n_streets: int = 3, pairs_per_street: int = 4, seed: int = 11
                     ) -> tuple[NetworkTopology, list[str], list[str]]:
    """Main trunk feeding several streets plus one looped branch.

    Returns the topology, the edge ids of the looped branch (where the flow
    direction can change) and the junction ids rooting the plain streets.
    """
    rng = np.random.default_rng(seed)
    edges = [PipeEdge("feed", "S", "M0", 150.0, 0.15, FRICTION)]
    consumers = []
    roots = []
    for s in range(n_streets + 1):
        if s < n_streets:
            edges.append(PipeEdge(f"m{s}", f"M{s}", f"M{s + 1}",
                                  float(np.round(rng.uniform(60.0, 90.0), 2)), 0.125, FRICTION))
        prefix = f"st{s}"
        edges.append(PipeEdge(f"{prefix}_in", f"M{s}", f"{prefix}J0", 30.0, 0.08, FRICTION))
        roots.append(f"M{s}")
        for k in range(pairs_per_street):
            if k + 1 < pairs_per_street:
                edges.append(PipeEdge(f"{prefix}_t{k}", f"{prefix}J{k}", f"{prefix}J{k + 1}",
                                      float(np.round(rng.uniform(30.0, 45.0), 2)), 0.065, FRICTION))
            for side in "ab":
                edges.append(PipeEdge(f"{prefix}_h{k}{side}", f"{prefix}J{k}", f"{prefix}H{k}{side}",
                                      float(np.round(rng.uniform(8.0, 14.0), 2)), 0.025, FRICTION))
                consumers.append(Consumer(f"{prefix}_c{k}{side}", f"{prefix}_h{k}{side}"))
    # looped branch hanging off the last trunk node
    lp = "loop"
    r = f"M{n_streets}"
    loop_edges = [
        PipeEdge(f"{lp}_in", r, f"{lp}A", 40.0, 0.08, FRICTION),
        PipeEdge(f"{lp}_1", f"{lp}A", f"{lp}B", 60.0, 0.05, FRICTION),
        PipeEdge(f"{lp}_2", f"{lp}B", f"{lp}C", 60.0, 0.05, FRICTION),
        PipeEdge(f"{lp}_3", f"{lp}A", f"{lp}D", 60.0, 0.05, FRICTION),
        PipeEdge(f"{lp}_4", f"{lp}D", f"{lp}C", 60.0, 0.05, FRICTION),
        PipeEdge(f"{lp}_hB", f"{lp}B", f"{lp}HB", 10.0, 0.025, FRICTION),
        PipeEdge(f"{lp}_hC", f"{lp}C", f"{lp}HC", 10.0, 0.025, FRICTION),
        PipeEdge(f"{lp}_hD", f"{lp}D", f"{lp}HD", 10.0, 0.025, FRICTION),
    ]
    edges.extend(loop_edges)
    consumers.extend(Consumer(f"{lp}_c{x}", f"{lp}_h{x}") for x in "BCD")
    reversal = [f"{lp}_1", f"{lp}_2", f"{lp}_3", f"{lp}_4", f"{lp}_hB", f"{lp}_hC", f"{lp}_hD"]
    street_roots = [f"st{s}J0" for s in range(n_streets + 1)]
    return NetworkTopology(tuple(edges), tuple(consumers), "S"), reversal, street_roots


def random_network(rng: np.random.Generator, max_edges: int = 50, max_loops: int = 3,
                   flip_probability: float = 0.3) -> NetworkTopology:
    """Random tree of junctions with consumer leaves and up to ``max_loops`` chords.

    Edge orientations are flipped at random so that reference orientation and
    flow direction disagree on some pipes.
    """
    n_loops = int(rng.integers(0, max_loops + 1))
    n_tree = int(rng.integers(2, max(3, max_edges - n_loops + 1)))
    parent = [-1] + [int(rng.integers(0, k)) for k in range(1, n_tree + 1)]
    edges = []
    for k in range(1, n_tree + 1):
        edges.append([parent[k], k])
    degree = np.zeros(n_tree + 1, dtype=int)
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1
    internal = [k for k in range(n_tree + 1) if degree[k] > 1 or k == 0]
    chords = []
    for _ in range(n_loops):
        if len(internal) < 2:
            break
        a, b = rng.choice(internal, size=2, replace=False)
        chords.append([int(a), int(b)])
    edges.extend(chords)
    degree = np.zeros(n_tree + 1, dtype=int)
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1
    pipes = []
    consumers = []
    for i, (a, b) in enumerate(edges):
        if rng.random() < flip_probability:
            a, b = b, a
        pipes.append(PipeEdge(
            f"e{i}", f"n{a}", f"n{b}",
            float(rng.uniform(5.0, 200.0)), float(rng.uniform(0.02, 0.2)),
            float(rng.uniform(0.01, 0.04)),
        ))
    for i, (a, b) in enumerate(edges):
        leaf = b if degree[b] == 1 and b != 0 else (a if degree[a] == 1 and a != 0 else None)
        if leaf is not None:
            consumers.append(Consumer(f"c{leaf}", f"e{i}"))
    return NetworkTopology(tuple(pipes), tuple(consumers), "n0")


def default_demands(topology: NetworkTopology, mean: float = 4e-5, spread: float = 0.3,
                    seed: int = 3) -> np.ndarray:
    """Constant per-house demands scattered around ``mean`` (normalized power units)."""
    rng = np.random.default_rng(seed)
    return mean * (1.0 + spread * rng.uniform(-1.0, 1.0, topology.n_consumers))
