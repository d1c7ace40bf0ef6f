"""Reduced surrogates: weighted H2 error, Weighted IRKA, frequency greedy, block ROMs.

Everything here works in co-energy coordinates, where ``A^e + A^e^T <= 0``, so
any orthonormal Galerkin basis ``V`` gives a Lyapunov-stable reduced model.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sp
import scipy.sparse.linalg as spsla

from ._parallel import pmap
from .transport import CoEnergyForm, FullOrderModel, rational_weights, sign_pattern_of

__all__ = [
    "ReductionError",
    "FrequencyWindow",
    "InterpolationSpace",
    "GalerkinProjection",
    "ReducedFamily",
    "ReducedModel",
    "GreedyResult",
    "IrkaConfig",
    "eval_transfer",
    "transfer_samples",
    "weighted_h2_norm",
    "calibrate_window",
    "relative_error",
    "weighted_irka",
    "svd_combine",
    "project",
    "frequency_greedy",
    "reduce_decomposed",
    "split_projection",
    "save_rom",
    "load_rom",
]

logger = logging.getLogger(__name__)


class ReductionError(RuntimeError):
    def __init__(self, message: str, table=None):
        super().__init__(message)
        self.table = table


# ------------------------------------------------------------------ frequencies

@dataclass(frozen=True)
class FrequencyWindow:
    """Band ``[low, high]`` in rad/s with a composite-trapezoid node set.

    With ``low == 0`` the first decade above zero is covered linearly and the
    remaining nodes are log-spaced over three decades up to ``high``.
    """

    low: float = 0.0
    high: float = 1.0
    n_nodes: int = 200

    def __post_init__(self):
        if not (0 <= self.low < self.high):
            raise ValueError(f"need 0 <= W_l < W_h, got [{self.low}, {self.high}]")
        if self.n_nodes < 2:
            raise ValueError("at least two quadrature nodes are required")

    def nodes(self) -> np.ndarray:
        if self.low > 0:
            return np.geomspace(self.low, self.high, self.n_nodes)
        if self.n_nodes < 4:
            return np.linspace(0.0, self.high, self.n_nodes)
        corner = self.high * 1e-3
        n_lin = max(2, self.n_nodes // 10)
        lin = np.linspace(0.0, corner, n_lin, endpoint=False)
        return np.concatenate([lin, np.geomspace(corner, self.high, self.n_nodes - n_lin)])

    def weights(self) -> np.ndarray:
        x = self.nodes()
        dx = np.diff(x)
        w = np.zeros_like(x)
        w[:-1] += dx / 2
        w[1:] += dx / 2
        return w

    def refined(self) -> "FrequencyWindow":
        return FrequencyWindow(self.low, self.high, 2 * self.n_nodes)

    def to_dict(self) -> dict:
        return {"low": self.low, "high": self.high, "n_nodes": self.n_nodes}


def weighted_h2_norm(samples, window: FrequencyWindow, squared: bool = False) -> float:
    """``(1/2pi) int_W ||H(i w)||_F^2 dw`` from samples at ``window.nodes()``."""
    samples = np.asarray(samples)
    if samples.shape[0] != window.n_nodes:
        raise ValueError("samples do not match the quadrature nodes")
    if window.n_nodes < 2:
        raise ValueError("at least two quadrature nodes are required")
    power = np.sum(np.abs(samples.reshape(samples.shape[0], -1)) ** 2, axis=1)
    value = float(window.weights() @ power / (2 * np.pi))
    return value if squared else float(np.sqrt(value))


def calibrate_window(window: FrequencyWindow, sampler: Callable[[np.ndarray], np.ndarray],
                     rtol: float = 1e-3, max_nodes: int = 1600) -> FrequencyWindow:
    """Double the node count until the norm changes by less than ``rtol``."""
    current = window
    value = weighted_h2_norm(sampler(current.nodes()), current)
    while current.n_nodes * 2 <= max_nodes:
        finer = current.refined()
        new = weighted_h2_norm(sampler(finer.nodes()), finer)
        if abs(new - value) <= rtol * max(abs(value), np.finfo(float).tiny):
            return current
        current, value = finer, new
    return current


# ------------------------------------------------------------- transfer function

class _Resolvent:
    """Cached sparse factorizations of ``s I - A``."""

    def __init__(self, A: sp.spmatrix, q=None):
        self.A = sp.csc_matrix(A)
        self.I = sp.identity(A.shape[0], format="csc")
        self.q = q

    def solve(self, s: complex, rhs: np.ndarray) -> np.ndarray:
        s = complex(s)
        if s.imag == 0:
            M = (s.real * self.I - self.A).tocsc()
        else:
            M = (s * self.I - self.A.astype(complex)).tocsc()
        try:
            lu = spsla.splu(M)
        except RuntimeError as exc:
            raise ReductionError(f"singular shifted matrix at s={s!r}, q={self.q}") from exc
        x = lu.solve(rhs.astype(M.dtype))
        if not np.all(np.isfinite(x)):
            raise ReductionError(f"singular shifted matrix at s={s!r}, q={self.q}")
        return x


def eval_transfer(form: CoEnergyForm, q, s):
    """``H(s, q) = C (s I - A(q))^{-1} B(q)``; ``s`` scalar gives an ``o``-vector, array gives ``k x o``."""
    form.check_pattern(q)
    res = _Resolvent(form.A(q), q)
    B = form.B(q)
    scalar = np.ndim(s) == 0
    svals = np.atleast_1d(s)
    out = np.array([form.C @ res.solve(sv, B) for sv in svals])
    return out[0] if scalar else out


def transfer_samples(form: CoEnergyForm, q, window: FrequencyWindow) -> np.ndarray:
    return eval_transfer(form, q, 1j * window.nodes())


def _dense_transfer(A: np.ndarray, B: np.ndarray, C: np.ndarray, s) -> np.ndarray:
    """Reduced transfer function at many points via one complex Schur form."""
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    r = A.shape[0]
    if r == 0:
        return np.zeros((s.size, C.shape[0]), dtype=complex)
    T, Z = spla.schur(A.astype(complex), output="complex")
    b = Z.conj().T @ B
    c = C @ Z
    X = np.zeros((s.size, r), dtype=complex)
    diag = np.diag(T)
    for i in range(r - 1, -1, -1):
        acc = b[i] + X[:, i + 1:] @ T[i, i + 1:]
        X[:, i] = acc / (s - diag[i])
    return X @ c.T


# --------------------------------------------------------------- reduced models

@dataclass
class ReducedFamily:
    """Reduced affine operators for one flow-direction pattern.

    ``blocks`` maps a pair of part indices ``(a, b)`` to ``(weight indices,
    tensor)`` with ``tensor[k]`` the reduced ``A_{w_k}`` restricted to rows of
    part ``a`` and columns of part ``b``.
    """

    pattern: np.ndarray
    rational: tuple[np.ndarray, np.ndarray, np.ndarray]
    has_sink: bool
    blocks: dict
    B: np.ndarray
    forcing: np.ndarray

    def weights(self, q) -> np.ndarray:
        return rational_weights(self.rational, np.asarray(q, dtype=float), self.has_sink)


@dataclass
class ReducedModel:
    """Galerkin ROM ``V^T A^e(q) V`` with online weight assembly.

    Attributes
    ----------
    V
        ``n x r`` orthonormal basis in co-energy coordinates.
    parts
        Reduced index ranges of the diagonal blocks (one block unless the
        network was decomposed).
    scaling
        ``sqrt(diag(Q))``, mapping physical states to co-energy coordinates.
    """

    kind = "ROM"

    V: np.ndarray
    C: np.ndarray
    scaling: np.ndarray
    edge_flow_map: np.ndarray
    parts: tuple[tuple[int, int], ...]
    families: dict = field(default_factory=dict)
    source: Callable | None = field(default=None, repr=False)
    metadata: dict = field(default_factory=dict)
    reassemblies: int = 0
    snapshots: np.ndarray | None = None

    @property
    def order(self) -> int:
        return self.V.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def pattern(self, q) -> np.ndarray:
        flows = self.edge_flow_map @ np.asarray(q, dtype=float)
        return np.where(flows < 0, -1, 1).astype(np.int8)

    def family(self, pattern) -> ReducedFamily:
        key = np.asarray(pattern, dtype=np.int8).tobytes()
        fam = self.families.get(key)
        if fam is None:
            if self.source is None:
                raise ReductionError("flow direction pattern not covered by this ROM "
                                     "and no full model is attached to project it")
            fam = _project_family(self.source(np.asarray(pattern, dtype=np.int8)), self.V, self.parts,
                                  self._row_parts)
            self.families[key] = fam
            self.reassemblies += 1
            logger.info("projected reduced operators for a new flow-direction pattern")
        return fam

    @property
    def _row_parts(self):
        return self.metadata.get("_row_parts")

    def A(self, q, pattern=None) -> np.ndarray:
        fam = self.family(self.pattern(q) if pattern is None else pattern)
        f = fam.weights(q)
        r = self.order
        A = np.zeros((r, r))
        for (a, b), (idx, tensor) in fam.blocks.items():
            (ra0, ra1), (rb0, rb1) = self.parts[a], self.parts[b]
            A[ra0:ra1, rb0:rb1] = np.tensordot(f[idx], tensor, axes=1)
        return A

    def B(self, q, pattern=None) -> np.ndarray:
        fam = self.family(self.pattern(q) if pattern is None else pattern)
        return fam.B @ fam.weights(q)

    def system(self, q, pattern=None):
        pattern = self.pattern(q) if pattern is None else pattern
        fam = self.family(pattern)
        return self.A(q, pattern), self.B(q, pattern), fam.forcing

    def max_rate(self, q) -> float:
        """Spectral norm of ``A_r(q)``; explicit steps use ``dt * rate <= 1``."""
        return float(np.linalg.norm(self.A(q), 2))

    def transfer(self, q, s) -> np.ndarray:
        A = self.A(q)
        B = self.B(q)
        scalar = np.ndim(s) == 0
        out = _dense_transfer(A, B, self.C, s)
        return out[0] if scalar else out

    def initial_state(self, value) -> np.ndarray:
        phi = np.broadcast_to(np.asarray(value, dtype=float), self.scaling.shape)
        return self.V.T @ (self.scaling * phi)

    def outputs(self, x: np.ndarray) -> np.ndarray:
        return self.C @ x

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """Physical cell energy densities from a reduced state."""
        return (self.V @ x) / self.scaling


def _project_family(form: CoEnergyForm, V: np.ndarray, parts, row_parts) -> ReducedFamily:
    """Reduced ``V^T A_i V`` per weight, split into part blocks."""
    mats = form.basis_matrices()
    r = V.shape[1]
    if row_parts is None:
        row_parts = [np.arange(V.shape[0])]
    full = np.zeros((len(mats), r, r))
    for j, m in enumerate(mats):
        rows = np.unique(m.indices.size and m.tocoo().row)
        if rows.size == 0:
            continue
        full[j] = V[rows].T @ (m[rows] @ V)
    blocks = {}
    for a, (ra0, ra1) in enumerate(parts):
        for b, (rb0, rb1) in enumerate(parts):
            sub = full[:, ra0:ra1, rb0:rb1]
            idx = np.flatnonzero(np.any(sub != 0, axis=(1, 2)))
            if idx.size:
                if b > a:
                    raise ReductionError("decomposition is not feed-forward: "
                                         f"part {a} receives input from part {b}")
                blocks[(a, b)] = (idx, np.ascontiguousarray(sub[idx]))
    Bred = V.T @ form.input_matrix()
    return ReducedFamily(np.asarray(form.pattern, dtype=np.int8), form.rational, form.has_sink,
                         blocks, Bred, V.T @ form.forcing)


def project(form: CoEnergyForm, V: np.ndarray, source: Callable | None = None,
            parts=None, row_parts=None, metadata: dict | None = None) -> ReducedModel:
    """Galerkin projection of a co-energy family onto the orthonormal basis ``V``."""
    if form.scaling is None:
        raise ReductionError("projection requires co-energy coordinates")
    V = np.asarray(V, dtype=float)
    if parts is None:
        parts = ((0, V.shape[1]),)
    meta = dict(metadata or {})
    meta["_row_parts"] = row_parts
    fam = _project_family(form, V, parts, row_parts)
    rom = ReducedModel(V, np.asarray(form.C @ V), form.scaling.copy(), form.basis.P.copy(),
                       tuple(parts), {form.pattern_key: fam}, source, meta)
    return rom


def relative_error(q, reduced: ReducedModel, full: CoEnergyForm, window: FrequencyWindow,
                   full_samples: np.ndarray | None = None) -> float:
    """``||H(q) - H_r(q)||_{H2(W)} / ||H(q)||_{H2(W)}`` on shared quadrature nodes."""
    if full_samples is None:
        full_samples = transfer_samples(full, q, window)
    denom = weighted_h2_norm(full_samples, window)
    if denom == 0:
        raise ReductionError("zero reference norm: no transport at this flow")
    red = reduced.transfer(q, 1j * window.nodes())
    return weighted_h2_norm(full_samples - red, window) / denom


# ----------------------------------------------------------------- weighted IRKA

@dataclass(frozen=True)
class IrkaConfig:
    order: int = 6
    iterations: int = 5
    delta_bar: float = 5e-3
    max_order: int | None = None


@dataclass
class InterpolationSpace:
    """Local space ``R(sigma, b, q)`` and its best local error ``delta``.

    ``sigma`` are the points whose resolvent columns span ``R`` (conjugates
    implied); ``R`` is realified, so complex points contribute two columns.
    """

    q: np.ndarray
    sigma: np.ndarray
    b: np.ndarray
    R: np.ndarray
    delta: float
    window: FrequencyWindow
    history: list = field(default_factory=list)

    @property
    def order(self) -> int:
        return self.R.shape[1]


def initial_points(r: int, window: FrequencyWindow) -> np.ndarray:
    lo = max(window.low, window.high * 1e-3)
    return np.geomspace(lo, window.high, r).astype(complex)


def _canonical(sigma: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """One representative (Im >= 0) per conjugate pair."""
    sigma = np.asarray(sigma, dtype=complex)
    scale = np.maximum(np.abs(sigma), np.finfo(float).tiny)
    real = np.abs(sigma.imag) <= tol * scale
    out = np.concatenate([sigma[real].real.astype(complex), sigma[(~real) & (sigma.imag > 0)]])
    return out


def _build_space(res: _Resolvent, B: np.ndarray, sigma: np.ndarray, b: np.ndarray):
    cols = []
    for sv, bv in zip(sigma, b):
        x = res.solve(sv, B) * bv
        if sv.imag == 0:
            cols.append(x.real)
        else:
            cols.extend([x.real, x.imag])
    return np.column_stack(cols)


def _orth(R: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    U, S, _ = np.linalg.svd(R, full_matrices=False)
    keep = S > rtol * S[0] if S.size else np.zeros(0, bool)
    return U[:, keep]


def _safeguard(sigma: np.ndarray, floor: float) -> np.ndarray:
    re = np.abs(sigma.real)
    re = np.where(re < floor * 1e-6, floor, re)
    return re + 1j * sigma.imag


def weighted_irka(form: CoEnergyForm, q, delta_bar: float, sigma0=None, n_iter: int = 5,
                  window: FrequencyWindow = FrequencyWindow(), order: int = 6,
                  full_samples: np.ndarray | None = None, max_order: int | None = None
                  ) -> InterpolationSpace:
    """Local interpolation space at flow ``q`` with weighted-H2 error below ``delta_bar``.

    Each sweep builds ``R(sigma, b)``, projects, and moves ``sigma`` to the
    mirrored reduced poles; the sweep with the smallest error is retained.
    While that error is too large, points are added where the pointwise
    error is largest.
    """
    q = np.asarray(q, dtype=float)
    A = form.A(q)
    B = form.B(q)
    Cm = form.C
    n = form.n
    max_order = max_order or max(1, n // 2) if n > 2 else n
    res = _Resolvent(A, q)
    nodes = window.nodes()
    if full_samples is None:
        full_samples = np.array([Cm @ res.solve(1j * w, B) for w in nodes])
    denom = weighted_h2_norm(full_samples, window)
    if denom == 0:
        raise ReductionError("zero reference norm: no transport at this flow")
    sigma = _canonical(initial_points(order, window) if sigma0 is None else np.asarray(sigma0))
    if np.any(sigma.real <= 0):
        raise ReductionError("initial interpolation points must lie in the open right half-plane")
    floor = window.high * 1e-3
    history = []
    best = None
    while True:
        b = np.ones(sigma.size, dtype=complex)
        for _ in range(n_iter):
            R = _build_space(res, B, sigma, b)
            Vl = _orth(R)
            Ar = Vl.T @ (A @ Vl)
            Br = Vl.T @ B
            Cr = np.asarray(Cm @ Vl)
            Hr = _dense_transfer(Ar, Br, Cr, 1j * nodes)
            delta = weighted_h2_norm(full_samples - Hr, window) / denom
            history.append((R.shape[1], delta))
            if best is None or delta < best.delta:
                best = InterpolationSpace(q, sigma.copy(), b.copy(), R, delta, window)
            if Vl.shape[1] == n:
                break
            lam, yl = spla.eig(Ar, left=True, right=False)
            new_sigma = _safeguard(-lam, floor)
            bt = yl.conj().T @ Br
            keep_idx = np.argsort(np.abs(new_sigma))
            new_sigma, bt = new_sigma[keep_idx], bt[keep_idx]
            canon = _canonical(new_sigma)
            # tangential weights only rescale columns for a single input; store unit modulus
            bmap = {complex(s): (bv / abs(bv) if abs(bv) > 0 else 1.0) for s, bv in zip(new_sigma, bt)}
            b = np.array([bmap.get(complex(s), 1.0) for s in canon], dtype=complex)
            sigma = canon
        if best.delta < delta_bar or best.R.shape[1] >= n:
            best.history = history
            return best
        r = best.R.shape[1]
        grow = max(2, r // 4)
        if r + grow > max_order:
            raise ReductionError(f"local order would exceed {max_order} without reaching "
                                 f"delta < {delta_bar} (best {best.delta:.3e})", history)
        Vb = _orth(best.R)
        Hr = _dense_transfer(Vb.T @ (A @ Vb), Vb.T @ B, np.asarray(Cm @ Vb), 1j * nodes)
        err = np.linalg.norm(full_samples - Hr, axis=1)
        order_idx = np.argsort(err)[::-1]
        added = []
        for k in order_idx:
            w = nodes[k]
            cand = complex(floor, 0) if w == 0 else complex(w * 1e-2, w)
            if all(abs(cand - s) > 1e-3 * max(abs(s), floor) for s in list(best.sigma) + added):
                added.append(cand)
            if 2 * len(added) >= grow:
                break
        sigma = _canonical(np.concatenate([best.sigma, np.array(added, dtype=complex)]))


# ---------------------------------------------------------------- global basis

@dataclass
class GalerkinProjection:
    V: np.ndarray
    anchors: list = field(default_factory=list)
    decay: float = 8.0
    singular_values: np.ndarray | None = None

    @property
    def order(self) -> int:
        return self.V.shape[1]


def svd_combine(spaces: Sequence, s: float = 8.0, extra: np.ndarray | None = None
                ) -> GalerkinProjection:
    """Orthonormal basis of the stacked raw spaces, truncated at ``sigma_max 10^-s``."""
    mats = [sp_.R if isinstance(sp_, InterpolationSpace) else np.asarray(sp_) for sp_ in spaces]
    if not mats:
        raise ReductionError("no interpolation spaces to combine")
    if extra is not None:
        mats = [np.asarray(extra).reshape(mats[0].shape[0], -1)] + mats
    stack = np.hstack(mats)
    U, S, _ = np.linalg.svd(stack, full_matrices=False)
    keep = S >= S[0] * 10.0 ** (-s)
    return GalerkinProjection(U[:, keep], [], s, S)


@dataclass
class GreedyResult:
    projection: GalerkinProjection
    rom: ReducedModel
    selected: list
    delta_max: float
    errors: np.ndarray
    scatter: list
    spaces: list


def _steady_direction(form: CoEnergyForm) -> np.ndarray:
    """Co-energy image of a constant state; it spans ``(0 I - A)^{-1} B`` on flowing networks."""
    return form.scaling.copy()


def frequency_greedy(model: FullOrderModel, D: Sequence, delta_bar: float = 5e-3,
                     Delta_bar: float = 1e-2, s: float = 8.0, irka: IrkaConfig = IrkaConfig(),
                     window: FrequencyWindow = FrequencyWindow(), n_init: int | None = None,
                     spaces: list | None = None) -> GreedyResult:
    """Global Galerkin basis from local IRKA spaces, enriched at the worst flow in ``D``.

    Every member of ``D`` is tried as the initial space (or the first
    ``n_init``); the run with the smallest reduced order wins, ties broken by
    the smaller maximum error.
    """
    D = [np.asarray(q, dtype=float) for q in D]
    if not D:
        raise ReductionError("empty candidate set")
    forms = [model.form_for(q) for q in D]
    samples = pmap(lambda k: transfer_samples(forms[k], D[k], window), range(len(D)))
    norms = np.array([weighted_h2_norm(x, window) for x in samples])
    if spaces is None:
        spaces = pmap(lambda k: weighted_irka(forms[k], D[k], delta_bar, n_iter=irka.iterations,
                                              window=window, order=irka.order,
                                              full_samples=samples[k], max_order=irka.max_order),
                      range(len(D)))
    steady = _steady_direction(forms[0])
    nodes = 1j * window.nodes()
    w = window.weights() / (2 * np.pi)

    def errors_for(V):
        rom = project(forms[0], V, source=model.coenergy)
        out = np.empty(len(D))
        for k, q in enumerate(D):
            Hr = rom.transfer(q, nodes)
            diff = np.sum(np.abs(samples[k] - Hr) ** 2, axis=1)
            out[k] = np.sqrt(w @ diff) / norms[k]
        return rom, out

    inits = range(len(D)) if n_init is None else range(min(n_init, len(D)))
    runs = []
    for i in inits:
        chosen = [i]
        proj = svd_combine([spaces[i]], s, extra=steady)
        rom, errs = errors_for(proj.V)
        trace = [(proj.order, float(errs.max()))]
        while errs.max() >= Delta_bar:
            order = np.argsort(errs)[::-1]
            m = next((int(k) for k in order if k not in chosen), None)
            if m is None:
                table = [(k, float(e)) for k, e in enumerate(errs)]
                raise ReductionError(f"greedy exhausted D with max error {errs.max():.3e} >= "
                                     f"{Delta_bar}", table)
            chosen.append(m)
            proj = svd_combine([spaces[k] for k in chosen], s, extra=steady)
            rom, errs = errors_for(proj.V)
            trace.append((proj.order, float(errs.max())))
        proj.anchors = list(chosen)
        runs.append((proj.order, float(errs.max()), i, proj, rom, errs, trace))
        logger.info("greedy init %d: order %d, max error %.3e", i, proj.order, errs.max())
    runs.sort(key=lambda x: (x[0], x[1], x[2]))
    order, dmax, i, proj, rom, errs, _ = runs[0]
    scatter = [{"init": run[2], "order": run[0], "delta_max": run[1], "steps": len(run[6]),
                "trace": run[6]} for run in sorted(runs, key=lambda x: x[2])]
    rom.metadata.update({"Delta_delta": dmax, "anchors": [int(k) for k in proj.anchors],
                         "init": i, "svd_decay": s, "delta_bar": delta_bar,
                         "Delta_bar": Delta_bar, "window": window.to_dict()})
    rom.snapshots = np.array(D)
    return GreedyResult(proj, rom, [D[k] for k in proj.anchors], dmax, errs, scatter, spaces)


# ----------------------------------------------------------------- decomposition

def split_projection(V: np.ndarray, cell_sets: Sequence[np.ndarray], identity_parts=(),
                     rtol: float = 1e-10) -> list[np.ndarray | None]:
    """Per-part local bases ``orth(V[cells])``; ``None`` marks identity parts."""
    out = []
    for k, cells in enumerate(cell_sets):
        if k in identity_parts:
            out.append(None)
        else:
            out.append(_orth(V[cells], rtol))
    return out


def reduce_decomposed(model: FullOrderModel, plan, projections: Sequence, pattern=None
                      ) -> ReducedModel:
    """Block ROM from independent per-part Galerkin bases (``None`` = not reduced).

    The global basis is block diagonal, so the reduced operator keeps the main
    network block, the subnetwork blocks, and the lower coupling blocks that
    carry the interface energy densities into each subnetwork.
    """
    cell_sets = plan.cell_sets(model.grid)
    if len(projections) != len(cell_sets):
        raise ReductionError(f"expected {len(cell_sets)} projections, got {len(projections)}")
    n = model.grid.n
    cols = []
    parts = []
    start = 0
    for cells, Vk in zip(cell_sets, projections):
        Vk = np.eye(cells.size) if Vk is None else np.asarray(Vk, dtype=float)
        if Vk.shape[0] != cells.size:
            raise ReductionError(f"projection has {Vk.shape[0]} rows, part has {cells.size} cells")
        block = np.zeros((n, Vk.shape[1]))
        block[cells] = Vk
        cols.append(block)
        parts.append((start, start + Vk.shape[1]))
        start += Vk.shape[1]
    V = np.hstack(cols)
    if pattern is None:
        from .transport import default_pattern

        pattern = default_pattern(model.topology)
    form = model.coenergy(pattern)
    return project(form, V, source=model.coenergy, parts=tuple(parts),
                   metadata={"decomposed": True, "n_parts": len(parts)})


# --------------------------------------------------------------------- file I/O

def network_hash(topology) -> str:
    from .network import network_to_dict

    blob = json.dumps(network_to_dict(topology), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def save_rom(rom: ReducedModel, path: str | Path, extra: dict | None = None) -> None:
    """Write the ROM as an ``.npz`` container (arrays are stored bit-exactly)."""
    arrays = {
        "V": rom.V, "C": rom.C, "scaling": rom.scaling, "edge_flow_map": rom.edge_flow_map,
        "parts": np.array(rom.parts, dtype=np.int64).reshape(-1, 2),
    }
    if rom.snapshots is not None:
        arrays["snapshots"] = np.asarray(rom.snapshots, dtype=float)
    fams = []
    for k, fam in enumerate(rom.families.values()):
        arrays[f"f{k}_pattern"] = fam.pattern
        for j, name in enumerate(("a", "b", "c")):
            arrays[f"f{k}_rational_{name}"] = fam.rational[j]
        arrays[f"f{k}_B"] = fam.B
        arrays[f"f{k}_forcing"] = fam.forcing
        keys = []
        for (a, b), (idx, tensor) in fam.blocks.items():
            arrays[f"f{k}_blk{a}_{b}_idx"] = idx
            arrays[f"f{k}_blk{a}_{b}_T"] = tensor
            keys.append([a, b])
        fams.append({"blocks": keys, "has_sink": fam.has_sink})
    meta = {key: val for key, val in rom.metadata.items() if not key.startswith("_")}
    meta.update(extra or {})
    header = {"format": "hydronet-rom", "version": 1, "families": fams, "metadata": meta}
    arrays["header"] = np.frombuffer(json.dumps(header, default=_jsonable).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(type(x))


def load_rom(path: str | Path, source: Callable | None = None) -> ReducedModel:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != "hydronet-rom":
            raise ReductionError(f"{path} is not a ROM container")
        families = {}
        for k, info in enumerate(header["families"]):
            blocks = {}
            for a, b in info["blocks"]:
                blocks[(a, b)] = (data[f"f{k}_blk{a}_{b}_idx"], data[f"f{k}_blk{a}_{b}_T"])
            fam = ReducedFamily(
                data[f"f{k}_pattern"],
                tuple(data[f"f{k}_rational_{name}"] for name in ("a", "b", "c")),
                bool(info["has_sink"]), blocks, data[f"f{k}_B"], data[f"f{k}_forcing"])
            families[fam.pattern.tobytes()] = fam
        parts = tuple(tuple(int(v) for v in row) for row in data["parts"])
        snapshots = data["snapshots"] if "snapshots" in data.files else None
        return ReducedModel(data["V"], data["C"], data["scaling"], data["edge_flow_map"], parts,
                            families, source, header["metadata"], 0, snapshots)
