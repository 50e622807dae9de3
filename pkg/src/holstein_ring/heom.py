"""Hierarchical equations of motion for the exciton coupled to discrete modes.

Each active mode (omega_q > 0) couples through H_I = V_q b_q + V_q^dag b_q^dag
with V_q = ``K_q`` from :mod:`lattice`, so both the on-site and the
hopping-modulation channels enter through the same operator. The bath
correlation functions of an undamped mode are

    <b_q(t) b_q^dag(s)> = (nbar_q + 1) e^{-i w_q (t-s)}
    <b_q^dag(t) b_q(s)> = nbar_q e^{+i w_q (t-s)}

and the hierarchy is written for normalized auxiliary operators rho_j with
j = (a_q, b_q) for every active mode:

    d rho_j = -i[H_S, rho_j] - i sum_q w_q (a_q - b_q) rho_j
              - i sqrt(a_q)   [(nbar+1) V_q^dag rho_{j-a} - nbar rho_{j-a} V_q^dag]
              - i sqrt(b_q)   [nbar V_q rho_{j-b} - (nbar+1) rho_{j-b} V_q]
              - i sqrt(a_q+1) [V_q, rho_{j+a}]
              - i sqrt(b_q+1) [V_q^dag, rho_{j+b}]

Entries of total order L drop the references to order L + 1. With the
normalization above the zero entry is the reduced density matrix, trace is
conserved exactly and rho_{(a,b)}^dag = rho_{(b,a)}.

The system Hamiltonian is diagonal and every V_q has one entry per row in
the exciton momentum basis, so all operators are kept there as sparse
triplets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
import logging
import math

import numpy as np
import numba as nb

from .lattice import ModelParams, PhononGrid, hopping_matrix, operators, current_matrix

log = logging.getLogger(__name__)

DEFAULT_TRACE_BOUND = 1e-6


class HeomError(RuntimeError):
    def __init__(self, message: str, t: float, diagnostics: dict | None = None):
        super().__init__(f"{message} (t = {t:.6g})")
        self.t = t
        self.diagnostics = diagnostics or {}


def offdiagonal_system_operators(params: ModelParams, grid: PhononGrid | None = None) -> np.ndarray:
    """Exciton-space operator multiplying b_q for every mode, shape (N_q, N, N).

    Contains the on-site channel, -g w_q e^{iqn}/sqrt(N) on the diagonal, and
    the hopping-modulation channel on the first off-diagonals. The operator
    multiplying b_q^dag is the Hermitian conjugate.
    """
    ops = operators(params)
    if grid is not None and not np.allclose(grid.frequencies, ops.grid.frequencies):
        raise ValueError("phonon grid does not match model parameters")
    return np.array(ops.K)


def momentum_basis(N: int) -> np.ndarray:
    """Unitary U[n, k] = e^{ikn}/sqrt(N) with k = 2 pi m / N, m = 0 .. N-1."""
    n = np.arange(N)
    return np.exp(2j * np.pi * np.outer(n, n) / N) / np.sqrt(N)


def occupation(beta: float | None, w: np.ndarray) -> np.ndarray:
    """Bose factors; ``beta`` None or inf selects zero temperature."""
    w = np.asarray(w, dtype=float)
    if beta is None or math.isinf(beta):
        return np.zeros_like(w)
    if not beta > 0:
        raise ValueError("beta must be positive")
    if np.any(w <= 0):
        raise ValueError("finite temperature needs positive mode frequencies")
    return 1.0 / np.expm1(beta * w)


def hierarchy_indices(n_slots: int, L: int) -> np.ndarray:
    """All non-negative integer vectors of length ``n_slots`` with sum <= L.

    Ordered by total order, then lexicographically (stars and bars).
    """
    if L < 0:
        raise ValueError("L must be non-negative")
    out = [np.zeros(n_slots, dtype=np.int64)]
    for order in range(1, L + 1):
        level = []
        for bars in combinations(range(order + n_slots - 1), n_slots - 1):
            prev = -1
            v = np.empty(n_slots, dtype=np.int64)
            for s, b in enumerate(bars):
                v[s] = b - prev - 1
                prev = b
            v[-1] = order + n_slots - 2 - prev
            level.append(v)
        level.sort(key=lambda x: tuple(-x))
        out.extend(level)
    return np.array(out, dtype=np.int64).reshape(-1, n_slots)


def _sparse(A: np.ndarray, tol: float = 1e-14):
    scale = max(np.max(np.abs(A)), 1.0)
    r, c = np.nonzero(np.abs(A) > tol * scale)
    return r.astype(np.int64), c.astype(np.int64), A[r, c].astype(complex)


def _pad_triplets(mats: list[np.ndarray]):
    trips = [_sparse(A) for A in mats]
    width = max(1, max(len(t[0]) for t in trips))
    n = len(mats)
    rows = np.zeros((n, width), dtype=np.int64)
    cols = np.zeros((n, width), dtype=np.int64)
    vals = np.zeros((n, width), dtype=complex)
    for i, (r, c, v) in enumerate(trips):
        rows[i, : len(r)] = r
        cols[i, : len(r)] = c
        vals[i, : len(r)] = v
    return rows, cols, vals


@nb.njit(cache=True)
def _left(out, coef, rows, cols, vals, rho):
    # out += coef * V rho
    N = rho.shape[1]
    for e in range(rows.shape[0]):
        v = coef * vals[e]
        if v == 0:
            continue
        r, c = rows[e], cols[e]
        for m in range(N):
            out[r, m] += v * rho[c, m]


@nb.njit(cache=True)
def _right(out, coef, rows, cols, vals, rho):
    # out += coef * rho V
    N = rho.shape[0]
    for e in range(rows.shape[0]):
        v = coef * vals[e]
        if v == 0:
            continue
        r, c = rows[e], cols[e]
        for m in range(N):
            out[m, c] += v * rho[m, r]


@nb.njit(cache=True)
def _heom_kernel(rho, out, occ, up, down, hr, hc, hv,
                 vr, vc, vv, wr, wc, wv, freq, nbar):
    n_ado, N, _ = rho.shape
    K = freq.shape[0]
    for j in range(n_ado):
        o = out[j]
        rj = rho[j]
        ladder = 0.0
        for q in range(K):
            ladder += freq[q] * (occ[j, 2 * q] - occ[j, 2 * q + 1])
        for a in range(N):
            for b in range(N):
                o[a, b] = -1j * ladder * rj[a, b]
        _left(o, -1j, hr, hc, hv, rj)
        _right(o, 1j, hr, hc, hv, rj)
        for q in range(K):
            na = occ[j, 2 * q]
            nb_ = occ[j, 2 * q + 1]
            if na > 0:
                rm = rho[down[j, 2 * q]]
                s = math.sqrt(na)
                _left(o, -1j * s * (nbar[q] + 1), wr[q], wc[q], wv[q], rm)
                if nbar[q] != 0:
                    _right(o, 1j * s * nbar[q], wr[q], wc[q], wv[q], rm)
            if nb_ > 0:
                rm = rho[down[j, 2 * q + 1]]
                s = math.sqrt(nb_)
                if nbar[q] != 0:
                    _left(o, -1j * s * nbar[q], vr[q], vc[q], vv[q], rm)
                _right(o, 1j * s * (nbar[q] + 1), vr[q], vc[q], vv[q], rm)
            k = up[j, 2 * q]
            if k >= 0:
                rp = rho[k]
                s = math.sqrt(na + 1)
                _left(o, -1j * s, vr[q], vc[q], vv[q], rp)
                _right(o, 1j * s, vr[q], vc[q], vv[q], rp)
            k = up[j, 2 * q + 1]
            if k >= 0:
                rp = rho[k]
                s = math.sqrt(nb_ + 1)
                _left(o, -1j * s, wr[q], wc[q], wv[q], rp)
                _right(o, 1j * s, wr[q], wc[q], wv[q], rp)
    return out


@dataclass
class Hierarchy:
    """Index tables and sparse operators for one model, depth and temperature.

    Attributes
    ----------
    occ : (n_entries, 2 K) int array
        Multi-indices, slots (a_q, b_q) interleaved per active mode.
    up, down : (n_entries, 2 K) int arrays
        Entry index of j +/- e_slot, -1 when outside the hierarchy.
    active : indices of the modes with omega_q > 0 in the phonon grid.
    """

    params: ModelParams
    L: int
    beta: float | None
    occ: np.ndarray
    up: np.ndarray
    down: np.ndarray
    active: np.ndarray
    freq: np.ndarray
    nbar: np.ndarray
    U: np.ndarray
    V: tuple
    Vd: tuple
    lookup: dict = field(repr=False, default_factory=dict)

    @property
    def n_entries(self) -> int:
        return self.occ.shape[0]

    @property
    def N(self) -> int:
        return self.params.N

    def to_momentum(self, A: np.ndarray) -> np.ndarray:
        return self.U.conj().T @ A @ self.U

    def to_site(self, A: np.ndarray) -> np.ndarray:
        return self.U @ A @ self.U.conj().T

    def system_hamiltonian(self, t: float):
        return _sparse(self.to_momentum(hopping_matrix(self.params, t)))


def build_hierarchy(params: ModelParams, L: int, beta: float | None = None) -> Hierarchy:
    if int(L) != L or L < 0:
        raise ValueError("L must be a non-negative integer")
    ops = operators(params)
    active = np.nonzero(ops.grid.frequencies > 0)[0]
    freq = np.array(ops.grid.frequencies[active], dtype=float)
    nbar = occupation(beta, freq)
    K = len(active)
    occ = hierarchy_indices(2 * K, L) if K else np.zeros((1, 0), dtype=np.int64)
    lookup = {tuple(v): i for i, v in enumerate(occ)}
    n = occ.shape[0]
    up = -np.ones((n, 2 * K), dtype=np.int64)
    down = -np.ones((n, 2 * K), dtype=np.int64)
    for i, v in enumerate(occ):
        key = list(v)
        for s in range(2 * K):
            key[s] += 1
            up[i, s] = lookup.get(tuple(key), -1)
            key[s] -= 2
            if key[s] >= 0:
                down[i, s] = lookup[tuple(key)]
            key[s] += 1
    U = momentum_basis(params.N)
    Vk = [U.conj().T @ ops.K[q] @ U for q in active]
    Wk = [U.conj().T @ ops.Kd[q] @ U for q in active]
    V = _pad_triplets(Vk) if K else _pad_triplets([np.zeros((params.N, params.N))])
    Vd = _pad_triplets(Wk) if K else V
    return Hierarchy(params, int(L), beta, occ, up, down, active, freq, nbar, U, V, Vd, lookup)


@dataclass
class HierarchyState:
    """Auxiliary density operators of a hierarchy, stored in the momentum basis.

    ``entries[i]`` belongs to multi-index ``hierarchy.occ[i]``; entry 0 is the
    reduced density matrix.
    """

    hierarchy: Hierarchy
    entries: np.ndarray

    @property
    def L(self) -> int:
        return self.hierarchy.L

    def rho(self) -> np.ndarray:
        """Reduced density matrix in the site basis."""
        return self.hierarchy.to_site(self.entries[0])

    def entry(self, index) -> np.ndarray:
        """Auxiliary operator (site basis) for a multi-index tuple."""
        return self.hierarchy.to_site(self.entries[self.hierarchy.lookup[tuple(index)]])

    def as_map(self) -> dict:
        return {tuple(int(x) for x in v): self.entries[i] for i, v in enumerate(self.hierarchy.occ)}

    def trace(self) -> complex:
        return complex(np.trace(self.entries[0]))

    def hermiticity_residue(self) -> float:
        r = self.entries[0]
        return float(np.max(np.abs(r - r.conj().T)))

    def pairing_residue(self) -> float:
        """max |rho_{(a,b)}^dag - rho_{(b,a)}| over the hierarchy."""
        occ = self.hierarchy.occ
        swapped = occ.reshape(len(occ), -1, 2)[:, :, ::-1].reshape(len(occ), -1)
        idx = np.array([self.hierarchy.lookup[tuple(v)] for v in swapped], dtype=np.int64)
        return float(np.max(np.abs(self.entries.conj().transpose(0, 2, 1) - self.entries[idx])))


def initial_hierarchy(rho0: np.ndarray, hierarchy: Hierarchy) -> HierarchyState:
    """Factorized initial condition: system in ``rho0``, modes thermal."""
    rho0 = np.asarray(rho0, dtype=complex)
    N = hierarchy.N
    if rho0.shape != (N, N):
        raise ValueError(f"rho0 must be {N}x{N}, got {rho0.shape}")
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-10:
        raise ValueError("rho0 is not Hermitian")
    if abs(np.trace(rho0) - 1) > 1e-8:
        raise ValueError("rho0 must have unit trace")
    entries = np.zeros((hierarchy.n_entries, N, N), dtype=complex)
    entries[0] = hierarchy.to_momentum(rho0)
    return HierarchyState(hierarchy, entries)


def _rhs(hier: Hierarchy, entries: np.ndarray, t: float, out: np.ndarray | None = None) -> np.ndarray:
    if out is None:
        out = np.empty_like(entries)
    hr, hc, hv = hier.system_hamiltonian(t)
    vr, vc, vv = hier.V
    wr, wc, wv = hier.Vd
    return _heom_kernel(entries, out, hier.occ, hier.up, hier.down, hr, hc, hv,
                        vr, vc, vv, wr, wc, wv, hier.freq, hier.nbar)


def heom_rhs(h: HierarchyState, t: float, params: ModelParams | None = None,
             grid: PhononGrid | None = None, beta: float | None = None) -> HierarchyState:
    """Time derivative of every auxiliary operator at time t.

    ``params``, ``grid`` and ``beta`` are checked against the hierarchy the
    state was built for.
    """
    hier = h.hierarchy
    if params is not None and params != hier.params:
        raise ValueError("parameters do not match the hierarchy")
    if grid is not None and grid.size != len(operators(hier.params).grid.momenta):
        raise ValueError("phonon grid does not match the hierarchy")
    if beta is not None and beta != hier.beta:
        raise ValueError("beta does not match the hierarchy")
    if h.entries.shape != (hier.n_entries, hier.N, hier.N):
        raise ValueError("inconsistent dimensions")
    return HierarchyState(hier, _rhs(hier, h.entries, t))


def heom_step(state: HierarchyState, t: float, dt: float) -> HierarchyState:
    hier = state.hierarchy
    y = state.entries
    k1 = _rhs(hier, y, t)
    k2 = _rhs(hier, y + dt / 2 * k1, t + dt / 2)
    k3 = _rhs(hier, y + dt / 2 * k2, t + dt / 2)
    k4 = _rhs(hier, y + dt * k3, t + dt)
    return HierarchyState(hier, y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))


@dataclass
class HeomResult:
    times: np.ndarray
    P: np.ndarray  # (n_samples, N)
    j: np.ndarray  # current
    trace_drift: float
    hermiticity: float
    L: int
    n_entries: int
    final: HierarchyState | None = None


def propagate_heom(rho0: np.ndarray, params: ModelParams, grid: PhononGrid | None, beta: float | None,
                   L: int, t_max: float, dt: float, stride: int = 1,
                   trace_bound: float = DEFAULT_TRACE_BOUND) -> HeomResult:
    """RK4 integration of the hierarchy; returns site populations over time.

    Raises :class:`HeomError` if the trace of the reduced density matrix
    drifts by more than ``trace_bound``.
    """
    if not (t_max > 0 and dt > 0):
        raise ValueError("t_max and dt must be positive")
    if grid is not None and grid.size != params.N:
        raise ValueError("phonon grid does not match model parameters")
    hier = build_hierarchy(params, L, beta)
    state = initial_hierarchy(rho0, hier)
    n_steps = max(1, int(round(t_max / dt)))
    times, P, J = [], [], []
    herm = 0.0
    tr0 = state.trace()
    for step in range(n_steps + 1):
        t = step * dt
        if step % stride == 0 or step == n_steps:
            rho = state.rho()
            times.append(t)
            P.append(np.real(np.diag(rho)))
            J.append(float(np.real(np.trace(current_matrix(params, t) @ rho))))
            herm = max(herm, state.hermiticity_residue())
            drift = abs(state.trace() - tr0)
            if not drift <= trace_bound:
                raise HeomError(f"trace drift {drift:.3e} exceeds {trace_bound:g}", t,
                                {"L": L, "entries": hier.n_entries, "hermiticity": herm,
                                 "max_entry": float(np.max(np.abs(state.entries)))})
        if step == n_steps:
            break
        state = heom_step(state, t, dt)
    return HeomResult(np.array(times), np.array(P), np.array(J), float(abs(state.trace() - tr0)),
                      herm, int(L), hier.n_entries, state)


def l_convergence(rho0, params, beta, L, t_max, dt, stride=1, step: int = 2):
    """Run depths L and L + step; returns both results and max |dP|."""
    a = propagate_heom(rho0, params, None, beta, L, t_max, dt, stride)
    b = propagate_heom(rho0, params, None, beta, L + step, t_max, dt, stride)
    return a, b, float(np.max(np.abs(a.P - b.P)))


def depth_report(results: list[HeomResult], delta: float | None = None) -> str:
    """Text report, one line per depth: L, entry count, trace drift, Hermiticity."""
    lines = ["# L entries trace_drift hermiticity"]
    for r in results:
        lines.append(f"{r.L} {r.n_entries} {r.trace_drift:.3e} {r.hermiticity:.3e}")
    if delta is not None:
        lines.append(f"# L-convergence delta {delta:.3e}")
    return "\n".join(lines) + "\n"
