"""Brute-force reference: the Holstein ring in a truncated phonon Fock space.

Basis: site n times occupations (m_1 .. m_N) of the N momentum modes, each
capped at ``n_max``. Vectors are stored as arrays of shape
(N, n_max+1, ..., n_max+1) and the Hamiltonian is applied matrix-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .ansatz import MultiD2State
from .lattice import ModelParams, PhononGrid, current_matrix, hopping_matrix, operators


class TruncationError(ValueError):
    pass


@dataclass(frozen=True)
class FockBasis:
    N: int
    n_max: int
    n_modes: int | None = None

    def __post_init__(self):
        if self.n_modes is None:
            object.__setattr__(self, "n_modes", self.N)

    @property
    def shape(self) -> tuple:
        return (self.N,) + (self.n_max + 1,) * self.n_modes

    @property
    def dim(self) -> int:
        return self.N * (self.n_max + 1) ** self.n_modes

    def index(self, site: int, occupations) -> int:
        return int(np.ravel_multi_index((site, *occupations), self.shape))

    def label(self, index: int) -> tuple:
        site, *occ = np.unravel_index(index, self.shape)
        return int(site), tuple(int(m) for m in occ)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=complex)


def lower(v: np.ndarray, mode: int) -> np.ndarray:
    """b_q applied along phonon ``mode``."""
    ax = mode + 1
    d = v.shape[ax]
    out = np.zeros_like(v)
    src = [slice(None)] * v.ndim
    dst = [slice(None)] * v.ndim
    src[ax], dst[ax] = slice(1, d), slice(0, d - 1)
    shape = [1] * v.ndim
    shape[ax] = d - 1
    out[tuple(dst)] = v[tuple(src)] * np.sqrt(np.arange(1, d)).reshape(shape)
    return out


def raise_(v: np.ndarray, mode: int) -> np.ndarray:
    """b_q^dag applied along phonon ``mode``; the top occupation is dropped."""
    ax = mode + 1
    d = v.shape[ax]
    out = np.zeros_like(v)
    src = [slice(None)] * v.ndim
    dst = [slice(None)] * v.ndim
    src[ax], dst[ax] = slice(0, d - 1), slice(1, d)
    shape = [1] * v.ndim
    shape[ax] = d - 1
    out[tuple(dst)] = v[tuple(src)] * np.sqrt(np.arange(1, d)).reshape(shape)
    return out


def site_apply(op: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.tensordot(op, v, axes=(1, 0))


def _number_weights(basis: FockBasis, freqs) -> np.ndarray:
    d = basis.n_max + 1
    total = np.zeros((1,) + (d,) * basis.n_modes)
    for q, w in enumerate(freqs):
        shape = [1] * (basis.n_modes + 1)
        shape[q + 1] = d
        total = total + w * np.arange(d).reshape(shape)
    return total


def _check(v, params: ModelParams, basis: FockBasis) -> np.ndarray:
    if basis.N != params.N or basis.n_modes != params.N:
        raise ValueError("basis does not match model parameters")
    if v.size != basis.dim:
        raise ValueError(f"vector of size {v.size} does not match basis dimension {basis.dim}")
    return v.reshape(basis.shape)


def apply_hamiltonian(v: np.ndarray, t: float, params: ModelParams, grid: PhononGrid | None,
                      basis: FockBasis) -> np.ndarray:
    """H(t) v with hopping (gauge phase), phonon, diagonal and off-diagonal terms."""
    v = _check(v, params, basis)
    ops = operators(params)
    out = site_apply(hopping_matrix(params, t), v)
    out += _number_weights(basis, ops.grid.frequencies) * v
    for q in range(ops.grid.size):
        if not np.any(ops.K[q]):
            continue
        out += site_apply(ops.K[q], lower(v, q))
        out += raise_(site_apply(ops.Kd[q], v), q)
    return out


def probabilities(v: np.ndarray, basis: FockBasis) -> np.ndarray:
    v = v.reshape(basis.shape)
    return np.sum(np.abs(v.reshape(basis.N, -1)) ** 2, axis=1)


def mode_amplitudes(v: np.ndarray, basis: FockBasis) -> np.ndarray:
    v = v.reshape(basis.shape)
    return np.array([np.vdot(v, lower(v, q)) for q in range(basis.n_modes)])


def displacements(v: np.ndarray, grid: PhononGrid, basis: FockBasis) -> np.ndarray:
    bq = mode_amplitudes(v, basis)
    n = np.arange(basis.N)
    return 2 * np.real(np.exp(1j * np.outer(n, grid.momenta)) @ bq) / math.sqrt(basis.N)


def expectations(v: np.ndarray, t: float, params: ModelParams, basis: FockBasis) -> dict:
    """Observables of a Fock vector (unnormalized expectation values)."""
    v = _check(v, params, basis)
    ops = operators(params)
    out = {"norm": float(np.vdot(v, v).real), "P": probabilities(v, basis),
           "X": displacements(v, ops.grid, basis)}
    out["j"] = np.vdot(v, site_apply(current_matrix(params, t), v))
    out["E_ex"] = np.vdot(v, site_apply(hopping_matrix(params, t), v))
    out["E_ph"] = np.vdot(v, _number_weights(basis, ops.grid.frequencies) * v)
    for key, p in (("E_diag", ModelParams(N=params.N, g=params.g, omega0=params.omega0, branch=params.branch)),
                   ("E_off", ModelParams(N=params.N, phi=params.phi, omega0=params.omega0, branch=params.branch))):
        K = operators(p)
        val = 0j
        for q in range(K.grid.size):
            val += 2 * np.vdot(v, site_apply(K.K[q], lower(v, q))).real
        out[key] = val
    Hv = apply_hamiltonian(v, t, params, None, basis)
    out["E_total"] = np.vdot(v, Hv)
    out["H2"] = np.vdot(Hv, Hv).real
    return out


def coherent_column(lam: complex, n_max: int) -> np.ndarray:
    m = np.arange(n_max + 1)
    logfact = np.array([math.lgamma(k + 1) for k in m])
    if lam == 0:
        c = np.zeros(n_max + 1, dtype=complex)
        c[0] = 1.0
        return c
    return np.exp(-abs(lam) ** 2 / 2 + m * np.log(complex(lam)) - 0.5 * logfact)


def _coherent_derivative(lam: complex, lamdot: complex, n_max: int) -> np.ndarray:
    """d/dt of the truncated normalized coherent column along lam_dot."""
    c = coherent_column(lam, n_max)
    m = np.arange(n_max + 1)
    shifted = np.zeros(n_max + 1, dtype=complex)
    # m lam^{m-1} / sqrt(m!) e^{-|lam|^2/2} = sqrt(m) * c_{m-1}
    shifted[1:] = np.sqrt(m[1:]) * coherent_column(lam, n_max)[:-1]
    return lamdot * shifted - np.real(np.conj(lam) * lamdot) * c


def _product(columns) -> np.ndarray:
    out = np.array(1.0 + 0j)
    for col in columns:
        out = np.multiply.outer(out, col)
    return out


def embed_multiD2(state: MultiD2State, basis: FockBasis, tol: float = 1e-10) -> np.ndarray:
    """Expand a multi-D2 state in the truncated number basis."""
    if state.N != basis.N or state.Nq != basis.n_modes:
        raise ValueError("state does not match basis")
    out = basis.zeros()
    for i in range(state.M):
        cols = [coherent_column(l, basis.n_max) for l in state.lam[i]]
        deficit = 1 - np.prod([np.sum(np.abs(c) ** 2) for c in cols])
        if deficit > tol:
            raise TruncationError(f"coherent-state truncation deficit {deficit:.2e} > {tol:g} (copy {i})")
        out += np.multiply.outer(state.psi[i], _product(cols))
    return out


def embed_tangent(state: MultiD2State, zdot: MultiD2State, basis: FockBasis) -> np.ndarray:
    """d/dt of the embedded state for parameter velocities ``zdot``."""
    out = basis.zeros()
    for i in range(state.M):
        cols = [coherent_column(l, basis.n_max) for l in state.lam[i]]
        out += np.multiply.outer(zdot.psi[i], _product(cols))
        for q in range(state.Nq):
            dcols = list(cols)
            dcols[q] = _coherent_derivative(state.lam[i, q], zdot.lam[i, q], basis.n_max)
            out += np.multiply.outer(state.psi[i], _product(dcols))
    return out


def site_state(psi: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Exciton amplitudes ``psi`` times the phonon vacuum."""
    v = basis.zeros()
    v[(slice(None),) + (0,) * basis.n_modes] = psi
    return v


@dataclass
class ExactTrajectory:
    times: list = field(default_factory=list)
    P: list = field(default_factory=list)
    X: list = field(default_factory=list)
    norm: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    final: np.ndarray | None = None


def propagate_exact(v0: np.ndarray, params: ModelParams, grid: PhononGrid | None, basis: FockBasis,
                    t_max: float, dt: float, stride: int = 1, norm_tol: float = 1e-8,
                    energies: bool = False) -> ExactTrajectory:
    """RK4 integration of i dv/dt = H(t) v; records P_ex and X_ph."""
    v = _check(np.asarray(v0, dtype=complex), params, basis).copy()
    n0 = float(np.vdot(v, v).real)
    if abs(n0 - 1) > 1e-10:
        raise ValueError("initial vector must be normalized")
    ops = operators(params)
    n_steps = max(1, int(round(t_max / dt)))
    traj = ExactTrajectory()

    def f(t, x):
        return -1j * apply_hamiltonian(x, t, params, None, basis)

    for step in range(n_steps + 1):
        t = step * dt
        if step % stride == 0 or step == n_steps:
            nv = float(np.vdot(v, v).real)
            traj.times.append(t)
            traj.P.append(probabilities(v, basis))
            traj.X.append(displacements(v, ops.grid, basis))
            traj.norm.append(nv)
            if energies:
                traj.energy.append(float(np.vdot(v, apply_hamiltonian(v, t, params, None, basis)).real))
            if abs(nv - n0) > norm_tol:
                raise RuntimeError(f"Fock norm drift {nv - n0:.3e} exceeds {norm_tol:g} at t={t:.6g}")
        if step == n_steps:
            break
        k1 = f(t, v)
        k2 = f(t + dt / 2, v + dt / 2 * k1)
        k3 = f(t + dt / 2, v + dt / 2 * k2)
        k4 = f(t + dt, v + dt * k3)
        v = v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    traj.final = v
    traj.times = np.array(traj.times)
    traj.P = np.array(traj.P)
    traj.X = np.array(traj.X)
    traj.norm = np.array(traj.norm)
    return traj
