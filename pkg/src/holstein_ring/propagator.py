"""Dirac-Frenkel equations of motion for the multi-D2 state and RK4 driver.

The tangent space of the ansatz is spanned (over C) by

    v_{kn} = |n>|lam_k>                     (exciton directions)
    v_{kq} = sum_n psi_kn |n> b_q^dag|lam_k> (phonon directions)

Projecting i d/dt|D> = H|D> onto these vectors gives G w = rhs with the
Hermitian Gram matrix G_ab = <v_a|v_b> and rhs_a = -i <v_a|H|D>. The
velocities follow from w = (x, y) as

    lam_dot = y,   psi_dot_in = x_in + psi_in Re(sum_q lam_iq* y_iq),

the second term undoing the normalization factor of the coherent states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np
import scipy.linalg as sla

from .ansatz import MultiD2State, norm, overlap_matrix
from .lattice import ModelParams, PhononGrid, hopping_matrix, operators

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-10
DEFAULT_NORM_BOUND = 1e-4
STARTUP_SUBSTEPS = 4
SMALL_SINGULAR_WARN = 1e-12


class PropagationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.6g})")
        self.t = t


@dataclass
class TangentSystem:
    gram: np.ndarray
    rhs: np.ndarray
    t: float
    M: int
    N: int
    Nq: int
    anchor: np.ndarray | None = None  # coefficients of |D> itself, (psi, 0)


def _check_grid(params: ModelParams, grid: PhononGrid | None):
    ops = operators(params)
    if grid is not None and (grid.size != ops.grid.size or not np.allclose(grid.frequencies, ops.grid.frequencies)):
        raise ValueError("phonon grid does not match model parameters")
    return ops


def _action_terms(state: MultiD2State, t: float, params: ModelParams, ops):
    """Pieces of <v_a|H|D> shared by the assembly and the energy routines."""
    psi, lam = state.psi, state.lam
    lamc = lam.conj()
    w = ops.grid.frequencies
    h = hopping_matrix(params, t)
    S = overlap_matrix(lam)
    # H^{ki} psi_i = (h + sum_q lam_iq K_q + sum_q lam_kq* K_q^dag + E_ki) psi_i
    A = np.tensordot(lam, ops.K, axes=(1, 0))  # (M, N, N)
    B = np.tensordot(lamc, ops.Kd, axes=(1, 0))  # (M, N, N)
    own = psi @ h.T + np.einsum("inm,im->in", A, psi)  # (M, N)
    cross = np.einsum("knm,im->kin", B, psi)  # (M, M, N)
    E = (lamc * w) @ lam.T  # (M, M)
    Hpsi = own[None, :, :] + cross + E[:, :, None] * psi[None, :, :]
    return S, Hpsi


def assemble_tangent_system(state: MultiD2State, t: float, params: ModelParams,
                            grid: PhononGrid | None = None) -> TangentSystem:
    """Gram matrix and right-hand side of the projected Schrodinger equation.

    Unknowns are ordered as all x_{in} (i major) then all y_{iq}.
    """
    ops = _check_grid(params, grid)
    psi, lam = state.psi, state.lam
    M, N, Nq = state.M, state.N, state.Nq
    lamc = lam.conj()
    w = ops.grid.frequencies
    S, Hpsi = _action_terms(state, t, params, ops)
    rho = psi.conj() @ psi.T  # rho[k, i] = <psi_k|psi_i>
    rs = rho * S

    dim = M * (N + Nq)
    G = np.empty((dim, dim), dtype=complex)
    mn = M * N
    G[:mn, :mn] = np.kron(S, np.eye(N))
    pl = np.einsum("ki,in,kp->knip", S, psi, lamc).reshape(mn, M * Nq)
    G[:mn, mn:] = pl
    G[mn:, :mn] = pl.conj().T
    ll = np.einsum("ki,kp,iq->kqip", rs, lamc, lam)
    ll += np.einsum("ki,qp->kqip", rs, np.eye(Nq))
    G[mn:, mn:] = ll.reshape(M * Nq, M * Nq)

    r_psi = -1j * np.einsum("ki,kin->kn", S, Hpsi)
    hk = np.einsum("kn,kin->ki", psi.conj(), Hpsi)
    kpsi = np.tensordot(ops.Kd, psi, axes=(2, 1))  # (Nq, N, M): K_q^dag psi_i
    kd = np.einsum("kn,qni->kiq", psi.conj(), kpsi)
    r_lam = -1j * (
        np.einsum("ki,iq->kq", S * hk, lam)
        + np.einsum("ki,iq,q->kq", rs, lam, w)
        + np.einsum("ki,kiq->kq", S, kd)
    )
    rhs = np.concatenate([r_psi.ravel(), r_lam.ravel()])
    anchor = np.concatenate([psi.ravel(), np.zeros(M * Nq, dtype=complex)])
    return TangentSystem(G, rhs, t, M, N, Nq, anchor)


def solve_tangent(system: TangentSystem, eps: float = DEFAULT_EPS, method: str = "cholesky",
                  conserve_norm: bool = True) -> np.ndarray:
    """Tikhonov solution of the tangent system, argmin |G w - r|^2 + eps |w|^2.

    ``method="cholesky"`` factorizes the normal equations (G^2 + eps) w = G r;
    ``method="eigh"`` uses the spectral form w = sum_s s/(s^2+eps) u u^dag r.
    With eps = 0 a plain LU solve is used.

    With ``conserve_norm`` the regularized solution is corrected so that
    <D|D_dot> = -i <D|H|D> holds exactly, as it does for the unregularized
    equations, without giving up exact energy conservation for a static
    Hamiltonian (see :func:`_restore_identities`). This removes the norm
    drift that the damping of small singular values otherwise introduces.
    """
    G, r = system.gram, system.rhs
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(r))):
        raise FloatingPointError(f"non-finite entries in tangent system at t = {system.t}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if eps == 0:
        return np.linalg.solve(G, r)
    w = None
    if method == "cholesky":
        A = G @ G
        A[np.diag_indices_from(A)] += eps
        try:
            c = sla.cho_factor(A, lower=False, check_finite=False)
            w = sla.cho_solve(c, G @ r, check_finite=False)
        except np.linalg.LinAlgError:
            log.debug("Cholesky failed at t=%g, falling back to eigh", system.t)
    elif method != "eigh":
        raise ValueError(f"unknown method {method!r}")
    if w is None:
        s, U = np.linalg.eigh(G)
        w = U @ ((s / (s * s + eps)) * (U.conj().T @ r))
    if conserve_norm and system.anchor is not None:
        w = _restore_identities(G, r, system.anchor, w)
    return w


def _restore_identities(G, r, c, w, tol=1e-14):
    """Smallest correction (in the metric G) restoring two exact identities.

    The exact solution satisfies c^dag G w = c^dag r, i.e. <D|D_dot> =
    -i<D|H|D> (norm conservation), and Im(r^dag w) = 0 (no energy change
    when H is static). Regularization breaks the first one, and any
    correction along c alone breaks the second. The correction is sought
    in span_R{c, ic, iw}, the image under G^-1 of the constraint gradients.
    """
    s = float(np.real(np.vdot(c, G @ c)))
    if not s > 0:
        return w
    m = np.vdot(c, G @ w)
    d = np.vdot(c, r) - m
    rho = np.vdot(r, c)
    kappa = float(np.real(np.vdot(r, w)))
    # c^dag G delta = d and Im(r^dag delta) = 0 with delta = z c + i x w, z complex, x real
    den = kappa * s - float(np.real(rho * m))
    x = -float(np.imag(rho * d)) / den if abs(den) > tol * max(abs(kappa * s), 1.0) else 0.0
    z = (d - 1j * x * m) / s
    return w + z * c + 1j * x * w


def smallest_singular_value(system: TangentSystem) -> float:
    return float(np.min(np.abs(np.linalg.eigvalsh(system.gram))))


def velocities(state: MultiD2State, w: np.ndarray) -> MultiD2State:
    """Map the tangent coefficients w = (x, y) to (psi_dot, lam_dot)."""
    M, N, Nq = state.M, state.N, state.Nq
    x = w[: M * N].reshape(M, N)
    y = w[M * N:].reshape(M, Nq)
    growth = np.real(np.sum(state.lam.conj() * y, axis=1))
    return MultiD2State(x + state.psi * growth[:, None], y)


def tangent_coefficients(state: MultiD2State, zdot: MultiD2State) -> np.ndarray:
    """Inverse of :func:`velocities`."""
    growth = np.real(np.sum(state.lam.conj() * zdot.lam, axis=1))
    x = zdot.psi - state.psi * growth[:, None]
    return np.concatenate([x.ravel(), zdot.lam.ravel()])


def time_derivative(state: MultiD2State, t: float, params: ModelParams, eps: float = DEFAULT_EPS,
                    method: str = "cholesky", conserve_norm: bool = True) -> MultiD2State:
    system = assemble_tangent_system(state, t, params)
    return velocities(state, solve_tangent(system, eps, method, conserve_norm))


def rk4_step(state: MultiD2State, t: float, dt: float, params: ModelParams, grid: PhononGrid | None = None,
             eps: float = DEFAULT_EPS, k1: MultiD2State | None = None, method: str = "cholesky",
             conserve_norm: bool = True) -> MultiD2State:
    """Classical RK4 step; the field phase is evaluated at each stage time.

    Runs on the complex parameter vector, which is identical to RK4 on the
    stacked real and imaginary parts.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_grid(params, grid)
    M, N, Nq = state.M, state.N, state.Nq
    z = state.to_vector()

    def f(tt, zz):
        st = MultiD2State.from_vector(zz, M, N, Nq)
        return time_derivative(st, tt, params, eps, method, conserve_norm).to_vector()

    d1 = k1.to_vector() if k1 is not None else f(t, z)
    d2 = f(t + dt / 2, z + dt / 2 * d1)
    d3 = f(t + dt / 2, z + dt / 2 * d2)
    d4 = f(t + dt, z + dt * d3)
    return MultiD2State.from_vector(z + dt / 6 * (d1 + 2 * d2 + 2 * d3 + d4), M, N, Nq)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    records: list = field(default_factory=list)
    min_singular: list = field(default_factory=list)
    final: MultiD2State | None = None

    def array(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def P(self) -> np.ndarray:
        return self.array("P")

    @property
    def X(self) -> np.ndarray:
        return self.array("X")


def default_dt(params: ModelParams) -> float:
    return params.bloch_period / 2000 if params.F else 0.002 / params.omega0


def propagate(state0: MultiD2State, params: ModelParams, t_max: float, dt: float | None = None,
              stride: int = 10, eps: float = DEFAULT_EPS, deviation: bool = False,
              norm_bound: float = DEFAULT_NORM_BOUND, keep_states: bool = False,
              monitor: bool = False, method: str = "cholesky", conserve_norm: bool = True,
              startup_substeps: int = STARTUP_SUBSTEPS) -> Trajectory:
    """Integrate the multi-D2 equations of motion from t = 0 to ``t_max``.

    Observables are recorded every ``stride`` steps (including t = 0 and the
    final step). ``deviation`` adds the deviation amplitude and N_err;
    ``monitor`` records the smallest Gram singular value at each sample.
    Raises :class:`PropagationError` when the norm drifts by more than
    ``norm_bound``.

    The first step is split into ``startup_substeps`` equal RK4 steps. Seeded
    copies start with zero amplitude, where the Gram matrix is singular and
    their velocities change fastest; a single full step there can cost up
    to 1e-4 in norm.
    """
    from .observables import record_observables

    if not t_max > 0:
        raise ValueError("t_max must be positive")
    dt = default_dt(params) if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    if startup_substeps < 1:
        raise ValueError("startup_substeps must be >= 1")
    n_steps = max(1, int(round(t_max / dt)))
    traj = Trajectory()
    state = state0.copy()
    norm0 = norm(state0)
    for step in range(n_steps + 1):
        t = step * dt
        k1 = None
        if step % stride == 0 or step == n_steps:
            system = assemble_tangent_system(state, t, params)
            w = solve_tangent(system, eps, method, conserve_norm)
            k1 = velocities(state, w)
            rec = record_observables(state, t, params, zdot=k1 if deviation else None)
            traj.times.append(t)
            traj.records.append(rec)
            if keep_states:
                traj.states.append(state.copy())
            if monitor:
                smin = smallest_singular_value(system)
                traj.min_singular.append(smin)
                if smin < SMALL_SINGULAR_WARN:
                    log.warning("Gram matrix nearly singular at t=%g (s_min=%.2e)", t, smin)
            if not math.isfinite(rec.norm) or abs(rec.norm - norm0) > norm_bound:
                raise PropagationError(f"norm drift {rec.norm - norm0:.3e} exceeds {norm_bound:g}", t)
        if step == n_steps:
            traj.final = state
            break
        if step == 0 and startup_substeps > 1:
            h = dt / startup_substeps
            for k in range(startup_substeps):
                state = rk4_step(state, k * h, h, params, eps=eps, method=method, conserve_norm=conserve_norm)
            continue
        state = rk4_step(state, t, dt, params, eps=eps, k1=k1, method=method, conserve_norm=conserve_norm)
    return traj
