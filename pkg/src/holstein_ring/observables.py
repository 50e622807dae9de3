"""Observables and accuracy diagnostics of a multi-D2 state."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .ansatz import MultiD2State, overlap_matrix, norm as state_norm, ring_distance
from .lattice import ModelParams, PhononGrid, current_matrix, hopping_matrix, operators

RESIDUE_TOL = 1e-10
DEVIATION_TOL = 1e-10


class DiagnosticError(ArithmeticError):
    pass


def _real(z, what: str, tol: float = RESIDUE_TOL, scale: float = 1.0):
    z = np.asarray(z)
    bound = tol * max(1.0, scale)
    if np.any(np.abs(z.imag) > bound):
        raise DiagnosticError(f"{what}: imaginary residue {np.max(np.abs(z.imag)):.3e} > {bound:.1e}")
    return z.real


@dataclass
class ObservableRecord:
    t: float
    P: np.ndarray
    X: np.ndarray
    c: float
    sigma: float
    j: float
    E_ex: float
    E_ph: float
    E_diag: float
    E_off: float
    E_total: float
    norm: float
    Delta: float = math.nan
    Nerr: float = math.nan

    @staticmethod
    def header(N: int) -> list[str]:
        return (["t"] + [f"P{n}" for n in range(N)] + [f"X{n}" for n in range(N)]
                + ["c", "sigma", "j", "E_ex", "E_ph", "E_diag", "E_off", "E_total", "norm", "Delta", "Nerr"])

    def row(self) -> list[float]:
        return ([self.t, *self.P, *self.X, self.c, self.sigma, self.j, self.E_ex, self.E_ph,
                 self.E_diag, self.E_off, self.E_total, self.norm, self.Delta, self.Nerr])


def exciton_probability(state: MultiD2State) -> np.ndarray:
    """P_n = sum_ij psi_jn* psi_in S_ji."""
    S = overlap_matrix(state.lam)
    P = np.einsum("jn,in,ji->n", state.psi.conj(), state.psi, S)
    P = _real(P, "exciton probability", 1e-12)
    return P


def phonon_amplitudes(state: MultiD2State) -> np.ndarray:
    """<D|b_q|D> for every mode."""
    S = overlap_matrix(state.lam)
    rs = (state.psi.conj() @ state.psi.T) * S  # [j, i]
    return np.einsum("ji,iq->q", rs, state.lam)


def phonon_displacement(state: MultiD2State, grid: PhononGrid) -> np.ndarray:
    """X_n = <b_n + b_n^dag> with b_n = N^-1/2 sum_q e^{iqn} b_q."""
    N = state.N
    bq = phonon_amplitudes(state)
    n = np.arange(N)
    return 2 * np.real(np.exp(1j * np.outer(n, grid.momenta)) @ bq) / math.sqrt(N)


def centroid_width(P) -> tuple[float, float]:
    """Centroid and width of a distribution on the ring.

    Positions are unwrapped (minimal image) around the circular mean, so a
    packet straddling the seam is treated as contiguous. The centroid is
    returned in [0, N).
    """
    P = np.asarray(P, dtype=float)
    total = P.sum()
    if not total > 0:
        raise ValueError("distribution has no weight")
    N = len(P)
    n = np.arange(N)
    z = np.sum(P * np.exp(2j * np.pi * n / N))
    if abs(z) > 1e-12 * total:
        ref = (np.angle(z) * N / (2 * np.pi)) % N
    else:
        ref = float(np.sum(n * P) / total)
    d = ring_distance(N, ref)
    mean = np.sum(d * P) / total
    var = np.sum((d - mean) ** 2 * P) / total
    return float((ref + mean) % N), float(math.sqrt(max(var, 0.0)))


def _exciton_expectation(state: MultiD2State, op: np.ndarray, S=None) -> complex:
    S = overlap_matrix(state.lam) if S is None else S
    return complex(np.einsum("jn,nm,im,ji->", state.psi.conj(), op, state.psi, S))


def current(state: MultiD2State, t: float, F: float) -> float:
    """j = i sum_ij sum_n psi_jn* (e^{-iFt} psi_{i,n+1} - e^{iFt} psi_{i,n-1}) S_ji."""
    params = ModelParams(N=state.N, F=F)
    val = _exciton_expectation(state, current_matrix(params, t))
    return float(_real(val, "current"))


def energies(state: MultiD2State, t: float, params: ModelParams, grid: PhononGrid | None = None):
    """(E_ex, E_ph, E_diag, E_off, E_total) of the state at time t."""
    ops = operators(params)
    psi, lam = state.psi, state.lam
    S = overlap_matrix(lam)
    rs = (psi.conj() @ psi.T) * S  # [j, i]
    w = ops.grid.frequencies
    e_ex = _exciton_expectation(state, hopping_matrix(params, t), S)
    e_ph = np.sum(rs * ((lam.conj() * w) @ lam.T))
    diag_params = ModelParams(N=params.N, g=params.g, omega0=params.omega0, branch=params.branch)
    off_params = ModelParams(N=params.N, phi=params.phi, omega0=params.omega0, branch=params.branch)
    out = [e_ex, e_ph]
    for p in (diag_params, off_params):
        Kx = operators(p)
        # sum_q <lam_j|K_q b_q + K_q^dag b_q^dag|lam_i> sandwiched in psi
        A = np.tensordot(lam, Kx.K, axes=(1, 0))  # (M, N, N), index i
        B = np.tensordot(lam.conj(), Kx.Kd, axes=(1, 0))  # index j
        val = (np.einsum("jn,inm,im,ji->", psi.conj(), A, psi, S)
               + np.einsum("jn,jnm,im,ji->", psi.conj(), B, psi, S))
        out.append(val)
    out = [float(_real(v, "energy", scale=abs(v))) for v in out]
    return (*out, sum(out))


def _h_action(state: MultiD2State, t: float, params: ModelParams):
    """H|D> = sum_i |u_i>|lam_i> + sum_iq |w_iq> b_q^dag |lam_i>."""
    ops = operators(params)
    psi, lam = state.psi, state.lam
    h = hopping_matrix(params, t)
    A = np.tensordot(lam, ops.K, axes=(1, 0))
    u = psi @ h.T + np.einsum("inm,im->in", A, psi)
    w = np.einsum("qnm,im->iqn", ops.Kd, psi) + ops.grid.frequencies[None, :, None] * lam[:, :, None] * psi[:, None, :]
    return u, w


def h_squared(state: MultiD2State, t: float, params: ModelParams) -> float:
    """<D|H^2|D> = || H|D> ||^2, evaluated analytically."""
    S = overlap_matrix(state.lam)
    lam = state.lam
    u, w = _h_action(state, t, params)
    uu = u.conj() @ u.T  # [k, i]
    uw = np.einsum("kn,iqn,kq->ki", u.conj(), w, lam.conj())
    wu = np.einsum("kqn,in,iq->ki", w.conj(), u, lam)
    ww = np.einsum("kqn,ipn->kiqp", w.conj(), w)
    www = np.einsum("kiqp,iq,kp->ki", ww, lam, lam.conj()) + np.einsum("kiqq->ki", ww)
    val = np.sum(S * (uu + uw + wu + www))
    return float(_real(val, "<H^2>", scale=abs(val)))


def deviation_amplitude(state: MultiD2State, zdot: MultiD2State, t: float, params: ModelParams,
                        grid: PhononGrid | None = None) -> tuple[float, float]:
    """Deviation amplitude Delta = || -iH|D> - d/dt|D> || and N_err = sqrt(<H^2>).

    Delta^2 = <H^2> + <D'|D'> + 2 Im <D|H|D'>, clamped at zero inside a
    tolerance band of 1e-10 (relative to <H^2>).
    """
    from .propagator import assemble_tangent_system, tangent_coefficients

    h2 = h_squared(state, t, params)
    system = assemble_tangent_system(state, t, params)
    w = tangent_coefficients(state, zdot)
    dd = np.vdot(w, system.gram @ w)
    dd = float(_real(dd, "<D'|D'>", scale=abs(dd)))
    # <v_a|H|D> = i rhs_a, so <D'|H|D> = sum_a w_a* (i rhs_a)
    dhd = np.vdot(w, 1j * system.rhs)
    delta2 = h2 + dd + 2 * np.imag(np.conj(dhd))
    scale = max(1.0, h2)
    if delta2 < -DEVIATION_TOL * scale:
        raise DiagnosticError(f"negative squared deviation {delta2:.3e}")
    return math.sqrt(max(delta2, 0.0)), math.sqrt(max(h2, 0.0))


def relative_deviation(trajectory) -> float:
    """Sigma = max_t Delta(t) / mean_t N_err(t)."""
    recs = trajectory.records if hasattr(trajectory, "records") else trajectory
    if not len(recs):
        raise ValueError("empty trajectory")
    delta = np.array([r.Delta for r in recs])
    nerr = np.array([r.Nerr for r in recs])
    if np.any(np.isnan(delta)) or np.any(np.isnan(nerr)):
        raise ValueError("trajectory carries no deviation samples")
    return float(np.max(delta) / np.mean(nerr))


def record_observables(state: MultiD2State, t: float, params: ModelParams,
                       zdot: MultiD2State | None = None) -> ObservableRecord:
    ops = operators(params)
    P = exciton_probability(state)
    X = phonon_displacement(state, ops.grid)
    nrm = state_norm(state)
    c, sigma = centroid_width(P) if P.sum() > 0 else (math.nan, math.nan)
    j = current(state, t, params.F)
    e = energies(state, t, params)
    rec = ObservableRecord(t, P, X, c, sigma, j, *e, nrm)
    if zdot is not None:
        rec.Delta, rec.Nerr = deviation_amplitude(state, zdot, t, params)
    return rec
