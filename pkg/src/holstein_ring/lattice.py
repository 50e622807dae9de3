"""Model parameters, phonon momentum grid and coupling coefficients.

Units: d = e = hbar = 1, energies in units of omega0. Sites are labelled
n = 0 .. N-1 with periodic boundary conditions; phonon momenta are
q = 2*pi*l/N with l ascending from -N/2+1 to N/2. Every module uses this
ordering.

The exciton-phonon interaction is written as

    H_coup = sum_q [ (a^dag K_q a) b_q + (a^dag K_q^dag a) b_q^dag ]

where ``K_q`` is an N x N exciton-space matrix holding both the diagonal
(on-site) and the off-diagonal (hopping-modulation) channel.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from functools import lru_cache
import math

import numpy as np

OPTICAL = "optical"
ACOUSTIC = "acoustic"
BRANCHES = (OPTICAL, ACOUSTIC)


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the ring.

    Attributes
    ----------
    N : int
        Number of sites (even, >= 2).
    J : float
        Transfer integral.
    g : float
        Diagonal (Holstein) coupling.
    phi : float
        Off-diagonal coupling.
    F : float
        Field strength, energy per site.
    omega0 : float
        Phonon frequency scale, the energy unit.
    branch : str
        ``"optical"`` (dispersionless) or ``"acoustic"``.
    """

    N: int
    J: float = 0.0
    g: float = 0.0
    phi: float = 0.0
    F: float = 0.0
    omega0: float = 1.0
    branch: str = OPTICAL

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2 or self.N % 2:
            raise ValueError(f"N must be an even integer >= 2, got {self.N}")
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")
        for name in ("J", "g", "phi", "F", "omega0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}, got {self.branch!r}")

    @property
    def bloch_period(self) -> float:
        """t_B = 2 pi / |F| (inf when F = 0)."""
        return 2 * np.pi / abs(self.F) if self.F else math.inf

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PhononGrid:
    momenta: np.ndarray
    frequencies: np.ndarray

    @property
    def size(self) -> int:
        return len(self.momenta)

    @property
    def l_values(self) -> np.ndarray:
        n = self.size
        return np.arange(-n // 2 + 1, n // 2 + 1)


def build_phonon_grid(params: ModelParams) -> PhononGrid:
    """Momentum grid q = 2 pi l / N, l = -N/2+1 .. N/2, with dispersions.

    Optical: omega_q = omega0. Acoustic: omega_q = omega0 |sin(q/2)|, so the
    q = 0 mode has zero frequency and is exactly decoupled; it is kept so
    array shapes do not depend on the branch.
    """
    N = params.N
    if N % 2:
        raise ValueError("odd N has no symmetric momentum grid")
    l = np.arange(-N // 2 + 1, N // 2 + 1)
    q = 2 * np.pi * l / N
    if params.branch == OPTICAL:
        w = np.full(N, float(params.omega0))
    else:
        w = params.omega0 * np.abs(np.sin(q / 2))
        w[l == 0] = 0.0
    q.setflags(write=False)
    w.setflags(write=False)
    return PhononGrid(momenta=q, frequencies=w)


def hopping_phase(F: float, t: float) -> complex:
    """Gauge factor exp(-iFt) multiplying the forward hop a_n^dag a_{n+1}."""
    return complex(np.exp(-1j * F * t))


def diagonal_coupling_coefficient(params: ModelParams, grid: PhononGrid, n: int, iq: int) -> complex:
    """Coefficient of b_q in the on-site term of site n: -g w_q e^{iqn} / sqrt(N)."""
    q = grid.momenta[iq]
    return complex(-params.g * grid.frequencies[iq] * np.exp(1j * q * n) / np.sqrt(params.N))


def hopping_matrix(params: ModelParams, t: float) -> np.ndarray:
    """Exciton Hamiltonian -J sum_n a_n^dag (e^{-iFt} a_{n+1} + e^{iFt} a_{n-1})."""
    N = params.N
    ph = hopping_phase(params.F, t)
    h = np.zeros((N, N), dtype=complex)
    n = np.arange(N)
    np.add.at(h, (n, (n + 1) % N), -params.J * ph)
    np.add.at(h, (n, (n - 1) % N), -params.J * np.conj(ph))
    return h


def current_matrix(params: ModelParams, t: float) -> np.ndarray:
    """Current operator i sum_n a_n^dag (e^{-iFt} a_{n+1} - e^{iFt} a_{n-1})."""
    N = params.N
    ph = hopping_phase(params.F, t)
    c = np.zeros((N, N), dtype=complex)
    n = np.arange(N)
    np.add.at(c, (n, (n + 1) % N), 1j * ph)
    np.add.at(c, (n, (n - 1) % N), -1j * np.conj(ph))
    return c


def coupling_matrices(params: ModelParams, grid: PhononGrid) -> np.ndarray:
    """K_q for every mode, shape (N_q, N, N); (a^dag K_q a) multiplies b_q.

    Diagonal channel: K_q[n, n] = -g w_q e^{iqn} / sqrt(N).
    Off-diagonal channel (phi/2) w_q / sqrt(N) times
    e^{iqn}(e^{iq} - 1) at (n, n+1) and e^{iqn}(1 - e^{-iq}) at (n, n-1).
    Entries are accumulated, so N = 2 (where n+1 = n-1) is handled.
    """
    N = params.N
    q = grid.momenta[:, None]
    w = grid.frequencies[:, None]
    n = np.arange(N)[None, :]
    pref = w / np.sqrt(N)
    K = np.zeros((grid.size, N, N), dtype=complex)
    iq = np.arange(grid.size)[:, None]
    nn = np.broadcast_to(n, (grid.size, N))
    ii = np.broadcast_to(iq, (grid.size, N))
    eiqn = np.exp(1j * q * n)
    np.add.at(K, (ii, nn, nn), -params.g * pref * eiqn)
    if params.phi:
        fwd = 0.5 * params.phi * pref * eiqn * (np.exp(1j * q) - 1)
        bwd = 0.5 * params.phi * pref * eiqn * (1 - np.exp(-1j * q))
        np.add.at(K, (ii, nn, (nn + 1) % N), fwd)
        np.add.at(K, (ii, nn, (nn - 1) % N), bwd)
    return K


def translate_phonons(lam: np.ndarray, grid: PhononGrid, shift: int) -> np.ndarray:
    """Displacements after translating the lattice by ``shift`` sites."""
    return lam * np.exp(-1j * grid.momenta * shift)


@dataclass(frozen=True)
class Operators:
    """Cached per-model arrays shared by the solvers."""

    params: ModelParams
    grid: PhononGrid
    K: np.ndarray  # (Nq, N, N), multiplies b_q
    Kd: np.ndarray  # (Nq, N, N), K_q^dag, multiplies b_q^dag


@lru_cache(maxsize=64)
def operators(params: ModelParams) -> Operators:
    grid = build_phonon_grid(params)
    K = coupling_matrices(params, grid)
    Kd = np.ascontiguousarray(np.conj(np.transpose(K, (0, 2, 1))))
    K.setflags(write=False)
    Kd.setflags(write=False)
    return Operators(params, grid, K, Kd)
