"""Multi-D2 trial state, initial packets and coherent-state overlaps.

    |D> = sum_i sum_n psi[i, n] |n> |lam_i>,

with |lam_i> the normalized multimode coherent state
exp(sum_q lam[i, q] b_q^dag - h.c.)|0>. Phonon index q follows the grid
ordering of :mod:`holstein_ring.lattice`.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import groupby
import math

import numpy as np

from .lattice import ModelParams

SNAPSHOT_HEADER = "# multi-D2 snapshot v1: M N Nq, then M psi rows (N re/im pairs), then M lambda rows (Nq re/im pairs)"


@dataclass
class MultiD2State:
    psi: np.ndarray  # (M, N) exciton amplitudes
    lam: np.ndarray  # (M, Nq) phonon displacements

    def __post_init__(self):
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=complex))
        self.lam = np.atleast_2d(np.asarray(self.lam, dtype=complex))
        if self.psi.shape[0] != self.lam.shape[0]:
            raise ValueError("psi and lam must have the same multiplicity")

    @property
    def M(self) -> int:
        return self.psi.shape[0]

    @property
    def N(self) -> int:
        return self.psi.shape[1]

    @property
    def Nq(self) -> int:
        return self.lam.shape[1]

    def copy(self) -> "MultiD2State":
        return MultiD2State(self.psi.copy(), self.lam.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.psi.ravel(), self.lam.ravel()])

    @classmethod
    def from_vector(cls, z: np.ndarray, M: int, N: int, Nq: int) -> "MultiD2State":
        return cls(z[: M * N].reshape(M, N).copy(), z[M * N:].reshape(M, Nq).copy())

    def shifted(self, s: int, momenta: np.ndarray) -> "MultiD2State":
        """Translate the whole state by ``s`` sites along the ring."""
        return MultiD2State(np.roll(self.psi, s, axis=1), self.lam * np.exp(-1j * momenta * s))


def debye_waller(lam_i, lam_j) -> complex:
    """<lam_i|lam_j> = exp(sum_q lam_i* lam_j - (|lam_i|^2 + |lam_j|^2)/2)."""
    lam_i = np.asarray(lam_i, dtype=complex)
    lam_j = np.asarray(lam_j, dtype=complex)
    if lam_i.shape != lam_j.shape:
        raise ValueError(f"length mismatch: {lam_i.shape} vs {lam_j.shape}")
    expo = np.sum(lam_i.conj() * lam_j - 0.5 * (np.abs(lam_i) ** 2 + np.abs(lam_j) ** 2))
    return complex(np.exp(expo))


def overlap_matrix(lam: np.ndarray) -> np.ndarray:
    """Debye-Waller matrix S[i, j] = <lam_i|lam_j>; Hermitian, unit diagonal."""
    sq = np.sum(np.abs(lam) ** 2, axis=1)
    S = np.exp(lam.conj() @ lam.T - 0.5 * (sq[:, None] + sq[None, :]))
    S = np.triu(S, 1)
    S = S + S.conj().T
    np.fill_diagonal(S, 1.0)
    return S


def _check_real(z: complex, what: str, tol: float) -> float:
    if abs(z.imag) > tol * max(1.0, abs(z.real)):
        raise ArithmeticError(f"{what} has imaginary residue {z.imag:.3e}")
    return float(z.real)


def norm(state: MultiD2State, tol: float = 1e-12) -> float:
    """<D|D> = sum_ij sum_n psi_jn* psi_in S_ji."""
    S = overlap_matrix(state.lam)
    rho = state.psi.conj() @ state.psi.T
    return _check_real(complex(np.sum(rho * S)), "norm", tol)


def normalized(state: MultiD2State) -> MultiD2State:
    return MultiD2State(state.psi / math.sqrt(norm(state)), state.lam.copy())


def seed_multiplicity(state: MultiD2State, M: int, eta: float = 1e-4, seed: int = 0) -> MultiD2State:
    """Expand copy 1 of ``state`` to multiplicity M.

    Copies 2..M get zero exciton amplitude and i.i.d. complex Gaussian
    displacements of scale ``eta`` (deterministic in ``seed``); the result
    is renormalized.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if M < 1:
        raise ValueError("M must be >= 1")
    psi = np.zeros((M, state.N), dtype=complex)
    lam = np.zeros((M, state.Nq), dtype=complex)
    psi[0] = state.psi[0]
    lam[0] = state.lam[0]
    if M > 1 and eta > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((M - 1, state.Nq, 2))
        lam[1:] = lam[0] + eta * (noise[..., 0] + 1j * noise[..., 1]) / math.sqrt(2)
    elif M > 1:
        lam[1:] = lam[0]
    return normalized(MultiD2State(psi, lam))


def _single_copy(psi1: np.ndarray, N: int) -> MultiD2State:
    return MultiD2State(psi1[None, :], np.zeros((1, N), dtype=complex))


def init_two_site(params: ModelParams, M: int = 1, eta: float = 1e-4, seed: int = 0) -> MultiD2State:
    """psi_n = (delta_{n,N/2} + delta_{n,N/2+1}) / sqrt(2), phonon vacuum."""
    N = params.N
    psi1 = np.zeros(N, dtype=complex)
    psi1[N // 2] += 1 / math.sqrt(2)
    psi1[(N // 2 + 1) % N] += 1 / math.sqrt(2)
    return seed_multiplicity(_single_copy(psi1, N), M, eta, seed)


def ring_distance(N: int, center: float) -> np.ndarray:
    """Signed minimal-image distance of every site from ``center``."""
    d = np.arange(N) - center
    return (d + N / 2) % N - N / 2


def init_gaussian(params: ModelParams, M: int, sigma0: float, eta: float = 1e-4, seed: int = 0) -> MultiD2State:
    """Square root of a discrete Gaussian of width sigma0 centred at site N/2.

    psi_n ~ exp(-d_n^2 / (4 sigma0^2)) with d_n the signed ring distance,
    renormalized on the ring.
    """
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    N = params.N
    d = ring_distance(N, N // 2)
    psi1 = np.exp(-(d ** 2) / (4 * sigma0 ** 2)).astype(complex)
    psi1 /= np.linalg.norm(psi1)
    return seed_multiplicity(_single_copy(psi1, N), M, eta, seed)


def _normal_order(word):
    """Expand a ladder word into normal-ordered terms.

    ``word`` is a sequence of (mode, is_creation) in operator order. Returns
    a list of (coefficient, creators, annihilators).
    """
    word = list(word)
    for pos in range(len(word) - 1):
        (q, c1), (p, c2) = word[pos], word[pos + 1]
        if not c1 and c2:
            swapped = word[:pos] + [word[pos + 1], word[pos]] + word[pos + 2:]
            terms = _normal_order(swapped)
            if q == p:
                terms += _normal_order(word[:pos] + word[pos + 2:])
            return terms
    return [(1, [q for q, c in word if c], [q for q, c in word if not c])]


def displaced_matrix_element(lam_i, lam_j, word) -> complex:
    """<lam_i| word |lam_j> for a word of ladder operators.

    After normal ordering each b_q^dag contributes lam_i[q]*, each b_q
    contributes lam_j[q], and the product is scaled by S_ij. At most two
    creation and two annihilation operators per mode are accepted.
    """
    word = [(int(q), bool(c)) for q, c in word]
    for q, ops in groupby(sorted(word), key=lambda x: x[0]):
        ops = list(ops)
        if sum(c for _, c in ops) > 2 or sum(not c for _, c in ops) > 2:
            raise ValueError(f"unsupported word on mode {q}: at most quartic per mode")
    lam_i = np.asarray(lam_i, dtype=complex)
    lam_j = np.asarray(lam_j, dtype=complex)
    total = 0j
    for coeff, cre, ann in _normal_order(word):
        total += coeff * np.prod(lam_i[cre].conj()) * np.prod(lam_j[ann])
    return complex(total * debye_waller(lam_i, lam_j))


def format_snapshot(state: MultiD2State) -> str:
    lines = [SNAPSHOT_HEADER, f"{state.M} {state.N} {state.Nq}"]
    for block in (state.psi, state.lam):
        for row in block:
            lines.append(" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in row))
    return "\n".join(lines) + "\n"


def parse_snapshot(text: str) -> MultiD2State:
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    M, N, Nq = (int(x) for x in rows[0].split())
    if len(rows) != 1 + 2 * M:
        raise ValueError(f"expected {2 * M} data rows, found {len(rows) - 1}")

    def row(line, n):
        v = np.array(line.split(), dtype=float)
        if v.size != 2 * n:
            raise ValueError(f"row has {v.size} numbers, expected {2 * n}")
        return v[0::2] + 1j * v[1::2]

    psi = np.array([row(r, N) for r in rows[1:1 + M]])
    lam = np.array([row(r, Nq) for r in rows[1 + M:]])
    return MultiD2State(psi, lam)
