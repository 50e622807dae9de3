"""Post-processing of recorded trajectories: fits, spectra and summary metrics."""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
from scipy import optimize, stats

from .ansatz import MultiD2State, ring_distance
from .lattice import ModelParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerLawFit:
    """Sigma ~ A M^{-mu} fitted by least squares on log-log axes."""

    mu: float
    mu_err: float
    prefactor: float
    residual: float  # rms of the log residuals
    points: tuple

    def predict(self, M) -> np.ndarray:
        return self.prefactor * np.asarray(M, dtype=float) ** (-self.mu)


def fit_power_law(M, sigma) -> PowerLawFit:
    M = np.asarray(M, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if M.shape != sigma.shape or M.ndim != 1:
        raise ValueError("M and sigma must be 1-d arrays of equal length")
    if len(M) < 3:
        raise ValueError("a power-law fit needs at least 3 points")
    if np.any(M <= 0) or np.any(sigma <= 0):
        raise ValueError("power-law fit needs positive data")
    x, y = np.log(M), np.log(sigma)
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    return PowerLawFit(mu=float(-res.slope), mu_err=float(res.stderr), prefactor=float(np.exp(res.intercept)),
                       residual=float(np.sqrt(np.mean(resid ** 2))),
                       points=tuple(zip(M.tolist(), sigma.tolist())))


def is_strictly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


def centroid_swing(c) -> float:
    """Peak-to-peak excursion of the centroid."""
    c = np.asarray(c, dtype=float)
    return float(np.max(c) - np.min(c))


def free_current(t, F: float, amplitude: float = 2.0) -> np.ndarray:
    """Current of a uniform-phase packet without coupling, amplitude * sin(F t)."""
    return amplitude * np.sin(F * np.asarray(t, dtype=float))


def band_power_fraction(t, signal, center: float, half_width: float) -> float:
    """Share of the (mean-removed, Hann-windowed) power within center +/- half_width.

    ``t`` must be uniformly spaced. Frequencies are angular.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(signal, dtype=float)
    if len(t) < 8:
        raise ValueError("too few samples for a spectrum")
    dt = np.diff(t)
    if np.ptp(dt) > 1e-9 * max(dt[0], 1.0):
        raise ValueError("samples must be uniformly spaced")
    x = (x - x.mean()) * np.hanning(len(x))
    power = np.abs(np.fft.rfft(x)) ** 2
    w = 2 * np.pi * np.fft.rfftfreq(len(x), dt[0])
    total = power[1:].sum()
    if total == 0:
        return 0.0
    band = (np.abs(w - center) <= half_width) & (w > 0)
    return float(power[band].sum() / total)


def peak_contrast(t, signal, center: float, half_width: float) -> float:
    """Peak power inside center +/- half_width over the peak power of the flanks.

    The flanks are the two bands of the same width on either side. A value
    above 1 means the spectrum has a local peak near ``center``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(signal, dtype=float)
    if len(t) < 8:
        raise ValueError("too few samples for a spectrum")
    x = (x - x.mean()) * np.hanning(len(x))
    power = np.abs(np.fft.rfft(x)) ** 2
    w = 2 * np.pi * np.fft.rfftfreq(len(x), t[1] - t[0])
    d = np.abs(w - center)
    band = d <= half_width
    flank = (d > half_width) & (d <= 2 * half_width) & (w > 0)
    if not band.any() or not flank.any():
        raise ValueError("frequency grid too coarse for the requested band")
    ref = power[flank].max()
    return float(power[band].max() / ref) if ref > 0 else float("inf")


def slope_at(t, y, t0: float) -> float:
    """Central finite difference of samples y(t) at the sample nearest t0."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    i = int(np.argmin(np.abs(t - t0)))
    if i == 0 or i == len(t) - 1:
        raise ValueError("t0 must lie strictly inside the sampled interval")
    return float((y[i + 1] - y[i - 1]) / (t[i + 1] - t[i - 1]))


def slope_ratio(t, numerator, denominator, t0: float) -> float:
    return slope_at(t, numerator, t0) / slope_at(t, denominator, t0)


def window_sites(N: int, sites, radius: int) -> np.ndarray:
    """Boolean mask of sites within ``radius`` (ring distance) of any of ``sites``."""
    mask = np.zeros(N, dtype=bool)
    for s in sites:
        mask |= np.abs(ring_distance(N, s)) <= radius
    return mask


def outside_mass(P, sites, radius: int) -> np.ndarray:
    """Probability outside the window around ``sites``, for every sample."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    mask = window_sites(P.shape[1], sites, radius)
    return P[:, ~mask].sum(axis=1)


def current_amplitude(j) -> float:
    return float(np.max(np.abs(j)))


def revival_distance(state0: MultiD2State, params: ModelParams, T: float, n_steps: int = 2000) -> float:
    """|| psi(T) - psi(0) || for an uncoupled single-copy packet.

    Uses the variational RK4 integrator with ``n_steps`` equal steps.
    """
    from .propagator import rk4_step

    if state0.M != 1:
        raise ValueError("revival test needs a single copy")
    s = state0.copy()
    dt = T / n_steps
    for k in range(n_steps):
        s = rk4_step(s, k * dt, dt, params)
    return float(np.linalg.norm(s.psi - state0.psi))


def revival_period(state0: MultiD2State, params: ModelParams, guess: float | None = None,
                   rel_window: float = 0.05, n_steps: int = 2000, xatol: float = 1e-10) -> float:
    """Time of the first return of the packet, by minimizing the revival distance."""
    guess = params.bloch_period if guess is None else guess
    res = optimize.minimize_scalar(lambda T: revival_distance(state0, params, T, n_steps) ** 2,
                                   bounds=(guess * (1 - rel_window), guess * (1 + rel_window)),
                                   method="bounded", options={"xatol": xatol})
    return float(res.x)
