"""Experiment harness: runs configured simulations and writes output bundles.

Every bundle directory holds

    manifest.txt     key = value record of all knobs, status and summary numbers
    plot.gp          gnuplot script rendering the CSV files
    observables.csv  one row per sample, full observable record (per M for scans)
    trajectory.csv   long-format heatmap data: t, n, P, X

plus experiment-specific files (``convergence.csv``, ``scan.csv``,
``heom.csv``, ``delta_heom.csv``, ``delta_fock.csv``, ``depth_report.txt``).
Times in the CSV files are in the unit named by ``time_unit`` in the
manifest (t_B when F != 0).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
import platform

import numpy as np

from . import __version__
from .analysis import (band_power_fraction, centroid_swing, current_amplitude, fit_power_law,
                       is_strictly_decreasing, outside_mass, peak_contrast, slope_ratio, PowerLawFit)
from .ansatz import MultiD2State, format_snapshot, init_gaussian, init_two_site, overlap_matrix
from .config import ExperimentConfig, format_config
from .observables import ObservableRecord, relative_deviation
from .propagator import PropagationError, propagate

log = logging.getLogger(__name__)

FMT = "%.17g"


@dataclass
class OutputBundle:
    directory: Path
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class ScanResult:
    M: tuple
    sigma: tuple
    fit: PowerLawFit | None
    decreasing: bool


@dataclass
class ComparisonReport:
    times: np.ndarray
    P_var: np.ndarray
    P_heom: np.ndarray
    P_fock: np.ndarray | None
    max_dP_heom: float
    mean_dP_heom: float
    max_dP_fock: float = math.nan
    mean_dP_fock: float = math.nan
    l_delta: float = math.nan
    heom_L: int = 0
    depth_report: str = ""


def initial_state(cfg: ExperimentConfig, M: int | None = None) -> MultiD2State:
    M = cfg.M if M is None else M
    if cfg.sigma0 is None:
        return init_two_site(cfg.params, M, eta=cfg.eta, seed=cfg.seed)
    return init_gaussian(cfg.params, M, cfg.sigma0, eta=cfg.eta, seed=cfg.seed)


def initial_sites(cfg: ExperimentConfig) -> tuple:
    N = cfg.N
    return (N // 2, (N // 2 + 1) % N) if cfg.sigma0 is None else (N // 2,)


def exciton_density_matrix(state: MultiD2State) -> np.ndarray:
    """rho_nm = sum_ij psi_in psi_jm^* <lam_j|lam_i>."""
    S = overlap_matrix(state.lam)
    return np.einsum("in,jm,ji->nm", state.psi, state.psi.conj(), S)


def run_variational(cfg: ExperimentConfig, M: int | None = None, deviation: bool = True,
                    t_final: float | None = None):
    state = initial_state(cfg, M)
    return propagate(state, cfg.params, cfg.t_final if t_final is None else t_final, dt=cfg.step,
                     stride=cfg.stride, eps=cfg.eps, deviation=deviation, monitor=True)


def _run_point(args):
    cfg, M = args
    return run_variational(cfg, M)


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- writers -----------------------------------------------------------------

def write_observables_csv(path, records, N: int, scale: float = 1.0) -> Path:
    rows = []
    for r in records:
        row = r.row()
        row[0] = r.t / scale
        rows.append(row)
    path = Path(path)
    np.savetxt(path, np.array(rows, dtype=float).reshape(len(rows), -1), delimiter=",", fmt=FMT,
               header=",".join(ObservableRecord.header(N)), comments="", encoding="utf-8")
    return path


def write_trajectory_csv(path, records, scale: float = 1.0) -> Path:
    rows = []
    for r in records:
        for n, (p, x) in enumerate(zip(r.P, r.X)):
            rows.append((r.t / scale, n, p, x))
    path = Path(path)
    np.savetxt(path, np.array(rows, dtype=float), delimiter=",", fmt=FMT, header="t,n,P,X",
               comments="", encoding="utf-8")
    return path


def write_grid_csv(path, times, grid, prefix: str = "P") -> Path:
    grid = np.atleast_2d(grid)
    header = ",".join(["t"] + [f"{prefix}{n}" for n in range(grid.shape[1])])
    path = Path(path)
    np.savetxt(path, np.column_stack([times, grid]), delimiter=",", fmt=FMT, header=header,
               comments="", encoding="utf-8")
    return path


def write_manifest(path, cfg: ExperimentConfig, entries: dict) -> Path:
    lines = [f"code_version = {__version__}", f"numpy_version = {np.__version__}",
             f"python_version = {platform.python_version()}", f"time_unit = {cfg.unit}",
             f"dt_used = {FMT % cfg.step}"]
    lines += [ln for ln in format_config(cfg).splitlines()]
    for k, v in entries.items():
        lines.append(f"{k} = {FMT % v if isinstance(v, float) else v}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_plot_script(path, observables: list[str], trajectory: list[str], unit: str) -> Path:
    out = ["# gnuplot script; run with: gnuplot plot.gp",
           "set terminal pngcairo size 1000,650",
           "set datafile separator ','",
           "set key autotitle columnhead",
           f"set xlabel 't [{unit}]'"]
    for name in trajectory:
        stem = Path(name).stem
        for col, label in ((3, "P_ex"), (4, "X_ph")):
            out += [f"set output '{stem}_{label}.png'", "set ylabel 'n'", f"set title '{label}(t, n)'",
                    f"plot '{name}' using 1:2:{col} with image notitle"]
    for name in observables:
        stem = Path(name).stem
        for cols, label in ((("c",), "centroid"), (("sigma",), "width"), (("j",), "current"),
                            (("E_ex", "E_ph", "E_diag", "E_off", "E_total"), "energies")):
            out += [f"set output '{stem}_{label}.png'", f"set ylabel '{label}'", f"set title '{label}'",
                    "plot " + ", ".join(f"'{name}' using \"t\":\"{c}\" with lines title '{c}'" for c in cols)]
    path = Path(path)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path


# --- analyses ----------------------------------------------------------------

def summarize(cfg: ExperimentConfig, records) -> dict:
    """Experiment-specific summary numbers computed from recorded observables."""
    t = np.array([r.t for r in records])
    P = np.array([r.P for r in records])
    c = np.array([r.c for r in records])
    j = np.array([r.j for r in records])
    norm = np.array([r.norm for r in records])
    out = {"max_norm_drift": float(np.max(np.abs(norm - norm[0]))),
           "current_amplitude": current_amplitude(j),
           "centroid_swing": centroid_swing(c),
           "max_centroid_shift": float(np.max(np.abs(c - c[0])))}
    if cfg.F:
        out["centroid_swing_over_4J_F"] = out["centroid_swing"] / (4 * abs(cfg.J) / abs(cfg.F))
        out["max_current_deviation_2sinFt"] = float(np.max(np.abs(j - 2 * np.sin(cfg.F * t))))
    if len(t) >= 8:
        out["current_power_near_omega0"] = band_power_fraction(t, j, cfg.omega0, 0.2 * cfg.omega0)
        try:
            out["current_peak_contrast_omega0"] = peak_contrast(t, j, cfg.omega0, 0.2 * cfg.omega0)
        except ValueError:
            pass
    out["max_outside_mass"] = float(np.max(outside_mass(P, initial_sites(cfg), 2)))
    if cfg.experiment == "energy-balance" and cfg.F:
        t0 = 2 * cfg.params.bloch_period
        if t[-1] > t0:
            E_ph = np.array([r.E_ph for r in records])
            E_tot = np.array([r.E_total for r in records])
            out["slope_ratio_2tB"] = slope_ratio(t, E_ph, E_tot, t0)
    if not any(math.isnan(r.Delta) for r in records):
        out["Sigma"] = relative_deviation(records)
    return out


def sigma_scan(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> ScanResult:
    """Relative deviation for every M in ``cfg.M_list`` and a power-law fit."""
    ms = tuple(cfg.ms)
    if len(ms) < 3:
        raise ValueError("sigma_scan needs at least 3 multiplicities")
    trajs = _map(_run_point, [(cfg, M) for M in ms], workers)
    sig = tuple(relative_deviation(tr) for tr in trajs)
    dec = is_strictly_decreasing(sig)
    if not dec:
        log.warning("relative deviation is not strictly decreasing in M: %s", sig)
    fit = fit_power_law(ms, sig)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        np.savetxt(out_dir / "scan.csv", np.column_stack([ms, sig]), delimiter=",", fmt=FMT,
                   header="M,Sigma", comments="", encoding="utf-8")
        (out_dir / "fit.txt").write_text(
            f"mu = {FMT % fit.mu}\nmu_err = {FMT % fit.mu_err}\nprefactor = {FMT % fit.prefactor}\n"
            f"residual = {FMT % fit.residual}\ndecreasing = {dec}\n", encoding="utf-8")
    return ScanResult(ms, sig, fit, dec)


def _aligned_heom(cfg: ExperimentConfig, rho0, L: int, t_final: float, n_samples: int):
    from .heom import propagate_heom

    tau = cfg.step * cfg.stride
    k = max(1, math.ceil(tau / cfg.heom_dt - 1e-9))
    return propagate_heom(rho0, cfg.params, None, cfg.beta, L, tau * (n_samples - 1), tau / k, stride=k)


def compare_solvers(cfg: ExperimentConfig, l_check_time: float | None = 0.0,
                    out_dir=None, l_step: int = 2) -> ComparisonReport:
    """Variational run against HEOM (and the Fock oracle for N <= 4).

    ``l_check_time`` (in the config's output unit) sets the window of an
    extra HEOM run at depth L + ``l_step`` used to measure L-convergence;
    0 skips it and None uses the full window.
    """
    if l_step < 1:
        raise ValueError("l_step must be >= 1")
    from .fock import FockBasis, propagate_exact, site_state
    from .heom import depth_report

    if cfg.N > 8:
        raise ValueError("solver comparison is limited to N <= 8")
    state0 = initial_state(cfg)
    if np.max(np.abs(state0.lam[np.abs(state0.psi).sum(axis=1) > 0])) > 0:
        raise ValueError("reference solvers need the phonon vacuum at t = 0")
    tr = run_variational(cfg, deviation=False)
    stride_ok = [i for i, t in enumerate(tr.times) if abs(t / (cfg.step * cfg.stride)
                                                          - round(t / (cfg.step * cfg.stride))) < 1e-9]
    times = np.array([tr.times[i] for i in stride_ok])
    P_var = tr.P[stride_ok]
    rho0 = exciton_density_matrix(state0)
    rho0 = (rho0 + rho0.conj().T) / 2
    h = _aligned_heom(cfg, rho0, cfg.L, times[-1], len(times))
    dh = np.abs(P_var - h.P)
    rep = ComparisonReport(times, P_var, h.P, None, float(dh.max()), float(dh.mean()), heom_L=cfg.L)
    results = [h]
    if l_check_time is None or l_check_time > 0:
        window = times[-1] if l_check_time is None else min(times[-1], l_check_time * cfg.time_scale)
        n = int(np.searchsorted(times, window + 1e-9))
        h2 = _aligned_heom(cfg, rho0, cfg.L + l_step, times[n - 1], n)
        rep.l_delta = float(np.max(np.abs(h.P[:n] - h2.P)))
        results.append(h2)
    rep.depth_report = depth_report(results, None if math.isnan(rep.l_delta) else rep.l_delta)
    if cfg.N <= 4:
        basis = FockBasis(cfg.N, cfg.n_max)
        psi = state0.psi[0]
        ex = propagate_exact(site_state(psi, basis), cfg.params, None, basis, times[-1], cfg.step,
                             stride=cfg.stride)
        rep.P_fock = np.array(ex.P)[: len(times)]
        df = np.abs(P_var - rep.P_fock)
        rep.max_dP_fock, rep.mean_dP_fock = float(df.max()), float(df.mean())
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ts = times / cfg.time_scale
        write_grid_csv(out_dir / "heom.csv", ts, h.P)
        write_grid_csv(out_dir / "delta_heom.csv", ts, P_var - h.P, prefix="dP")
        if rep.P_fock is not None:
            write_grid_csv(out_dir / "delta_fock.csv", ts, P_var - rep.P_fock, prefix="dP")
        (out_dir / "depth_report.txt").write_text(rep.depth_report, encoding="utf-8")
        write_observables_csv(out_dir / "observables.csv", tr.records, cfg.N, cfg.time_scale)
        write_trajectory_csv(out_dir / "trajectory.csv", tr.records, cfg.time_scale)
    return rep


def run_experiment(cfg: ExperimentConfig, out=None, workers: int = 1) -> OutputBundle:
    """Run the configured experiment and write its bundle to ``out`` (or ``cfg.out``)."""
    d = Path(out if out is not None else cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    bundle = OutputBundle(d)
    entries: dict = {}
    obs_files, traj_files = [], []
    try:
        if cfg.experiment == "sigma-scan":
            res = sigma_scan(cfg, workers, d)
            entries.update({"mu": res.fit.mu, "mu_err": res.fit.mu_err, "decreasing": res.decreasing})
            entries.update({f"Sigma_M{m}": s for m, s in zip(res.M, res.sigma)})
            bundle.files += [d / "scan.csv", d / "fit.txt"]
        elif cfg.experiment == "heom-compare":
            rep = compare_solvers(cfg, out_dir=d)
            entries.update({"max_dP_heom": rep.max_dP_heom, "mean_dP_heom": rep.mean_dP_heom,
                            "heom_L": rep.heom_L})
            if rep.P_fock is not None:
                entries.update({"max_dP_fock": rep.max_dP_fock, "mean_dP_fock": rep.mean_dP_fock})
            obs_files, traj_files = ["observables.csv"], ["trajectory.csv"]
            bundle.files += [d / f for f in ("heom.csv", "delta_heom.csv", "depth_report.txt")]
        else:
            ms = cfg.ms
            trajs = _map(_run_point, [(cfg, M) for M in ms], workers)
            for M, tr in zip(ms, trajs):
                sfx = "" if len(ms) == 1 else f"_M{M}"
                obs_files.append(f"observables{sfx}.csv")
                traj_files.append(f"trajectory{sfx}.csv")
                write_observables_csv(d / obs_files[-1], tr.records, cfg.N, cfg.time_scale)
                write_trajectory_csv(d / traj_files[-1], tr.records, cfg.time_scale)
                summ = summarize(cfg, tr.records)
                entries.update({(k if len(ms) == 1 else f"{k}_M{M}"): v for k, v in summ.items()})
                entries[f"min_singular{sfx}"] = float(np.min(tr.min_singular))
            last = trajs[-1]
            (d / "final_state.txt").write_text(format_snapshot(last.final), encoding="utf-8")
            bundle.files.append(d / "final_state.txt")
            if len(ms) > 1:
                ref = trajs[int(np.argmax(ms))].P
                conv = [float(np.max(np.abs(tr.P - ref))) for tr in trajs]
                np.savetxt(d / "convergence.csv", np.column_stack([ms, conv]), delimiter=",", fmt=FMT,
                           header="M,max_dP_vs_largest_M", comments="", encoding="utf-8")
                bundle.files.append(d / "convergence.csv")
    except PropagationError as exc:
        bundle.status = "failed"
        entries.update({"failure": str(exc), "failure_time": exc.t / cfg.time_scale})
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest, then re-raised
        bundle.status = "failed"
        entries["failure"] = f"{type(exc).__name__}: {exc}"
        write_manifest(d / "manifest.txt", cfg, {"status": bundle.status, **entries})
        raise
    bundle.files += [d / f for f in obs_files + traj_files]
    bundle.files.append(write_plot_script(d / "plot.gp", obs_files, traj_files, cfg.unit))
    bundle.files.append(write_manifest(d / "manifest.txt", cfg, {"status": bundle.status, **entries}))
    bundle.summary = entries
    return bundle
