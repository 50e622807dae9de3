import numpy as np
import pytest

from holstein_ring import experiments
from holstein_ring.config import parse_config
from holstein_ring.experiments import compare_solvers, exciton_density_matrix, run_experiment, sigma_scan
from holstein_ring.ansatz import init_two_site
from holstein_ring.observables import exciton_probability
from holstein_ring.propagator import PropagationError

BASE = """\
experiment = {experiment}
N = 4
J = 0.1
g = {g}
phi = {phi}
F = 0.1
M = {M}
"""


def _cfg(experiment="m-convergence", g=0.0, phi=0.0, M=1, extra=""):
    return parse_config(BASE.format(experiment=experiment, g=g, phi=phi, M=M) + extra)


def test_uncoupled_solvers_agree(tmp_path):
    cfg = _cfg("heom-compare", extra="t_max = 0.5\nn_max = 1\nL = 2\n")
    rep = compare_solvers(cfg, l_check_time=0.1, out_dir=tmp_path)
    assert rep.max_dP_heom <= 1e-6
    assert rep.max_dP_fock <= 1e-6
    assert rep.l_delta <= 1e-12
    for f in ("heom.csv", "delta_heom.csv", "delta_fock.csv", "depth_report.txt", "observables.csv"):
        assert (tmp_path / f).exists()


def test_density_matrix_of_state():
    s = init_two_site(_cfg(g=0.3).params, 3, eta=1e-2)
    rho = exciton_density_matrix(s)
    np.testing.assert_allclose(np.real(np.diag(rho)), exciton_probability(s), atol=1e-14)
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-14)


def test_m_convergence_bundle(tmp_path):
    cfg = _cfg(g=0.3, M=2, extra="M_list = 1, 2\nt_max = 0.05\nstride = 25\neta = 1e-3\n")
    b = run_experiment(cfg, tmp_path)
    assert b.ok
    names = {p.name for p in b.files}
    assert {"observables_M1.csv", "observables_M2.csv", "trajectory_M2.csv", "convergence.csv",
            "final_state.txt", "plot.gp", "manifest.txt"} <= names
    conv = np.loadtxt(tmp_path / "convergence.csv", delimiter=",", skiprows=1)
    assert conv[-1, 1] == 0.0
    assert "Sigma_M2" in b.summary and b.summary["max_norm_drift_M2"] <= 1e-4
    obs = np.loadtxt(tmp_path / "observables_M1.csv", delimiter=",", skiprows=1)
    assert obs[-1, 0] == pytest.approx(0.05)  # t_B units


def test_sigma_scan_writes_fit(tmp_path):
    cfg = _cfg("sigma-scan", phi=0.28, M=2, extra="M_list = 1, 2, 3\nt_max = 0.02\nstride = 20\neta = 1e-2\n")
    res = sigma_scan(cfg, out_dir=tmp_path)
    assert len(res.sigma) == 3 and all(s > 0 for s in res.sigma)
    assert "mu = " in (tmp_path / "fit.txt").read_text()
    assert np.loadtxt(tmp_path / "scan.csv", delimiter=",", skiprows=1).shape == (3, 2)


def test_free_packet_summary_is_analytic(tmp_path):
    # without coupling the centroid swings by 4JA/F and j = 2A sin(Ft),
    # A = sum_n psi_n psi_{n+1} the nearest-neighbour coherence
    cfg = parse_config(BASE.format(experiment="broad-packet", g=0, phi=0, M=1).replace("N = 4", "N = 16")
                       + "sigma0 = 1\nt_max = 1\nstride = 20\n")
    b = run_experiment(cfg, tmp_path)
    psi = experiments.initial_state(cfg).psi[0].real
    A = float(np.sum(psi * np.roll(psi, -1)))
    assert b.summary["centroid_swing_over_4J_F"] == pytest.approx(A, abs=1e-4)
    assert b.summary["max_current_deviation_2sinFt"] == pytest.approx(2 * (1 - A), abs=1e-4)


def test_solver_failure_recorded(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise PropagationError("norm drift 1 exceeds 1e-4", 3.0)

    monkeypatch.setattr(experiments, "propagate", boom)
    b = run_experiment(_cfg(), tmp_path)
    assert not b.ok
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "status = failed" in manifest and "failure_time = " in manifest


def test_compare_rejects_large_rings():
    cfg = parse_config(BASE.format(experiment="m-convergence", g=0, phi=0, M=1).replace("N = 4", "N = 10"))
    with pytest.raises(ValueError):
        compare_solvers(cfg)
    with pytest.raises(ValueError):
        compare_solvers(parse_config(BASE.format(experiment="heom-compare", g=0, phi=0, M=1)), l_step=0)
