import numpy as np
import pytest

from holstein_ring.analysis import (band_power_fraction, centroid_swing, fit_power_law, free_current,
                                    is_strictly_decreasing, outside_mass, peak_contrast, slope_at, slope_ratio,
                                    window_sites)


def test_power_law_exact():
    M = np.array([2, 4, 6, 8])
    fit = fit_power_law(M, M ** -3.0)
    assert fit.mu == pytest.approx(3.0, abs=1e-12)
    assert fit.prefactor == pytest.approx(1.0, abs=1e-12)
    assert fit.residual <= 1e-12 and fit.mu_err <= 1e-12
    np.testing.assert_allclose(fit.predict(M), M ** -3.0)
    assert len(fit.points) == 4


def test_power_law_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_power_law([1, 2], [1, 0.5])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 3], [1, 0, 0.5])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 3], [1, 0.5])


def test_monotonicity_and_swing():
    assert is_strictly_decreasing([3, 2, 1])
    assert not is_strictly_decreasing([3, 3, 1])
    assert centroid_swing([4.0, 6.5, 3.5]) == 3.0


def test_band_power_fraction_pure_tone():
    t = np.arange(2000) * 0.05
    assert band_power_fraction(t, np.sin(1.0 * t), 1.0, 0.2) > 0.95
    assert band_power_fraction(t, np.sin(3.0 * t), 1.0, 0.2) < 0.01
    assert band_power_fraction(t, np.ones_like(t), 1.0, 0.2) == 0.0
    with pytest.raises(ValueError):
        band_power_fraction(t[:5], t[:5], 1.0, 0.1)
    with pytest.raises(ValueError):
        band_power_fraction(t ** 2, t, 1.0, 0.1)


def test_peak_contrast():
    t = np.arange(4000) * 0.05
    slow = np.sin(0.1 * t)
    assert peak_contrast(t, slow + 0.05 * np.sin(1.0 * t), 1.0, 0.2) > 10
    assert peak_contrast(t, slow, 1.0, 0.2) < 1
    with pytest.raises(ValueError):
        peak_contrast(t[:5], t[:5], 1.0, 0.2)
    with pytest.raises(ValueError):
        peak_contrast(t[:100], t[:100], 1.0, 1e-3)


def test_slopes():
    t = np.linspace(0, 10, 101)
    assert slope_at(t, 3 * t ** 2, 5.0) == pytest.approx(30.0, rel=1e-12)
    assert slope_ratio(t, 9 * t, 1 * t, 4.0) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        slope_at(t, t, 0.0)


def test_window_and_outside_mass():
    mask = window_sites(16, (8, 9), 2)
    assert mask.sum() == 6 and mask[6] and mask[11] and not mask[5]
    assert window_sites(8, (0,), 1)[7]
    P = np.zeros((2, 16))
    P[0, 8] = 1
    P[1, [8, 3]] = 0.5
    np.testing.assert_allclose(outside_mass(P, (8, 9), 2), [0.0, 0.5])


def test_free_current():
    assert free_current(np.pi / 2 / 0.1, 0.1) == pytest.approx(2.0)

