import numpy as np
import pytest

from cpwloss import PhotonSweep, fit_tls, q_low_high, synth_sweep, tls_inverse_q
from cpwloss.errors import ConfigError
from cpwloss.tlsfit import (
    read_sweep, thermal_factor, tls_jacobian, write_sweep,
)

TRUE = dict(f_tan_delta0=1.0e-6, n_c=10.0, b=0.4, delta_other=5e-8)


def test_model_documented_example():
    # F*tan_d0 = 1.06e-6, delta_other = 0, T = 10 mK, f_r = 6 GHz, n = n_c,
    # b = 0.5 -> 1.06e-6 * tanh(14.39) / sqrt(2)
    inv_q = tls_inverse_q((1.06e-6, 50.0, 0.5, 0.0), 50.0, 0.01, 6e9)
    expected = 1.06e-6 * np.tanh(14.39) / np.sqrt(2)
    assert float(inv_q) == pytest.approx(expected, rel=1e-6)
    assert float(inv_q) == pytest.approx(7.50e-7, rel=1e-3)


def test_model_high_power_limit():
    inv_q = tls_inverse_q((1e-6, 10.0, 0.4, 5e-8), 1e15, 0.01, 6e9)
    assert float(inv_q) == pytest.approx(5e-8, rel=1e-3)


def test_model_saturated_low_power_limit():
    inv_q = tls_inverse_q((1e-6, 10.0, 0.4, 5e-8), 1e-12, 1e-4, 6e9)
    assert float(inv_q) == pytest.approx(1e-6 + 5e-8, rel=1e-9)


def test_model_monotonic_in_n():
    n = np.logspace(-2, 8, 200)
    inv_q = tls_inverse_q(tuple(TRUE.values()), n, 0.01, 6e9)
    assert np.all(np.diff(inv_q) < 0)


def test_thermal_factor_near_unity_at_10mk():
    for f_r in np.linspace(4e9, 8e9, 9):
        th = thermal_factor(f_r, 0.01)
        assert 1 - 1e-8 <= th <= 1.0


def test_jacobian_vs_finite_differences():
    rng = np.random.default_rng(42)
    n = np.logspace(-1, 6, 15)
    for _ in range(10):
        p = np.array([
            10 ** rng.uniform(-7, -5),      # F*tan_d0
            10 ** rng.uniform(-1, 3),       # n_c
            rng.uniform(0.1, 0.9),          # b
            10 ** rng.uniform(-8, -6),      # delta_other
        ])
        jac = tls_jacobian(p, n, 0.01, 6e9)
        for k in range(4):
            h = 1e-6 * p[k]
            pp, pm = p.copy(), p.copy()
            pp[k] += h
            pm[k] -= h
            fd = (tls_inverse_q(pp, n, 0.01, 6e9)
                  - tls_inverse_q(pm, n, 0.01, 6e9)) / (2 * h)
            scale = np.max(np.abs(fd)) or 1.0
            assert np.allclose(jac[:, k], fd, atol=1e-6 * scale, rtol=1e-6)


def test_noiseless_round_trip():
    sweep = synth_sweep(**TRUE, n_points=30, n_min=0.1, n_max=1e6)
    fit = fit_tls(sweep)
    assert fit.f_tan_delta0 == pytest.approx(TRUE["f_tan_delta0"], rel=0.01)
    assert fit.n_c == pytest.approx(TRUE["n_c"], rel=0.01)
    assert fit.b == pytest.approx(TRUE["b"], rel=0.01)
    assert fit.delta_other == pytest.approx(TRUE["delta_other"], rel=0.01)
    assert not fit.flags


def test_noise_monte_carlo_3pct():
    hits = 0
    for seed in range(100):
        sweep = synth_sweep(**TRUE, noise_frac=0.03, seed=seed)
        try:
            fit = fit_tls(sweep)
        except Exception:
            continue
        if abs(fit.f_tan_delta0 - TRUE["f_tan_delta0"]) / TRUE["f_tan_delta0"] < 0.10:
            hits += 1
    assert hits >= 90


def test_reduced_chi2_on_matched_noise():
    chi2s = []
    for seed in range(20):
        sweep = synth_sweep(**TRUE, noise_frac=0.03, seed=seed, n_points=60)
        chi2s.append(fit_tls(sweep).reduced_chi2)
    assert np.mean(chi2s) == pytest.approx(1.0, abs=0.5)


def test_constant_sweep_degenerate():
    n = np.logspace(0, 5, 12)
    sweep = PhotonSweep(n_photon=n, q_i=np.full(12, 1e6),
                        q_i_sigma=np.full(12, 1e4), f_r=6e9, temperature=0.01)
    fit = fit_tls(sweep)
    assert "insufficient-span" in fit.flags
    assert fit.delta_other == pytest.approx(1e-6, rel=1e-6)
    assert fit.f_tan_delta0 == 0.0


def test_insufficient_span_flagged():
    sweep = synth_sweep(**TRUE, n_min=10.0, n_max=100.0, n_points=8)
    fit = fit_tls(sweep)
    assert "insufficient-span" in fit.flags


def test_q_endpoints_consistency():
    sweep = synth_sweep(**TRUE)
    fit = fit_tls(sweep)
    ends = q_low_high(fit, sweep)
    assert ends.q_low == pytest.approx(
        1 / float(tls_inverse_q(fit, 1.0, 0.01, 6e9)), rel=1e-12)
    assert ends.q_high == pytest.approx(
        1 / float(tls_inverse_q(fit, sweep.n_photon.max(), 0.01, 6e9)),
        rel=1e-12)
    assert ends.q_high > ends.q_low
    assert not ends.extrapolated


def test_q_low_extrapolation_flag():
    sweep = synth_sweep(**TRUE, n_min=100.0, n_max=1e6, n_points=12)
    fit = fit_tls(sweep)
    ends = q_low_high(fit, sweep)
    assert ends.extrapolated


def test_q_low_plausibility_band():
    # reference-chip-like loss amplitude; the fitted low-power Q_i must land
    # near the measured range (sanity band, not an exact target)
    sweep = synth_sweep(f_tan_delta0=1.06e-6, n_c=10.0, b=0.5,
                        delta_other=5e-7)
    fit = fit_tls(sweep)
    ends = q_low_high(fit, sweep)
    assert 0.4e6 <= ends.q_low <= 0.8e6


def test_sweep_validation():
    with pytest.raises(ConfigError):
        PhotonSweep(n_photon=[0.0, 1.0], q_i=[1e6, 1e6],
                    q_i_sigma=[0, 0], f_r=6e9, temperature=0.01)
    with pytest.raises(ConfigError):
        PhotonSweep(n_photon=[1.0, 2.0], q_i=[1e6, -1e6],
                    q_i_sigma=[0, 0], f_r=6e9, temperature=0.01)
    with pytest.raises(ConfigError):
        PhotonSweep(n_photon=[1.0, 2.0], q_i=[1e6, 1e6],
                    q_i_sigma=[0, 0], f_r=6e9, temperature=-1.0)


def test_sweep_io_round_trip(tmp_path):
    sweep = synth_sweep(**TRUE, noise_frac=0.02, seed=5, chip="400C-ref",
                        resonator="R3")
    path = tmp_path / "sweep.csv"
    write_sweep(sweep, path)
    again = read_sweep(path)
    assert np.allclose(again.n_photon, sweep.n_photon)
    assert np.allclose(again.q_i, sweep.q_i)
    assert again.f_r == pytest.approx(sweep.f_r)
    assert again.temperature == pytest.approx(sweep.temperature)
    assert again.chip == "400C-ref"
    assert again.resonator == "R3"


def test_read_sweep_requires_metadata(tmp_path):
    path = tmp_path / "sweep.csv"
    path.write_text("n_photon,q_i,q_i_sigma\n1.0,1e6,1e4\n")
    with pytest.raises(ConfigError):
        read_sweep(path)
