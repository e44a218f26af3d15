import numpy as np
import pytest
from scipy.constants import hbar

from cpwloss import ResonatorFit, S21Trace, fit_s21, notch_model, photon_number, synth_trace
from cpwloss.errors import ConfigError, NoDipFoundError
from cpwloss.s21fit import _fit_circle_algebraic, read_trace, write_trace


def test_notch_model_on_resonance_depth():
    s21 = notch_model(6e9, 6e9, 5e5, 1e6)
    assert s21 == pytest.approx(1 - 5e5 / 1e6)


def test_notch_model_far_off_resonance():
    f_r, q_l = 6e9, 5e5
    s21 = notch_model(f_r * 1.01, f_r, q_l, 1e6)  # ~60000 linewidths away
    assert abs(s21 - 1) < 1e-4


def test_notch_model_circle_diameter():
    f_r, q_l, q_c = 6e9, 5e5, 1e6
    f = np.linspace(f_r * (1 - 50 / q_l), f_r * (1 + 50 / q_l), 4001)
    z = notch_model(f, f_r, q_l, q_c)
    _, radius = _fit_circle_algebraic(z)
    assert 2 * radius == pytest.approx(q_l / q_c, rel=1e-4)


def test_round_trip_noiseless_documented_example():
    trace = synth_trace(f_r=6e9, q_l=5e5, q_c_mag=1e6, phi=0.1, a=0.9,
                        alpha=0.3, tau=40e-9)
    fit = fit_s21(trace)
    assert fit.f_r == pytest.approx(6e9, rel=1e-7)
    q_c_true = 1e6 / np.cos(0.1)
    q_i_true = 1 / (1 / 5e5 - 1 / q_c_true)
    assert fit.q_l == pytest.approx(5e5, rel=0.005)
    assert fit.q_c == pytest.approx(q_c_true, rel=0.005)
    assert fit.q_i == pytest.approx(q_i_true, rel=0.005)
    assert fit.phi == pytest.approx(0.1, abs=0.01)
    assert fit.a == pytest.approx(0.9, rel=0.005)
    assert fit.alpha == pytest.approx(0.3, abs=0.01)
    assert fit.tau == pytest.approx(40e-9, rel=0.01)


@pytest.mark.parametrize("f_r,q_l,q_c,phi,tau", [
    (4e9, 1e3, 2e3, 0.0, 0.0),
    (5e9, 1e4, 3e4, -0.3, 10e-9),
    (6e9, 1e5, 1.2e5, 0.45, 0.0),
    (8e9, 1e6, 5e6, 0.2, 1e-9),
    (7e9, 1e7, 2e7, -0.1, 0.0),
])
def test_round_trip_envelope(f_r, q_l, q_c, phi, tau):
    trace = synth_trace(f_r=f_r, q_l=q_l, q_c_mag=q_c, phi=phi, a=1.2,
                        alpha=-0.7, tau=tau)
    fit = fit_s21(trace)
    assert fit.f_r == pytest.approx(f_r, rel=1e-7)
    assert fit.q_l == pytest.approx(q_l, rel=0.005)
    assert fit.q_c_mag == pytest.approx(q_c, rel=0.005)
    q_i_true = 1 / (1 / q_l - np.cos(phi) / q_c)
    assert fit.q_i == pytest.approx(q_i_true, rel=0.005)


def test_q_identity_exact():
    trace = synth_trace(f_r=6e9, q_l=4e5, q_c_mag=8e5, phi=0.2)
    fit = fit_s21(trace)
    assert 1 / fit.q_i + 1 / fit.q_c == pytest.approx(1 / fit.q_l, rel=1e-12)
    assert fit.q_l <= min(fit.q_i, fit.q_c)


def test_environment_invariance():
    trace = synth_trace(f_r=6e9, q_l=5e5, q_c_mag=1e6, phi=0.1)
    fit0 = fit_s21(trace)
    factor = 0.5 * np.exp(1j * 1.1)
    scaled = S21Trace(frequency=trace.frequency, s21=trace.s21 * factor)
    fit1 = fit_s21(scaled)
    assert fit1.f_r == pytest.approx(fit0.f_r, rel=1e-9)
    assert fit1.q_l == pytest.approx(fit0.q_l, rel=1e-6)
    assert fit1.q_i == pytest.approx(fit0.q_i, rel=1e-6)
    assert fit1.a == pytest.approx(0.5 * fit0.a, rel=1e-6)
    assert fit1.alpha == pytest.approx(fit0.alpha + 1.1, abs=1e-6)


def test_noise_monte_carlo_40db():
    hits = 0
    q_i_true = 1 / (1 / 5e5 - 1 / 1e6)
    for seed in range(100):
        trace = synth_trace(f_r=6e9, q_l=5e5, q_c_mag=1e6, phi=0.1, a=0.9,
                            alpha=0.3, tau=40e-9, snr_db=40.0, seed=seed)
        try:
            fit = fit_s21(trace)
        except Exception:
            continue
        if abs(fit.q_i - q_i_true) / q_i_true < 0.05:
            hits += 1
    assert hits >= 95


def test_flat_trace_no_dip():
    f = np.linspace(5.9e9, 6.1e9, 201)
    trace = S21Trace(frequency=f, s21=np.full(201, 0.8 + 0.1j))
    with pytest.raises(NoDipFoundError):
        fit_s21(trace)


def test_noise_only_trace_no_dip():
    rng = np.random.default_rng(0)
    f = np.linspace(5.9e9, 6.1e9, 201)
    z = 1.0 + 0.01 * (rng.standard_normal(201) + 1j * rng.standard_normal(201))
    with pytest.raises(NoDipFoundError):
        fit_s21(S21Trace(frequency=f, s21=z))


def test_trace_validation():
    f = np.linspace(6e9, 6.1e9, 60)
    z = np.ones(60, dtype=complex)
    with pytest.raises(ConfigError):
        S21Trace(frequency=f[:40], s21=z[:40])  # too few points
    with pytest.raises(ConfigError):
        S21Trace(frequency=f[::-1], s21=z)  # decreasing
    zz = z.copy()
    zz[10] = np.nan
    with pytest.raises(ConfigError):
        S21Trace(frequency=f, s21=zz)


def test_photon_number_documented_example():
    fit = ResonatorFit(f_r=6e9, q_l=5e5, q_c=5e5, q_i=1e9, phi=0.0,
                       a=1.0, alpha=0.0, tau=0.0)
    n = photon_number(-140.0, fit)
    expected = 2 * 1e-17 * 5e5**2 / (5e5 * hbar * (2 * np.pi * 6e9) ** 2)
    assert n == pytest.approx(expected, rel=1e-12)
    assert n == pytest.approx(66.7, rel=0.01)


def test_photon_number_linearity_and_limit():
    fit = ResonatorFit(f_r=6e9, q_l=5e5, q_c=5e5, q_i=1e9, phi=0.0,
                       a=1.0, alpha=0.0, tau=0.0)
    n1 = photon_number(-140.0, fit)
    n2 = photon_number(-140.0 + 10 * np.log10(2), fit)
    assert n2 == pytest.approx(2 * n1, rel=1e-12)
    assert photon_number(-400.0, fit) == pytest.approx(0.0, abs=1e-20)


def test_trace_io_round_trip(tmp_path):
    trace = synth_trace(f_r=6e9, q_l=5e5, q_c_mag=1e6, phi=0.1,
                        snr_db=60.0, seed=3)
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    again = read_trace(path)
    assert np.allclose(again.frequency, trace.frequency)
    assert np.allclose(again.s21, trace.s21)


def test_read_trace_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f,re,im\n6e9,1,0\n")
    with pytest.raises(ConfigError):
        read_trace(path)
    with pytest.raises(ConfigError):
        read_trace(path, fmt="polar")


def test_determinism_same_seed():
    t1 = synth_trace(f_r=6e9, q_l=5e5, q_c_mag=1e6, snr_db=40.0, seed=11)
    t2 = synth_trace(f_r=6e9, q_l=5e5, q_c_mag=1e6, snr_db=40.0, seed=11)
    assert np.array_equal(t1.s21, t2.s21)
