import dataclasses
import math

import numpy as np
import pytest

from ftncpm.cpm import WaveformConfig, modulate, tilt_frequency
from ftncpm.spectrum import (PsdEstimate, bandwidth_report, containment_bandwidth,
                             containment_interval, effective_osr, estimate_psd,
                             noise_density_to_snr, psd_of_samples, snr_to_noise_density,
                             spectral_efficiency, spectrum_config)

FTN = WaveformConfig(M_cpm=2, K=1, P=4, phi0=math.pi / 4, D=40)


def cpfsk_psd(f, h, M, T=1.0):
    """Closed-form PSD of full-response CPFSK with i.u.d. symbols (centred at zero)."""
    n = np.arange(1, M + 1)
    u = f[:, None] * T - 0.5 * (2 * n - 1 - M) * h
    A = np.sinc(u)
    psi = math.sin(M * math.pi * h) / (M * math.sin(math.pi * h))
    S = (A**2).sum(axis=1) / M
    den = 1 + psi**2 - 2 * psi * np.cos(2 * math.pi * f * T)
    for i in n:
        for j in n:
            a = math.pi * h * (i + j - 1 - M)
            B = (np.cos(2 * math.pi * f * T - a) - psi * math.cos(a)) / den
            S += 2 / M**2 * B * A[:, i - 1] * A[:, j - 1]
    return T * S


def analytic_containment(h, M, fraction, span=100.0, step=1e-4):
    f = np.arange(-span, span, step)
    p = cpfsk_psd(f, h, M)
    est = PsdEstimate(f, p, float(p.sum() * step), {})
    return containment_bandwidth(est, fraction)


def test_constant_phase_is_a_tone():
    cfg = dataclasses.replace(FTN, n_IF=0.3)
    s = modulate(np.zeros(2**13, dtype=int), cfg)
    psd = psd_of_samples(s, 1 / cfg.grid_dt, nperseg=2**14)
    df = psd.freqs[1] - psd.freqs[0]
    # the flat tilted branch sits h (M_cpm - 1) / 2 below the tilt frequency
    f_tone = tilt_frequency(cfg) - cfg.h * (cfg.M_cpm - 1) / 2
    # a Hann window spreads an off-bin tone over its two-bin main lobe either side
    near = np.abs(psd.freqs - f_tone) <= 3 * df
    assert psd.power[near].sum() >= 0.99 * psd.power.sum()


def test_total_power_matches_signal_power():
    psd = estimate_psd(FTN, n_symbols=2**13, seed=1)
    assert np.all(psd.power >= 0)
    assert psd.total_power == pytest.approx(1.0, rel=1e-3)
    assert psd.params["nperseg"] == 2**14 and psd.params["window"] == "hann"


def test_msk_99_percent_bandwidth():
    msk = WaveformConfig(M_cpm=2, K=1, P=2, D=40)
    psd = estimate_psd(msk, n_symbols=2**15, seed=2)
    assert containment_bandwidth(psd, 0.99) == pytest.approx(1.18, rel=0.05)


@pytest.mark.parametrize("cfg", [
    WaveformConfig(M_cpm=2, K=1, P=4, phi0=math.pi / 4, D=40),
    WaveformConfig(M_cpm=4, K=1, P=4, phi0=math.pi / 4, D=40),
    WaveformConfig(M_cpm=8, K=1, P=8, phi0=math.pi / 8, n_IF=0.25, D=40),
])
def test_welch_matches_closed_form_containment(cfg):
    psd = estimate_psd(cfg, n_symbols=2**16, seed=3)
    for fraction in (0.90, 0.95):
        exact = analytic_containment(cfg.h, cfg.M_cpm, fraction)
        assert containment_bandwidth(psd, fraction) == pytest.approx(exact, rel=0.01)


def test_estimate_stable_under_more_symbols():
    cfg = spectrum_config(WaveformConfig(M_cpm=2, K=1, P=4, T_cpm=2.0, D=20))
    a = containment_bandwidth(estimate_psd(cfg, n_symbols=2**15, seed=4), 0.9)
    b = containment_bandwidth(estimate_psd(cfg, n_symbols=2**16, seed=4), 0.9)
    assert abs(a - b) / b < 0.01


def test_deterministic_given_seed():
    a = estimate_psd(FTN, n_symbols=2**12, seed=9)
    b = estimate_psd(FTN, n_symbols=2**12, seed=9)
    assert np.array_equal(a.power, b.power)


def test_monotone_in_fraction():
    psd = estimate_psd(FTN, n_symbols=2**13, seed=5)
    widths = [containment_bandwidth(psd, f) for f in np.linspace(0.05, 0.99, 30)]
    assert np.all(np.diff(widths) >= 0)


def test_shift_changes_centre_not_width():
    base = estimate_psd(FTN, n_symbols=2**13, seed=6)
    shifted = estimate_psd(dataclasses.replace(FTN, n_IF=0.7), n_symbols=2**13, seed=6)
    df = base.freqs[1] - base.freqs[0]
    lo0, hi0 = containment_interval(base, 0.9)
    lo1, hi1 = containment_interval(shifted, 0.9)
    assert abs((hi1 - lo1) - (hi0 - lo0)) <= df
    assert (lo1 + hi1) / 2 - (lo0 + hi0) / 2 == pytest.approx(0.7, abs=2 * df)


def test_interval_may_be_asymmetric():
    f = np.arange(-10, 10) + 0.5
    p = np.zeros(20)
    p[12:15] = [2, 4, 1]
    # 6 of 7 units: only bins 12-13 reach it, so the interval leans below the peak bin
    lo, hi = containment_interval(PsdEstimate(f, p, p.sum(), {}), 6 / 7)
    assert (lo, hi) == pytest.approx((2.0, 4.0))


def test_containment_errors():
    psd = PsdEstimate(np.arange(4.0), np.zeros(4), 0.0, {})
    with pytest.raises(ValueError):
        containment_bandwidth(psd, 0.9)
    good = estimate_psd(FTN, n_symbols=2**12, seed=0)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            containment_bandwidth(good, bad)
    with pytest.raises(ValueError):
        estimate_psd(FTN, n_symbols=100)


def test_snr_conversions():
    assert snr_to_noise_density(0, 1, 1, 1) == pytest.approx(1.0)
    assert snr_to_noise_density(10, 1, 1, 0.5) == pytest.approx(0.2)
    for s in (-20.0, 3.3, 17.04):
        N0 = snr_to_noise_density(s, 2.0, 1.0, 0.37)
        assert noise_density_to_snr(N0, 2.0, 1.0, 0.37) == pytest.approx(s, abs=1e-12)


def test_efficiency_and_osr():
    assert effective_osr(5, 3 / 3.467, 1.0) == pytest.approx(5.778, abs=1e-3)
    assert effective_osr(1, 1 / 3.891, 1.0) == pytest.approx(3.891)
    assert spectral_efficiency(0.0, 0.7, 1.0) == 0.0
    assert spectral_efficiency(1.0, 1 / 3.891, 1.0) == pytest.approx(3.891)


def test_bandwidth_report_fields():
    cfg = WaveformConfig(M_cpm=4, K=1, P=4, phi0=math.pi / 4, M=4, D=5)
    rep = bandwidth_report(cfg, n_symbols=2**14)
    assert rep.B95_Ts >= rep.B90_Ts > 0
    assert rep.eff90 == pytest.approx(2 / rep.B90_Ts)
    assert rep.osr_eff == pytest.approx(4 / rep.B90_Ts)
    assert rep.params["samples_per_symbol"] == 40
