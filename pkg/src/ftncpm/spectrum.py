"""Power spectral density, containment bandwidth and the derived link metrics."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .cpm import WaveformConfig, phase_trajectory

SPECTRUM_SAMPLES_PER_SYMBOL = 40
DEFAULT_SEGMENT = 2**14


@dataclass(frozen=True)
class PsdEstimate:
    freqs: np.ndarray = field(repr=False)  # Hz, i.e. cycles per Ts when Ts = 1
    power: np.ndarray = field(repr=False)
    total_power: float
    params: dict


@dataclass(frozen=True)
class BandwidthReport:
    B90_Ts: float
    B95_Ts: float
    eff90: float
    eff95: float
    osr_eff: float
    params: dict


def spectrum_config(cfg: WaveformConfig,
                    samples_per_symbol: int = SPECTRUM_SAMPLES_PER_SYMBOL) -> WaveformConfig:
    """Copy of ``cfg`` resampled for spectrum runs (the receiver grid is irrelevant there)."""
    return dataclasses.replace(cfg, M=1, D=samples_per_symbol)


def estimate_psd(cfg: WaveformConfig, n_symbols: int = 2**16, seed: int | None = 0,
                 nperseg: int = DEFAULT_SEGMENT, window: str = "hann",
                 overlap: float = 0.5) -> PsdEstimate:
    """Welch estimate of the PSD of ``exp(j psi)`` for i.u.d. symbols.

    The tilt and low-IF offsets are part of the signal, so the spectrum is
    centred on :func:`~ftncpm.cpm.tilt_frequency`.
    """
    n_samples = n_symbols * cfg.samples_per_symbol
    if nperseg > n_samples:
        raise ValueError(f"segment of {nperseg} samples longer than the signal ({n_samples})")
    rng = np.random.default_rng(seed)
    x = rng.integers(0, cfg.M_cpm, n_symbols)
    s = np.exp(1j * phase_trajectory(x, cfg).samples)
    return psd_of_samples(s, 1 / cfg.grid_dt, nperseg=nperseg, window=window, overlap=overlap,
                          params={"n_symbols": n_symbols, "seed": seed,
                                  "samples_per_symbol": cfg.samples_per_symbol})


def psd_of_samples(s: np.ndarray, fs: float, nperseg: int = DEFAULT_SEGMENT,
                   window: str = "hann", overlap: float = 0.5, params: dict | None = None) -> PsdEstimate:
    f, p = signal.welch(s, fs=fs, window=window, nperseg=nperseg,
                        noverlap=int(nperseg * overlap), return_onesided=False,
                        detrend=False, scaling="density")
    f, p = np.fft.fftshift(f), np.fft.fftshift(p)
    total = float(np.trapezoid(p, f))
    info = {"nperseg": nperseg, "window": window, "overlap": overlap}
    info.update(params or {})
    return PsdEstimate(f, p, total, info)


def containment_interval(psd: PsdEstimate, fraction: float) -> tuple[float, float]:
    """Narrowest contiguous ``(f_lo, f_hi)`` holding ``fraction`` of the power.

    Bins are treated as constant-density cells; the closing cell may be used
    partially, so the width is resolved below one bin.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    p = np.clip(psd.power, 0.0, None)
    total = p.sum()
    if total <= 0:
        raise ValueError("degenerate PSD: no power")
    df = psd.freqs[1] - psd.freqs[0]
    c = np.concatenate([[0.0], np.cumsum(p)])
    target = fraction * total
    need = c[:-1] + target
    j = np.searchsorted(c, need, side="left")  # first edge with c[j] >= need
    ok = j < len(c)
    i = np.nonzero(ok)[0]
    j = j[ok]
    partial = (need[i] - c[j - 1]) / np.where(p[j - 1] > 0, p[j - 1], 1.0)
    width_bins = (j - 1 - i) + partial
    best = int(np.argmin(width_bins))
    lo = psd.freqs[i[best]] - df / 2
    return float(lo), float(lo + width_bins[best] * df)


def containment_bandwidth(psd: PsdEstimate, fraction: float) -> float:
    lo, hi = containment_interval(psd, fraction)
    return hi - lo


def snr_to_noise_density(snr_db: float, Es: float, Ts: float, B90: float) -> float:
    """``N0`` such that ``SNR = Es / (N0 Ts B90)``."""
    return Es / (Ts * B90 * 10 ** (snr_db / 10))


def noise_density_to_snr(N0: float, Es: float, Ts: float, B90: float) -> float:
    return 10 * math.log10(Es / (N0 * Ts * B90))


def spectral_efficiency(I_bpcu: float, B: float, Ts: float) -> float:
    return I_bpcu / (B * Ts)


def effective_osr(M: int, B: float, Ts: float) -> float:
    return M / (B * Ts)


def bandwidth_report(cfg: WaveformConfig, n_symbols: int = 2**16, seed: int | None = 0,
                     nperseg: int = DEFAULT_SEGMENT,
                     samples_per_symbol: int = SPECTRUM_SAMPLES_PER_SYMBOL) -> BandwidthReport:
    """90 % / 95 % containment bandwidths and the quantities derived from them."""
    spec_cfg = spectrum_config(cfg, samples_per_symbol)
    psd = estimate_psd(spec_cfg, n_symbols, seed, nperseg)
    b90 = containment_bandwidth(psd, 0.90) * cfg.Ts
    b95 = containment_bandwidth(psd, 0.95) * cfg.Ts
    bits = math.log2(cfg.M_cpm)
    return BandwidthReport(
        B90_Ts=b90, B95_Ts=b95, eff90=bits / b90, eff95=bits / b95,
        osr_eff=effective_osr(cfg.M, b90 / cfg.Ts, cfg.Ts),
        params=dict(psd.params),
    )
