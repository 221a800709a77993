"""Receive filtering, decimation, AWGN and 1-bit quantization.

Discretization convention: filter taps carry the grid step ``dt`` so that the
discrete convolution approximates the continuous integral, and the noise on
the grid has variance ``N0 / dt`` per complex sample. With a unit-energy
filter the filtered noise then has variance ``N0`` whatever ``D`` is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import signal
from scipy.linalg import toeplitz

from .cpm import TiltedState, WaveformConfig, initial_state, modulate, tilt_frequency

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class ReceiveChain:
    """Integrate-and-dump style bandpass filter followed by D-fold decimation.

    ``taps`` is the time-reversed, ``dt``-scaled impulse response, i.e. the
    non-zero part of the first row of the Toeplitz operator ``G``.
    ``sample_offset`` selects which grid sample of every group of ``D`` the
    decimator keeps.
    """

    cfg: WaveformConfig
    T_g: float
    taps: np.ndarray = field(repr=False)
    L_g: int
    eta: int
    sample_offset: int
    N0: float

    @property
    def impulse(self) -> np.ndarray:
        """Taps in lag order: ``impulse[i]`` weights the sample ``i`` steps in the past.

        ``impulse[0]`` is zero: an output never sees the grid sample it is
        aligned with, matching the row layout of ``G``.
        """
        return np.concatenate([[0.0], self.taps[::-1]])

    @property
    def sigma_n2_grid(self) -> float:
        return self.N0 / self.cfg.grid_dt

    @cached_property
    def G(self) -> np.ndarray:
        md = self.cfg.samples_per_symbol
        rows = md * (self.eta + 1)
        cols = md * (self.L_g + self.eta + 1)
        first_row = np.zeros(cols, dtype=complex)
        first_row[: len(self.taps)] = self.taps
        first_col = np.zeros(rows, dtype=complex)
        first_col[0] = first_row[0]
        return toeplitz(first_col, first_row)

    @cached_property
    def Dmat(self) -> np.ndarray:
        M, D = self.cfg.M, self.cfg.D
        n_out = M * (self.eta + 1)
        out = np.zeros((n_out, n_out * D))
        out[np.arange(n_out), np.arange(n_out) * D + self.sample_offset] = 1.0
        return out

    @cached_property
    def unit_covariance(self) -> np.ndarray:
        """Covariance of the decimated filtered noise for ``N0 = 1``."""
        A = self.Dmat @ self.G
        R = A @ A.conj().T / self.cfg.grid_dt
        return 0.5 * (R + R.conj().T)

    @property
    def R(self) -> np.ndarray:
        return self.N0 * self.unit_covariance

    def window_output(self, v: np.ndarray) -> np.ndarray:
        """``Dmat @ G @ v`` for a window of ``L_g + eta + 1`` symbols of grid samples."""
        return self.Dmat @ (self.G @ v)

    def with_noise(self, N0: float) -> "ReceiveChain":
        return ReceiveChain(self.cfg, self.T_g, self.taps, self.L_g, self.eta,
                            self.sample_offset, N0)

    def with_eta(self, eta: int) -> "ReceiveChain":
        return ReceiveChain(self.cfg, self.T_g, self.taps, self.L_g, eta,
                            self.sample_offset, self.N0)


@dataclass(frozen=True)
class QuantizedFrame:
    """1-bit receiver output, shape ``(n_symbols, M)``, entries in {+-1 +-1j}."""

    y: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.y.ndim != 2:
            raise ValueError("y must have shape (n_symbols, M)")

    @property
    def n_symbols(self) -> int:
        return self.y.shape[0]

    @property
    def M(self) -> int:
        return self.y.shape[1]

    def patterns(self) -> np.ndarray:
        """Integer code per symbol: sample ``m`` contributes ``(Re<0) + 2 (Im<0)`` in base 4."""
        bits = (self.y.real < 0).astype(np.int64) + 2 * (self.y.imag < 0)
        weights = 4 ** np.arange(self.M, dtype=np.int64)
        return bits @ weights


def pattern_signs(pattern: int, M: int) -> np.ndarray:
    """Interleaved real sign vector ``[Re y_1, Im y_1, Re y_2, ...]`` of a pattern code."""
    out = np.empty(2 * M)
    for m in range(M):
        code = (pattern >> (2 * m)) & 3
        out[2 * m] = -1.0 if code & 1 else 1.0
        out[2 * m + 1] = -1.0 if code & 2 else 1.0
    return out


def _grid_count(t: float, cfg: WaveformConfig, name: str) -> int:
    n = t / cfg.grid_dt
    if t <= 0 or abs(n - round(n)) > _GRID_TOL * max(1.0, n):
        raise ValueError(f"{name}={t} is not a positive multiple of the grid step {cfg.grid_dt}")
    return round(n)


def build_rx_filter(cfg: WaveformConfig, T_g: float, *, eta: int = 0, N0: float = 1.0,
                    sample_offset: int | None = None) -> ReceiveChain:
    """Bandpass rectangular filter of length ``T_g`` centred on the tilt frequency.

    The output kept for grid index ``i`` integrates grid samples
    ``i - n_g .. i - 1``. ``sample_offset`` defaults to ``D // 2 - 1``, so
    every kept window ends at the midpoint of its decimation group.
    """
    n_g = _grid_count(T_g, cfg, "T_g")
    md = cfg.samples_per_symbol
    L_g = -(-n_g // md)
    if sample_offset is None:
        sample_offset = default_sample_offset(cfg)
    if not 0 <= sample_offset < cfg.D:
        raise ValueError(f"sample_offset must lie in [0, {cfg.D})")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    dt = cfg.grid_dt
    t = dt * np.arange(1, L_g * md + 1)
    df = tilt_frequency(cfg)
    g = np.where(np.arange(1, L_g * md + 1) <= n_g,
                 math.sqrt(1 / T_g) * np.exp(2j * math.pi * df * (t - T_g / 2)), 0.0)
    taps = (g * dt)[::-1].copy()
    taps.setflags(write=False)
    return ReceiveChain(cfg, T_g, taps, L_g, eta, sample_offset, N0)


def default_sample_offset(cfg: WaveformConfig) -> int:
    return max(cfg.D // 2 - 1, 0)


def apply_chain(chain: ReceiveChain, s: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
    """Filter ``s + noise`` as one streaming convolution and decimate.

    Samples before the start are taken as zero. Returns shape ``(n_symbols, M)``.
    """
    s = np.asarray(s)
    if noise is not None:
        noise = np.asarray(noise)
        if noise.shape != s.shape:
            raise ValueError(f"signal length {s.shape} != noise length {noise.shape}")
        s = s + noise
    md = chain.cfg.samples_per_symbol
    if s.ndim != 1 or len(s) % md:
        raise ValueError(f"input length must be a multiple of M*D={md}")
    full = signal.oaconvolve(s, chain.impulse)[: len(s)] if len(s) > 4 * len(chain.impulse) \
        else np.convolve(s, chain.impulse)[: len(s)]
    return full[chain.sample_offset :: chain.cfg.D].reshape(-1, chain.cfg.M)


def quantize_1bit(z: np.ndarray) -> QuantizedFrame:
    z = np.asarray(z)
    if z.ndim == 1:
        z = z[:, None]
    re = np.where(z.real >= 0, 1.0, -1.0)
    im = np.where(z.imag >= 0, 1.0, -1.0)
    return QuantizedFrame(re + 1j * im)


def awgn(n: int, N0: float, cfg: WaveformConfig, rng: np.random.Generator) -> np.ndarray:
    """Complex white noise on the grid, variance ``N0 / dt`` split over Re and Im."""
    std = math.sqrt(N0 / cfg.grid_dt / 2)
    return std * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def prehistory(cfg: WaveformConfig, n_symbols: int,
               start: TiltedState | None = None) -> np.ndarray:
    """Transmit samples for the ``n_symbols`` symbols preceding ``start``.

    The initial state stands for an infinite run of symbol 0 before the frame.
    Only the all-zero history is supported, and it repeats every symbol when
    no low-IF rotation is present.
    """
    start = start or initial_state(cfg)
    if n_symbols == 0:
        return np.zeros(0, dtype=complex)
    if start != initial_state(cfg):
        raise ValueError("prehistory is only defined for the all-zero initial state")
    s = modulate(np.zeros(n_symbols, dtype=np.int64), cfg, start)
    # the low-IF ramp runs on absolute time, so move it back by n_symbols
    return s * np.exp(-2j * math.pi * cfg.n_IF * n_symbols)


def received_samples(x, cfg: WaveformConfig, chain: ReceiveChain, N0: float,
                     rng: np.random.Generator | int | None) -> np.ndarray:
    """Unquantized decimated filter output ``z`` for symbols ``x`` (shape (n, M))."""
    rng = np.random.default_rng(rng)
    md = cfg.samples_per_symbol
    s = modulate(x, cfg)
    n_pre = chain.L_g
    s = np.concatenate([prehistory(cfg, n_pre), s])
    noise = awgn(len(s), N0, cfg, rng) if N0 > 0 else None
    z = apply_chain(chain, s, noise)
    return z[n_pre:]


def simulate_link(x, cfg: WaveformConfig, chain: ReceiveChain, N0: float,
                  seed: int | np.random.Generator | None = None) -> QuantizedFrame:
    """Modulate, add grid noise, filter, decimate and quantize one frame."""
    return quantize_1bit(received_samples(x, cfg, chain, N0, seed))
