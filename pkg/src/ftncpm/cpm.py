"""Tilted-trellis CPM waveform generation and Carson bandwidth algebra.

Time is measured in seconds but every preset uses ``Ts = 1``. The phase is
sampled on a grid of ``M * D`` points per symbol, at ``tau = i * Ts / (M D)``
for ``i = 1 .. M D`` (the sample at the end of the interval belongs to it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class WaveformConfig:
    """All CPM parameters plus the sampling grid of the discrete model.

    ``h = K / P``. ``M`` is the number of samples kept per symbol by the
    receiver, ``D`` the extra resolution of the simulation grid.
    """

    M_cpm: int
    K: int
    P: int
    T_cpm: float = 1.0
    phi0: float = 0.0
    n_IF: float = 0.0
    M: int = 1
    D: int = 8
    Ts: float = 1.0
    Es: float = 1.0

    def __post_init__(self):
        if self.M_cpm < 2 or self.M_cpm % 2:
            raise ValueError(f"M_cpm must be an even integer >= 2, got {self.M_cpm}")
        if self.K < 1 or self.P < 1 or math.gcd(self.K, self.P) != 1:
            raise ValueError(f"K={self.K}, P={self.P} must be coprime positive integers")
        if self.M < 1 or self.D < 1:
            raise ValueError("M and D must be >= 1")
        if self.Ts <= 0 or self.T_cpm <= 0 or self.Es <= 0:
            raise ValueError("Ts, T_cpm and Es must be positive")
        n = self.T_cpm / self.Ts * self.samples_per_symbol
        if abs(n - round(n)) > _GRID_TOL * max(1.0, n):
            raise ValueError(
                f"T_cpm={self.T_cpm} is not a multiple of the grid step "
                f"Ts/(M*D)={self.grid_dt}"
            )

    @property
    def h(self) -> float:
        return self.K / self.P

    @property
    def samples_per_symbol(self) -> int:
        return self.M * self.D

    @property
    def grid_dt(self) -> float:
        return self.Ts / self.samples_per_symbol

    @property
    def pulse_samples(self) -> int:
        """Frequency pulse length in grid samples."""
        return round(self.T_cpm / self.Ts * self.samples_per_symbol)

    @property
    def L_cpm(self) -> int:
        return -(-self.pulse_samples // self.samples_per_symbol)

    @property
    def n_states(self) -> int:
        return self.P * self.M_cpm**self.L_cpm


@dataclass(frozen=True)
class TiltedState:
    """Phase state ``beta`` plus the last ``L_cpm`` symbols, oldest first."""

    beta: int
    recent: tuple[int, ...]

    def validate(self, cfg: WaveformConfig) -> None:
        if len(self.recent) != cfg.L_cpm:
            raise ValueError(
                f"state carries {len(self.recent)} symbols, L_cpm={cfg.L_cpm}"
            )
        if not 0 <= self.beta < cfg.P:
            raise ValueError(f"beta={self.beta} outside [0, {cfg.P})")
        if any(not 0 <= x < cfg.M_cpm for x in self.recent):
            raise ValueError(f"symbols {self.recent} outside alphabet 0..{cfg.M_cpm - 1}")


@dataclass(frozen=True)
class PhaseFrame:
    """Unwrapped tilted phase on the high-rate grid."""

    samples: np.ndarray = field(repr=False)
    n_symbols: int
    grid_dt: float


def initial_state(cfg: WaveformConfig) -> TiltedState:
    return TiltedState(0, (0,) * cfg.L_cpm)


def phase_response(tau, T_cpm: float):
    """Integral of the rectangular frequency pulse: 0 -> 1/2 over ``(0, T_cpm]``."""
    if T_cpm <= 0:
        raise ValueError("T_cpm must be positive")
    out = np.clip(np.asarray(tau, dtype=float) / (2.0 * T_cpm), 0.0, 0.5)
    return float(out) if out.ndim == 0 else out


def tilt_frequency(cfg: WaveformConfig) -> float:
    """Frequency offset of the tilted, low-IF shifted signal (Hz)."""
    return cfg.h * (cfg.M_cpm - 1) / (2 * cfg.Ts) + cfg.n_IF / cfg.Ts


def _pulse_table(cfg: WaveformConfig) -> np.ndarray:
    """``f(tau_i + l Ts)`` for ``l < L_cpm`` and the ``M D`` grid points, shape (L_cpm, MD)."""
    md = cfg.samples_per_symbol
    n = np.arange(1, md + 1)[None, :] + md * np.arange(cfg.L_cpm)[:, None]
    return np.clip(n / (2.0 * cfg.pulse_samples), 0.0, 0.5)


def _symbol_phases(betas: np.ndarray, windows: np.ndarray, cfg: WaveformConfig,
                   first_index: int = 0) -> np.ndarray:
    """Tilted phase for many symbols at once.

    ``betas`` holds the phase state of each symbol (may be unwrapped),
    ``windows`` the ``L_cpm`` most recent symbols (oldest first). Returns an
    array of shape ``(n, M D)``.
    """
    md = cfg.samples_per_symbol
    tau = np.arange(1, md + 1) / md  # tau / Ts
    alpha = 2 * windows[:, ::-1] - cfg.M_cpm + 1  # newest first, l = 0 .. L-1
    pulse = alpha @ _pulse_table(cfg)
    tilt = math.pi * cfg.h * (cfg.M_cpm - 1) * (tau + cfg.L_cpm - 1)
    k = first_index + np.arange(len(betas))[:, None]
    low_if = 2 * math.pi * cfg.n_IF * (tau[None, :] + k)
    return (2 * math.pi / cfg.P) * np.asarray(betas, dtype=float)[:, None] \
        + 2 * math.pi * cfg.h * pulse + tilt[None, :] + cfg.phi0 + low_if


def tilted_phase_symbol(state: TiltedState, cfg: WaveformConfig,
                        symbol_index: int = 0) -> PhaseFrame:
    """Samples of the tilted phase over one symbol interval for ``state``.

    ``symbol_index`` only matters when ``n_IF != 0``: the low-IF term keeps
    running with absolute time.
    """
    state.validate(cfg)
    psi = _symbol_phases(np.array([state.beta]), np.array([state.recent]), cfg,
                         first_index=symbol_index)
    return PhaseFrame(psi[0], 1, cfg.grid_dt)


def state_transition(state: TiltedState, x_next: int, cfg: WaveformConfig) -> TiltedState:
    if not 0 <= x_next < cfg.M_cpm:
        raise ValueError(f"symbol {x_next} outside alphabet 0..{cfg.M_cpm - 1}")
    x_old = state.recent[0]
    return TiltedState((state.beta + cfg.K * x_old) % cfg.P, state.recent[1:] + (x_next,))


def enumerate_states(cfg: WaveformConfig, start: TiltedState | None = None) -> list[TiltedState]:
    """All states reachable from ``start`` (breadth first)."""
    start = start or initial_state(cfg)
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for s in frontier:
            for x in range(cfg.M_cpm):
                t = state_transition(s, x, cfg)
                if t not in seen:
                    seen.add(t)
                    nxt.append(t)
        frontier = nxt
    return sorted(seen, key=lambda s: (s.beta, s.recent))


def _check_symbols(x, cfg: WaveformConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("need a non-empty 1-D symbol sequence")
    if x.min() < 0 or x.max() >= cfg.M_cpm:
        raise ValueError(f"symbols outside alphabet 0..{cfg.M_cpm - 1}")
    return x


def phase_trajectory(x: Sequence[int], cfg: WaveformConfig,
                     start: TiltedState | None = None) -> PhaseFrame:
    """Unwrapped tilted phase for a whole symbol sequence.

    ``start`` is the state before the first symbol; its ``recent`` symbols act
    as the pre-history feeding the pulse memory.
    """
    x = _check_symbols(x, cfg)
    start = start or initial_state(cfg)
    start.validate(cfg)
    ext = np.concatenate([np.asarray(start.recent, dtype=np.int64), x])
    L = cfg.L_cpm
    windows = np.lib.stride_tricks.sliding_window_view(ext[1:], L)
    # beta of symbol k absorbs ext[0..k]; kept unwrapped so the phase is continuous
    betas = start.beta + cfg.K * np.cumsum(ext[: len(x)])
    psi = _symbol_phases(betas, windows, cfg)
    return PhaseFrame(psi.reshape(-1), len(x), cfg.grid_dt)


def modulate(x: Sequence[int], cfg: WaveformConfig,
             start: TiltedState | None = None) -> np.ndarray:
    """Complex baseband samples ``sqrt(Es/Ts) exp(j psi)``, ``len(x) * M * D`` of them."""
    psi = phase_trajectory(x, cfg, start).samples
    return math.sqrt(cfg.Es / cfg.Ts) * np.exp(1j * psi)


def ftn_recode(x_prime: int, ratio: int, M_cpm: int) -> list[int]:
    """Split one ``M_cpm**ratio``-ary symbol into ``ratio`` base-``M_cpm`` digits, MSB first."""
    if ratio < 1 or not 0 <= x_prime < M_cpm**ratio:
        raise ValueError(f"symbol {x_prime} outside [0, {M_cpm}**{ratio})")
    digits = []
    for _ in range(ratio):
        x_prime, d = divmod(x_prime, M_cpm)
        digits.append(d)
    return digits[::-1]


def ftn_assemble(digits: Iterable[int], M_cpm: int) -> int:
    value = 0
    for d in digits:
        if not 0 <= d < M_cpm:
            raise ValueError(f"digit {d} outside alphabet")
        value = value * M_cpm + d
    return value


def carson_bandwidth(h: float, M_cpm: int, Ts: float, T_cpm: float) -> float:
    """Carson bandwidth of CPM with i.u.d. symbols and a rectangular frequency pulse."""
    return h * math.sqrt((M_cpm**2 - 1) / (3 * Ts * T_cpm)) + 1 / T_cpm


def relative_carson_ratio(h: float, M_cpm: int, T_cpm_over_Ts: float, ratio: int) -> float:
    """Carson bandwidth of an FTN-CPM signal relative to the CPFSK it replaces.

    The reference CPFSK has ``M_cpm**ratio`` symbols, modulation index
    ``1 / M_cpm**ratio`` and a symbol ``ratio`` times longer.
    """
    if ratio < 1 or int(ratio) != ratio:
        raise ValueError("ratio must be a positive integer")
    ftn = ratio * (h * math.sqrt((M_cpm**2 - 1) / (3 * T_cpm_over_Ts)) + 1 / T_cpm_over_Ts)
    m_ref = M_cpm**ratio
    ref = 1 + (1 / m_ref) * math.sqrt((m_ref**2 - 1) / 3)
    return ftn / ref


def modulation_index(h: float | Fraction | str) -> tuple[int, int]:
    """``(K, P)`` in lowest terms for a modulation index such as ``"1/4"`` or ``0.25``."""
    frac = Fraction(h).limit_denominator(1 << 16) if not isinstance(h, str) else Fraction(h)
    if frac <= 0:
        raise ValueError("modulation index must be positive")
    return frac.numerator, frac.denominator
