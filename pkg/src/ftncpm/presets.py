"""Waveform presets used throughout the experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .cpm import WaveformConfig

SIM_SAMPLES_PER_SYMBOL = 20
FTN_PULSE_LENGTHS = (1.0, 1.2, 1.4, 1.6, 1.8, 2.0)


@dataclass(frozen=True)
class Preset:
    """Fixed parameters of a named waveform; ``free`` fields may be chosen per run."""

    name: str
    M_cpm: int
    K: int
    P: int
    T_cpm: float | None
    T_g: float
    n_IF: float
    phi0: float
    M: int | None
    N: int
    free: tuple[str, ...]


PRESETS = {
    "4-CPFSK": Preset("4-CPFSK", M_cpm=4, K=1, P=4, T_cpm=1.0, T_g=0.5, n_IF=0.0,
                      phi0=math.pi / 4, M=None, N=0, free=("M", "D")),
    "8-CPFSK": Preset("8-CPFSK", M_cpm=8, K=1, P=8, T_cpm=1.0, T_g=0.5, n_IF=0.25,
                      phi0=math.pi / 8, M=5, N=0, free=("D",)),
    "FTN-CPM": Preset("FTN-CPM", M_cpm=2, K=1, P=4, T_cpm=None, T_g=1.0, n_IF=0.0,
                      phi0=math.pi / 4, M=1, N=0, free=("T_cpm", "D")),
}


def default_D(M: int) -> int:
    return max(SIM_SAMPLES_PER_SYMBOL // M, 1)


def preset_config(name: str, *, T_cpm: float | None = None, M: int | None = None,
                  D: int | None = None) -> tuple[WaveformConfig, float, int]:
    """``(WaveformConfig, T_g, N)`` for a preset with its free parameters filled in."""
    try:
        p = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
    if p.T_cpm is not None and T_cpm is not None and T_cpm != p.T_cpm:
        raise ValueError(f"{name} fixes T_cpm={p.T_cpm}")
    if p.M is not None and M is not None and M != p.M:
        raise ValueError(f"{name} fixes M={p.M}")
    T_cpm = p.T_cpm if p.T_cpm is not None else (T_cpm if T_cpm is not None else 1.0)
    M = p.M if p.M is not None else (M if M is not None else 4)
    D = D if D is not None else default_D(M)
    cfg = WaveformConfig(M_cpm=p.M_cpm, K=p.K, P=p.P, T_cpm=T_cpm, phi0=p.phi0,
                         n_IF=p.n_IF, M=M, D=D)
    return cfg, p.T_g, p.N


def standard_bandwidth_rows() -> list[tuple[str, float, int]]:
    """``(preset, T_cpm/Ts, M)`` for the rows of the bandwidth table."""
    rows = [("8-CPFSK", 1.0, 5), ("4-CPFSK", 1.0, 4), ("4-CPFSK", 1.0, 2)]
    rows += [("FTN-CPM", t, 1) for t in FTN_PULSE_LENGTHS]
    return rows
