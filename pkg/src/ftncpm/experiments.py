"""Seeded Monte Carlo sweeps, bandwidth tables and result files.

An experiment is described by a small YAML document::

    waveform:
      preset: FTN-CPM
      T_cpm: 2.0
    detector: bcjr
    N: 0
    snr_grid_dB: [8.0, 10.0, 12.04]
    seed: 1

Every random draw is taken from a stream derived from ``(seed, point, frame)``
so the emitted files depend on nothing but the spec.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml
from scipy.stats import norm

from . import __version__
from .cpm import WaveformConfig, modulation_index
from .detection import (bcjr_detect, build_trellis, decision_delay, estimate_information_rate,
                        simple_demodulate)
from .frontend import ReceiveChain, build_rx_filter, simulate_link
from .presets import PRESETS, default_D, preset_config, standard_bandwidth_rows
from .spectrum import bandwidth_report, estimate_psd, snr_to_noise_density, spectrum_config

THREADS_ENV = "FTNCPM_THREADS"
BER_COLUMNS = ("snr_db", "ber", "bit_errors", "bits", "ci_lo", "ci_hi")
RATE_COLUMNS = ("snr_db", "rate_bpcu", "spectral_efficiency", "symbols")
BANDWIDTH_COLUMNS = ("waveform", "T_cpm_over_Ts", "M", "B90_Ts", "B95_Ts", "eff90", "eff95",
                     "osr_eff")
PSD_COLUMNS = ("freq", "psd")


class SpecError(ValueError):
    """Invalid experiment description."""


# -- spec -------------------------------------------------------------------

@dataclass(frozen=True)
class WaveformSpec:
    """Waveform and receive-filter parameters, with any preset already expanded."""

    M_cpm: int
    h: str
    T_cpm: float
    phi0: float
    n_IF: float
    M: int
    D: int
    T_g: float
    preset: str | None = None
    sample_offset: int | None = None

    def config(self) -> WaveformConfig:
        K, P = modulation_index(self.h)
        return WaveformConfig(M_cpm=self.M_cpm, K=K, P=P, T_cpm=self.T_cpm, phi0=self.phi0,
                              n_IF=self.n_IF, M=self.M, D=self.D)

    def chain(self, N0: float = 1.0) -> ReceiveChain:
        return build_rx_filter(self.config(), self.T_g, N0=N0, sample_offset=self.sample_offset)


@dataclass(frozen=True)
class ExperimentSpec:
    waveform: WaveformSpec
    snr_grid_dB: tuple[float, ...] = ()
    detector: str = "bcjr"
    N: int = 0
    min_errors: int = 200
    max_symbols: int = 10_000_000
    frame_symbols: int = 10_000
    rate_symbols: int = 100_000
    orthant_tol: float = 1e-6
    seed: int = 0
    B90_Ts: float | None = None  # fixes the SNR reference bandwidth instead of measuring it

    def __post_init__(self):
        if self.detector not in ("bcjr", "simple"):
            raise SpecError(f"detector must be 'bcjr' or 'simple', got {self.detector!r}")
        if self.min_errors < 1:
            raise SpecError("min_errors must be >= 1")
        if self.N < 0:
            raise SpecError("N must be >= 0")
        if self.max_symbols < 1 or self.frame_symbols < 1 or self.rate_symbols < 1:
            raise SpecError("symbol counts must be positive")
        if self.orthant_tol <= 0:
            raise SpecError("orthant_tol must be positive")
        if self.B90_Ts is not None and self.B90_Ts <= 0:
            raise SpecError("B90_Ts must be positive")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must be an unsigned 64-bit integer")
        g = self.snr_grid_dB
        if any(b <= a for a, b in zip(g, g[1:])):
            raise SpecError("snr grid strictly increasing")
        if self.detector == "simple" and (self.waveform.M != 1 or self.waveform.M_cpm != 2):
            raise SpecError("the simple detector needs M_cpm = 2 and M = 1")

    def with_seed(self, seed: int | None) -> "ExperimentSpec":
        return self if seed is None else dataclasses.replace(self, seed=seed)

    @property
    def hash(self) -> str:
        return hashlib.sha256(dump_spec(self).encode()).hexdigest()


_WAVEFORM_KEYS = {f.name for f in dataclasses.fields(WaveformSpec)}
_SPEC_KEYS = {f.name for f in dataclasses.fields(ExperimentSpec)}


def _h_text(h) -> str:
    K, P = modulation_index(h if isinstance(h, str) else float(h))
    return f"{K}/{P}"


def _waveform_from_dict(d: dict) -> WaveformSpec:
    if not isinstance(d, dict):
        raise SpecError("waveform: expected a mapping")
    unknown = set(d) - _WAVEFORM_KEYS
    if unknown:
        raise SpecError(f"waveform: unknown key(s) {sorted(unknown)}")
    name = d.get("preset")
    try:
        if name is not None:
            return _expand_preset(name, d)
        missing = {"M_cpm", "h", "T_g"} - set(d)
        if missing:
            raise SpecError(f"waveform: missing key(s) {sorted(missing)} (or give a preset)")
        M = int(d.get("M", 1))
        w = WaveformSpec(M_cpm=int(d["M_cpm"]), h=_h_text(d["h"]),
                         T_cpm=float(d.get("T_cpm", 1.0)), phi0=float(d.get("phi0", 0.0)),
                         n_IF=float(d.get("n_IF", 0.0)), M=M, D=int(d.get("D", default_D(M))),
                         T_g=float(d["T_g"]), sample_offset=d.get("sample_offset"))
        w.chain()  # grid and filter checks
        return w
    except SpecError:
        raise
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise SpecError(f"waveform: {exc}") from None


def _expand_preset(name: str, d: dict) -> WaveformSpec:
    if name not in PRESETS:
        raise SpecError(f"waveform: unknown preset {name!r}; known: {', '.join(PRESETS)}")
    p = PRESETS[name]
    cfg, T_g, _ = preset_config(name, T_cpm=d.get("T_cpm"), M=d.get("M"), D=d.get("D"))
    w = WaveformSpec(M_cpm=cfg.M_cpm, h=f"{cfg.K}/{cfg.P}", T_cpm=cfg.T_cpm, phi0=cfg.phi0,
                     n_IF=cfg.n_IF, M=cfg.M, D=cfg.D, T_g=T_g, preset=name,
                     sample_offset=d.get("sample_offset"))
    for key in ("M_cpm", "phi0", "n_IF", "T_g") + tuple(k for k in ("T_cpm", "M") if k not in p.free):
        if key in d and float(d[key]) != float(getattr(w, key)):
            raise SpecError(f"waveform: preset {name} fixes {key}={getattr(w, key)}, got {d[key]}")
    if "h" in d and Fraction(_h_text(d["h"])) != Fraction(w.h):
        raise SpecError(f"waveform: preset {name} fixes h={w.h}, got {d['h']}")
    w.chain()
    return w


def spec_from_dict(d: dict) -> ExperimentSpec:
    if not isinstance(d, dict):
        raise SpecError("top level: expected a mapping")
    unknown = set(d) - _SPEC_KEYS
    if unknown:
        raise SpecError(f"unknown key(s) {sorted(unknown)}")
    if "waveform" not in d:
        raise SpecError("missing key 'waveform'")
    kw = dict(d)
    wf = kw.pop("waveform")
    if isinstance(wf, str):
        wf = {"preset": wf}
    kw["waveform"] = _waveform_from_dict(wf)
    try:
        kw["snr_grid_dB"] = tuple(float(s) for s in kw.get("snr_grid_dB", ()))
        for key in ("N", "min_errors", "max_symbols", "frame_symbols", "rate_symbols", "seed"):
            if key in kw:
                v = kw[key]
                if isinstance(v, bool) or float(v) != int(v):
                    raise SpecError(f"{key}: expected an integer, got {v!r}")
                kw[key] = int(v)
        for key in ("orthant_tol", "B90_Ts"):
            if kw.get(key) is not None:
                kw[key] = float(kw[key])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc)) from None
    return ExperimentSpec(**kw)


def spec_to_dict(spec: ExperimentSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["snr_grid_dB"] = list(spec.snr_grid_dB)
    d["waveform"] = {k: v for k, v in d["waveform"].items() if v is not None}
    if d["B90_Ts"] is None:
        del d["B90_Ts"]
    return d


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=True)


def parse_spec(text: str) -> ExperimentSpec:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise SpecError(f"parse error at {where}: {exc.problem}") from None
    return spec_from_dict(data)


def load_spec(path) -> ExperimentSpec:
    return parse_spec(Path(path).read_text())


# -- results ----------------------------------------------------------------

@dataclass
class ExperimentResult:
    """Records of one run plus the metadata identifying it.

    ``wall_time`` is kept on the object (and reported by the CLI) but not
    written to files, so that re-running a spec reproduces them byte for byte.
    """

    kind: str
    records: list[dict]
    metadata: dict
    wall_time: float = field(default=0.0, compare=False)


def wilson_interval(errors: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + confidence / 2)
    p = errors / trials
    den = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    lo = 0.0 if errors == 0 else max(0.0, centre - half)
    hi = 1.0 if errors == trials else min(1.0, centre + half)
    return lo, hi


def gray_labels(M_cpm: int) -> np.ndarray:
    """Bit labels of the symbol indices, Gray coded so neighbouring frequencies differ in one bit."""
    k = np.arange(M_cpm)
    g = k ^ (k >> 1)
    bits = int(math.log2(M_cpm))
    return ((g[:, None] >> np.arange(bits)[::-1]) & 1).astype(np.int8)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@lru_cache(maxsize=32)
def _measured_b90(cfg: WaveformConfig) -> float:
    return bandwidth_report(cfg).B90_Ts / cfg.Ts


def reference_bandwidth(spec: ExperimentSpec) -> float:
    """``B90`` (Hz) used to turn SNR into ``N0``: the spec's value or a fresh PSD estimate."""
    cfg = spec.waveform.config()
    if spec.B90_Ts is not None:
        return spec.B90_Ts / cfg.Ts
    return _measured_b90(spectrum_config(cfg))


def _metadata(spec: ExperimentSpec, **extra) -> dict:
    meta = {"spec_hash": spec.hash, "seed": spec.seed, "code_version": __version__,
            "spec": spec_to_dict(spec)}
    meta.update(extra)
    return meta


def _frame_errors(spec: ExperimentSpec, cfg, chain, trellis, N0, labels, rng_seq, n):
    """Bit errors and counted bits for one frame of ``n`` symbols."""
    rng = np.random.default_rng(rng_seq)
    x = rng.integers(0, cfg.M_cpm, n)
    y = simulate_link(x, cfg, chain, N0, rng)
    warm = trellis.L + spec.N
    if spec.detector == "bcjr":
        xh = bcjr_detect(y, trellis).decisions
        lo, hi = warm, n - (trellis.L - 1)
        est = xh[lo:hi]
    else:
        d = decision_delay(chain)
        xs = simple_demodulate(y)
        lo, hi = warm, n - d
        est = xs[lo + d:hi + d]
    if hi <= lo:
        return 0, 0
    truth = x[lo:hi]
    errors = int(np.count_nonzero(labels[truth] != labels[est]))
    return errors, (hi - lo) * labels.shape[1]


def run_ber_sweep(spec: ExperimentSpec, progress=None) -> ExperimentResult:
    """BER versus SNR; each point stops at ``min_errors`` bit errors or ``max_symbols`` symbols."""
    t0 = time.perf_counter()
    cfg = spec.waveform.config()
    chain0 = spec.waveform.chain()
    trellis0 = build_trellis(cfg, chain0, spec.N, orthant_tol=spec.orthant_tol)
    b90 = reference_bandwidth(spec)
    labels = gray_labels(cfg.M_cpm)
    root = np.random.SeedSequence(spec.seed)
    workers = _threads()
    min_frame = trellis0.L + spec.N + trellis0.L + 1
    records = []
    for i, snr in enumerate(spec.snr_grid_dB):
        N0 = snr_to_noise_density(snr, cfg.Es, cfg.Ts, b90)
        chain = chain0.with_noise(N0)
        trellis = trellis0.with_noise(N0)
        errors = bits = simulated = 0
        frame = 0
        stop = None
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while stop is None:
                # a batch of frames may run concurrently; they are consumed in index order
                lengths = []
                for _ in range(workers):
                    n = min(spec.frame_symbols, spec.max_symbols - simulated - sum(lengths))
                    if n <= 0:
                        break
                    lengths.append(max(n, min_frame))
                seqs = [np.random.SeedSequence(root.entropy, spawn_key=(i, frame + j))
                        for j in range(len(lengths))]
                outs = pool.map(lambda a: _frame_errors(spec, cfg, chain, trellis, N0, labels, *a),
                                zip(seqs, lengths))
                for n, (e, b) in zip(lengths, outs):
                    frame += 1
                    errors += e
                    bits += b
                    simulated += n
                    if errors >= spec.min_errors:
                        stop = "min_errors"
                    elif simulated >= spec.max_symbols:
                        stop = "max_symbols"
                    if stop:
                        break
        ber = errors / bits if bits else 0.0
        lo, hi = wilson_interval(errors, bits)
        records.append({"snr_db": snr, "ber": ber, "bit_errors": errors, "bits": bits,
                        "ci_lo": lo, "ci_hi": hi, "symbols": simulated, "frames": frame,
                        "stop_reason": stop, "N0": N0})
        if progress:
            progress(records[-1])
    meta = _metadata(spec, B90_Ts=b90 * cfg.Ts, waveform_config=dataclasses.asdict(cfg))
    return ExperimentResult("ber", records, meta, time.perf_counter() - t0)


def run_rate_sweep(spec: ExperimentSpec, progress=None) -> ExperimentResult:
    """Information-rate estimate and spectral efficiency w.r.t. ``B90`` per SNR point."""
    t0 = time.perf_counter()
    cfg = spec.waveform.config()
    chain = spec.waveform.chain()
    trellis = build_trellis(cfg, chain, spec.N, orthant_tol=spec.orthant_tol)
    b90 = reference_bandwidth(spec)
    root = np.random.SeedSequence(spec.seed)
    records = []
    for i, snr in enumerate(spec.snr_grid_dB):
        N0 = snr_to_noise_density(snr, cfg.Es, cfg.Ts, b90)
        seq = np.random.SeedSequence(root.entropy, spawn_key=(i,))
        rate = estimate_information_rate(cfg, chain, trellis, N0, spec.rate_symbols,
                                         seed=seq)
        records.append({"snr_db": snr, "rate_bpcu": rate,
                        "spectral_efficiency": rate / (b90 * cfg.Ts),
                        "symbols": spec.rate_symbols})
        if progress:
            progress(records[-1])
    meta = _metadata(spec, B90_Ts=b90 * cfg.Ts, waveform_config=dataclasses.asdict(cfg))
    return ExperimentResult("rate", records, meta, time.perf_counter() - t0)


def run_bandwidth_table(rows=None, n_symbols: int = 2**16, seed: int = 0) -> ExperimentResult:
    """Containment bandwidths, efficiencies and effective oversampling per waveform.

    ``rows`` holds ``(preset, T_cpm/Ts, M)`` triples and defaults to the nine
    standard configurations.
    """
    t0 = time.perf_counter()
    rows = standard_bandwidth_rows() if rows is None else list(rows)
    records = []
    for name, t_cpm, M in rows:
        cfg, _, _ = preset_config(name, T_cpm=t_cpm, M=M)
        rep = bandwidth_report(cfg, n_symbols=n_symbols, seed=seed)
        records.append({"waveform": name, "T_cpm_over_Ts": t_cpm, "M": M,
                        "B90_Ts": rep.B90_Ts, "B95_Ts": rep.B95_Ts, "eff90": rep.eff90,
                        "eff95": rep.eff95, "osr_eff": rep.osr_eff})
    meta = {"seed": seed, "n_symbols": n_symbols, "code_version": __version__,
            "rows": [list(r) for r in rows]}
    return ExperimentResult("bandwidth", records, meta, time.perf_counter() - t0)


def run_psd(spec: ExperimentSpec, n_symbols: int = 2**16) -> ExperimentResult:
    t0 = time.perf_counter()
    cfg = spectrum_config(spec.waveform.config())
    psd = estimate_psd(cfg, n_symbols=n_symbols, seed=spec.seed)
    records = [{"freq": float(f), "psd": float(p)} for f, p in zip(psd.freqs, psd.power)]
    meta = _metadata(spec, total_power=psd.total_power, psd_params=psd.params)
    return ExperimentResult("psd", records, meta, time.perf_counter() - t0)


_COLUMNS = {"ber": BER_COLUMNS, "rate": RATE_COLUMNS, "bandwidth": BANDWIDTH_COLUMNS,
            "psd": PSD_COLUMNS}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def result_to_text(result: ExperimentResult, fmt: str) -> str:
    if fmt == "csv":
        cols = _COLUMNS[result.kind]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in result.records:
            w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c]
                        for c in cols])
        return buf.getvalue()
    if fmt == "json":
        doc = {"kind": result.kind, "records": result.records, "metadata": result.metadata}
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")


def emit_results(result: ExperimentResult, fmt: str, path) -> Path:
    text = result_to_text(result, fmt)
    path = Path(path)
    path.write_text(text)
    return path


def read_result(path) -> ExperimentResult:
    doc = json.loads(Path(path).read_text())
    return ExperimentResult(doc["kind"], doc["records"], doc["metadata"])
