"""MAP detection over the extended CPM trellis and the zero-crossing demodulator.

Branch metrics are Gaussian orthant probabilities of the quantized receiver
outputs. They only depend on the branch and on the observed sign pattern, so
they are computed lazily per pattern and memoized.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .cpm import WaveformConfig, _symbol_phases
from .frontend import (QuantizedFrame, ReceiveChain, apply_chain, pattern_signs, prehistory,
                       quantize_1bit, simulate_link)
from .orthant import complex_to_real, complex_to_real_cov, orthant_probabilities

DEFAULT_MAX_BRANCHES = 1_000_000
PROB_FLOOR = 1e-300
_NEG = -1e300


class TrellisTooLarge(RuntimeError):
    """The extended trellis exceeds the configured branch cap."""


@dataclass(frozen=True)
class DetectorState:
    beta: int
    recent: tuple[int, ...]


@dataclass(frozen=True)
class AppTable:
    """Per-symbol posteriors, shape ``(n, M_cpm)``, and the derived hard decisions."""

    app: np.ndarray = field(repr=False)
    underflows: int = 0

    @property
    def decisions(self) -> np.ndarray:
        return np.argmax(self.app, axis=1)


def _if_rotation_steps(cfg: WaveformConfig) -> int:
    """Quarter turns of the low-IF rotation per symbol."""
    q = 4 * cfg.n_IF
    if abs(q - round(q)) > 1e-12:
        raise ValueError("detection needs n_IF to be a multiple of 1/4 so the trellis "
                         "stays time-invariant up to quadrant rotations")
    return round(q) % 4


def _rotate_pattern(pattern: int, M: int) -> int:
    """Sign pattern of ``j * z`` given the pattern of ``z`` (``M`` samples, base 4)."""
    out = 0
    for m in range(M):
        q = (pattern >> (2 * m)) & 3
        re_neg, im_neg = q & 1, q >> 1
        out |= ((1 - im_neg) + 2 * re_neg) << (2 * m)
    return out


class TrellisDescriptor:
    """States, branches and per-branch noise-free receiver outputs.

    Branch ``b = state * M_cpm + x``. ``means[b]`` holds the ``M (N + 1)``
    complex filter outputs of the window ending at the current symbol.
    """

    def __init__(self, cfg: WaveformConfig, chain: ReceiveChain, N: int,
                 max_branches: int = DEFAULT_MAX_BRANCHES,
                 orthant_tol: float = 1e-6, orthant_max_points: int = 100_000):
        if N < 0:
            raise ValueError("N must be >= 0")
        if chain.cfg != cfg:
            raise ValueError("receive chain was built for a different waveform")
        self.cfg = cfg
        self.chain = chain.with_eta(N)
        self.N = N
        self.L = cfg.L_cpm + chain.L_g
        self.orthant_tol = orthant_tol
        self.orthant_max_points = orthant_max_points
        self.if_steps = _if_rotation_steps(cfg)
        mem = self.L + N - 1
        self.n_states = cfg.P * cfg.M_cpm**mem
        self.n_branches = self.n_states * cfg.M_cpm
        if self.n_branches > max_branches:
            raise TrellisTooLarge(
                f"{self.n_branches} branches (P={cfg.P}, M_cpm={cfg.M_cpm}, L+N={self.L + N}) "
                f"exceed the cap of {max_branches}"
            )
        self.states = [DetectorState(b, r) for b in range(cfg.P)
                       for r in itertools.product(range(cfg.M_cpm), repeat=mem)]
        self._index = {s: i for i, s in enumerate(self.states)}
        self.start = self._index[DetectorState(0, (0,) * mem)]
        Mc = cfg.M_cpm
        prev = np.repeat(np.arange(self.n_states), Mc)
        symbol = np.tile(np.arange(Mc), self.n_states)
        nxt = np.empty(self.n_branches, dtype=np.int64)
        windows = np.empty((self.n_branches, self.L + N), dtype=np.int64)
        betas = np.empty(self.n_branches, dtype=np.int64)
        for b in range(self.n_branches):
            s = self.states[prev[b]]
            w = s.recent + (int(symbol[b]),)
            windows[b] = w
            betas[b] = s.beta
            nxt[b] = self._index[DetectorState((s.beta + cfg.K * w[0]) % cfg.P, w[1:])]
        self.prev, self.next, self.symbol = prev, nxt, symbol
        order = np.argsort(nxt, kind="stable")
        self.incoming = order.reshape(self.n_states, Mc)
        self.means = self._branch_means(betas, windows)
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.underflows = 0

    def _branch_means(self, betas: np.ndarray, windows: np.ndarray) -> np.ndarray:
        cfg, N = self.cfg, self.N
        Lc, Lg = cfg.L_cpm, self.chain.L_g
        n_sym = N + Lg + 1
        out = []
        amp = math.sqrt(cfg.Es / cfg.Ts)
        for beta0, w in zip(betas, windows):
            # symbol j of the window uses w[j : j + L_cpm] and the phase state before it
            sym_windows = np.lib.stride_tricks.sliding_window_view(w, Lc)[:n_sym]
            sym_betas = beta0 + cfg.K * np.concatenate([[0], np.cumsum(w[: n_sym - 1])])
            psi = _symbol_phases(sym_betas, sym_windows, cfg, first_index=-(N + Lg))
            out.append(self.chain.window_output(amp * np.exp(1j * psi.reshape(-1))))
        return np.array(out)

    @property
    def R(self) -> np.ndarray:
        return self.chain.R

    def with_noise(self, N0: float) -> "TrellisDescriptor":
        """Same trellis, new noise level, empty metric cache."""
        clone = object.__new__(TrellisDescriptor)
        clone.__dict__.update(self.__dict__)
        clone.chain = self.chain.with_noise(N0)
        clone._cache = {}
        clone._lock = threading.Lock()
        clone.underflows = 0
        return clone

    # -- branch metrics ---------------------------------------------------

    def _orthant(self, patterns: tuple[int, ...]) -> np.ndarray:
        """``P(y window | branch)`` for every branch; window given oldest first."""
        M = self.cfg.M
        w = len(patterns)
        means = complex_to_real(self.means[:, M * (self.N + 1 - w):])
        R = self.chain.R[M * (self.N + 1 - w):, M * (self.N + 1 - w):]
        signs = np.concatenate([pattern_signs(p, M) for p in patterns])
        return orthant_probabilities(means, complex_to_real_cov(R), signs,
                                     tol=self.orthant_tol, max_points=self.orthant_max_points)

    def branch_probabilities(self, patterns: tuple[int, ...]) -> np.ndarray:
        """Auxiliary channel law ``W(y_k | y_{k-N..k-1}, branch)`` for all branches.

        ``patterns`` are the (derotated) sign patterns of ``y_{k-w+1} .. y_k``
        with ``w <= N + 1``; fewer than ``N + 1`` entries only happen at the
        start of a frame.
        """
        key = tuple(int(p) for p in patterns)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        val = self._evaluate(key)
        with self._lock:
            self._cache.setdefault(key, val)
            if self.cfg.P % 4 == 0:
                # beta -> beta + P/4 turns every mean by j, which maps the sign
                # pattern q to rot(q); one batch therefore serves four keys
                shift = (self.cfg.P // 4) * (self.n_branches // self.cfg.P)
                k, v = key, val
                for _ in range(3):
                    k = tuple(_rotate_pattern(q, self.cfg.M) for q in k)
                    v = np.roll(v, shift)
                    v.setflags(write=False)
                    self._cache.setdefault(k, v)
        return self._cache[key]

    def _evaluate(self, key: tuple[int, ...]) -> np.ndarray:
        num = self._orthant(key)
        if len(key) > 1:
            den = self._orthant_previous(key[:-1])
            low = den < PROB_FLOOR
            val = num / np.maximum(den, PROB_FLOOR)
            val[low] = PROB_FLOOR
        else:
            val = num
        low = val < PROB_FLOOR
        if low.any():
            val = np.maximum(val, PROB_FLOOR)
        val = np.minimum(val, 1.0)
        val.setflags(write=False)
        return val

    def _orthant_previous(self, patterns: tuple[int, ...]) -> np.ndarray:
        """``P(y_{k-w..k-1} | s_{k-1})``: the window without the newest symbol."""
        M = self.cfg.M
        w = len(patterns)
        stop = M * self.N
        start = stop - M * w
        means = complex_to_real(self.means[:, start:stop])
        R = self.chain.R[start:stop, start:stop]
        signs = np.concatenate([pattern_signs(p, M) for p in patterns])
        return orthant_probabilities(means, complex_to_real_cov(R), signs,
                                     tol=self.orthant_tol, max_points=self.orthant_max_points)

    def derotated_patterns(self, y: QuantizedFrame) -> np.ndarray:
        """Sign patterns with the low-IF rotation of each symbol removed.

        Row ``k`` holds the window ``y_{k-N} .. y_k`` (``-1`` before the frame),
        each rotated back by the quarter turns accumulated up to symbol ``k``.
        """
        n, N = y.n_symbols, self.N
        pats = np.full((n, N + 1), -1, dtype=np.int64)
        if self.if_steps == 0:
            base = y.patterns()
            for j in range(N + 1):
                lag = N - j
                pats[lag:, j] = base[: n - lag]
            return pats
        for r in range(4):
            rot = (-1j) ** r
            rows = np.nonzero((np.arange(n) * self.if_steps) % 4 == r)[0]
            if rows.size == 0:
                continue
            base = QuantizedFrame(np.round(y.y * rot)).patterns()
            for j in range(N + 1):
                src = rows - (N - j)
                ok = src >= 0
                pats[rows[ok], j] = base[src[ok]]
        return pats

    def log_metrics(self, y: QuantizedFrame) -> np.ndarray:
        """``log W`` for every time step and branch, shape ``(n, B)``."""
        pats = self.derotated_patterns(y)
        keys = [tuple(p for p in row if p >= 0) for row in pats]
        table = {}
        out = np.empty((len(keys), self.n_branches))
        for k, key in enumerate(keys):
            lw = table.get(key)
            if lw is None:
                pr = self.branch_probabilities(key)
                self.underflows += int(np.count_nonzero(pr <= PROB_FLOOR))
                lw = np.log(pr)
                table[key] = lw
            out[k] = lw
        return out


def build_trellis(cfg: WaveformConfig, chain: ReceiveChain, N: int = 0, **kwargs) -> TrellisDescriptor:
    return TrellisDescriptor(cfg, chain, N, **kwargs)


def auxiliary_channel_prob(y_window, branch: int, trellis: TrellisDescriptor) -> float:
    """``W(y_k | y_{k-N..k-1}, branch)`` for one window of quantized outputs.

    ``y_window`` holds ``N + 1`` output vectors of ``M`` samples each (a
    :class:`QuantizedFrame` or raw values), oldest first, already derotated.
    """
    if isinstance(y_window, QuantizedFrame):
        y_window = y_window.y
    frame = quantize_1bit(np.asarray(y_window).reshape(-1, trellis.cfg.M))
    if frame.n_symbols != trellis.N + 1:
        raise ValueError(f"window of {frame.n_symbols} symbols, N={trellis.N}")
    return float(trellis.branch_probabilities(tuple(frame.patterns()))[branch])


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _forward_backward(lg: np.ndarray, trellis: TrellisDescriptor):
    n = lg.shape[0]
    S = trellis.n_states
    prev, nxt, inc = trellis.prev, trellis.next, trellis.incoming
    Mc = trellis.cfg.M_cpm
    la = np.full((n + 1, S), _NEG)
    la[0, trellis.start] = 0.0
    for k in range(n):
        vals = la[k][prev] + lg[k]
        cur = _logsumexp_rows(vals[inc])
        la[k + 1] = cur - cur.max()
    lb = np.zeros((n + 1, S))
    out_idx = np.arange(S * Mc).reshape(S, Mc)  # branches leaving each state
    for k in range(n, 0, -1):
        vals = lg[k - 1] + lb[k][nxt]
        cur = _logsumexp_rows(vals[out_idx])
        lb[k - 1] = cur - cur.max()
    return la, lb


def bcjr_detect(y: QuantizedFrame, trellis: TrellisDescriptor,
                priors: np.ndarray | None = None) -> AppTable:
    """Symbol APPs by log-domain sum-product forward-backward recursion.

    The forward recursion starts in the known initial state, the backward one
    ends uniform.
    """
    if y.M != trellis.cfg.M:
        raise ValueError(f"frame has M={y.M}, trellis expects {trellis.cfg.M}")
    n = y.n_symbols
    if n < trellis.L + trellis.N:
        raise ValueError(f"frame of {n} symbols shorter than L+N={trellis.L + trellis.N}")
    before = trellis.underflows
    lg = trellis.log_metrics(y)
    if priors is not None:
        priors = np.asarray(priors, dtype=float)
        if priors.shape != (n, trellis.cfg.M_cpm):
            raise ValueError("priors must have shape (n, M_cpm)")
        lg = lg + np.log(np.maximum(priors, PROB_FLOOR))[:, trellis.symbol]
    la, lb = _forward_backward(lg, trellis)
    Mc = trellis.cfg.M_cpm
    joint = la[:-1][:, trellis.prev] + lg + lb[1:][:, trellis.next]
    # group branches by symbol: branch b carries symbol b % M_cpm
    per_symbol = joint.reshape(n, trellis.n_states, Mc)
    m = per_symbol.max(axis=1)
    app = m + np.log(np.exp(per_symbol - m[:, None, :]).sum(axis=1))
    app = np.exp(app - app.max(axis=1, keepdims=True))
    app /= app.sum(axis=1, keepdims=True)
    return AppTable(app, trellis.underflows - before)


def log2_likelihood(y: QuantizedFrame, trellis: TrellisDescriptor,
                    x: np.ndarray | None = None) -> float:
    """``log2 W(y^n | x^n)`` for known symbols, or ``log2 W(y^n)`` for i.u.d. symbols."""
    lg = trellis.log_metrics(y)
    n = lg.shape[0]
    if x is not None:
        x = np.asarray(x)
        s = trellis.start
        total = 0.0
        for k in range(n):
            b = s * trellis.cfg.M_cpm + int(x[k])
            total += lg[k, b]
            s = trellis.next[b]
        return total / math.log(2)
    lg = lg - math.log(trellis.cfg.M_cpm)
    S = trellis.n_states
    la = np.full(S, _NEG)
    la[trellis.start] = 0.0
    total = 0.0
    for k in range(n):
        vals = la[trellis.prev] + lg[k]
        cur = _logsumexp_rows(vals[trellis.incoming])
        c = cur.max()
        total += c
        la = cur - c
    m = la.max()
    total += m + math.log(np.exp(la - m).sum())
    return total / math.log(2)


def simple_demodulate(y: QuantizedFrame, initial: complex = 1 + 1j) -> np.ndarray:
    """Zero-crossing detector for binary FTN-CPM with ``h = 1/4`` and ``M = 1``.

    Decision ``k`` compares ``y_k`` with ``y_{k-1}`` (``initial`` before the
    frame): the real part is inspected when ``y_{k-1}`` lies on the main
    diagonal, the imaginary part otherwise.
    """
    if y.M != 1:
        raise ValueError("the simple demodulator needs M = 1")
    cur = y.y[:, 0]
    prev = np.concatenate([[complex(initial)], cur[:-1]])
    diag = np.sign(prev.real) == np.sign(prev.imag)
    d_re = np.abs(cur.real - prev.real) / 2
    d_im = np.abs(cur.imag - prev.imag) / 2
    return np.where(diag, d_re, d_im).astype(np.int64)


def decision_delay(chain: ReceiveChain) -> int:
    """Symbols by which the zero-crossing detector lags the transmitted sequence.

    An output whose integration window is centred at least half a symbol
    before the end of its symbol interval shows the previous phase transition.
    """
    cfg = chain.cfg
    md = cfg.samples_per_symbol
    last_kept = (cfg.M - 1) * cfg.D + chain.sample_offset + 1  # grid samples into the symbol
    n_g = round(chain.T_g / cfg.grid_dt)
    centre = last_kept - n_g / 2
    return 1 if centre <= md / 2 else 0


def reference_output(chain: ReceiveChain) -> complex:
    """Noise-free quantized output produced by the pre-frame history."""
    s = prehistory(chain.cfg, chain.L_g + 1)
    z = apply_chain(chain, s)
    return complex(quantize_1bit(z[-1:, -1]).y[0, 0])


def estimate_information_rate(cfg: WaveformConfig, chain: ReceiveChain,
                              trellis: TrellisDescriptor, N0: float, n: int,
                              seed: int | None = None) -> float:
    """Auxiliary-channel lower bound on the rate in bits per symbol.

    ``(1/n) [log2 W(y|x) - log2 W(y)]`` on one long simulated frame.
    """
    rng = np.random.default_rng(seed)
    x = rng.integers(0, cfg.M_cpm, n)
    y = simulate_link(x, cfg, chain.with_noise(N0), N0, rng)
    tr = trellis if trellis.chain.N0 == N0 else trellis.with_noise(N0)
    cond = log2_likelihood(y, tr, x)
    marg = log2_likelihood(y, tr)
    return (cond - marg) / n
