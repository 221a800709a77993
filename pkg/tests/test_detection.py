import itertools
import math

import numpy as np
import pytest
from scipy.special import ndtr

from oracles import brute_force_app

from ftncpm.cpm import WaveformConfig, modulate
from ftncpm.detection import (TrellisTooLarge, auxiliary_channel_prob, bcjr_detect, build_trellis,
                              decision_delay, estimate_information_rate, log2_likelihood,
                              simple_demodulate)
from ftncpm.frontend import (QuantizedFrame, apply_chain, build_rx_filter, pattern_signs,
                             prehistory, quantize_1bit, simulate_link)

FTN = WaveformConfig(M_cpm=2, K=1, P=4, phi0=math.pi / 4, D=20)
FTN2 = WaveformConfig(M_cpm=2, K=1, P=4, T_cpm=2.0, phi0=math.pi / 4, D=20)
CPFSK4 = WaveformConfig(M_cpm=4, K=1, P=4, phi0=math.pi / 4, M=2, D=10)
CPFSK8 = WaveformConfig(M_cpm=8, K=1, P=8, phi0=math.pi / 8, n_IF=0.25, M=2, D=10)
CPFSK8_M5 = WaveformConfig(M_cpm=8, K=1, P=8, phi0=math.pi / 8, n_IF=0.25, M=5, D=4)


def frame(values):
    return QuantizedFrame(np.asarray(values, dtype=complex).reshape(-1, 1))


@pytest.mark.parametrize("cfg, T_g, N, states", [(FTN2, 1.0, 0, 16), (CPFSK4, 0.5, 0, 16),
                                                 (FTN, 1.0, 1, 16), (FTN, 1.0, 0, 8)])
def test_state_counts(cfg, T_g, N, states):
    tr = build_trellis(cfg, build_rx_filter(cfg, T_g), N)
    assert tr.n_states == states
    assert tr.n_branches == states * cfg.M_cpm
    assert tr.n_states == cfg.P * cfg.M_cpm ** (tr.L + N - 1)


def test_branch_structure():
    tr = build_trellis(CPFSK4, build_rx_filter(CPFSK4, 0.5), 0)
    out = np.bincount(tr.prev, minlength=tr.n_states)
    inc = np.bincount(tr.next, minlength=tr.n_states)
    assert np.all(out == 4) and np.all(inc == 4)
    assert tr.incoming.shape == (tr.n_states, 4)
    assert np.all(tr.next[tr.incoming] == np.arange(tr.n_states)[:, None])


def test_resource_cap():
    with pytest.raises(TrellisTooLarge, match="exceed"):
        build_trellis(CPFSK8, build_rx_filter(CPFSK8, 0.5), 2, max_branches=10_000)


@pytest.mark.parametrize("cfg, T_g, N", [(FTN, 1.0, 0), (FTN2, 1.0, 1), (CPFSK4, 0.5, 1),
                                         (CPFSK8, 0.5, 0)])
def test_branch_means_match_simulation(cfg, T_g, N):
    """Noise-free outputs along any path equal the stored branch means."""
    ch = build_rx_filter(cfg, T_g)
    tr = build_trellis(cfg, ch, N)
    rng = np.random.default_rng(0)
    x = rng.integers(0, cfg.M_cpm, 40)
    s = np.concatenate([prehistory(cfg, ch.L_g), modulate(x, cfg)])
    z = apply_chain(ch, s)[ch.L_g:]
    steps = tr.if_steps
    st = tr.start
    for k in range(len(x)):
        b = st * cfg.M_cpm + x[k]
        st = tr.next[b]
        if k < N:
            continue
        # derotate the low-IF quarter turns accumulated up to symbol k
        window = z[k - N: k + 1].reshape(-1) * (-1j) ** ((k * steps) % 4)
        assert np.allclose(window, tr.means[b], atol=1e-12)


def test_prob_noise_free_limit():
    ch = build_rx_filter(FTN, 1.0)
    tr = build_trellis(FTN, ch, 0).with_noise(1e-8)
    for b in range(tr.n_branches):
        y = quantize_1bit(tr.means[b][None, :])
        assert auxiliary_channel_prob(y, b, tr) == pytest.approx(1.0, abs=1e-12)


def test_prob_diagonal_factorization():
    N0 = 0.4
    tr = build_trellis(FTN, build_rx_filter(FTN, 1.0), 0).with_noise(N0)
    assert np.allclose(tr.R, np.diag(np.diag(tr.R)))
    sd = math.sqrt(N0 / 2)
    for pattern, b in [(0, 3), (2, 5), (3, 0)]:
        y = quantize_1bit(np.array([[complex(*pattern_signs(pattern, 1))]]))
        mu = tr.means[b][0]
        signs = pattern_signs(pattern, 1)
        expect = ndtr(signs[0] * mu.real / sd) * ndtr(signs[1] * mu.imag / sd)
        assert auxiliary_channel_prob(y, b, tr) == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("cfg, T_g", [(CPFSK4, 0.5), (FTN2, 1.0)])
def test_auxiliary_law_normalized(cfg, T_g):
    tr = build_trellis(cfg, build_rx_filter(cfg, T_g), 1).with_noise(0.3)
    M = cfg.M
    history = 4**M - 3
    total = sum(tr.branch_probabilities((history, p)) for p in range(4**M))
    assert np.allclose(total, 1.0, atol=4**M * 1e-5)


def test_rotation_symmetry_consistent():
    for cfg, T_g, N in [(CPFSK4, 0.5, 1), (CPFSK8, 0.5, 0)]:
        tr = build_trellis(cfg, build_rx_filter(cfg, T_g), N).with_noise(0.2)
        tr.branch_probabilities((5,) * (N + 1))
        for key, val in list(tr._cache.items()):
            assert np.allclose(val, tr._evaluate(key), atol=1e-12)


def test_window_length_checked():
    tr = build_trellis(FTN, build_rx_filter(FTN, 1.0), 1)
    with pytest.raises(ValueError):
        auxiliary_channel_prob(frame([1 + 1j]), 0, tr)


@pytest.mark.parametrize("cfg, T_g", [(FTN, 1.0), (FTN2, 1.0), (CPFSK4, 0.5), (CPFSK8_M5, 0.5)])
def test_noiseless_recovery(cfg, T_g):
    ch = build_rx_filter(cfg, T_g)
    tr = build_trellis(cfg, ch, 0).with_noise(1e-6)
    rng = np.random.default_rng(1)
    x = rng.integers(0, cfg.M_cpm, 300)
    y = simulate_link(x, cfg, ch.with_noise(1e-30), 1e-30, 0)
    app = bcjr_detect(y, tr)
    warm = tr.L
    assert np.array_equal(app.decisions[warm:-(tr.L - 1) or None], x[warm:-(tr.L - 1) or None])


@pytest.mark.parametrize("cfg, T_g, N, N0", [(FTN, 1.0, 0, 0.5), (FTN2, 1.0, 1, 0.3),
                                             (CPFSK4, 0.5, 0, 0.8)])
def test_bcjr_matches_brute_force(cfg, T_g, N, N0):
    n = 8 if cfg.M_cpm == 2 else 6
    ch = build_rx_filter(cfg, T_g)
    tr = build_trellis(cfg, ch, N).with_noise(N0)
    rng = np.random.default_rng(2)
    x = rng.integers(0, cfg.M_cpm, n)
    y = simulate_link(x, cfg, ch.with_noise(N0), N0, 3)
    app = bcjr_detect(y, tr).app
    oracle = brute_force_app(tr.log_metrics(y), tr, n)
    assert np.allclose(app, oracle, atol=1e-9)


def test_app_rows_normalized_and_finite():
    ch = build_rx_filter(CPFSK4, 0.5)
    for N0 in (1e-4, 1.0, 1e6):
        tr = build_trellis(CPFSK4, ch, 0).with_noise(N0)
        y = simulate_link(np.arange(200) % 4, CPFSK4, ch, N0, 4)
        app = bcjr_detect(y, tr).app
        assert np.all(np.isfinite(app)) and np.all(app >= 0)
        assert np.allclose(app.sum(axis=1), 1.0, atol=1e-9)


def test_priors_shift_decisions():
    ch = build_rx_filter(FTN, 1.0)
    tr = build_trellis(FTN, ch, 0).with_noise(1e6)
    y = simulate_link(np.zeros(20, dtype=int), FTN, ch, 1e6, 0)
    priors = np.tile([0.1, 0.9], (20, 1))
    assert np.all(bcjr_detect(y, tr, priors).decisions == 1)
    with pytest.raises(ValueError):
        bcjr_detect(y, tr, np.ones((3, 2)))


def test_frame_too_short():
    tr = build_trellis(FTN2, build_rx_filter(FTN2, 1.0), 0)
    with pytest.raises(ValueError):
        bcjr_detect(frame([1 + 1j]), tr)


@pytest.mark.parametrize("prev, cur, expected", [(1 + 1j, -1 + 1j, 1), (1 - 1j, 1 - 1j, 0),
                                                 (1 + 1j, 1 - 1j, 0), (-1 + 1j, -1 - 1j, 1)])
def test_simple_rule(prev, cur, expected):
    assert simple_demodulate(frame([prev, cur]))[1] == expected


def test_simple_first_symbol_uses_initial_quadrant():
    assert simple_demodulate(frame([-1 + 1j]), initial=1 + 1j)[0] == 1
    assert simple_demodulate(frame([1 + 1j]), initial=1 + 1j)[0] == 0


def test_simple_rejects_oversampling():
    with pytest.raises(ValueError):
        simple_demodulate(QuantizedFrame(np.ones((4, 2), complex)))


def test_simple_noiseless_after_delay():
    ch = build_rx_filter(FTN, 1.0)
    x = np.random.default_rng(5).integers(0, 2, 200)
    y = simulate_link(x, FTN, ch, 1e-30, 0)
    d = decision_delay(ch)
    xs = simple_demodulate(y)
    assert np.array_equal(xs[d + 1:], x[1:len(x) - d])


def test_likelihood_normalization():
    """Sum over every output sequence of W(y|x) is one; W(y) is the average over x."""
    ch = build_rx_filter(FTN2, 1.0)
    tr = build_trellis(FTN2, ch, 1).with_noise(0.5)
    n = 3
    xs = list(itertools.product(range(2), repeat=n))
    total_cond = 0.0
    for codes in itertools.product(range(4), repeat=n):
        y = QuantizedFrame(np.array([[complex(*pattern_signs(c, 1))] for c in codes]))
        cond = [2 ** log2_likelihood(y, tr, np.array(x)) for x in xs]
        total_cond += cond[0]
        assert 2 ** log2_likelihood(y, tr) == pytest.approx(np.mean(cond), rel=1e-9)
    assert total_cond == pytest.approx(1.0, abs=1e-5)


def test_rate_vanishes_in_noise():
    ch = build_rx_filter(FTN, 1.0)
    tr = build_trellis(FTN, ch, 0)
    rate = estimate_information_rate(FTN, ch, tr, 1e6, 20_000, seed=1)
    assert abs(rate) <= 0.02


def test_rate_saturates_at_high_snr():
    ch = build_rx_filter(FTN2, 1.0)
    tr = build_trellis(FTN2, ch, 0)
    rate = estimate_information_rate(FTN2, ch, tr, 1e-3, 20_000, seed=1)
    assert 0.99 <= rate <= 1.0 + 1e-9


def test_rate_reproducible_and_monotone():
    ch = build_rx_filter(FTN2, 1.0)
    tr = build_trellis(FTN2, ch, 0)
    a = estimate_information_rate(FTN2, ch, tr, 0.2, 5_000, seed=3)
    assert a == estimate_information_rate(FTN2, ch, tr, 0.2, 5_000, seed=3)
    rates = [estimate_information_rate(FTN2, ch, tr, N0, 20_000, seed=4) for N0 in (2.0, 0.5, 0.1)]
    assert all(0 <= r <= 1 for r in rates)
    assert np.all(np.diff(rates) > -0.02)
