import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, linalg

from evmma.attack import MmaCommand
from evmma.dynamics import PileParams, stiff_source_system
from evmma.modal import LinearModel, decompose, find_mode, linearize
from evmma.oscillation import (OscillationError, beat_frequency, law_checks, lockin_phasor,
                               mean_response, monte_carlo_variance, predict_variance, prony_identify,
                               shape_correlation, simulate_linear, steady_amplitude, variance_cqc,
                               variance_pem, variance_spectrum, variance_srs)

W_BAND = 2 * math.pi * 5


def _model(blocks, b=None, c=None):
    """Block-diagonal model of decaying rotations [[a, w], [-w, a]]."""
    a = linalg.block_diag(*[np.array([[al, w], [-w, al]]) for al, w in blocks])
    n = a.shape[0]
    b = np.ones((n, 1)) if b is None else np.asarray(b, float).reshape(n, 1)
    c = np.ones((1, n)) if c is None else np.asarray(c, float).reshape(1, n)
    return LinearModel(a, b, c, np.zeros((1, 1)), [f"s{k}" for k in range(n)], ["y"])


def _impulse(lm, t):
    return (lm.c @ linalg.expm(lm.a * t) @ lm.b).item()


def test_single_mode_matches_quadrature():
    w = 2 * math.pi * 0.62
    lm = _model([(-0.1, w)], b=[0.3, 1.0], c=[1.0, 0.4])
    dec = decompose(lm)
    cmd = MmaCommand(0.3, w, 0.4)
    p_mean = 2.0
    t = np.array([0.5, 3.0, 10.0, 25.0])
    pred = mean_response(dec, cmd, p_mean, t)
    u = lambda s: cmd.i_pct * p_mean * math.cos(w * s + cmd.phi)
    for tk, yk in zip(t, pred.total[0]):
        ref = integrate.quad(lambda s: _impulse(lm, tk - s) * u(s), 0, tk, limit=400)[0]
        assert yk == pytest.approx(ref, rel=1e-6, abs=1e-9)
    np.testing.assert_allclose(pred.total, pred.free + pred.resonant)
    # steady amplitude of the resonant part equals the frequency-response gain
    from evmma.oscillation import frequency_response
    assert pred.steady_amplitude() == pytest.approx(abs(frequency_response(lm, w)[0]) * 0.6, rel=1e-9)


def test_resonant_part_is_periodic():
    w = 3.0
    dec = decompose(_model([(-0.2, 3.1), (-0.5, 7.0)]))
    period = 2 * math.pi / w
    t = np.linspace(0, 20, 401)
    a = mean_response(dec, MmaCommand(0.3, w), 1.0, t).resonant
    b = mean_response(dec, MmaCommand(0.3, w), 1.0, t + period).resonant
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_zero_mean_load_gives_zero_response():
    dec = decompose(_model([(-0.1, 4.0)]))
    pred = mean_response(dec, MmaCommand(0.3, 4.0), 0.0, np.linspace(0, 10, 101))
    assert np.all(pred.total == 0)


def test_undamped_resonance_rejected():
    lm = _model([(0.0, 4.0)])
    with pytest.raises(OscillationError):
        mean_response(decompose(lm), MmaCommand(0.3, 4.0), 1.0, np.linspace(0, 1, 11))


def test_mean_response_matches_linear_simulation(kundur_heavy):
    _, lm, dec = kundur_heavy
    k = lm.output_index("G1.Pe")
    w = 2 * math.pi * 0.62
    cmd = MmaCommand(0.3, w, 0.2)
    dt = 0.005
    t = np.arange(0, 20 + dt / 2, dt)
    pred = mean_response(dec, cmd, 2.0, t).total[k]
    y = simulate_linear(lm, 2.0 * cmd.modulation(t), dt)[k, 0]
    rms = lambda v: math.sqrt(np.mean(v ** 2))
    assert rms(pred - y) < 0.01 * rms(y)


def test_amplitude_linear_in_ratio(kundur_heavy):
    _, lm, dec = kundur_heavy
    k = lm.output_index("G1.Pe")
    w = 2 * math.pi * 0.62
    amps = [mean_response(dec, MmaCommand(i, w), 2.0, [0.0]).forced_amp[k] for i in (0.1, 0.2, 0.3)]
    assert amps[1] / amps[0] == pytest.approx(2.0, rel=1e-6)
    assert amps[2] / amps[0] == pytest.approx(3.0, rel=1e-6)


def test_heavy_load_resonance_strictest_at_mode(kundur_heavy):
    _, lm, dec = kundur_heavy
    k = lm.output_index("G1.Pe")
    amp = {f: mean_response(dec, MmaCommand(0.3, 2 * math.pi * f), 2.0, [0.0]).forced_amp[k]
           for f in (0.57, 0.62, 0.65)}
    assert amp[0.62] > amp[0.57] and amp[0.62] > amp[0.65]


def test_prediction_grid_must_stay_in_window():
    dec = decompose(_model([(-0.1, 4.0)]))
    with pytest.raises(OscillationError):
        mean_response(dec, MmaCommand(0.3, 4.0, 0.0, 0.0, 5.0), 1.0, np.linspace(0, 10, 11))


# -- variance --------------------------------------------------------------------

def test_zero_sigma_gives_zero_variance():
    dec = decompose(_model([(-0.1, 4.0)]))
    t = np.linspace(0, 10, 101)
    cmd = MmaCommand(0.3, 4.0)
    assert np.all(variance_srs(dec, cmd, 0.0, W_BAND, t) == 0)
    assert np.all(variance_cqc(dec, cmd, 0.0, W_BAND, t) == 0)


def test_variance_starts_at_zero():
    dec = decompose(_model([(-0.1, 4.0), (-0.3, 12.0)]))
    cmd = MmaCommand(0.3, 4.0)
    assert variance_srs(dec, cmd, 0.1, W_BAND, [0.0])[0] == 0.0
    assert variance_cqc(dec, cmd, 0.1, W_BAND, [0.0])[0] == 0.0


def test_srs_peak_form_limit():
    a, w = -0.2, 4.0
    dec = decompose(_model([(a, w)]))
    cmd = MmaCommand(0.3, 4.0)
    v = variance_srs(dec, cmd, 0.1, W_BAND, [200.0], form="peak")[0]
    c2 = sum(abs(dec.phi[0, i] * dec.psi[i, 0]) ** 2 for i in range(2))
    assert v == pytest.approx((0.3 * 0.1) ** 2 / (2 * W_BAND) * c2 / a ** 2, rel=1e-9)


def test_unstable_mode_rejected():
    dec = decompose(_model([(0.05, 4.0)]))
    with pytest.raises(OscillationError):
        variance_srs(dec, MmaCommand(0.3, 4.0), 0.1, W_BAND, [1.0])


def test_no_pairs_gives_zero_cqc():
    dec = decompose(_model([(-0.1, 4.0)]))
    v, pairs, _ = variance_cqc(dec, MmaCommand(0.3, 1.3), 0.1, W_BAND, np.linspace(0, 10, 11),
                               return_pairs=True)
    assert pairs == [] and np.all(v == 0)


def test_cqc_oscillates_at_twice_attack_frequency():
    w = 1.0
    lm = _model([(-0.1, 5.0), (-0.1, 3.0)], b=[1, 0.5, 0.7, 1], c=[1, 0, 0.8, 0.3])
    dec = decompose(lm)
    t = np.arange(0, 200, 0.05)
    v, pairs, _ = variance_cqc(decompose(lm), MmaCommand(0.3, w), 0.1, W_BAND, t, return_pairs=True)
    assert pairs
    f, spec = variance_spectrum(t, v, t0=60.0)
    assert 2 * math.pi * f[np.argmax(spec[1:]) + 1] == pytest.approx(2 * w, abs=2 * math.pi * (f[1] - f[0]))


def test_srs_cqc_close_to_exact_pem():
    # SRS+CQC is the closed-form approximation of the exact pseudo-excitation quadrature
    lm = _model([(-0.05, 5.0), (-0.05, 3.0)], b=[1, 0.5, 0.7, 1], c=[1, 0, 0.8, 0.3])
    dec = decompose(lm)
    t = np.linspace(40, 60, 401)
    cmd = MmaCommand(0.3, 1.0)
    pred = predict_variance(dec, cmd, 0.1, W_BAND, t).total
    pem = variance_pem(dec, cmd, 0.1, W_BAND, t)
    assert np.mean(pred) == pytest.approx(np.mean(pem), rel=0.02)
    assert np.max(np.abs(pred - pem)) < 0.1 * np.max(pem)
    assert np.corrcoef(pred, pem)[0, 1] > 0.98


def test_monte_carlo_agrees_with_prediction():
    lm = _model([(-0.3, 4.0)], b=[0.3, 1.0], c=[1.0, 0.4])
    dec = decompose(lm)
    dt = 0.01
    t = np.arange(0, 30, dt)
    cmd = MmaCommand(0.3, 4.0)
    _, var = monte_carlo_variance(lm, 500, t, seed=9, attack=cmd, sigma=0.1, w_bandwidth=W_BAND)
    pred = predict_variance(dec, cmd, 0.1, W_BAND, t).total
    late = t >= 15
    assert np.mean(var[late]) == pytest.approx(np.mean(pred[late]), rel=0.2)


def test_monte_carlo_deterministic_and_quiet_without_noise():
    lm = _model([(-0.3, 4.0)])
    t = np.arange(0, 5, 0.01)
    cmd = MmaCommand(0.3, 4.0)
    a = monte_carlo_variance(lm, 20, t, seed=1, attack=cmd, sigma=0.1)
    b = monte_carlo_variance(lm, 20, t, seed=1, attack=cmd, sigma=0.1)
    assert a[1].tobytes() == b[1].tobytes()
    _, v0 = monte_carlo_variance(lm, 20, t, seed=1, attack=cmd, sigma=0.0)
    assert np.max(v0) < 1e-20
    with pytest.raises(ValueError):
        monte_carlo_variance(lm, 1, t, seed=1)


def test_monte_carlo_reports_failed_trial():
    def run(seed):
        raise RuntimeError("boom")
    with pytest.raises(OscillationError, match="trial 0"):
        monte_carlo_variance(run, 3, np.arange(3), seed=0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-1.0, -0.02), st.floats(0.5, 12.0)), min_size=1, max_size=3),
       st.floats(0.3, 8.0), st.integers(0, 2 ** 31))
def test_total_variance_non_negative(blocks, w, seed):
    rng = np.random.default_rng(seed)
    n = 2 * len(blocks)
    lm = _model(blocks, b=rng.normal(size=n), c=rng.normal(size=n))
    dec = decompose(lm)
    t = np.linspace(0, 60, 1000)
    v = predict_variance(dec, MmaCommand(0.3, w), 0.1, W_BAND, t, tol_pair=0.5).total
    srs = variance_srs(dec, MmaCommand(0.3, w), 0.1, W_BAND, t)
    assert np.all(srs >= 0)
    assert np.all(v >= -1e-12 * max(1.0, np.abs(v).max()))


# -- Prony ------------------------------------------------------------------------

def test_prony_exact_damped_cosine():
    dt = 0.01
    t = np.arange(0, 10, dt)
    x = np.exp(-0.3 * t) * np.cos(2 * math.pi * 1.37 * t)
    res = prony_identify(x, 2, dt)
    f, zeta, amp, _ = res.dominant()
    assert f == pytest.approx(1.37, abs=1e-6)
    assert zeta == pytest.approx(0.3 / math.hypot(0.3, 2 * math.pi * 1.37), abs=1e-6)
    assert zeta == pytest.approx(0.0348, abs=1e-4)
    assert amp == pytest.approx(1.0, abs=1e-6)
    assert res.fit_residual < 1e-8


def test_prony_round_trip_of_modal_synthesis(kundur_base):
    dec = kundur_base[2]
    picks = [i for i in dec.oscillatory(0.2, 2.0) if dec.damping_ratio(i) < 0.3]
    dt = 0.1   # oversampling crowds the poles near z = 1 and ruins conditioning
    t = np.arange(0, 15, dt)
    rng = np.random.default_rng(0)
    amps = rng.uniform(0.5, 1.5, len(picks)) * np.exp(1j * rng.uniform(0, 2 * np.pi, len(picks)))
    x = np.real(sum(2 * a * np.exp(dec.lam[i] * t) for a, i in zip(amps, picks)))
    res = prony_identify(x, 2 * len(picks), dt)
    for i in picks:
        got = min(res.modes, key=lambda m: abs(m[0] - dec.frequency_hz(i)))
        # six significant figures
        assert got[0] == pytest.approx(dec.frequency_hz(i), rel=5e-6)
        assert got[1] == pytest.approx(dec.damping_ratio(i), rel=5e-6)


def test_prony_white_noise_has_no_strong_mode():
    rng = np.random.default_rng(4)
    dt = 0.01
    x = rng.standard_normal(3000)
    res = prony_identify(x, 4, dt)
    assert res.fit_residual > 0.9
    t = np.arange(x.size) * dt
    energy = np.sum(x ** 2)
    for f, zeta, amp, ph in res.modes:
        s = -zeta * 2 * np.pi * f / math.sqrt(max(1 - zeta ** 2, 1e-12)) if f > 0 else 0.0
        mode = amp * np.exp(s * t) * np.cos(2 * np.pi * f * t + ph)
        assert np.sum(mode ** 2) < 0.05 * energy


def test_prony_order_bounds_and_rank_warning():
    with pytest.raises(ValueError):
        prony_identify(np.ones(9), 4)
    t = np.arange(0, 5, 0.01)
    with pytest.warns(RuntimeWarning, match="rank"):
        res = prony_identify(np.cos(2 * math.pi * t), 6, 0.01)
    assert res.dominant()[0] == pytest.approx(1.0, abs=1e-6)


# -- measurements and laws ------------------------------------------------------------

def test_steady_amplitude_and_lockin():
    t = np.arange(0, 20, 0.01)
    y = 1.0 + 0.3 * np.cos(2 * math.pi * 0.62 * t + 0.5)
    assert steady_amplitude(t, y, 5.0) == pytest.approx(0.3, rel=1e-3)
    ph = lockin_phasor(t, y, 0.62, 5.0)
    assert abs(ph) == pytest.approx(0.3, rel=1e-3)


def test_shape_correlation():
    v = np.array([1.0, -0.8 + 0.1j, 0.5j])
    assert shape_correlation(2.5 * np.exp(1j) * v, v) == pytest.approx(1.0)
    assert shape_correlation(np.zeros(3), v) == 0.0
    assert shape_correlation(np.array([0.8 + 0.1j, 1.0, 0.0]), v) < 0.5


@pytest.mark.parametrize("f_beat", [0.05, 0.03])
def test_beat_frequency_of_two_tones(f_beat):
    t = np.arange(0, 60, 0.01)
    y = np.cos(2 * math.pi * 0.62 * t) + 0.6 * np.exp(-0.02 * t) * np.cos(2 * math.pi * (0.62 + f_beat) * t)
    fb, depth = beat_frequency(t, y, 0.0)
    assert fb == pytest.approx(f_beat, rel=0.05)
    assert depth > 0.1


def test_beat_frequency_flat_envelope():
    t = np.arange(0, 30, 0.01)
    assert beat_frequency(t, np.cos(2 * math.pi * 0.62 * t), 0.0) == (0.0, 0.0)


def test_law_checks_synthetic_evidence():
    t = np.arange(0, 40, 0.01)
    f_att = 0.62
    var = 1.0 + 0.3 * np.cos(2 * math.pi * 2 * f_att * t)
    rep = law_checks(mean_amplitude=0.5, stochastic_std=0.02,
                     damping_amplitudes=[(0.017, 0.9), (0.065, 0.2)],
                     frequency_cases=[(0.57, 0.3, 0.8), (0.62, 0.9, 0.99), (0.65, 0.4, 0.85)],
                     beat_cases=[(0.57, 0.051), (0.62, 0.0), (0.65, 0.029)], mode_freq=0.6184,
                     variance_t=t, variance=var, attack_freq=f_att)
    assert all(rep[f"law{k}"]["passed"] for k in range(1, 6))
    on_mode = [c for c in rep["law4"]["cases"] if c["f_att"] == 0.62][0]
    assert on_mode["applicable"] is False
    assert rep["law5"]["line_hz"] == pytest.approx(1.24, abs=rep["law5"]["bin_hz"])


def test_law_checks_failures_and_missing_evidence():
    rep = law_checks(damping_amplitudes=[(0.017, 0.2), (0.065, 0.9)],
                     frequency_cases=[(0.57, 0.9, 0.8), (0.62, 0.3, 0.99)], mode_freq=0.62,
                     beat_cases=[(0.62, 0.0)])
    assert rep["law1"] == {"applicable": False}
    assert rep["law2"]["passed"] is False
    assert rep["law3"]["passed"] is False
    assert rep["law4"]["applicable"] is False
    assert rep["law5"] == {"applicable": False}
