import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg, signal

from evmma.dynamics import PileParams, stiff_source_system
from evmma.modal import (LinearModel, ModalError, ModeInfo, calibrate_pile, damping_ratio, decompose,
                         find_mode, linearize, mac, mode_info, mode_sweep, participation_factors,
                         pile_mode)

PILE = PileParams()


def _lin(a, b=None):
    a = np.asarray(a, float)
    n = a.shape[0]
    b = np.ones((n, 1)) if b is None else b
    return LinearModel(a, b, np.eye(n), np.zeros((n, 1)), [f"s{k}" for k in range(n)],
                       [f"y{k}" for k in range(n)])


@pytest.fixture(scope="module")
def pile_lin():
    return linearize(stiff_source_system(PILE, 0.5))


def test_diagonal_matrix():
    dec = decompose(_lin(np.diag([-1.0, -2.0])))
    order = np.argsort(-dec.lam.real)
    np.testing.assert_allclose(dec.lam[order], [-1, -2])
    np.testing.assert_allclose(np.abs(dec.u_right[:, order]), np.eye(2), atol=1e-12)
    np.testing.assert_allclose(np.abs(dec.v_left[:, order]), np.eye(2), atol=1e-12)
    np.testing.assert_allclose(participation_factors(dec, order[0]), [1, 0])


def test_rotation_decay_matrix():
    alpha, w = -0.3, 4.0
    dec = decompose(_lin([[alpha, w], [-w, alpha]]))
    assert sorted(dec.lam, key=lambda z: z.imag) == pytest.approx([alpha - 1j * w, alpha + 1j * w])


def test_defective_matrix_rejected():
    with pytest.raises(ModalError, match="repeated eigenvalue"):
        decompose(_lin([[-1.0, 1.0], [0.0, -1.0]]))


def test_linear_model_validation():
    with pytest.raises(ValueError):
        LinearModel(np.eye(2), np.ones((2, 1)), np.eye(2), np.zeros((2, 1)), ["a", "a"], ["y0", "y1"])
    with pytest.raises(ValueError):
        LinearModel(np.eye(2), np.ones((2, 1)), np.eye(2), np.zeros((2, 1)), ["a"], ["y0", "y1"])


def test_mode_info_invariants():
    with pytest.raises(ValueError):
        ModeInfo(frequency=-1.0, damping_ratio=0.1)


def test_pile_model_is_six_state_with_target_mode(pile_lin):
    assert pile_lin.a.shape == (6, 6)
    dec = decompose(pile_lin)
    i = pile_mode(dec)
    assert dec.frequency_hz(i) == pytest.approx(1.370, abs=0.05)
    assert dec.damping_ratio(i) == pytest.approx(0.2797, abs=0.02)


def test_pll_states_dominate_pile_mode(pile_lin):
    dec = decompose(pile_lin)
    i = pile_mode(dec)
    p = participation_factors(dec, i)
    top = {pile_lin.state_labels[k] for k in np.argsort(p)[-2:]}
    assert top == {"pile.x_pll", "pile.theta_pll"}


def test_participation_sums_to_one(kundur_base, pile_lin):
    for lm in (pile_lin, kundur_base[1]):
        dec = decompose(lm)
        total = sum((dec.u_right[:, i] * dec.v_left[:, i]) for i in range(len(dec.lam)))
        np.testing.assert_allclose(total, 1.0, atol=1e-8)


def test_eigen_residuals_and_biorthonormality(kundur_base, pile_lin):
    for lm in (pile_lin, kundur_base[1]):
        dec = decompose(lm)
        norm = np.linalg.norm(lm.a)
        res = np.linalg.norm(lm.a @ dec.u_right - dec.u_right * dec.lam, axis=0) / norm
        assert res.max() < 1e-8
        np.testing.assert_allclose(dec.v_left.T @ dec.u_right, np.eye(len(dec.lam)), atol=1e-8)
        np.testing.assert_allclose(dec.psi, dec.v_left.T @ lm.b)
        np.testing.assert_allclose(dec.phi, lm.c @ dec.u_right)


def test_modal_reconstruction_of_impulse_response(pile_lin):
    dec = decompose(pile_lin)
    t = np.linspace(0, 10, 1001)
    lm = pile_lin.select_output("pile.Pe")
    sys_ = signal.StateSpace(lm.a, lm.b, lm.c, np.zeros_like(lm.d))
    _, y = signal.impulse(sys_, T=t)
    k = lm_index = pile_lin.output_index("pile.Pe")
    modal = np.real(sum(dec.phi[k, i] * dec.psi[i, 0] * np.exp(dec.lam[i] * t) for i in range(len(dec.lam))))
    # cross-check the closed form too
    exact = np.array([(lm.c @ linalg.expm(lm.a * tt) @ lm.b).item() for tt in t[::50]])
    np.testing.assert_allclose(modal[::50], exact, atol=1e-6 * max(1.0, np.abs(exact).max()))
    np.testing.assert_allclose(modal, y, atol=1e-6 * max(1.0, np.abs(y).max()))


def test_damping_formula_is_exact(kundur_base):
    dec = kundur_base[2]
    for i in range(len(dec.lam)):
        lam = dec.lam[i]
        if abs(lam) == 0:
            continue
        assert dec.damping_ratio(i) == -lam.real / math.hypot(lam.real, lam.imag)
        assert mode_info(dec, i).damping_ratio == dec.damping_ratio(i)


def test_eigenvalues_invariant_under_phase_shift():
    system = stiff_source_system(PILE, 0.5)
    base = np.sort_complex(np.linalg.eigvals(linearize(system).a))
    # rotate the whole phase reference: the source phasor and the PLL angle together
    rotated = replace(system, net=replace(system.net, fixed_voltage=system.net.fixed_voltage * np.exp(0.9j)),
                      x0=system.shifted(system.x0, 0.9))
    moved = np.sort_complex(np.linalg.eigvals(linearize(rotated).a))
    np.testing.assert_allclose(moved, base, atol=1e-6)


def test_linearize_step_converged():
    system = stiff_source_system(PILE, 0.5)
    a1 = linearize(system, step=1e-4).a
    a2 = linearize(system, step=5e-5).a
    scale = np.abs(a1).max()
    assert np.abs(a1 - a2).max() < 1e-6 * scale


def test_linearize_rejects_non_equilibrium():
    system = stiff_source_system(PILE, 0.5)
    x = system.x0.copy()
    x[-1] += 0.1
    with pytest.raises(ModalError):
        linearize(system, x0=x)


def _pile_sweep(field, values):
    def build(v):
        return stiff_source_system(replace(PILE, **{field: v}), 0.5)
    return mode_sweep(build, values, select=pile_mode)


def test_kp3_increases_decay_rate():
    infos = _pile_sweep("kp3", np.linspace(3.0, 8.0, 6))
    re = [m.eigenvalue.real for m in infos]
    assert all(b < a for a, b in zip(re, re[1:]))


def test_ki3_increases_frequency():
    infos = _pile_sweep("ki3", np.linspace(50.0, 120.0, 6))
    f = [m.frequency for m in infos]
    assert all(b > a for a, b in zip(f, f[1:]))


def test_sweep_reports_lost_tracking():
    def build(v):
        return stiff_source_system(replace(PILE, kp3=v), 0.5)
    with pytest.raises(ModalError, match="tracking lost at value"):
        mode_sweep(build, [5.0, 5.0], select=pile_mode, mac_threshold=1.1)


def test_calibration_fixed_point():
    res = calibrate_pile(pile=PILE)
    assert res.converged
    assert res.kp3 == pytest.approx(PILE.kp3, rel=1e-3)
    assert res.ki3 == pytest.approx(PILE.ki3, rel=1e-3)


def test_calibration_from_cold_start():
    res = calibrate_pile(1.370, 0.2797)
    assert res.converged
    assert abs(res.frequency - 1.370) < 0.05 and abs(res.damping_ratio - 0.2797) < 0.02


def test_calibration_rejects_bad_targets():
    with pytest.raises(ValueError):
        calibrate_pile(0.0, 0.2)


def test_find_mode_nearest_frequency(kundur_base):
    dec = kundur_base[2]
    i = find_mode(dec, 0.65)
    assert dec.frequency_hz(i) == pytest.approx(0.65, abs=0.05)


def test_mode_json_round_trip(kundur_base, tmp_path):
    import json
    info = kundur_base[2].mode(find_mode(kundur_base[2], 0.65))
    text = info.to_json(tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    assert data == json.loads(text)
    assert set(data) == {"frequency_hz", "damping_ratio", "eigenvalue", "shape", "participation"}
    assert all(set(s) == {"state", "re", "im"} for s in data["shape"])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(0.1, 10))
def test_mac_properties(v, scale):
    u = np.array(v, dtype=complex) + 1j
    assert mac(u, u) == pytest.approx(1.0)
    assert mac(u, scale * np.exp(0.4j) * u) == pytest.approx(1.0)
    assert 0.0 <= mac(u, np.array([1.0, -2.0j])) <= 1.0 + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 50))
def test_damping_ratio_formula(a, w):
    lam = complex(a, w)
    assert damping_ratio(lam) == pytest.approx(-a / abs(lam))
    assert -1.0 <= damping_ratio(lam) <= 1.0
