"""Worked example systems, buck converter assembly, and spectra."""
from __future__ import annotations

import numpy as np
import pytest

from pni.sim import SimConfig, fit_exponential_rate, integrate
from pni.systems import (
    AffineField,
    BuckParams,
    BuckState,
    buck_dual_pi,
    buck_open_loop,
    buck_pni,
    eigenvalues,
    linearize,
    make_a1,
    make_a2,
    make_a3,
)

TABLE = BuckParams()  # benchmark parameter set


# ── example systems ──────────────────────────────────────────────────────────


def test_a1_closed_loop_matrix_and_spectrum():
    a, offset = linearize(make_a1(1.0).loop, 2)
    assert np.allclose(a, [[1.0, 1.0], [-4.0, -3.0]], atol=1e-12)
    assert np.array_equal(offset, np.zeros(2))
    assert np.allclose(eigenvalues(a), [-1.0, -1.0], atol=1e-9)


def test_a2_closed_loop_matrix_and_spectrum():
    a, _ = linearize(make_a2(1.0).loop, 2)
    assert np.allclose(a, [[0.0, 1.0], [-1.0, -2.0]], atol=1e-12)
    assert np.allclose(eigenvalues(a), [-1.0, -1.0], atol=1e-9)


def test_a3_field_value():
    assert make_a3(1.0).loop.field(np.array([1.0, -1.0]))[1] == pytest.approx(4.0)


def test_example_alpha_validation():
    with pytest.raises(ValueError):
        make_a1(0.0)


# ── eigenvalue routine ───────────────────────────────────────────────────────


def test_eigenvalues_closed_forms():
    assert np.allclose(eigenvalues(np.array([[1.0, 1.0], [-4.0, -3.0]])), [-1, -1], atol=1e-12)
    assert np.allclose(eigenvalues(np.eye(2)), [1.0, 1.0], atol=0)
    got = eigenvalues(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert np.allclose(got, [-1j, 1j], atol=1e-12)


def test_eigenvalues_match_numpy_for_larger_matrices():
    rng = np.random.default_rng(17)
    for _ in range(25):
        a = rng.uniform(-3, 3, size=(4, 4))
        got = eigenvalues(a)
        want = np.linalg.eigvals(a)
        want = want[np.lexsort((want.imag, want.real))]
        assert np.allclose(got, want, rtol=1e-7, atol=1e-7)


def test_eigenvalues_accepts_affine_field():
    field = AffineField(np.diag([-1.0, -2.0]), np.zeros(2))
    assert np.allclose(eigenvalues(field), [-2.0, -1.0])


# ── buck converter ───────────────────────────────────────────────────────────


def test_open_loop_at_rest():
    ol = buck_open_loop(TABLE)
    deriv = ol.field(np.zeros(4), v_ref=10.0, i_ref=0.0, u=0.0)
    assert deriv[1] == pytest.approx(10.0)
    assert np.allclose(deriv[[0, 2, 3]], 0.0)


def test_open_loop_time_constant():
    ol = buck_open_loop(TABLE)
    assert -ol.a[0, 0] == pytest.approx(1.0 / (18.6 * 510e-6), rel=1e-12)
    assert 1.0 / (18.6 * 510e-6) == pytest.approx(105.4, rel=1e-3)


def test_open_loop_equilibrium_forces_reference_tracking():
    # zeta1dot = 0 requires x1 = v_ref regardless of the other states
    ol = buck_open_loop(TABLE)
    row = ol.a[1]
    assert np.array_equal(row, [-1.0, 0.0, 0.0, 0.0])
    assert np.array_equal(ol.b_inputs[1], [1.0, 0.0, 0.0])


def test_dual_pi_substituted_rows():
    p = TABLE
    loop = buck_dual_pi(p)
    a = loop.field.a
    # inner integral row: i_ref - x2
    assert np.allclose(a[3], [-p.kp1, p.ki1, -1.0, 0.0])
    assert loop.field.b[3] == pytest.approx(p.kp1 * p.v_ref)
    # current row picks up 1/l through the duty path
    assert a[2, 0] == pytest.approx(-(1.0 + p.kp1 * p.kp2) / p.l)
    assert a[2, 1] == pytest.approx(p.kp2 * p.ki1 / p.l)
    assert a[2, 2] == pytest.approx(-p.kp2 / p.l)
    assert a[2, 3] == pytest.approx(p.ki2 / p.l)


def test_dual_pi_equilibrium_tracks_reference():
    loop = buck_dual_pi(TABLE)
    eq = loop.field.equilibrium()
    assert eq[0] == pytest.approx(TABLE.v_ref, rel=1e-12)
    assert np.allclose(loop.field(0.0, eq), np.zeros(4), atol=1e-9)


def test_dual_pi_hurwitz_with_benchmark_gains():
    eig = eigenvalues(buck_dual_pi(TABLE).field)
    assert np.all(eig.real < 0)


def test_pni_replaced_current_row():
    p = BuckParams(ki1=100.0)
    loop = buck_pni(p)
    a = loop.field.a
    rc = p.r_load * p.c
    assert a[2, 0] == pytest.approx(-p.alpha * p.kp1 + p.kp1 / rc - p.ki1)
    assert a[2, 1] == pytest.approx(p.alpha * p.ki1)
    assert a[2, 2] == pytest.approx(-p.kp1 / p.c - p.alpha)
    assert a[2, 3] == 0.0
    assert loop.field.b[2] == pytest.approx((p.ki1 + p.alpha * p.kp1) * p.v_ref)
    # outer rows and the inner integral row are untouched
    assert np.allclose(a[3], [-p.kp1, p.ki1, -1.0, 0.0])


def test_pni_quasi_static_fiber_when_all_gains_vanish():
    p = BuckParams(kp1=0.0, ki1=0.0, alpha=0.0)
    loop = buck_pni(p)
    assert np.allclose(loop.field.a[2], np.zeros(4))
    assert loop.field.b[2] == 0.0


def test_pni_residual_rate_identity_in_matrix_form():
    # current row minus the pathway rows equals -alpha times the residual row
    p = BuckParams(ki1=100.0)
    a = buck_pni(p).field.a
    pathway = -p.kp1 * a[0] + p.ki1 * a[1]
    m_row = np.array([p.kp1, -p.ki1, 1.0, 0.0])
    assert np.allclose(a[2] - pathway, -p.alpha * m_row, atol=1e-9)


def test_pni_regulation_block_hurwitz_and_structural_zero():
    loop = buck_pni(BuckParams(ki1=100.0))
    block_eig = eigenvalues(loop.regulation_block)
    assert np.all(block_eig.real < 0)
    # one eigenvalue sits exactly at -alpha (the push-term mode)
    assert np.min(np.abs(block_eig.real + 700.0)) < 1e-6
    full_eig = eigenvalues(loop.field)
    assert np.min(np.abs(full_eig)) < 1e-9  # decoupled integral state


def test_pni_equilibrium_tracks_reference():
    loop = buck_pni(BuckParams(ki1=100.0))
    eq = loop.field.equilibrium()
    assert eq[0] == pytest.approx(10.0, rel=1e-9)


def test_pni_residual_decays_at_alpha():
    p = BuckParams(ki1=100.0, alpha=700.0)
    loop = buck_pni(p)
    cfg = SimConfig(t_end=0.05, step=1e-6, initial_state=np.zeros(4), record_every=10)
    traj = integrate(loop.field, cfg, residual_fn=loop.residual)
    rate = fit_exponential_rate(traj.times, traj.residuals)
    assert rate == pytest.approx(p.alpha, rel=0.05)


def test_buck_controls_are_consistent_with_plant():
    # reconstructed duty input must reproduce x2dot through the open-loop law
    for loop in (buck_dual_pi(TABLE), buck_pni(BuckParams(ki1=100.0))):
        rng = np.random.default_rng(23)
        for state in rng.uniform(-1.0, 1.0, size=(10, 4)):
            u = loop.control(state)
            x2dot = loop.field(0.0, state)[2]
            assert x2dot == pytest.approx((-state[0] + u) / TABLE.l, rel=1e-9)


def test_params_validation():
    with pytest.raises(ValueError):
        BuckParams(r_load=0.0)
    with pytest.raises(ValueError):
        BuckParams(c=-1e-6)
    with pytest.raises(ValueError):
        BuckParams(ki2=float("nan"))


def test_buck_state_round_trip():
    s = BuckState(x1=10.0, zeta1=0.1, x2=0.5, zeta2=0.01)
    assert BuckState.from_array(s.as_array()) == s
