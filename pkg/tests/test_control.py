import numpy as np
import pytest

from mccfusion import (AvailabilityMask, ConvergenceError, GainCache, InvalidParameterError,
                       LqWeights, QuadrotorParams, augment, build_continuous_model,
                       build_selection_matrix, bumpless_integral, control_law, discretize,
                       integral_update, lq_gain, solve_dare, step_linear_plant)
from mccfusion.control import E_CAM, E_UWB, dare_residual

from oracles import golden_ratio


@pytest.fixture(scope="module")
def dmodel():
    p = QuadrotorParams()
    return discretize(build_continuous_model(p), p.dt)


@pytest.fixture(scope="module")
def solved(dmodel):
    aug = augment(dmodel, E_UWB)
    w = LqWeights.from_diagonals()
    S = solve_dare(aug.Phi, aug.Gamma, w.Q, w.R)
    return aug, w, S, lq_gain(S, aug.Phi, aug.Gamma, w.R)


# selection matrix

def test_uwb_selected_when_present():
    np.testing.assert_array_equal(build_selection_matrix(AvailabilityMask(True, True)),
                                  np.hstack([np.eye(3), np.zeros((3, 6))]))


def test_camera_selected_without_uwb():
    np.testing.assert_array_equal(build_selection_matrix(AvailabilityMask(False, True)),
                                  np.hstack([np.zeros((3, 3)), np.eye(3), np.zeros((3, 3))]))


def test_selection_held_when_both_absent():
    E = build_selection_matrix(AvailabilityMask(False, False), previous=E_CAM)
    np.testing.assert_array_equal(E, E_CAM)
    E[0, 0] = 7.0
    assert E_CAM[0, 0] == 0.0  # callers get a copy


# augmentation

def test_augmented_blocks(dmodel):
    aug = augment(dmodel, E_CAM)
    np.testing.assert_array_equal(aug.Phi[12:, :12], -E_CAM @ dmodel.C)
    np.testing.assert_array_equal(aug.Phi[12:, 12:], np.eye(3))
    assert not aug.Gamma[12:].any()
    assert not aug.Ibar[:12].any()
    np.testing.assert_array_equal(aug.Ibar[12:], np.eye(3))
    np.testing.assert_array_equal(aug.Cbar, np.hstack([dmodel.C, np.zeros((9, 3))]))
    np.testing.assert_array_equal(aug.Ebar[12:, 12:], -E_CAM)


def test_augment_rejects_bad_selection(dmodel):
    with pytest.raises(InvalidParameterError):
        augment(dmodel, np.eye(3))


# DARE

def test_scalar_dare_golden_ratio():
    S = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]], tol=1e-12)
    assert abs(S[0, 0] - golden_ratio()) < 1e-8


def test_scalar_gain():
    S = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]], tol=1e-12)
    L = lq_gain(S, np.eye(1), np.eye(1), np.eye(1)).L
    phi = golden_ratio()
    assert abs(L[0, 0] - phi / (phi + 1.0)) < 1e-8
    assert abs(L[0, 0] - 0.618034) < 1e-6


def test_zero_cost_stable_system():
    Phi = np.diag([0.5, -0.3])
    S = solve_dare(Phi, np.eye(2), np.zeros((2, 2)), np.eye(2))
    assert np.max(np.abs(S)) < 1e-9


def test_full_dare_residual_and_psd(solved):
    aug, w, S, gain = solved
    assert dare_residual(S, aug.Phi, aug.Gamma, w.Q, w.R) < 1e-8
    assert np.allclose(S, S.T)
    assert np.linalg.eigvalsh(S).min() > -1e-10


@pytest.mark.parametrize("E", [E_UWB, E_CAM])
@pytest.mark.parametrize("weights", [LqWeights.from_diagonals(),
                                     LqWeights.from_diagonals(10.0, 1.0, 0.1, 0.1, 1.0, (0.1, 1, 1, 1)),
                                     LqWeights.from_diagonals(1.0, 10.0, 1.0, 1.0, 0.01, (1, 1, 1, 1))])
def test_closed_loop_is_stable(dmodel, E, weights):
    aug = augment(dmodel, E)
    S = solve_dare(aug.Phi, aug.Gamma, weights.Q, weights.R)
    assert dare_residual(S, aug.Phi, aug.Gamma, weights.Q, weights.R) < 1e-8
    gain = lq_gain(S, aug.Phi, aug.Gamma, weights.R)
    rho = np.max(np.abs(np.linalg.eigvals(aug.Phi - aug.Gamma @ gain.L)))
    assert rho < 1.0
    assert gain.spectral_radius == pytest.approx(rho)


def test_expensive_control_switches_actuation_off():
    # a stable plant, so S stays bounded as R grows
    Phi = np.diag([0.9, 0.5])
    Gamma = np.eye(2)
    R = 1e9 * np.eye(2)
    S = solve_dare(Phi, Gamma, np.eye(2), R)
    assert np.linalg.norm(lq_gain(S, Phi, Gamma, R).L) < 1e-6


def test_unstabilizable_pair_rejected():
    with pytest.raises(InvalidParameterError):
        solve_dare([[1.5]], [[0.0]], [[1.0]], [[1.0]])


def test_dare_reports_non_convergence(solved):
    aug, w, _, _ = solved
    with pytest.raises(ConvergenceError) as info:
        solve_dare(aug.Phi, aug.Gamma, w.Q, w.R, max_iter=3)
    assert info.value.iterations == 3


def test_gain_cache_solves_each_selection_once(dmodel):
    cache = GainCache(dmodel, LqWeights.from_diagonals())
    a = cache.get(E_UWB)
    b = cache.get(E_UWB.copy())
    cache.get(E_CAM)
    assert a is b
    assert len(cache) == 2


# integral and control law

def test_integral_unchanged_at_zero_error():
    y = np.arange(9.0)
    i = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(integral_update(i, E_UWB @ y, y, E_UWB), i)


def test_integral_accumulates_reference():
    np.testing.assert_array_equal(integral_update(np.zeros(3), [1.0, 0, 0], np.zeros(9), E_UWB),
                                  [1.0, 0, 0])


def test_integral_grows_linearly_with_persistent_error():
    i = np.zeros(3)
    e = np.array([0.1, -0.2, 0.05])
    for k in range(1, 11):
        i = integral_update(i, e, np.zeros(9), E_CAM)
        np.testing.assert_allclose(i, k * e, rtol=1e-12)


def test_zero_error_gives_hover(solved):
    gain = solved[3]
    p = QuadrotorParams()
    np.testing.assert_array_equal(control_law(gain, np.zeros(12), np.zeros(3), p.hover_input()),
                                  p.hover_input())


def test_below_reference_raises_thrust(solved):
    gain = solved[3]
    hover = QuadrotorParams().hover_input()
    x = np.zeros(12)
    x[2] = -0.1  # below the hover point
    assert control_law(gain, x, np.zeros(3), hover)[0] > hover[0]


def test_control_is_linear_in_error(solved):
    gain = solved[3]
    hover = QuadrotorParams().hover_input()
    rng = np.random.default_rng(0)
    x, i = 1e-3 * rng.standard_normal(12), 1e-3 * rng.standard_normal(3)
    d1 = control_law(gain, x, i, hover) - hover
    d2 = control_law(gain, 2 * x, 2 * i, hover) - hover
    np.testing.assert_allclose(d2, 2 * d1, rtol=1e-12, atol=1e-15)


def test_thrust_never_negative(solved):
    gain = solved[3]
    x = np.zeros(12)
    x[2] = 1e4
    assert control_law(gain, x, np.zeros(3), QuadrotorParams().hover_input())[0] == 0.0


def test_control_accepts_augmented_estimate(solved):
    gain = solved[3]
    hover = QuadrotorParams().hover_input()
    x15 = np.arange(15.0) * 1e-3
    np.testing.assert_array_equal(control_law(gain, x15, np.zeros(3), hover),
                                  control_law(gain, x15[:12], np.zeros(3), hover))


def test_bumpless_integral_holds_hover(solved):
    gain = solved[3]
    hover = QuadrotorParams().hover_input()
    x = np.zeros(12)
    x[0:3] = (0.0, 0.0, 1.0)
    i = bumpless_integral(gain, x)
    np.testing.assert_allclose(control_law(gain, x, i, hover), hover, atol=1e-9)


def test_step_reference_has_zero_steady_state_error(dmodel, solved):
    gain = solved[3]
    hover = QuadrotorParams().hover_input()
    x, i = np.zeros(12), np.zeros(3)
    r = np.array([1.0, 0.0, 0.0])
    for _ in range(2000):
        u = control_law(gain, x, i, hover)
        i = integral_update(i, r, dmodel.C @ x, E_UWB)
        x = step_linear_plant(x, u - hover, dmodel)
    assert abs(x[0] - r[0]) < 1e-6
    assert np.max(np.abs(x[:3] - r)) < 1e-6


def test_reselection_keeps_dimensions(dmodel):
    cache = GainCache(dmodel, LqWeights.from_diagonals())
    hover = QuadrotorParams().hover_input()
    rng = np.random.default_rng(1)
    E = E_UWB
    for _ in range(50):
        mask = AvailabilityMask(bool(rng.random() < 0.3), bool(rng.random() < 0.3))
        E = build_selection_matrix(mask, E)
        _, gain = cache.get(E)
        u = control_law(gain, 1e-2 * rng.standard_normal(12), 1e-2 * rng.standard_normal(3), hover)
        assert u.shape == (4,) and np.all(np.isfinite(u))
    assert len(cache) <= 2
