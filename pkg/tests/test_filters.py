import math
from dataclasses import replace

import numpy as np
import pytest

from mccfusion import (AvailabilityMask, FilterState, InvalidParameterError, LqWeights, MccConfig,
                       NoiseCovariances, QuadrotorParams, ScenarioConfig, SensorNoise,
                       assemble_frame, augment, build_continuous_model, discretize,
                       gaussian_kernel, impute, init_filter, kf_step, mcckf_step, run_episode)
from mccfusion.control import E_UWB, AugmentedModel
from mccfusion.simharness import episode_rmse

from oracles import scalar_kalman_update

FULL = AvailabilityMask(True, True)


@pytest.fixture(scope="module")
def aug():
    p = QuadrotorParams()
    return augment(discretize(build_continuous_model(p), p.dt), E_UWB)


@pytest.fixture(scope="module")
def cov():
    return ScenarioConfig().covariances()


def frame_from(y, mask=FULL, k=0):
    y = np.asarray(y, dtype=float)
    return assemble_frame(y[6:9] if mask.imu else None, y[0:3] if mask.uwb else None,
                          y[3:6] if mask.cam else None, mask, k)


def random_state(rng, aug, p0=0.1):
    x = 0.1 * rng.standard_normal(15)
    return init_filter(x, p0, aug.Cbar)


# kernel and imputation

def test_kernel_identity_and_e_inverse():
    assert gaussian_kernel(0.0, 3.0) == 1.0
    assert gaussian_kernel(2 * 3.0 ** 2, 3.0) == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert gaussian_kernel(2 * 3.0 ** 2, 3.0) == pytest.approx(0.367879, abs=1e-6)


def test_kernel_wide_limit():
    assert gaussian_kernel(1e6, 1e12) == pytest.approx(1.0, abs=1e-12)


def test_full_frame_imputes_nothing(aug):
    rng = np.random.default_rng(0)
    y = rng.standard_normal(9)
    st = random_state(rng, aug)
    for strategy in ("previous", "expected"):
        np.testing.assert_array_equal(impute(frame_from(y), st, aug.Cbar, strategy), y)


def test_previous_strategy_reuses_last_camera_block(aug):
    rng = np.random.default_rng(1)
    st = replace(random_state(rng, aug), y_prev=rng.standard_normal(9))
    y = rng.standard_normal(9)
    out = impute(frame_from(y, AvailabilityMask(True, False)), st, aug.Cbar, "previous")
    np.testing.assert_array_equal(out[3:6], st.y_prev[3:6])
    np.testing.assert_array_equal(out[0:3], y[0:3])
    np.testing.assert_array_equal(out[6:9], y[6:9])


def test_expected_strategy_uses_predicted_uwb(aug):
    rng = np.random.default_rng(2)
    st = random_state(rng, aug)
    y = rng.standard_normal(9)
    out = impute(frame_from(y, AvailabilityMask(False, True)), st, aug.Cbar, "expected")
    np.testing.assert_array_equal(out[0:3], (aug.Cbar @ st.x)[0:3])


def test_unknown_strategy_rejected(aug):
    st = random_state(np.random.default_rng(0), aug)
    with pytest.raises(InvalidParameterError):
        impute(frame_from(np.zeros(9)), st, aug.Cbar, "zero")
    with pytest.raises(InvalidParameterError):
        MccConfig(strategy="zero")


@pytest.mark.parametrize("kw", [dict(sigma=0.0), dict(sigma=-1.0), dict(floor=0.0)])
def test_invalid_mcc_config(kw):
    with pytest.raises(InvalidParameterError):
        MccConfig(**kw)


# Kalman filter

def test_kf_near_perfect_measurement(aug):
    eps = 1e-9
    W = np.zeros((12, 12))
    c = NoiseCovariances(W=W, V=eps * np.eye(9))
    rng = np.random.default_rng(3)
    truth = 0.05 * rng.standard_normal(15)
    st = init_filter(truth + 0.01 * rng.standard_normal(15), 0.1, aug.Cbar)
    y = aug.Cbar @ truth
    nxt = kf_step(st, aug, np.zeros(4), frame_from(y), c)
    assert np.max(np.abs(aug.Cbar @ nxt.x_filt - y)) < 10 * eps


def test_kf_without_measurements_is_pure_prediction(aug, cov):
    rng = np.random.default_rng(4)
    st = random_state(rng, aug)
    u, r = rng.standard_normal(4), rng.standard_normal(3)
    none = AvailabilityMask(False, False, False)
    nxt = kf_step(st, aug, u, frame_from(np.zeros(9), none), cov, r=r)
    Qa = aug.Ebar @ cov.V1 @ aug.Ebar.T
    np.testing.assert_array_equal(nxt.x, aug.Phi @ st.x + aug.Gamma @ u + aug.Ibar @ r)
    P = aug.Phi @ st.P @ aug.Phi.T + Qa
    np.testing.assert_array_equal(nxt.P, 0.5 * (P + P.T))


def test_kf_scalar_riccati_update():
    # nine independent scalar channels Phi=1, H=1, W=0, V=1, P0=1
    n = 15
    model = AugmentedModel(Phi=np.eye(n), Gamma=np.zeros((n, 4)), Ebar=np.zeros((n, 21)),
                           Ibar=np.zeros((n, 3)), Cbar=np.hstack([np.eye(9), np.zeros((9, 6))]),
                           E=E_UWB)
    c = NoiseCovariances(W=np.zeros((12, 12)), V=np.eye(9))
    st = init_filter(np.zeros(n), 1.0, model.Cbar)
    nxt = kf_step(st, model, np.zeros(4), frame_from(np.ones(9)), c)
    expected = scalar_kalman_update(1.0, 1.0, 1.0)
    assert expected == 0.5
    np.testing.assert_allclose(np.diag(nxt.P)[:9], expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(np.diag(nxt.P)[9:], 1.0)


def test_kf_imputation_strategies_are_available(aug, cov):
    rng = np.random.default_rng(5)
    st = random_state(rng, aug)
    f = frame_from(rng.standard_normal(9), AvailabilityMask(False, True))
    a = kf_step(st, aug, np.zeros(4), f, cov, strategy="expected")
    b = kf_step(st, aug, np.zeros(4), f, cov)
    assert not np.allclose(a.P, b.P)  # imputed rows count as information, deleted rows do not


# MCC-KF

def explicit_kf_gain(aug, cov, P):
    """Predictor-form gain for correlated noise, written out longhand."""
    H = aug.Cbar
    M = aug.Ebar @ cov.V12
    return (aug.Phi @ P @ H.T + M) @ np.linalg.inv(H @ P @ H.T + cov.V2)


def test_wide_kernel_matches_kf_single_steps(aug, cov):
    rng = np.random.default_rng(6)
    wide = MccConfig(sigma=1e12)
    for trial in range(20):
        st = random_state(rng, aug)
        st = replace(st, correction=0.01 * rng.standard_normal(15))
        mask = AvailabilityMask(bool(trial % 2), bool(trial % 3))
        f = frame_from(rng.standard_normal(9) * 0.1, mask)
        u, r = rng.standard_normal(4), rng.standard_normal(3)
        a = kf_step(st, aug, u, f, cov, r=r)
        b = mcckf_step(st, aug, u, f, cov, wide, r=r)
        np.testing.assert_allclose(b.x, a.x, rtol=0, atol=1e-10)
        np.testing.assert_allclose(b.P, a.P, rtol=0, atol=1e-10)


def test_full_mask_gain_is_the_kf_gain_in_the_wide_limit(aug, cov):
    rng = np.random.default_rng(7)
    st = random_state(rng, aug)
    nxt = mcckf_step(st, aug, np.zeros(4), frame_from(rng.standard_normal(9)), cov,
                     MccConfig(sigma=1e12))
    np.testing.assert_allclose(nxt.diag["gain"], explicit_kf_gain(aug, cov, st.P), atol=1e-10)


def test_zero_innovation_is_pure_prediction(aug, cov):
    rng = np.random.default_rng(8)
    st = random_state(rng, aug)
    u, r = rng.standard_normal(4), rng.standard_normal(3)
    nxt = mcckf_step(st, aug, u, frame_from(aug.Cbar @ st.x), cov, r=r)
    assert nxt.diag["kernel_num"] == 1.0
    np.testing.assert_allclose(nxt.x, aug.Phi @ st.x + aug.Gamma @ u + aug.Ibar @ r,
                               rtol=0, atol=1e-15)


def outlier_step(aug, cov, sigma):
    """One step with an innovation of whitened squared norm 50 sigma^2."""
    st = init_filter(np.zeros(15), 0.1, aug.Cbar)  # zero residual: denominator kernel is 1
    direction = np.zeros(9)
    direction[3] = 1.0  # camera x
    v = direction * math.sqrt(50.0) * sigma * math.sqrt(cov.V2[3, 3])
    nxt = mcckf_step(st, aug, np.zeros(4), frame_from(v), cov, MccConfig(sigma=sigma))
    assert nxt.diag["innovation"] @ np.linalg.solve(cov.V2, nxt.diag["innovation"]) == \
        pytest.approx(50.0 * sigma ** 2)
    return st, nxt


def test_outlier_collapses_kernel_ratio_and_gain(aug, cov):
    st, nxt = outlier_step(aug, cov, 5.0)
    c = nxt.diag["kernel_ratio"]
    assert nxt.diag["kernel_den"] == 1.0
    assert c <= math.exp(-25.0) * (1 + 1e-12)
    assert c == pytest.approx(math.exp(-25.0), rel=1e-9)
    K_kf = explicit_kf_gain(aug, cov, st.P)
    assert np.linalg.norm(nxt.diag["gain"]) < np.linalg.norm(K_kf)


def test_gain_is_monotone_in_sigma(aug, cov):
    st = init_filter(np.zeros(15), 0.1, aug.Cbar)
    y = np.zeros(9)
    y[3] = 1.0  # a 50-sigma camera jump at the default noise level
    norms = [np.linalg.norm(mcckf_step(st, aug, np.zeros(4), frame_from(y), cov,
                                       MccConfig(sigma=s)).diag["gain"])
             for s in (1.0, 5.0, 10.0, 100.0)]
    assert all(b >= a for a, b in zip(norms, norms[1:]))
    assert norms[-1] > norms[0]


def test_residual_feeds_denominator(aug, cov):
    rng = np.random.default_rng(9)
    st = random_state(rng, aug)
    f = frame_from(aug.Cbar @ st.x + 0.01 * rng.standard_normal(9))
    big = replace(st, correction=np.full(15, 0.5))
    a = mcckf_step(st, aug, np.zeros(4), f, cov)
    b = mcckf_step(big, aug, np.zeros(4), f, cov)
    assert b.diag["kernel_den"] < a.diag["kernel_den"]
    assert b.diag["kernel_ratio"] > a.diag["kernel_ratio"]


def test_denominator_floor_clamps(aug, cov):
    st = replace(init_filter(np.zeros(15), 1e-6, aug.Cbar), correction=np.full(15, 10.0))
    nxt = mcckf_step(st, aug, np.zeros(4), frame_from(np.zeros(9)), cov, MccConfig(floor=1e-12))
    assert nxt.diag["clamped"]
    assert nxt.diag["kernel_ratio"] <= 1e12
    assert np.isfinite(nxt.x).all()


def _random_walk(step, aug, cov, rng, steps, **kw):
    st = random_state(rng, aug)
    truth = st.x.copy()
    worst_eig, worst_asym = np.inf, 0.0
    for k in range(steps):
        mask = AvailabilityMask(bool(rng.random() < 0.5), bool(rng.random() < 0.5))
        y = aug.Cbar @ truth + 0.05 * rng.standard_normal(9)
        if rng.random() < 0.05:
            y[3:6] += rng.standard_normal(3)  # occasional outlier
        st = step(st, aug, 0.1 * rng.standard_normal(4), frame_from(y, mask, k), cov, **kw)
        truth = st.x + 0.01 * rng.standard_normal(15)
        worst_eig = min(worst_eig, np.linalg.eigvalsh(st.P).min())
        worst_asym = max(worst_asym, np.max(np.abs(st.P - st.P.T)))
    return worst_eig, worst_asym


@pytest.mark.parametrize("which", ["kf", "mcckf", "mcckf2"])
def test_covariance_stays_symmetric_psd(aug, cov, which):
    rng = np.random.default_rng({"kf": 1, "mcckf": 2, "mcckf2": 3}[which])
    if which == "kf":
        eig, asym = _random_walk(kf_step, aug, cov, rng, 10_000)
    else:
        strategy = "previous" if which == "mcckf" else "expected"
        eig, asym = _random_walk(mcckf_step, aug, cov, rng, 10_000,
                                 mcc=MccConfig(strategy=strategy))
    assert eig >= -1e-8
    assert asym == 0.0


def test_non_finite_covariance_raises(aug, cov):
    from mccfusion import NumericalError
    st = init_filter(np.zeros(15), 0.1, aug.Cbar)
    bad = replace(st, P=np.full((15, 15), np.nan))
    with pytest.raises(NumericalError):
        kf_step(bad, aug, np.zeros(4), frame_from(np.zeros(9)), cov)


# closed-loop properties

def test_strategies_identical_under_full_availability():
    cfg = ScenarioConfig(scenario=1, steps=400)
    a = run_episode(replace(cfg, filter="mcckf"), 3)
    b = run_episode(replace(cfg, filter="mcckf2"), 3)
    assert np.array_equal(a.estimate, b.estimate)
    assert np.array_equal(a.truth, b.truth)


def test_kernel_ratio_bounded_and_finite():
    cfg = ScenarioConfig(scenario=2, steps=1500, filter="mcckf")
    log = run_episode(cfg, 0)
    c = log.kernel_ratio
    assert np.all(np.isfinite(c))
    assert np.all(c > 0) and np.all(c <= 1.0 / cfg.mcc.floor)


def test_outlier_robustness_on_linear_plant():
    noise = SensorNoise(camera_outlier_prob=0.2, camera_outlier_scale=100.0)
    wins = 0
    for j in range(20):
        err = {}
        for f in ("kf", "mcckf"):
            cfg = ScenarioConfig(plant="linear", noise=noise, filter=f, steps=1500)
            ex, ey = episode_rmse(run_episode(cfg, j), cfg.burn_in)
            err[f] = math.hypot(ex, ey)
        wins += err["mcckf"] < err["kf"]
    assert wins >= 18
