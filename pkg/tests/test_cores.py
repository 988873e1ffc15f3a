import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_psd
from gckf.cores import (
    ObservationModel,
    ProcessModel,
    UkfParams,
    ekf_step,
    ekf_update,
    kf_predict,
    kf_update,
    predict,
    sigma_points,
    ukf_step,
    ukf_update,
    update,
)
from gckf.errors import ArgumentError, CapabilityError, NumericalError
from gckf.gaussian import GaussianBelief
from gckf.models import BurgersConfig, HeatConfig, burgers_model, burgers_step, heat_model

seeds = st.integers(0, 2**32 - 1)


def _quadratic():
    return ProcessModel(1, 0, step=lambda x, u: x**2, jacobian=lambda x, u: np.diag(2 * x))


# --- KF -------------------------------------------------------------------------


def test_kf_identity_no_noise(rng):
    b = GaussianBelief(rng.standard_normal(3), random_psd(rng, 3))
    out = kf_predict(b, ProcessModel.linear(np.eye(3)), np.zeros(0), np.zeros((3, 3)))
    np.testing.assert_array_equal(out.mean, b.mean)
    np.testing.assert_allclose(out.cov, b.cov, atol=1e-15)


def test_kf_scalar_predict():
    out = kf_predict(GaussianBelief([1.0], [[4.0]]), ProcessModel.linear(np.array([[0.5]])), [], [[1.0]])
    np.testing.assert_allclose(out.cov, [[2.0]])
    np.testing.assert_allclose(out.mean, [0.5])


def test_kf_predict_dimension_mismatch():
    b = GaussianBelief(np.zeros(2), np.eye(2))
    with pytest.raises(ArgumentError):
        kf_predict(b, ProcessModel.linear(np.eye(3)), [], np.eye(3))
    with pytest.raises(ArgumentError):
        kf_predict(b, ProcessModel.linear(np.eye(2), np.ones((2, 1))), [1.0, 2.0], np.eye(2))
    with pytest.raises(CapabilityError):
        kf_predict(b, _quadratic(), [], np.eye(2))


def test_kf_heat_moves_toward_boundary_profile():
    cfg = HeatConfig(l=15.0, nos=20, pf=100.0)
    pm = heat_model(cfg)
    b = GaussianBelief(np.full(20, 23.0), np.eye(20))
    u = np.array([0.0, 400.0])
    prev = b.mean
    for _ in range(50):
        b = kf_predict(b, pm, u, np.zeros((20, 20)))
        # right end heats, left end cools, monotonically in time
        assert b.mean[-1] > prev[-1] and b.mean[0] < prev[0]
        prev = b.mean


def test_kf_update_scalar():
    out = kf_update(GaussianBelief([0.0], [[1.0]]), ObservationModel.linear([[1.0]], [[1.0]]), [1.0])
    np.testing.assert_allclose(out.mean, [0.5])
    np.testing.assert_allclose(out.cov, [[0.5]])


def test_kf_update_uninformative(rng):
    b = GaussianBelief(rng.standard_normal(3), random_psd(rng, 3))
    out = kf_update(b, ObservationModel.linear(np.eye(3), 1e12 * np.eye(3)), np.ones(3))
    np.testing.assert_allclose(out.mean, b.mean, atol=1e-6)
    np.testing.assert_allclose(out.cov, b.cov, atol=1e-6)


def test_kf_update_exact_observation(rng):
    b = GaussianBelief(rng.standard_normal(3), random_psd(rng, 3, jitter=0.1))
    z = np.array([1.0, -2.0, 0.5])
    out = kf_update(b, ObservationModel.linear(np.eye(3), 1e-12 * np.eye(3)), z)
    np.testing.assert_allclose(out.mean, z, atol=1e-9)


def test_kf_update_singular_innovation():
    b = GaussianBelief(np.zeros(2), np.diag([1.0, 0.0]))
    om = ObservationModel.linear(np.array([[0.0, 1.0]]), [[0.0]])
    with pytest.raises(NumericalError):
        kf_update(b, om, [0.0])


def test_kf_update_matches_textbook_form(rng):
    P = random_psd(rng, 4, jitter=0.1)
    H = rng.standard_normal((2, 4))
    R = np.diag([0.3, 0.7])
    b = GaussianBelief(rng.standard_normal(4), P)
    z = rng.standard_normal(2)
    out = kf_update(b, ObservationModel.linear(H, R), z)
    K = P @ H.T @ np.linalg.inv(H @ P @ H.T + R)
    np.testing.assert_allclose(out.mean, b.mean + K @ (z - H @ b.mean), atol=1e-12)
    np.testing.assert_allclose(out.cov, (np.eye(4) - K @ H) @ P, atol=1e-12)


def test_kf_replicate_means(rng):
    P = random_psd(rng, 3)
    pm = ProcessModel.linear(rng.standard_normal((3, 3)), rng.standard_normal((3, 1)))
    means = rng.standard_normal((3, 4))
    z = rng.standard_normal((2, 4))
    om = ObservationModel.select([0, 2], 3, 0.5)
    batch = kf_update(kf_predict(GaussianBelief(means, P), pm, [1.0], np.eye(3)), om, z)
    for r in range(4):
        one = kf_update(kf_predict(GaussianBelief(means[:, r], P), pm, [1.0], np.eye(3)), om, z[:, r])
        np.testing.assert_allclose(batch.mean[:, r], one.mean, atol=1e-13)
        np.testing.assert_allclose(batch.cov, one.cov, atol=1e-13)


# --- EKF ------------------------------------------------------------------------


def test_ekf_equals_kf_on_linear(rng):
    F = rng.standard_normal((3, 3))
    pm = ProcessModel.linear(F, np.ones((3, 1)))
    b = GaussianBelief(rng.standard_normal(3), random_psd(rng, 3))
    Q = 0.1 * np.eye(3)
    a, c = ekf_step(b, pm, [2.0], Q), kf_predict(b, pm, [2.0], Q)
    np.testing.assert_allclose(a.mean, c.mean, atol=1e-12)
    np.testing.assert_allclose(a.cov, c.cov, atol=1e-12)
    om = ObservationModel.linear(rng.standard_normal((2, 3)), np.eye(2))
    np.testing.assert_allclose(ekf_update(b, om, [1.0, 0.0]).cov, kf_update(b, om, [1.0, 0.0]).cov, atol=1e-12)


def test_ekf_burgers_one_cell_jacobian_vs_finite_difference():
    cfg = BurgersConfig(nos=1, length=0.1, pf=100.0)
    pm = burgers_model(cfg)
    r = cfg.dt / cfg.dx
    for x in (0.3, 1.2, 2.0):
        # f(x) = x - r x^2 / 2 with zero inflow
        np.testing.assert_allclose(pm.step(np.array([x]), [0.0]), [x - r * x * x / 2], rtol=1e-14)
        h = 1e-6
        fd = (pm.step(np.array([x + h]), [0.0]) - pm.step(np.array([x - h]), [0.0])) / (2 * h)
        np.testing.assert_allclose(pm.jacobian(np.array([x]), [0.0]), [fd], rtol=1e-6)


@given(seeds)
def test_ekf_burgers_jacobian_vs_finite_difference(seed):
    rng = np.random.default_rng(seed)
    cfg = BurgersConfig(nos=8)
    pm = burgers_model(cfg)
    x = 1.0 + 0.5 * rng.random(8)
    h = 1e-6
    J = pm.jacobian(x, [1.0])
    fd = np.column_stack([
        (pm.step(x + h * e, [1.0]) - pm.step(x - h * e, [1.0])) / (2 * h) for e in np.eye(8)
    ])
    np.testing.assert_allclose(J, fd, rtol=1e-4, atol=1e-9)


def test_ekf_zero_prior_gives_q():
    out = ekf_step(GaussianBelief([1.0], [[0.0]]), _quadratic(), [], [[0.3]])
    np.testing.assert_allclose(out.cov, [[0.3]])
    np.testing.assert_allclose(out.mean, [1.0])


def test_ekf_needs_jacobian():
    pm = ProcessModel(1, 0, step=lambda x, u: x)
    with pytest.raises(CapabilityError):
        ekf_step(GaussianBelief([0.0], [[1.0]]), pm, [], [[0.0]])
    with pytest.raises(CapabilityError):
        ekf_update(GaussianBelief([0.0], [[1.0]]), ObservationModel(h=lambda x: x, R=np.eye(1)), [0.0])


# --- UKF ------------------------------------------------------------------------


@given(seeds, st.integers(1, 6))
def test_ukf_exact_on_linear(seed, n):
    rng = np.random.default_rng(seed)
    pm = ProcessModel.linear(rng.standard_normal((n, n)))
    b = GaussianBelief(rng.standard_normal(n), random_psd(rng, n))
    Q = 0.2 * np.eye(n)
    u, k = ukf_step(b, pm, [], Q), kf_predict(b, pm, [], Q)
    scale = max(1.0, np.abs(k.cov).max())
    np.testing.assert_allclose(u.mean, k.mean, atol=1e-8 * scale)
    np.testing.assert_allclose(u.cov, k.cov, atol=1e-8 * scale)
    om = ObservationModel.linear(rng.standard_normal((1, n)), [[0.5]])
    np.testing.assert_allclose(ukf_update(b, om, [0.3]).cov, kf_update(b, om, [0.3]).cov, atol=1e-8 * scale)


def test_ukf_quadratic_mean():
    out = ukf_step(GaussianBelief([0.0], [[1.0]]), _quadratic(), [], [[0.0]])
    np.testing.assert_allclose(out.mean, [1.0], atol=1e-12)


def test_ukf_reconstructs_prior(rng):
    b = GaussianBelief(rng.standard_normal(4), random_psd(rng, 4))
    out = ukf_step(b, ProcessModel(4, 0, step=lambda x, u: x), [], np.zeros((4, 4)))
    np.testing.assert_allclose(out.mean, b.mean, atol=1e-9)
    np.testing.assert_allclose(out.cov, b.cov, atol=1e-9)


@given(st.floats(1e-3, 1.0), st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(1, 20))
def test_ukf_mean_weights_sum_to_one(a, beta, kappa, n):
    wm, wc, c = UkfParams(a, beta, kappa).weights(n)
    assert c > 0
    assert abs(wm.sum() - 1.0) < 1e-9 * max(1.0, np.abs(wm).max())


def test_ukf_bad_spread():
    with pytest.raises(ArgumentError):
        UkfParams(1.0, 2.0, -5.0).weights(3)


def test_sigma_points_singular_cov(rng):
    A = random_psd(rng, 2)
    cov = np.block([[A, A], [A, A]])
    pts, wm, wc = sigma_points(np.zeros(4), cov, UkfParams())
    rebuilt = (pts.T * wc) @ pts
    np.testing.assert_allclose(rebuilt, cov, atol=1e-9)


def test_ukf_burgers_step_keeps_shape_and_psd(rng):
    cfg = BurgersConfig(nos=10)
    pm = burgers_model(cfg)
    b = GaussianBelief(cfg.initial_state(), 0.01 * random_psd(rng, 10))
    out = ukf_step(b, pm, [1.0], 1e-6 * np.eye(10))
    assert out.mean.shape == (10,)
    out.validate()


def test_predict_never_shrinks_trace_with_identity(rng):
    b = GaussianBelief(np.zeros(3), random_psd(rng, 3))
    Q = 0.1 * np.eye(3)
    for core in ("kf", "ekf", "ukf"):
        out = predict(core, b, ProcessModel.linear(np.eye(3)), [], Q)
        assert np.trace(out.cov) >= np.trace(b.cov)
        out.validate()


def test_dispatch_rejects_unknown_core():
    b = GaussianBelief([0.0], [[1.0]])
    with pytest.raises(ArgumentError):
        predict("pf", b, ProcessModel.linear(np.eye(1)), [], np.eye(1))
    with pytest.raises(ArgumentError):
        update("cukf", b, ObservationModel.linear([[1.0]], [[1.0]]), [0.0])


def test_linear_model_spot_check(rng):
    F, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 2))
    pm = ProcessModel.linear(F, B)
    x, u = rng.standard_normal(3), rng.standard_normal(2)
    np.testing.assert_allclose(pm.step(x, u), F @ x + B @ u, atol=1e-12)
    om = ObservationModel.select([2, 0], 3, 0.5)
    np.testing.assert_allclose(om.h(x), [x[2], x[0]], atol=1e-12)
    assert om.dim_obs == 2
