from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_psd
from gckf.cores import ObservationModel, ProcessModel, kf_predict, kf_update
from gckf.engine import (
    AugmentedBelief,
    VirtualLikelihood,
    extract_virtual_likelihood,
    global_update,
    init_augmented,
    local_models,
    local_observation,
    local_predict,
    local_update,
)
from gckf.errors import ArgumentError, NumericalError, ProtocolError
from gckf.exchange import frozen_indices, message_round
from gckf.gaussian import GaussianBelief, min_eig, schur_regression
from gckf.models import HeatConfig, decoupled_model, heat_model, initial_covariance
from gckf.partition import build_layout


def _ident(n):
    return ProcessModel.linear(np.eye(n))


def _single_lm(pm, n):
    return local_models(pm, build_layout(n, 1, nof=0))[0]


def _run_pair(full, pm, layout, ol, R, Q, u, steps, rng, core="kf"):
    """Advance the full KF and the GCKF subsystems side by side for one interval."""
    lms = local_models(pm, layout)
    subs = [init_augmented(full, layout.subsystems[k], (), k) for k in range(layout.noss)]
    om = ObservationModel.select(ol, pm.dim_state, R)
    for _ in range(steps):
        z = rng.standard_normal(len(ol))
        full = kf_update(kf_predict(full, pm, u, Q), om, z)
        for k, s in enumerate(layout.subsystems):
            a = local_predict(subs[k], lms[k], None, core, Q[np.ix_(s, s)], u)
            rows, lom = local_observation(s, ol, R)
            if lom is not None:
                a = local_update(a, lom, z[rows], core)
            subs[k] = a
    return full, subs


# --- init_augmented ---------------------------------------------------------------


def test_init_scalar_clone():
    a = init_augmented(GaussianBelief([1.0], [[2.0]]), [0])
    np.testing.assert_array_equal(a.belief.mean, [1.0, 1.0])
    np.testing.assert_array_equal(a.belief.cov, [[2.0, 2.0], [2.0, 2.0]])


def test_init_regression_is_identity(rng):
    full = GaussianBelief(rng.standard_normal(5), random_psd(rng, 5))
    a = init_augmented(full, [1, 2, 3])
    r = schur_regression(a.belief, a.current_idx, a.clone_idx)
    np.testing.assert_array_equal(r.alpha, np.eye(3))
    np.testing.assert_array_equal(r.q, np.zeros((3, 3)))


def test_init_frozen_cross_block():
    full = GaussianBelief(np.arange(4.0), initial_covariance(4, 10.0, 20.0, 1.0))
    a = init_augmented(full, [0, 1], [2])
    np.testing.assert_array_equal(a.belief.cov[np.ix_(a.clone_idx, a.frozen_idx)], full.cov[np.ix_([0, 1], [2])])
    np.testing.assert_array_equal(a.belief.cov[np.ix_(a.current_idx, a.frozen_idx)], full.cov[np.ix_([0, 1], [2])])
    np.testing.assert_array_equal(a.belief.mean, [0, 1, 0, 1, 2])


def test_init_overlap_rejected(rng):
    full = GaussianBelief(np.zeros(4), np.eye(4))
    with pytest.raises(ArgumentError):
        init_augmented(full, [0, 1], [1, 2])


def test_positions_not_owned():
    a = init_augmented(GaussianBelief(np.zeros(4), np.eye(4)), [2, 3], sid=1)
    np.testing.assert_array_equal(a.positions([3, 2]), [1, 0])
    with pytest.raises(ProtocolError):
        a.positions([0])


# --- local_predict ----------------------------------------------------------------


def test_predict_identity_keeps_belief(rng):
    full = GaussianBelief(rng.standard_normal(3), random_psd(rng, 3))
    a = init_augmented(full, [0, 1, 2])
    lm = _single_lm(_ident(3), 3)
    for core in ("kf", "ekf", "ukf"):
        out = local_predict(a, lm, None, core, np.zeros((3, 3)))
        np.testing.assert_allclose(out.belief.mean, a.belief.mean, atol=1e-9)
        np.testing.assert_allclose(out.belief.cov, a.belief.cov, atol=1e-9)


def test_predict_clone_cross_cov_is_f_a0(rng):
    F = rng.standard_normal((3, 3))
    full = GaussianBelief(rng.standard_normal(3), random_psd(rng, 3))
    a = init_augmented(full, [0, 1, 2])
    lm = _single_lm(ProcessModel.linear(F), 3)
    for core in ("kf", "ekf"):
        out = local_predict(a, lm, None, core, 0.1 * np.eye(3))
        cross = out.belief.cov[np.ix_(out.current_idx, out.clone_idx)]
        np.testing.assert_allclose(cross, F @ full.cov, atol=1e-12)
        np.testing.assert_array_equal(out.belief.mean[out.clone_idx], full.mean)


@pytest.mark.parametrize("arch", ["ELSD_FN", "ELSD_FC"])
@pytest.mark.parametrize("core", ["kf", "ekf", "ukf"])
def test_predict_keeps_frozen_and_clone_means(arch, core, rng):
    cfg = HeatConfig(l=1.0, nos=12, pf=100.0)
    pm = heat_model(cfg)
    layout = build_layout(12, 3, nof=1)
    full = GaussianBelief(23 + rng.standard_normal(12), initial_covariance(12, 10.0, 20.0, 1.0))
    subs = [
        init_augmented(full, layout.subsystems[k], frozen_indices(layout, k, arch, 2), k)
        for k in range(3)
    ]
    lms = local_models(pm, layout)
    u = np.array([0.0, 400.0])
    for _ in range(3):
        msgs = message_round(subs, layout, arch, 2)
        new = [local_predict(a, lms[k], msgs[k], core, 1e-3 * np.eye(4), u) for k, a in enumerate(subs)]
        for old, a in zip(subs, new):
            keep = np.concatenate([a.clone_idx, a.frozen_idx])
            np.testing.assert_array_equal(a.belief.mean[keep], old.belief.mean[keep])
            assert min_eig(a.belief.cov) > -1e-9 * np.abs(a.belief.cov).max()
        subs = new


def test_predict_without_required_message(rng):
    pm = heat_model(HeatConfig(l=1.0, nos=6, pf=100.0))
    layout = build_layout(6, 2, nof=1)
    full = GaussianBelief(np.zeros(6), np.eye(6))
    a = init_augmented(full, layout.subsystems[0], (), 0)
    with pytest.raises(ProtocolError):
        local_predict(a, local_models(pm, layout)[0], None, "kf", np.eye(3), [0.0, 400.0])


# --- local_update -----------------------------------------------------------------


def test_update_uninformative(rng):
    full = GaussianBelief(rng.standard_normal(2), random_psd(rng, 2))
    a = init_augmented(full, [0, 1])
    out = local_update(a, ObservationModel.linear(np.eye(2), 1e12 * np.eye(2)), [5.0, 5.0], "kf")
    np.testing.assert_allclose(out.belief.mean, a.belief.mean, atol=1e-6)
    np.testing.assert_allclose(out.belief.cov, a.belief.cov, atol=1e-6)


def test_update_scalar_clone_follows_current():
    a = init_augmented(GaussianBelief([0.0], [[3.0]]), [0])
    for core in ("kf", "ekf", "ukf"):
        out = local_update(a, ObservationModel.linear([[1.0]], [[1.0]]), [2.0], core)
        c = out.belief.cov
        assert c[0, 0] == pytest.approx(c[1, 1], abs=1e-12)
        assert c[0, 0] == pytest.approx(0.75, abs=1e-12)


def test_update_never_increases_clone_cov(rng):
    full = GaussianBelief(rng.standard_normal(4), random_psd(rng, 4))
    a = local_predict(init_augmented(full, [0, 1, 2, 3]), _single_lm(ProcessModel.linear(rng.standard_normal((4, 4))), 4), None, "kf", np.eye(4))
    out = local_update(a, ObservationModel.select([0, 3], 4, 0.2), [1.0, 0.0], "kf")
    before = a.belief.cov[np.ix_(a.clone_idx, a.clone_idx)]
    after = out.belief.cov[np.ix_(out.clone_idx, out.clone_idx)]
    assert min_eig(before - after) > -1e-9
    assert min_eig(out.belief.cov) > -1e-9


def test_update_rejects_clone_observation():
    a = init_augmented(GaussianBelief(np.zeros(2), np.eye(2)), [0, 1])
    H = np.zeros((1, 4))
    H[0, 0] = 1.0
    with pytest.raises(ArgumentError):
        local_update(a, ObservationModel.linear(H, [[1.0]]), [0.0], "kf")
    H = np.zeros((1, 4))
    H[0, 2] = 1.0
    out = local_update(a, ObservationModel.linear(H, [[1.0]]), [1.0], "kf")
    assert out.belief.mean[2] == pytest.approx(0.5)
    with pytest.raises(ArgumentError):
        local_update(a, ObservationModel.linear(np.ones((1, 3)), [[1.0]]), [0.0], "kf")


# --- extract_virtual_likelihood ---------------------------------------------------


def test_vl_pure_prediction_carries_no_information(rng):
    full = GaussianBelief(rng.standard_normal(3), random_psd(rng, 3))
    a = init_augmented(full, [0, 1, 2])
    lm = _single_lm(ProcessModel.linear(rng.standard_normal((3, 3))), 3)
    for _ in range(5):
        a = local_predict(a, lm, None, "kf", 0.1 * np.eye(3))
    vl = extract_virtual_likelihood(a)
    np.testing.assert_allclose(vl.delta_mean, 0.0, atol=1e-14)
    np.testing.assert_allclose(vl.delta_cov, 0.0, atol=1e-12)


@pytest.mark.parametrize("rank", [3, 2])
def test_vl_at_init_is_identity(rank, rng):
    full = GaussianBelief(rng.standard_normal(3), random_psd(rng, 3, rank=rank))
    vl = extract_virtual_likelihood(init_augmented(full, [0, 1, 2]))
    np.testing.assert_array_equal(vl.phi, np.eye(3))
    np.testing.assert_array_equal(vl.q_xi, np.zeros((3, 3)))


def test_vl_exact_observation_takes_all_variance():
    a = init_augmented(GaussianBelief([1.0], [[2.0]]), [0])
    a = local_update(a, ObservationModel.linear([[1.0]], [[1e-14]]), [4.0], "kf")
    vl = extract_virtual_likelihood(a)
    assert vl.delta_cov[0, 0] == pytest.approx(2.0, abs=1e-9)
    assert vl.delta_mean[0] == pytest.approx(3.0, abs=1e-9)


def test_vl_rejects_non_psd_clone():
    a = init_augmented(GaussianBelief(np.zeros(2), np.eye(2)), [0, 1])
    cov = a.belief.cov.copy()
    cov[0, 0] = -1.0
    bad = AugmentedBelief(GaussianBelief(a.belief.mean, cov), a.sub_idx, a.frozen_global, 0, a.a0, a.mean0)
    with pytest.raises(NumericalError):
        extract_virtual_likelihood(bad)
    with pytest.raises(ArgumentError):
        extract_virtual_likelihood(a, a0=np.eye(3))


# --- global_update ----------------------------------------------------------------


def _noop(full, layout):
    out = []
    for k, s in enumerate(layout.subsystems):
        n = s.size
        out.append(VirtualLikelihood(k, np.zeros(n), np.zeros((n, n)), np.eye(n), np.zeros((n, n)), full.mean[s], full.mean[s]))
    return out


def test_global_update_no_information(rng):
    full = GaussianBelief(rng.standard_normal(6), random_psd(rng, 6))
    layout = build_layout(6, 2, nof=0)
    out = global_update(full, _noop(full, layout), layout)
    np.testing.assert_allclose(out.mean, full.mean, atol=1e-15)
    np.testing.assert_allclose(out.cov, full.cov, atol=1e-15)


def test_global_update_matches_full_kf_two_blocks(rng):
    F = np.zeros((6, 6))
    F[:3, :3] = 0.9 * np.linalg.qr(rng.standard_normal((3, 3)))[0]
    F[3:, 3:] = 0.9 * np.linalg.qr(rng.standard_normal((3, 3)))[0]
    pm = ProcessModel.linear(F)
    full = GaussianBelief(rng.standard_normal(6), random_psd(rng, 6, jitter=0.1))
    layout = build_layout(6, 2, nof=0)
    fk, subs = _run_pair(full, pm, layout, [0, 4, 5], 0.3, 0.05 * np.eye(6), np.zeros(0), 10, rng)
    out = global_update(full, [extract_virtual_likelihood(a) for a in subs], layout)
    np.testing.assert_allclose(out.mean, fk.mean, atol=1e-9)
    np.testing.assert_allclose(out.cov, fk.cov, atol=1e-9)


def test_constrained_step_restores_block_posterior(rng):
    A0 = random_psd(rng, 4, jitter=0.5)
    a = init_augmented(GaussianBelief(np.zeros(4), A0), np.arange(4))
    a = local_update(a, ObservationModel.select([0, 2], 4, 0.4), [1.0, 2.0], "kf")
    A = a.belief.cov[np.ix_(a.clone_idx, a.clone_idx)]
    A0p = np.linalg.pinv(A0)
    np.testing.assert_allclose(A0 - A0 @ A0p @ (A0 - A) @ A0p @ A0, A, atol=1e-12)
    vl = extract_virtual_likelihood(a)
    # with phi = I and q = 0 the prediction step is inert, so block k is the clone posterior
    vl = replace(vl, phi=np.eye(4), q_xi=np.zeros((4, 4)), new_mean_current=vl.clone_mean_posterior)
    out = global_update(GaussianBelief(np.zeros(4), A0), [vl], build_layout(4, 1, nof=0))
    np.testing.assert_allclose(out.cov, A, atol=1e-12)


def test_global_block_equals_local_current(rng):
    # independent subsystems: nothing outside block k can inform it
    pm = decoupled_model(12, 4, 7)
    prior = np.zeros((12, 12))
    for s in range(0, 12, 4):
        prior[s : s + 4, s : s + 4] = random_psd(rng, 4, jitter=0.1)
    full = GaussianBelief(rng.standard_normal(12), prior)
    layout = build_layout(12, 3, nof=0)
    fk, subs = _run_pair(full, pm, layout, [0, 5, 9], 0.5, 0.02 * np.eye(12), np.zeros(0), 6, rng)
    out = global_update(full, [extract_virtual_likelihood(a) for a in subs], layout)
    for a, s in zip(subs, layout.subsystems):
        local = a.belief.cov[np.ix_(a.current_idx, a.current_idx)]
        np.testing.assert_allclose(out.cov[np.ix_(s, s)], local, atol=1e-9)


def test_global_update_order_independent(rng):
    pm = decoupled_model(12, 4, 2)
    full = GaussianBelief(rng.standard_normal(12), initial_covariance(12, 2.0, 3.0, 0.1))
    layout = build_layout(12, 3, nof=0)
    _, subs = _run_pair(full, pm, layout, [1, 4, 11], 0.5, 0.02 * np.eye(12), np.zeros(0), 5, rng)
    vls = [extract_virtual_likelihood(a) for a in subs]
    ref = global_update(full, vls, layout)
    perm = [2, 0, 1]
    relabeled = replace(layout, subsystems=tuple(layout.subsystems[p] for p in perm))
    vls_p = [replace(vls[p], subsystem_id=i) for i, p in enumerate(perm)]
    out = global_update(full, vls_p, relabeled)
    np.testing.assert_allclose(out.mean, ref.mean, atol=1e-9)
    np.testing.assert_allclose(out.cov, ref.cov, atol=1e-9)


def test_global_update_protocol_errors(rng):
    full = GaussianBelief(np.zeros(6), np.eye(6))
    layout = build_layout(6, 2, nof=0)
    vls = _noop(full, layout)
    with pytest.raises(ProtocolError):
        global_update(full, vls[:1], layout)
    with pytest.raises(ProtocolError):
        global_update(full, [vls[0], vls[0]], layout)
    with pytest.raises(ProtocolError):
        global_update(GaussianBelief(np.zeros(5), np.eye(5)), vls, layout)
    with pytest.raises(ProtocolError):
        global_update(full, [vls[0], replace(vls[1], phi=np.eye(2))], layout)


def test_global_update_degenerate_a0():
    full = GaussianBelief(np.zeros(2), np.diag([1.0, 0.0]))
    layout = build_layout(2, 1, nof=0)
    vl = _noop(full, layout)[0]
    vl = replace(vl, delta_cov=np.diag([0.0, 0.5]), delta_mean=np.array([0.0, 1.0]))
    with pytest.raises(NumericalError, match="subsystem 0"):
        global_update(full, [vl], layout)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3, 4]), st.sampled_from([1, 2, 4]))
def test_oracle_equivalence_block_diagonal(seed, n_gu_steps, noss):
    rng = np.random.default_rng(seed)
    nos = 4 * noss
    pm = decoupled_model(nos, 4, seed % 1000, n_inputs=1)
    full = GaussianBelief(rng.standard_normal(nos), initial_covariance(nos, 3.0, 4.0, 0.2))
    layout = build_layout(nos, noss, nof=0)
    ol = sorted(rng.choice(nos, size=max(1, nos // 3), replace=False).tolist())
    Q = 0.01 * np.eye(nos)
    g = full
    fk = full
    for _ in range(3):
        fk, subs = _run_pair(g, pm, layout, ol, 0.4, Q, np.array([0.5]), n_gu_steps, rng)
        g = global_update(g, [extract_virtual_likelihood(a) for a in subs], layout)
        np.testing.assert_allclose(g.mean, fk.mean, atol=1e-9)
        np.testing.assert_allclose(g.cov, fk.cov, atol=1e-9)
        assert min_eig(g.cov) > -1e-9
