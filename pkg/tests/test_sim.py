import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdreach.sim import (
    ArmModel,
    CubicTrajectory,
    Domain,
    DomainConfig,
    GapConfig,
    ballistic_landing,
    cubic_coefficients,
    decode,
    eval_lever,
    eval_throw,
    flight_time,
    forward_kinematics,
    gripper_velocity,
)

G = 9.81


# -- cubic trajectories ------------------------------------------------------
def test_cubic_rest_to_rest_midpoint():
    tr = CubicTrajectory.fit(0.0, 0.0, 1.0, 0.0, 2.0)
    assert tr.position(1.0) == pytest.approx(0.5, abs=1e-15)


def test_cubic_stationary():
    tr = CubicTrajectory.fit(0.7, 0.0, 0.7, 0.0, 1.5)
    ts = np.linspace(0, 1.5, 11)
    np.testing.assert_allclose(tr.position(ts), 0.7, atol=1e-15)


def test_cubic_moving_ends():
    a0, a1, a2, a3 = cubic_coefficients(0.0, 1.0, 0.0, -1.0, 1.0)
    assert (a0, a1, a2, a3) == (0.0, 1.0, -1.0, 0.0)
    tr = CubicTrajectory.fit(0.0, 1.0, 0.0, -1.0, 1.0)
    assert tr.position(0.5) == pytest.approx(0.25, abs=1e-15)
    # integrate the velocity numerically as a cross-check
    ts = np.linspace(0.0, 0.5, 20001)
    v = tr.velocity(ts)
    integral = float(np.sum((v[1:] + v[:-1]) * np.diff(ts)) / 2)
    assert integral == pytest.approx(0.25, abs=1e-9)


def test_cubic_rejects_nonpositive_duration():
    with pytest.raises(ValueError):
        cubic_coefficients(0, 0, 1, 0, 0.0)


@settings(max_examples=200)
@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 5)
)
def test_cubic_boundary_conditions(q0, v0, qf, vf, T):
    tr = CubicTrajectory.fit(q0, v0, qf, vf, T)
    assert abs(tr.position(0.0) - q0) <= 1e-12
    assert abs(tr.velocity(0.0) - v0) <= 1e-12
    assert abs(tr.position(T) - qf) <= 1e-12
    assert abs(tr.velocity(T) - vf) <= 1e-12


def test_cubic_extrema_catch_between_samples():
    tr = CubicTrajectory.fit(np.zeros(1), 0.0, np.zeros(1), -3.0, np.array([1.0]))
    ext = tr.position_extrema()
    ts = np.linspace(0, 1, 100001)
    assert np.nanmax(ext) == pytest.approx(tr.position(ts).max(), abs=1e-9)


# -- forward kinematics ------------------------------------------------------
def test_fk_zero_pose_is_straight():
    arm = ArmModel()
    np.testing.assert_allclose(forward_kinematics(arm, np.zeros(4)), [1.2, 0.0, 1.0], atol=1e-15)


def test_fk_half_turn_mirrors():
    arm = ArmModel()
    np.testing.assert_allclose(forward_kinematics(arm, [math.pi, 0, 0, 0]), [-1.2, 0.0, 1.0], atol=1e-12)


def test_fk_two_link_hand_oracle():
    arm = ArmModel.uniform(joint_count=2)
    # yaw turns the first link onto +y; the pitch then folds the second link straight down
    np.testing.assert_allclose(forward_kinematics(arm, [math.pi / 2, math.pi / 2]), [0.0, 0.3, 0.7], atol=1e-12)
    # general angles against explicit rotation matrices
    q = np.array([0.3, -0.7])
    Rz = np.array([[np.cos(q[0]), -np.sin(q[0]), 0], [np.sin(q[0]), np.cos(q[0]), 0], [0, 0, 1]])
    Ry = np.array([[np.cos(q[1]), 0, np.sin(q[1])], [0, 1, 0], [-np.sin(q[1]), 0, np.cos(q[1])]])
    ex = np.array([0.3, 0, 0])
    expect = np.array([0, 0, 1.0]) + Rz @ ex + Rz @ Ry @ ex
    np.testing.assert_allclose(forward_kinematics(arm, q), expect, atol=1e-12)


def test_fk_length_mismatch():
    with pytest.raises(ValueError):
        forward_kinematics(ArmModel(), np.zeros(3))


# -- gripper velocity --------------------------------------------------------
def test_velocity_stationary_is_zero():
    arm = ArmModel()
    tr = CubicTrajectory.fit(np.zeros(4), 0.0, np.zeros(4), 0.0, 1.0)
    np.testing.assert_allclose(gripper_velocity(arm, tr, 0.5), 0.0, atol=1e-9)


def test_velocity_constant_rate_circle():
    arm = ArmModel.uniform(joint_count=2, link_length=0.4)
    w = 1.7
    # joint 0 spins at w, joint 1 held at zero: gripper circles at radius 0.8
    tr = CubicTrajectory.fit(np.zeros(2), np.array([w, 0.0]), np.array([w * 2.0, 0.0]), np.array([w, 0.0]), 2.0)
    for t in (0.0, 0.7, 2.0):
        v = gripper_velocity(arm, tr, t)
        assert np.linalg.norm(v) == pytest.approx(w * 0.8, abs=1e-6)


def test_velocity_rest_start():
    arm = ArmModel()
    tr = CubicTrajectory.fit(np.zeros(4), 0.0, np.full(4, 0.5), np.full(4, 1.0), 1.0)
    # one-sided stencil: error is about reach * |q''(0)| * step / 2
    np.testing.assert_allclose(gripper_velocity(arm, tr, 0.0), 0.0, atol=1e-4)


# -- ballistics --------------------------------------------------------------
def test_ballistic_example():
    (xy, t) = ballistic_landing([1, 0, 1], [2, 0, 1], G)
    t_star = (1 + math.sqrt(1 + 2 * G)) / G
    assert t == pytest.approx(t_star, abs=1e-12)
    assert t == pytest.approx(0.5648, abs=1e-4)
    np.testing.assert_allclose(xy, [1 + 2 * t_star, 0.0], atol=1e-12)
    assert xy[0] == pytest.approx(2.1296, abs=1e-4)


def test_free_fall_and_on_plane():
    xy, t = ballistic_landing([0, 0, 1.3], [0, 0, 0], G)
    assert t == pytest.approx(math.sqrt(2 * 1.3 / G), abs=1e-12)
    np.testing.assert_allclose(xy, [0, 0])
    xy, t = ballistic_landing([0.4, -0.2, 0.0], [1.0, 1.0, -2.0], G)
    assert t == 0.0
    np.testing.assert_allclose(xy, [0.4, -0.2])


@settings(max_examples=200)
@given(st.floats(0, 5), st.floats(-10, 10))
def test_ballistic_substitution_residual(z0, vz):
    t = float(flight_time(z0, vz, G))
    assert np.isfinite(t) and t >= 0
    assert abs(z0 + vz * t - 0.5 * G * t * t) <= 1e-9


# -- domains -----------------------------------------------------------------
def _g_throw(qf=0.0, vf=0.0, T=0.5, cfg=DomainConfig()):
    """Genotype giving final state (qf, vf) per joint and duration fraction T."""
    J = cfg.arm.joint_count
    gq = 0.5 + np.asarray(qf) / (2 * cfg.span * cfg.arm.position_limit) * np.ones(J)
    gv = 0.5 + np.asarray(vf) / (2 * cfg.span * cfg.arm.velocity_limit) * np.ones(J)
    return np.concatenate([gq, gv, [T]])


def test_decode_affine_map():
    cfg = DomainConfig()
    qf, vf, T = decode(cfg, _g_throw(qf=0.3, vf=-1.0, T=1.0))
    np.testing.assert_allclose(qf, 0.3, atol=1e-12)
    np.testing.assert_allclose(vf, -1.0, atol=1e-12)
    assert T[0] == cfg.duration_range[1]


def test_static_throw_drops_below_gripper():
    cfg = DomainConfig()
    ev = eval_throw(cfg.arm, cfg, GapConfig(), _g_throw())
    assert ev.valid
    np.testing.assert_allclose(ev.behavior[:2], [1.2, 0.0], atol=1e-9)
    assert ev.quality == pytest.approx(0.0, abs=1e-12)
    # waypoints are the resting gripper
    np.testing.assert_allclose(ev.behavior[2:].reshape(3, 3), [[1.2, 0, 1.0]] * 3, atol=1e-12)


def test_velocity_limit_reason():
    cfg = DomainConfig()
    ev = eval_throw(cfg.arm, cfg, GapConfig(), _g_throw(vf=cfg.arm.velocity_limit * 1.5))
    assert not ev.valid and ev.failure_reason == "velocity_limit" and ev.behavior is None


def test_joint_limit_reason():
    cfg = DomainConfig()
    g = _g_throw()
    g[0] = 1.0
    ev = eval_throw(cfg.arm, cfg, GapConfig(), g)
    assert not ev.valid and ev.failure_reason == "joint_limit"


def test_joint_offset_gap_moves_landing():
    d = Domain("throw")
    g = _g_throw(qf=0.2, vf=1.0, T=0.5)
    base = d.evaluate(g)
    gapped = d.with_gap(GapConfig((0.05, 0.05, 0.0, 0.0))).evaluate(g)
    assert base.valid and gapped.valid
    assert np.linalg.norm(base.behavior[:2] - gapped.behavior[:2]) > 1e-3


def test_zero_gap_is_bitwise_identical():
    rng = np.random.default_rng(0)
    for kind in ("throw", "lever"):
        d = Domain(kind)
        G_ = rng.random((50, d.genotype_dim))
        a = d.evaluate_many(G_)
        b = d.with_gap(GapConfig((0.0,) * 4, 0.0)).evaluate_many(G_)
        for x, y in zip(a, b):
            assert x.valid == y.valid and x.failure_reason == y.failure_reason
            if x.valid:
                assert np.array_equal(x.behavior, y.behavior) and x.quality == y.quality


def test_evaluations_are_pure():
    d = Domain("lever")
    G_ = np.random.default_rng(1).random((200, d.genotype_dim))
    a = d.evaluate_many(G_)
    b = d.evaluate_many(G_)
    assert [e.valid for e in a] == [e.valid for e in b]
    for x, y in zip(a, b):
        if x.valid:
            assert np.array_equal(x.behavior, y.behavior) and x.quality == y.quality


def test_lever_no_contact():
    cfg = DomainConfig(kind="lever")
    g = np.full(cfg.genotype_dim, 0.5)
    ev = eval_lever(cfg.arm, cfg, GapConfig(), g)
    assert not ev.valid and ev.failure_reason == "no_contact"


def _lever_at(disp):
    # place the lever tip so the resting gripper sits at the given planar offset from it
    home = np.array([1.2, 0.0, 1.0])
    tip = home - np.array([disp[0], disp[1], 0.0])
    return DomainConfig(kind="lever", lever_pivot=tuple(tip - [0, 0, 0.15]), contact_radius=0.2)


@pytest.mark.parametrize("disp,expect", [((0.0, 0.0), (0.0, 0.0)), ((0.1, -0.05), (0.6, -0.3)), ((0.15, 0.0), (0.6, 0.0))])
def test_lever_angle_gain_and_clamp(disp, expect):
    cfg = _lever_at(disp)
    ev = eval_lever(cfg.arm, cfg, GapConfig(), np.full(cfg.genotype_dim, 0.5))
    assert ev.valid
    np.testing.assert_allclose(ev.behavior[:2], expect, atol=1e-12)


def test_lever_validity_is_sparse():
    d = Domain("lever")
    G_ = np.random.default_rng(2).random((2000, d.genotype_dim))
    evs = d.evaluate_many(G_)
    assert np.mean([e.valid for e in evs]) < 0.05
    ok = [e for e in evs if e.valid]
    assert ok, "expected at least one valid lever action"
    for e in ok:
        assert np.all(np.abs(e.behavior[:2]) <= 0.6) and e.quality <= 0


def test_domain_dimensions():
    t, l = Domain("throw"), Domain("lever")
    assert (t.genotype_dim, t.behavior_dim, l.genotype_dim, l.behavior_dim) == (9, 11, 8, 8)
    assert t.control_dims == l.control_dims == (0, 1)
    assert t.behavior_bounds().shape == (11, 2)
    assert l.tolerance == pytest.approx(np.deg2rad(10))


def test_config_roundtrip_and_validation():
    cfg = DomainConfig(kind="lever", contact_radius=0.05)
    assert DomainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.config_hash() == DomainConfig.from_dict(cfg.to_dict()).config_hash()
    with pytest.raises(ValueError):
        DomainConfig(contact_radius=0.0)
    with pytest.raises(ValueError):
        DomainConfig(kind="juggle")
    with pytest.raises(ValueError):
        GapConfig(release_delay=-0.1)
    with pytest.raises(ValueError):
        Domain("throw", GapConfig((0.1, 0.1)))
    assert GapConfig.from_dict({"joint_offsets": [0.05, 0.05, 0, 0]}).offsets(4)[1] == 0.05
