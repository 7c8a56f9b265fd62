import math

import numpy as np
import pytest

from legodo.kinematics import (
    LEG_ORDER,
    JointState,
    LegId,
    LegModel,
    default_legs,
    forward_kinematics,
    forward_kinematics_batch,
    relative_foot_velocity,
    velocity_jacobian,
    velocity_jacobian_batch,
)
from legodo.so3 import exp_map, rot_x, rot_y


def chain_oracle(model, q):
    """Direct composition of the documented serial chain."""
    l_hip, l_thigh, l_calf = model.link_lengths
    s1, s2, s3 = model.axis_signs
    calf = np.array([0.0, 0.0, -(l_calf + model.foot_radius)])
    knee = np.array([0.0, 0.0, -l_thigh]) + rot_y(s3 * q[2]) @ calf
    hip = np.array([0.0, s1 * l_hip, 0.0]) + rot_y(s2 * q[1]) @ knee
    return model.hip_offset + rot_x(s1 * q[0]) @ hip


def random_q(rng, n):
    return rng.uniform([-1.0, -1.5, -2.7], [1.0, 3.4, 0.0], size=(n, 3))


def central_jacobian(model, q, h=1e-6):
    J = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, k] = (forward_kinematics(model, q + e) - forward_kinematics(model, q - e)) / (2 * h)
    return J


def test_zero_configuration():
    m = LegModel(LegId.FL, [0.19, 0.047, 0.0], (0.0955, 0.213, 0.213))
    assert np.allclose(forward_kinematics(m, [0, 0, 0]), [0.19, 0.047 + 0.0955, -0.426], atol=1e-15)
    mr = LegModel(LegId.FR, [0.19, -0.047, 0.0], (0.0955, 0.213, 0.213), axis_signs=(-1, 1, 1))
    assert np.allclose(forward_kinematics(mr, [0, 0, 0]), [0.19, -0.047 - 0.0955, -0.426], atol=1e-15)


def test_knee_folded():
    m = LegModel(LegId.FL, [0.0, 0.0, 0.0], (0.1, 0.25, 0.2))
    p = forward_kinematics(m, [0.0, 0.0, math.pi])
    assert p[2] == pytest.approx(-(0.25 - 0.2), abs=1e-12)
    assert p[0] == pytest.approx(0.0, abs=1e-12)


def test_matches_chain_composition(rng, legs):
    for m in legs:
        for q in random_q(rng, 200):
            assert np.allclose(forward_kinematics(m, q), chain_oracle(m, q), atol=1e-14)


def test_within_reach(rng, legs):
    for m in legs:
        P = forward_kinematics_batch(m, rng.uniform(-np.pi, np.pi, size=(1000, 3)))
        assert np.all(np.linalg.norm(P - m.hip_offset, axis=1) <= sum(m.link_lengths) + 1e-12)


def test_jacobian_finite_difference(rng, legs):
    worst = 0.0
    for m in legs:
        for q in random_q(rng, 250):
            worst = max(worst, np.max(np.abs(velocity_jacobian(m, q) - central_jacobian(m, q))))
    assert worst < 1e-6


def test_jacobian_with_foot_radius(rng):
    m = LegModel(LegId.RL, [-0.2, 0.05, 0.0], (0.09, 0.2, 0.22), axis_signs=(1, -1, 1), foot_radius=0.02)
    for q in random_q(rng, 50):
        assert np.max(np.abs(velocity_jacobian(m, q) - central_jacobian(m, q))) < 1e-6


def test_batch_matches_scalar(rng, legs):
    Q = random_q(rng, 64)
    for m in legs:
        P = forward_kinematics_batch(m, Q)
        J = velocity_jacobian_batch(m, Q)
        for k, q in enumerate(Q):
            assert np.allclose(P[k], forward_kinematics(m, q), rtol=0, atol=1e-15)
            assert np.allclose(J[k], velocity_jacobian(m, q), rtol=0, atol=1e-15)


def test_singular_configuration_is_finite(legs):
    J = velocity_jacobian(legs[0], [0.0, 0.0, 0.0])
    assert np.all(np.isfinite(J))
    assert np.linalg.matrix_rank(J) <= 3


def test_lipschitz(rng, legs):
    m = legs[1]
    L = sum(m.link_lengths)
    for _ in range(500):
        q = random_q(rng, 1)[0]
        dq = rng.normal(scale=1e-2, size=3)
        step = np.linalg.norm(forward_kinematics(m, q + dq) - forward_kinematics(m, q))
        assert step <= L * np.linalg.norm(dq) + 1e-15


def test_mirror_symmetry(rng, legs):
    by_id = {m.leg_id: m for m in legs}
    flip = np.diag([1.0, -1.0, 1.0])
    for left, right in ((LegId.FL, LegId.FR), (LegId.RL, LegId.RR)):
        for q in random_q(rng, 100):
            assert np.allclose(forward_kinematics(by_id[right], q),
                               flip @ forward_kinematics(by_id[left], q), atol=1e-15)


def test_relative_velocity_examples(legs):
    m = LegModel(LegId.FL, [0.2, 0.1, -0.3], (0.1, 0.2, 0.2))
    assert np.allclose(relative_foot_velocity(m, JointState(), [0, 0, 0]), 0.0)

    q_dot = np.zeros(3)
    p = np.array([0.2, 0.1, -0.3])
    assert np.allclose(np.cross([0, 0, 1], p), [-0.1, 0.2, 0.0])
    fk = forward_kinematics(legs[0], [0.1, 0.4, -1.0])
    v = relative_foot_velocity(legs[0], JointState(np.array([0.1, 0.4, -1.0]), q_dot), [0, 0, 1])
    assert np.allclose(v, np.cross([0, 0, 1], fk))


def test_relative_velocity_trajectory_oracle(legs):
    """Time derivative of the body-frame foot position plus omega x p, by central differences.

    A foot point fixed in the world, seen from a rotating body, moves in body
    axes as ``dp/dt = -omega x p``.  The relative velocity ``omega x p + J q_dot``
    is the rate of change of the body-to-foot vector expressed in world axes
    and rotated back into the body frame, ``R^T d(R p)/dt``.
    """
    m = legs[2]
    omega = np.array([0.3, -0.2, 0.8])
    dt = 1e-5

    def q_of(t):
        return np.array([0.2 * math.sin(t), 0.7 + 0.3 * math.cos(2 * t), -1.4 + 0.2 * math.sin(3 * t)])

    def qd_of(t):
        return np.array([0.2 * math.cos(t), -0.6 * math.sin(2 * t), 0.6 * math.cos(3 * t)])

    worst = 0.0
    for t in np.linspace(0.0, 3.0, 31):
        world = lambda s: exp_map(omega * s) @ forward_kinematics(m, q_of(s))
        d = (world(t + dt) - world(t - dt)) / (2 * dt)
        fd = exp_map(omega * t).T @ d
        v = relative_foot_velocity(m, JointState(q_of(t), qd_of(t)), omega)
        worst = max(worst, np.max(np.abs(fd - v)))
    assert worst < 1e-4


def test_model_validation():
    with pytest.raises(ValueError):
        LegModel(LegId.FL, [0, 0, 0], (0.1, -0.2, 0.2))
    with pytest.raises(ValueError):
        LegModel(LegId.FL, [0, np.nan, 0], (0.1, 0.2, 0.2))
    with pytest.raises(ValueError):
        LegModel(LegId.FL, [0, 0, 0], (0.1, 0.2, 0.2), axis_signs=(1, 0, 1))


def test_joint_state_validity():
    assert JointState(np.zeros(3), np.array([0.0, 99.0, 0.0])).is_valid()
    assert not JointState(np.zeros(3), np.array([0.0, 100.0, 0.0])).is_valid()
    assert not JointState(np.array([np.nan, 0, 0]), np.zeros(3)).is_valid()


def test_default_legs_order():
    assert [m.leg_id for m in default_legs()] == list(LEG_ORDER)
