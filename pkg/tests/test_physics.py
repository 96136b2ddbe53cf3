import math

import numpy as np
import pytest

from trajcover.geometry import Pose2, Trajectory, mean_l2
from trajcover.physics import MODELS, AgentKinematics, physics_oracle, rollout, rollout_states


def kasa_circle_fit(points):
    """Least-squares circle fit; returns (cx, cy, radius)."""
    a = np.c_[2 * points[:, 0], 2 * points[:, 1], np.ones(len(points))]
    b = (points**2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    cx, cy = sol[0], sol[1]
    return cx, cy, math.sqrt(sol[2] + cx * cx + cy * cy)


class TestRollout:
    def test_uniform_motion(self):
        kin = AgentKinematics(Pose2(0, 0, 0), 2.0, 0.0, 0.0)
        traj = rollout(kin, "cv_cy", 3.0, 2.0)
        np.testing.assert_allclose(traj.points[:, 0], [1, 2, 3, 4, 5, 6])
        np.testing.assert_allclose(traj.points[:, 1], 0.0)
        assert traj.dt == 0.5
        assert traj.frame == "global"

    def test_rotation_symmetry(self):
        kin = AgentKinematics(Pose2(0, 0, math.pi / 2), 2.0, 0.0, 0.0)
        traj = rollout(kin, "cv_cy", 3.0, 2.0)
        np.testing.assert_allclose(traj.points[:, 1], [1, 2, 3, 4, 5, 6], atol=1e-12)
        np.testing.assert_allclose(traj.points[:, 0], 0.0, atol=1e-12)

    def test_turning_stays_on_circle(self):
        # closed-form arc: radius v / omega = 25 m
        kin = AgentKinematics(Pose2(0, 0, 0), 5.0, 0.0, 0.2)
        traj = rollout(kin, "cv_cyr", 6.0, 2.0)
        cx, cy, radius = kasa_circle_fit(traj.points)
        assert abs(radius - 25.0) < 1e-3
        dists = np.hypot(traj.points[:, 0] - cx, traj.points[:, 1] - cy)
        assert np.abs(dists - 25.0).max() < 1e-3

    def test_speed_clamped_at_zero(self):
        kin = AgentKinematics(Pose2(0, 0, 0), 1.0, -2.0, 0.0)
        traj = rollout(kin, "ca_cy", 4.0, 2.0)
        # once stopped, never reverses
        assert np.all(np.diff(traj.points[:, 0]) >= 0)
        np.testing.assert_allclose(traj.points[-1], traj.points[-2])

    def test_states_include_speed_and_yaw(self):
        kin = AgentKinematics(Pose2(0, 0, 0.1), 3.0, 0.5, 0.2)
        states = rollout_states(kin, "ca_cyr", 2.0, 2.0)
        assert states.shape == (4, 4)
        np.testing.assert_allclose(states[:, 3], 3.0 + 0.5 * np.array([0.5, 1.0, 1.5, 2.0]))
        np.testing.assert_allclose(states[:, 2], 0.1 + 0.2 * np.array([0.5, 1.0, 1.5, 2.0]))

    def test_input_validation(self):
        kin = AgentKinematics(Pose2(0, 0, 0), 1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            rollout(kin, "warp_drive", 3.0, 2.0)
        with pytest.raises(ValueError):
            rollout(kin, "cv_cy", 0.0, 2.0)
        with pytest.raises(ValueError):
            AgentKinematics(Pose2(0, 0, 0), -1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            AgentKinematics(Pose2(0, 0, 0), float("inf"), 0.0, 0.0)


class TestModelIndependence:
    def test_cv_models_ignore_accel(self):
        slow = AgentKinematics(Pose2(0, 0, 0.2), 4.0, 0.0, 0.1)
        pushy = AgentKinematics(Pose2(0, 0, 0.2), 4.0, 3.0, 0.1)
        for model in ("cv_cy", "cv_cyr"):
            np.testing.assert_array_equal(rollout(slow, model, 3.0, 2.0).points,
                                          rollout(pushy, model, 3.0, 2.0).points)

    def test_cy_models_ignore_yaw_rate(self):
        straight = AgentKinematics(Pose2(0, 0, 0.2), 4.0, 1.0, 0.0)
        turny = AgentKinematics(Pose2(0, 0, 0.2), 4.0, 1.0, 0.7)
        for model in ("cv_cy", "ca_cy"):
            np.testing.assert_array_equal(rollout(straight, model, 3.0, 2.0).points,
                                          rollout(turny, model, 3.0, 2.0).points)

    def test_rotational_equivariance(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            theta = rng.uniform(-math.pi, math.pi)
            base = AgentKinematics(Pose2(0, 0, 0.3), 6.0, 0.4, 0.15)
            spun = AgentKinematics(Pose2(0, 0, 0.3 + theta), 6.0, 0.4, 0.15)
            rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
            for model in MODELS:
                a = rollout(base, model, 3.0, 2.0).points @ rot.T
                b = rollout(spun, model, 3.0, 2.0).points
                assert np.abs(a - b).max() < 1e-9


class TestPhysicsOracle:
    def test_exact_for_each_generator(self):
        for model in MODELS:
            kin = AgentKinematics(Pose2(3, -2, 0.4), 7.0,
                                  0.8 if model.startswith("ca") else 0.0,
                                  0.25 if model.endswith("cyr") else 0.0)
            gt = rollout(kin, model, 3.0, 2.0)
            result = physics_oracle(kin, gt, 3.0, 2.0)
            assert result.best_model == model
            assert result.ade <= 1e-9

    def test_min_property(self):
        rng = np.random.default_rng(1)
        kin = AgentKinematics(Pose2(0, 0, 0), 5.0, 0.5, 0.1)
        gt = Trajectory(rng.uniform(-10, 10, (6, 2)), 0.5, "global")
        result = physics_oracle(kin, gt, 3.0, 2.0)
        for model in MODELS:
            assert result.ade <= mean_l2(rollout(kin, model, 3.0, 2.0), gt) + 1e-12

    def test_tie_prefers_listed_order(self):
        # zero accel and yaw rate: all four rollouts coincide
        kin = AgentKinematics(Pose2(0, 0, 0), 5.0, 0.0, 0.0)
        gt = rollout(kin, "ca_cyr", 3.0, 2.0)
        assert physics_oracle(kin, gt, 3.0, 2.0).best_model == "cv_cy"

    def test_shape_mismatch(self):
        kin = AgentKinematics(Pose2(0, 0, 0), 5.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            physics_oracle(kin, Trajectory([[0, 0]], 0.5, "global"), 3.0, 2.0)
        with pytest.raises(ValueError):
            physics_oracle(kin, Trajectory(np.zeros((6, 2)), 0.4, "global"), 3.0, 2.0)
        with pytest.raises(ValueError):
            physics_oracle(kin, Trajectory(np.zeros((6, 2)), 0.5, "agent"), 3.0, 2.0)
