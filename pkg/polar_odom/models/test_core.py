import numpy as np
import pytest

from polar_odom.models.core import (
    Pose2, Velocity2, compose_poses, exp_batch, invert_poses, se2_exp, se2_log, transform_points_batch,
    wrap_angle)


def random_pose(rng, scale=10.0):
    return Pose2(*rng.uniform(-scale, scale, 2), rng.uniform(-np.pi, np.pi))


def assert_pose_close(a, b, atol=1e-12):
    assert a.x == pytest.approx(b.x, abs=atol)
    assert a.y == pytest.approx(b.y, abs=atol)
    assert abs(wrap_angle(a.theta - b.theta)) <= atol


def test_wrap_angle_range():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert abs(wrap_angle(3 * np.pi)) == pytest.approx(np.pi)
    assert wrap_angle(0.25) == pytest.approx(0.25)
    wrapped = wrap_angle(np.linspace(-20, 20, 101))
    assert np.all(wrapped > -np.pi) and np.all(wrapped <= np.pi)


def test_pose_rejects_non_finite():
    with pytest.raises(ValueError):
        Pose2(np.nan, 0.0, 0.0)


def test_compose_and_inverse():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        assert_pose_close(a.compose(a.inverse()), Pose2.identity())
        assert_pose_close((a @ b).inverse(), b.inverse() @ a.inverse(), atol=1e-9)
        assert np.allclose((a @ b).matrix(), a.matrix() @ b.matrix())


def test_compose_order():
    move = Pose2(1.0, 0.0, 0.0)
    turn = Pose2(0.0, 0.0, np.pi / 2)
    assert_pose_close(turn @ move, Pose2(0.0, 1.0, np.pi / 2))
    assert_pose_close(move @ turn, Pose2(1.0, 0.0, np.pi / 2))


def test_transform_points_matches_matrix():
    rng = np.random.default_rng(1)
    pose = random_pose(rng)
    points = rng.normal(size=(5, 2))
    homogeneous = np.hstack([points, np.ones((5, 1))]) @ pose.matrix().T
    assert np.allclose(pose.transform_points(points), homogeneous[:, :2])


def test_exp_log_inverse():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pose = random_pose(rng, scale=3.0)
        assert_pose_close(se2_exp(se2_log(pose)), pose, atol=1e-9)


def test_exp_small_angle_is_continuous():
    tiny = se2_exp([1.0, 0.5, 1e-12])
    assert tiny.x == pytest.approx(1.0)
    assert tiny.y == pytest.approx(0.5)
    assert_pose_close(se2_exp([1.0, 0.0, 1e-6]), Pose2(1.0, 5e-7, 1e-6), atol=1e-9)


def test_quarter_circle():
    # unit speed along a unit-radius circle for pi/2 seconds
    pose = se2_exp([np.pi / 2, 0.0, np.pi / 2])
    assert_pose_close(pose, Pose2(1.0, 1.0, np.pi / 2), atol=1e-12)


def test_velocity_from_relative_pose():
    rel = Pose2(1.0, 0.2, 0.1)
    v = Velocity2.from_relative_pose(rel, 0.25)
    assert_pose_close(se2_exp((v * 0.25).as_array()), rel, atol=1e-12)
    with pytest.raises(ValueError):
        Velocity2.from_relative_pose(rel, 0.0)


def test_batch_functions_match_scalar():
    rng = np.random.default_rng(3)
    a = [random_pose(rng) for _ in range(10)]
    b = [random_pose(rng) for _ in range(10)]
    A = np.array([p.as_array() for p in a])
    B = np.array([p.as_array() for p in b])

    composed = compose_poses(A, B)
    inverted = invert_poses(A)
    for i in range(10):
        assert_pose_close(Pose2.from_array(composed[i]), a[i] @ b[i], atol=1e-12)
        assert_pose_close(Pose2.from_array(inverted[i]), a[i].inverse(), atol=1e-12)

    xi = rng.normal(size=(10, 3))
    exps = exp_batch(xi)
    for i in range(10):
        assert_pose_close(Pose2.from_array(exps[i]), se2_exp(xi[i]), atol=1e-12)

    points = rng.normal(size=(10, 2))
    moved = transform_points_batch(A, points)
    for i in range(10):
        assert np.allclose(moved[i], a[i].transform_points(points[i:i + 1])[0])
