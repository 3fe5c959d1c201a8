from dataclasses import replace

import numpy as np
import pytest

from polar_odom.errors import ConfigError, DegenerateRegistration, RadiusExceedsCell
from polar_odom.models.core import Pose2, wrap_angle
from polar_odom.models.features import SurfacePoint, SurfacePointSet
from polar_odom.models.registration import (
    CoarseToFineSchedule, RegistrationConfig, RegistrationTargets, ResidualMetric, RobustLoss, evaluate_cost,
    normal_spread_deg, residual_g, similarity_weight, solve)

METRICS = ["p2p", "p2l", "p2d"]


def random_spd(rng, low=0.05, high=1.0):
    angle = rng.uniform(-np.pi, np.pi)
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    return R @ np.diag(rng.uniform(low, high, 2)) @ R.T


def random_unit(rng):
    angle = rng.uniform(-np.pi, np.pi)
    return np.array([np.cos(angle), np.sin(angle)])


def spread_means(rng, n, extent, min_separation):
    means = []
    while len(means) < n:
        candidate = rng.uniform(-extent, extent, 2)
        if all(np.linalg.norm(candidate - m) >= min_separation for m in means):
            means.append(candidate)
    return np.array(means)


def make_set(means, rng, resolution=3.0, frame_pose=None):
    points = [SurfacePoint(mean=m, covariance=random_spd(rng), normal=random_unit(rng)) for m in means]
    return SurfacePointSet.from_points(points, frame_pose=frame_pose, resolution=resolution)


def scene(seed, n=60):
    """ A keyframe of well separated surface points at the origin. """
    rng = np.random.default_rng(seed)
    return make_set(spread_means(rng, n, 20.0, 4.0), rng)


def pose_error(estimate, truth):
    return np.hypot(estimate.x - truth.x, estimate.y - truth.y), abs(np.degrees(wrap_angle(estimate.theta - truth.theta)))


class TestRobustLoss:
    def test_huber_branches(self):
        loss = RobustLoss.huber(0.5)
        assert loss(0.2) == pytest.approx(0.02)
        assert loss(2.0) == pytest.approx(0.5 * (2.0 - 0.25))
        assert loss(0.5 - 1e-9) == pytest.approx(loss(0.5 + 1e-9))
        assert loss(-3.0) == loss(3.0)

    def test_cauchy_bounded_influence(self):
        loss = RobustLoss.cauchy(0.1)
        assert loss(0.0) == 0.0
        assert abs(loss.derivative(1e6 * 0.1)) < 1e-6
        assert loss(0.001) == pytest.approx(0.5 * 0.001 ** 2, rel=1e-3)

    @pytest.mark.parametrize("loss", [RobustLoss.huber(0.3), RobustLoss.cauchy(0.3)])
    def test_derivative_and_weight(self, loss):
        r = np.linspace(-3, 3, 61)
        h = 1e-6
        numeric = (loss(r + h) - loss(r - h)) / (2 * h)
        assert np.allclose(loss.derivative(r), numeric, atol=1e-6)
        nonzero = r != 0
        assert np.allclose(loss.weight(r)[nonzero], loss.derivative(r)[nonzero] / r[nonzero])
        assert loss.weight(0.0) == 1.0


class TestResiduals:
    @pytest.mark.parametrize("metric", METRICS)
    def test_zero_at_coincident_means(self, metric):
        point = SurfacePoint(mean=np.array([3.0, -1.0]), covariance=np.eye(2), normal=np.array([0.0, 1.0]))
        g, _ = residual_g(metric, point, point, Pose2())
        assert g == 0.0

    def test_point_to_point(self):
        target = SurfacePoint(mean=np.zeros(2), covariance=np.eye(2), normal=np.array([0.0, 1.0]))
        source = SurfacePoint(mean=np.array([1.0, 0.0]), covariance=np.eye(2), normal=np.array([0.0, 1.0]))
        g, _ = residual_g("p2p", target, source, Pose2())
        assert g == pytest.approx(1.0)

    def test_point_to_line_ignores_tangential_offset(self):
        target = SurfacePoint(mean=np.zeros(2), covariance=np.eye(2), normal=np.array([0.0, 1.0]))
        source = SurfacePoint(mean=np.array([5.0, 0.3]), covariance=np.eye(2), normal=np.array([0.0, 1.0]))
        g, _ = residual_g("p2l", target, source, Pose2())
        assert g == pytest.approx(0.3)

    def test_point_to_distribution(self):
        target = SurfacePoint(mean=np.zeros(2), covariance=np.diag([4.0, 1.0]), normal=np.array([0.0, 1.0]))
        source = SurfacePoint(mean=np.array([1.0, 0.0]), covariance=np.zeros((2, 2)), normal=np.array([0.0, 1.0]))
        g, _ = residual_g("p2d", target, source, Pose2())
        assert g == pytest.approx(0.5)

    @pytest.mark.parametrize("metric", METRICS)
    def test_jacobian_matches_finite_differences(self, metric):
        rng = np.random.default_rng(METRICS.index(metric))
        h = 1e-6
        for _ in range(1000):
            target = SurfacePoint(mean=rng.uniform(-10, 10, 2), covariance=random_spd(rng), normal=random_unit(rng))
            source = SurfacePoint(mean=rng.uniform(-10, 10, 2), covariance=random_spd(rng), normal=random_unit(rng))
            pose = np.array([*rng.uniform(-5, 5, 2), rng.uniform(-np.pi, np.pi)])

            g, J = residual_g(metric, target, source, Pose2.from_array(pose))
            if g < 1e-3:
                continue
            numeric = np.zeros(3)
            for k in range(3):
                step = np.zeros(3)
                step[k] = h
                g_plus, _ = residual_g(metric, target, source, Pose2(*(pose + step)))
                g_minus, _ = residual_g(metric, target, source, Pose2(*(pose - step)))
                numeric[k] = (g_plus - g_minus) / (2 * h)
            assert np.linalg.norm(numeric - J) <= 1e-5 * max(np.linalg.norm(J), 1.0)

    def test_unknown_metric(self):
        with pytest.raises(ConfigError):
            ResidualMetric.parse("p2q")


class TestSimilarity:
    def weight(self, a, b):
        return similarity_weight(
            SurfacePoint(mean=np.zeros(2), covariance=np.eye(2), normal=np.asarray(a, dtype=float)),
            SurfacePoint(mean=np.zeros(2), covariance=np.eye(2), normal=np.asarray(b, dtype=float)))

    def test_values(self):
        assert self.weight([0, 1], [0, 1]) == pytest.approx(1.0)
        assert self.weight([0, 1], [1, 0]) == pytest.approx(0.25)
        assert self.weight([0, 1], [0, -1]) == pytest.approx(1.0)

    def test_range(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert 0.25 <= self.weight(random_unit(rng), random_unit(rng)) <= 1.0


class TestEvaluateCost:
    def point(self, x, y):
        return SurfacePoint(mean=np.array([x, y]), covariance=np.eye(2), normal=np.array([0.0, 1.0]))

    def test_self_association(self):
        keyframe = scene(0)
        cost, correspondences = evaluate_cost("p2d", RobustLoss.huber(0.1), [keyframe], keyframe, Pose2(), 3.0)
        assert cost == pytest.approx(0.0, abs=1e-12)
        assert len(correspondences) == len(keyframe)
        assert all(c.source_index == c.target_index for c in correspondences)

    def test_nothing_within_radius(self):
        keyframe = SurfacePointSet.from_points([self.point(0.0, 0.0)])
        current = SurfacePointSet.from_points([self.point(50.0, 50.0)])
        assert evaluate_cost("p2p", RobustLoss.huber(0.1), [keyframe], current, Pose2(), 1.0) == (0.0, [])

    def test_sums_over_keyframes(self):
        a = SurfacePointSet.from_points([self.point(0.0, 0.0)])
        b = SurfacePointSet.from_points([self.point(10.0, 0.0)])
        current = SurfacePointSet.from_points([self.point(0.05, 0.0), self.point(10.05, 0.0)])
        cost, correspondences = evaluate_cost("p2p", RobustLoss.huber(0.1), [a, b], current, Pose2(), 1.0)
        assert cost == pytest.approx(0.05 ** 2)
        assert sorted((c.keyframe_index, c.source_index) for c in correspondences) == [(0, 0), (1, 1)]

    def test_keyframes_in_their_own_frames(self):
        keyframe = SurfacePointSet.from_points([self.point(0.0, 0.0)], frame_pose=Pose2(5.0, 0.0, np.pi / 2))
        current = SurfacePointSet.from_points([self.point(0.0, 0.0)])
        cost, correspondences = evaluate_cost("p2p", RobustLoss.huber(0.1), [keyframe], current, Pose2(5.0, 0.0, 0.3), 1.0)
        assert len(correspondences) == 1
        assert cost == pytest.approx(0.0, abs=1e-12)

    def test_order_invariance(self):
        rng = np.random.default_rng(1)
        keyframes = [scene(2, n=30), scene(3, n=30)]
        current = scene(2, n=30).transformed(Pose2(0.3, -0.2, 0.02).inverse())
        pose = Pose2(0.25, -0.1, 0.015)
        loss = RobustLoss.cauchy(0.1)
        cost, _ = evaluate_cost("p2d", loss, keyframes, current, pose, 3.0)

        shuffled = [kf.subset(rng.permutation(len(kf))) for kf in reversed(keyframes)]
        shuffled_current = current.subset(rng.permutation(len(current)))
        shuffled_cost, _ = evaluate_cost("p2d", loss, shuffled, shuffled_current, pose, 3.0)
        assert shuffled_cost == pytest.approx(cost, abs=1e-12)

    def test_radius_beyond_cell(self):
        targets = RegistrationTargets([scene(0)], cell_size=1.0)
        with pytest.raises(RadiusExceedsCell):
            evaluate_cost("p2d", RobustLoss.huber(0.1), targets, scene(0), Pose2(), 2.0)


class TestSchedule:
    def test_coarse_to_fine(self):
        schedule = RegistrationConfig(ctf_enabled=True, huber_iterations=2).schedule(3.0)
        assert [schedule.loss(n).kind.value for n in range(4)] == ["huber", "huber", "cauchy", "cauchy"]
        assert [schedule.radius(n) for n in range(4)] == [6.0, 6.0, 3.0, 3.0]
        assert schedule.cell_size == 6.0

    def test_single_phase(self):
        schedule = RegistrationConfig(ctf_enabled=False).schedule(3.0)
        assert {schedule.loss(n).kind.value for n in range(8)} == {"huber"}
        assert {schedule.radius(n) for n in range(8)} == {3.0}
        assert schedule.cell_size == 3.0
        assert not schedule.in_coarse_phase(0)

    def test_explicit_radii(self):
        schedule = RegistrationConfig(ctf_enabled=True, radius_coarse=5.0, radius_fine=2.0).schedule(3.0)
        assert schedule.radius(0) == 5.0 and schedule.radius(2) == 2.0


class TestSolve:
    def schedule(self, ctf=False):
        return RegistrationConfig(ctf_enabled=ctf).schedule(3.0)

    @pytest.mark.parametrize("metric", METRICS)
    def test_self_registration_is_identity(self, metric):
        keyframe = scene(0)
        pose, report = solve(metric, self.schedule(), [keyframe], keyframe, Pose2())
        assert np.all(np.abs(pose.as_array()) <= 1e-9)
        assert report.converged
        assert report.n_correspondences == len(keyframe)

    @pytest.mark.parametrize("metric", ["p2d", "p2p"])
    def test_recovers_transform(self, metric):
        truth = Pose2(0.5, 0.2, np.radians(3.0))
        keyframe = scene(1)
        current = keyframe.transformed(truth.inverse())
        pose, report = solve(metric, self.schedule(), [keyframe], current, Pose2())
        translation, rotation = pose_error(pose, truth)
        assert translation <= 1e-3
        assert rotation <= 0.01
        assert not report.degenerate

    def test_recovers_transform_with_outliers(self):
        truth = Pose2(0.5, 0.2, np.radians(3.0))
        rng = np.random.default_rng(5)
        keyframe = scene(4)
        current = keyframe.transformed(truth.inverse())
        means = current.means.copy()
        replaced = rng.choice(len(means), size=int(0.3 * len(means)), replace=False)
        means[replaced] = rng.uniform(-20, 20, size=(len(replaced), 2))
        current = SurfacePointSet(
            means=means, covariances=current.covariances, normals=current.normals, support=current.support,
            intensity_sum=current.intensity_sum, cells=np.floor(means / 3.0).astype(np.int64))

        pose, report = solve("p2d", self.schedule(ctf=True), [keyframe], current, Pose2())
        translation, rotation = pose_error(pose, truth)
        assert translation <= 5e-3
        assert rotation <= 0.05
        assert report.history[0][0] == "huber" and report.history[-1][0] == "cauchy"

    def test_multiple_keyframes(self):
        truth = Pose2(3.0, 1.0, 0.1)
        base = scene(6)
        first = base.transformed(Pose2(-1.0, 0.5, -0.05).inverse())
        first = replace(first, frame_pose=Pose2(-1.0, 0.5, -0.05))
        second = base.transformed(Pose2(1.0, 0.0, 0.05).inverse())
        second = replace(second, frame_pose=Pose2(1.0, 0.0, 0.05))
        current = base.transformed(truth.inverse())

        init = Pose2(2.8, 1.1, 0.09)
        pose, _ = solve("p2d", self.schedule(), [first, second], current, init)
        translation, rotation = pose_error(pose, truth)
        assert translation <= 1e-3 and rotation <= 0.01

    def test_too_few_correspondences(self):
        keyframe = scene(0)
        current = keyframe.subset([0, 1, 2])
        with pytest.raises(DegenerateRegistration) as info:
            solve("p2d", self.schedule(), [keyframe], current, Pose2())
        assert info.value.report.degenerate
        assert info.value.report.n_correspondences == 3

    def test_parallel_constraints_are_degenerate(self):
        xs = np.arange(0.0, 60.0, 4.0)
        points = [
            SurfacePoint(mean=np.array([x, 5.0]), covariance=np.diag([1.0, 0.01]), normal=np.array([0.0, -1.0]))
            for x in xs]
        keyframe = SurfacePointSet.from_points(points)
        with pytest.raises(DegenerateRegistration):
            solve("p2d", self.schedule(), [keyframe], keyframe, Pose2())

    def test_empty_keyframes(self):
        with pytest.raises(DegenerateRegistration):
            solve("p2d", self.schedule(), [], scene(0), Pose2())

    @pytest.mark.parametrize("ctf", [False, True])
    @pytest.mark.parametrize("metric", METRICS)
    def test_accepted_cost_never_increases(self, metric, ctf):
        truth = Pose2(0.8, -0.5, np.radians(4.0))
        keyframe = scene(2)
        current = keyframe.transformed(truth.inverse())
        _, report = solve(metric, self.schedule(ctf), [keyframe], current, Pose2())
        assert len(report.cost_traces) == report.iterations
        assert sum(len(trace) > 1 for trace in report.cost_traces) >= 1
        for trace in report.cost_traces:
            assert np.all(np.isfinite(trace))
            assert np.all(np.diff(trace) <= 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_solution_is_finite(self, seed):
        rng = np.random.default_rng(seed)
        keyframe = scene(10 + seed)
        truth = Pose2(*rng.uniform([-1.0, -1.0, -0.1], [1.0, 1.0, 0.1]))
        current = keyframe.transformed(truth.inverse())
        solved = 0
        for init in (Pose2(), Pose2(*rng.uniform([-5.0, -5.0, -1.0], [5.0, 5.0, 1.0])), Pose2(1e6, 0.0, 3.0)):
            for ctf in (False, True):
                try:
                    pose, report = solve("p2d", self.schedule(ctf), [keyframe], current, init)
                except DegenerateRegistration:
                    continue
                assert np.all(np.isfinite(pose.as_array()))
                assert np.isfinite(report.final_cost)
                solved += 1
        assert solved >= 2


def test_normal_spread():
    assert normal_spread_deg(np.array([[0.0, 1.0], [0.0, -1.0]])) == pytest.approx(0.0, abs=1e-9)
    assert normal_spread_deg(np.array([[1.0, 0.0], [np.cos(0.2), np.sin(0.2)]])) == pytest.approx(np.degrees(0.1))
    assert normal_spread_deg(np.zeros((0, 2))) == 0.0


def test_schedule_default_fields():
    schedule = CoarseToFineSchedule()
    assert schedule.max_outer == 8
    assert schedule.in_coarse_phase(1) and not schedule.in_coarse_phase(2)
