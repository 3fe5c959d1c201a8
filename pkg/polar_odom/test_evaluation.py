import numpy as np
import pytest

from polar_odom.errors import NoTimeOverlap, ParseError, TooShort
from polar_odom.evaluation import (
    DriftReport, Trajectory, associate, evaluate_drift, read_trajectory, segment_errors, write_kitti,
    write_trajectory)
from polar_odom.models.core import Pose2, compose_poses, invert_poses, se2_exp


def straight_line(length=1000.0, step=1.0, dt=0.1):
    x = np.arange(0.0, length + step / 2, step)
    poses = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
    return Trajectory(np.arange(len(x)) * dt, poses)


def random_walk(rng, n=400, dt=0.25):
    steps = np.stack([rng.uniform(0.8, 1.2, n - 1), rng.normal(0, 0.02, n - 1), rng.normal(0, 0.03, n - 1)], axis=1)
    poses = [np.zeros(3)]
    for step in steps:
        poses.append(compose_poses(poses[-1], se2_exp(step).as_array()))
    return Trajectory(np.arange(n) * dt, np.array(poses))


def perturbed(rng, trajectory, noise=0.01):
    """ Re-integrate the relative steps of `trajectory` with a little noise on each. """
    poses = trajectory.poses
    rel = compose_poses(invert_poses(poses[:-1]), poses[1:])
    out = [poses[0]]
    for step in rel:
        out.append(compose_poses(out[-1], step + rng.normal(0, noise, 3)))
    return Trajectory(trajectory.timestamps, np.array(out))


class TestTrajectory:
    @pytest.mark.parametrize("timestamps, poses", [
        ([], np.zeros((0, 3))),
        ([0.0, 1.0], np.zeros((3, 3))),
        ([0.0, 0.0], np.zeros((2, 3))),
        ([0.0, 1.0], [[0, 0, 0], [np.nan, 0, 0]]),
    ])
    def test_invariants(self, timestamps, poses):
        with pytest.raises(ValueError):
            Trajectory(timestamps, poses)

    def test_path_length(self):
        assert straight_line(100.0).path_length == pytest.approx(100.0)

    def test_iteration_yields_poses(self):
        trajectory = Trajectory.from_poses([0.0, 1.0], [Pose2(), Pose2(1.0, 2.0, 0.5)])
        assert list(trajectory)[1] == (1.0, Pose2(1.0, 2.0, 0.5))


class TestDrift:
    def test_identical(self):
        gt = straight_line()
        report = evaluate_drift(gt, gt)
        assert report.translation_error_percent == 0.0
        assert report.rotation_error_deg_per_100m == 0.0
        assert sorted(report.per_length) == [100, 200, 300, 400, 500, 600, 700, 800]

    def test_scaled_steps(self):
        gt = straight_line()
        estimate = Trajectory(gt.timestamps, gt.poses * np.array([1.01, 1.0, 1.0]))
        report = evaluate_drift(estimate, gt)
        assert report.translation_error_percent == pytest.approx(1.0, abs=0.01)
        assert report.rotation_error_deg_per_100m == pytest.approx(0.0, abs=1e-9)
        assert report.format_pair() == "(1.00/0.00)"

    def test_segment_count_every_frame_a_start(self):
        gt = straight_line(150.0)
        t_err, _ = segment_errors(gt.poses, gt.poses, 100)
        assert t_err.size == 51
        assert evaluate_drift(gt, gt).n_segments == 51

    def test_constant_heading_error(self):
        # estimate turns by a constant rate the ground truth does not
        gt = straight_line(200.0)
        rate = np.radians(0.01)
        estimate = [np.zeros(3)]
        for _ in range(len(gt) - 1):
            estimate.append(compose_poses(estimate[-1], np.array([1.0, 0.0, rate])))
        report = evaluate_drift(Trajectory(gt.timestamps, np.array(estimate)), gt, lengths=(100,))
        assert report.rotation_error_deg_per_100m == pytest.approx(1.0, rel=1e-6)

    def test_rigid_transform_of_both(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            gt = random_walk(rng, n=150)
            estimate = perturbed(rng, gt)
            base = evaluate_drift(estimate, gt, lengths=(100,))
            moved = Pose2(*rng.uniform(-100, 100, 2), rng.uniform(-np.pi, np.pi))
            report = evaluate_drift(estimate.left_composed(moved), gt.left_composed(moved), lengths=(100,))
            assert abs(report.translation_error_percent - base.translation_error_percent) < 1e-9
            assert abs(report.rotation_error_deg_per_100m - base.rotation_error_deg_per_100m) < 1e-9

    def test_rigid_transform_of_estimate_only(self):
        rng = np.random.default_rng(1)
        gt = random_walk(rng)
        estimate = perturbed(rng, gt)
        base = evaluate_drift(estimate, gt)
        report = evaluate_drift(estimate.left_composed(Pose2(10.0, -5.0, 1.0)), gt)
        assert report.translation_error_percent == pytest.approx(base.translation_error_percent, abs=1e-9)

    def test_too_short(self):
        gt = straight_line(99.0)
        with pytest.raises(TooShort):
            evaluate_drift(gt, gt)

    def test_no_time_overlap(self):
        gt = straight_line(200.0)
        later = Trajectory(gt.timestamps + 1000.0, gt.poses)
        with pytest.raises(NoTimeOverlap):
            evaluate_drift(later, gt)

    def test_format(self):
        report = DriftReport(0.6649, 0.3351)
        assert str(report) == "(0.66/0.34)"
        assert report.to_dict()["translation_error_percent"] == 0.6649


class TestAssociate:
    def test_nearest_within_tolerance(self):
        gt = Trajectory([0.0, 1.0, 2.0], [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
        estimate = Trajectory([0.02, 1.04, 1.5], [[0, 0, 0], [1, 0, 0], [1.5, 0, 0]])
        est, matched, dropped = associate(estimate, gt)
        assert dropped == 1
        assert matched[:, 0].tolist() == [0.0, 1.0]
        assert est[:, 0].tolist() == [0.0, 1.0]


class TestFiles:
    def test_round_trip(self, tmp_path):
        trajectory = random_walk(np.random.default_rng(2), n=50)
        path = str(tmp_path / "trajectory.txt")
        write_trajectory(path, trajectory)
        loaded = read_trajectory(path)
        assert np.array_equal(loaded.timestamps, trajectory.timestamps)
        assert np.array_equal(loaded.poses, trajectory.poses)

    def test_single_pose(self, tmp_path):
        path = tmp_path / "one.txt"
        write_trajectory(str(path), Trajectory([1.5], [[1.0, 2.0, 0.25]]))
        assert path.read_text() == "1.5 1.0 2.0 0.25\n"

    @pytest.mark.parametrize("text, line", [
        ("0.0 0 0 0\n0.0 1 0 0\n", 2),
        ("0.0 0 0 0\n1.0 1 0\n", 2),
        ("# header\n0.0 0 zero 0\n", 2),
        ("0.0 0 0 nan\n", 1),
    ])
    def test_parse_errors(self, tmp_path, text, line):
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(ParseError) as info:
            read_trajectory(str(path))
        assert info.value.line == line

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("\n# nothing\n")
        with pytest.raises(ParseError):
            read_trajectory(str(path))

    def test_kitti_rows(self, tmp_path):
        path = tmp_path / "kitti.txt"
        write_kitti(str(path), Trajectory([0.0, 1.0], [[0, 0, 0], [3.0, 4.0, np.pi / 2]]))
        rows = [np.array(line.split(), dtype=float) for line in path.read_text().splitlines()]
        assert len(rows) == 2 and all(r.size == 12 for r in rows)
        assert np.allclose(rows[0], [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0])
        assert np.allclose(rows[1], [0, -1, 0, 3, 1, 0, 0, 4, 0, 0, 1, 0], atol=1e-9)
