"""Calibration-point selection, reprojection error, jitter, and reports."""

import math

import numpy as np
import pytest
from conftest import forward_camera, write_bundle

from railar.core import LabeledPointCloud, Pose, RigidTransform
from railar.errors import (
    CalibrationPointNotVisible,
    EmptyInput,
    NoAnnotationAtFrame,
    NoVisiblePoints,
    SchemaViolation,
    TooFewAnnotations,
    TooShort,
    ValidationError,
)
from railar.evaluation import (
    CalibrationPoint,
    MetricsReport,
    compute_jitter,
    compute_rpe,
    evaluate_sequence,
    frame_offsets,
    load_metrics_json,
    project_calibration_point,
    rendered_point_estimate,
    save_metrics_json,
    select_calibration_point,
    write_report,
)
from railar.ingest import CalibrationAnnotation, load_sequence
from railar.localization import raw_gnss

WORLD_POINT = np.array([10.0, 1.0, 0.5])


def _expected_pixel(frame: int, point=WORLD_POINT):
    # forward camera at body origin: x_cam = -y, y_cam = -z, z_cam = x - frame
    z = point[0] - frame
    u = 50.0 * (-point[1]) / z + 31.5
    v = 50.0 * (-point[2]) / z + 23.5
    return u, v


def _make_bundle(tmp_path, n=4):
    rng = np.random.default_rng(13)
    clouds = [LabeledPointCloud(rng.uniform(2, 6, size=(5, 3)))
              for _ in range(n)]
    poses = [RigidTransform.from_translation(float(i), 0.0, 0.0)
             for i in range(n)]
    root = write_bundle(tmp_path / "seq", clouds, poses,
                        cameras={"cam0": forward_camera()})
    return load_sequence(root)


def _annotation(frames, offset=(0.0, 0.0)):
    return CalibrationAnnotation("cam0", {
        f: (_expected_pixel(f)[0] + offset[0],
            _expected_pixel(f)[1] + offset[1]) for f in frames})


class TestSelectCalibrationPoint:
    def test_exact_backprojection_selected(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        cloud = LabeledPointCloud(np.vstack([
            [12.0, 2.0, 1.0],
            [8.0, -1.0, 0.2],
            WORLD_POINT,
            [15.0, 0.0, 2.0],
        ]))
        ann = _annotation([0, 1, 2, 3])
        calib = select_calibration_point(cloud, ann, bundle.cameras["cam0"],
                                         poses, ref_frame=0)
        assert calib.source_index == 2
        np.testing.assert_allclose(calib.position, WORLD_POINT)
        u, v = project_calibration_point(calib, bundle.cameras["cam0"], poses[0])
        assert (u, v) == pytest.approx(_expected_pixel(0), abs=1e-12)

    def test_tie_goes_to_lower_index(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        cam = bundle.cameras["cam0"]
        # symmetric candidates one pixel left/right of the annotation
        left = np.array([10.0, 1.0 + 10.0 / 50.0, 0.5])
        right = np.array([10.0, 1.0 - 10.0 / 50.0, 0.5])
        cloud = LabeledPointCloud(np.vstack([left, right]))
        ann = _annotation([0, 1])
        calib = select_calibration_point(cloud, ann, cam, poses, ref_frame=0)
        assert calib.source_index == 0

    def test_all_points_behind_camera(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        cloud = LabeledPointCloud([[-5.0, 0.0, 0.0], [-2.0, 1.0, 1.0]])
        with pytest.raises(NoVisiblePoints):
            select_calibration_point(cloud, _annotation([0, 1]),
                                     bundle.cameras["cam0"], poses, 0)

    def test_missing_annotation(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        cloud = LabeledPointCloud([WORLD_POINT])
        with pytest.raises(NoAnnotationAtFrame):
            select_calibration_point(cloud, _annotation([1, 2]),
                                     bundle.cameras["cam0"], poses, 0)

    def test_multi_frame_mode_excludes_transient_points(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        cam = bundle.cameras["cam0"]
        # decoy sits exactly on the frame-0 annotation ray at depth 1,
        # but is behind the camera from frame 2 onward
        decoy = np.array([1.0, 0.1, 0.05])
        cloud = LabeledPointCloud(np.vstack([decoy, WORLD_POINT]))
        ann = _annotation([0, 1, 2, 3])
        near_only = select_calibration_point(cloud, ann, cam, poses, 0)
        assert near_only.source_index == 0
        robust = select_calibration_point(cloud, ann, cam, poses, 0,
                                          extra_frames=[2])
        assert robust.source_index == 1

    def test_empty_cloud(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        with pytest.raises(NoVisiblePoints):
            select_calibration_point(LabeledPointCloud(np.zeros((0, 3))),
                                     _annotation([0, 1]),
                                     bundle.cameras["cam0"], poses, 0)


class TestRpeAndJitter:
    def test_rpe_values(self):
        assert compute_rpe((0.0, 0.0), (3.0, 4.0)) == 5.0
        assert compute_rpe((7.0, 9.0), (7.0, 9.0)) == 0.0
        assert compute_rpe((10.0, 10.0), (10.0, 11.0)) == 1.0

    def test_rpe_symmetry(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            a = rng.uniform(0, 100, 2)
            b = rng.uniform(0, 100, 2)
            assert compute_rpe(a, b) == compute_rpe(b, a)

    def test_rpe_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            compute_rpe((math.nan, 0.0), (0.0, 0.0))

    def test_jitter_values(self):
        np.testing.assert_allclose(compute_jitter([2.0, 2.0, 2.0]), [0.0, 0.0])
        np.testing.assert_allclose(compute_jitter([1.0, 4.0, 2.0]), [3.0, 2.0])

    def test_jitter_too_short(self):
        with pytest.raises(TooShort):
            compute_jitter([1.0])


class TestMetricsReport:
    def _report(self, n=6, seed=19):
        rng = np.random.default_rng(seed)
        gt = rng.uniform(0, 64, size=(n, 2))
        projected = gt + rng.normal(scale=2.0, size=(n, 2))
        return MetricsReport("seq", "cam0", "raw_gnss",
                             tuple(range(n)), gt, projected)

    def test_aggregates_recomputable_from_arrays(self):
        r = self._report()
        np.testing.assert_allclose(
            r.rpe, np.linalg.norm(r.gt - r.projected, axis=1))
        assert r.mean_rpe == pytest.approx(r.rpe.mean())
        assert r.std_rpe == pytest.approx(r.rpe.std())
        assert r.jitter.shape[0] == r.rpe.shape[0] - 1
        np.testing.assert_allclose(r.jitter, np.abs(np.diff(r.rpe)))
        assert r.mean_jitter == pytest.approx(r.jitter.mean())
        assert r.std_jitter == pytest.approx(r.jitter.std())

    def test_dict_round_trip(self):
        r = self._report()
        back = MetricsReport.from_dict(r.to_dict())
        np.testing.assert_array_equal(back.rpe, r.rpe)
        np.testing.assert_array_equal(back.jitter, r.jitter)
        assert back.frames == r.frames
        assert back.source == r.source

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            MetricsReport("s", "c", "raw_gnss", (0, 1),
                          np.zeros((3, 2)), np.zeros((3, 2)))


class TestEvaluateSequence:
    def test_exact_poses_zero_error(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        calib = CalibrationPoint(WORLD_POINT, 0, 0)
        report = evaluate_sequence(bundle, poses, "cam0", calib,
                                   _annotation([0, 1, 2, 3]))
        assert report.rpe.max() <= 1e-12
        assert report.jitter.max() <= 1e-12
        assert report.n_frames == 4
        assert report.source == "raw_gnss"
        assert report.sequence == "seq"

    def test_constant_bias_gives_flat_rpe(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        calib = CalibrationPoint(WORLD_POINT, 0, 0)
        report = evaluate_sequence(bundle, poses, "cam0", calib,
                                   _annotation([0, 1, 2, 3], offset=(3.0, 4.0)))
        assert report.mean_rpe == pytest.approx(5.0, abs=1e-12)
        assert report.std_rpe == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(report.jitter, 0.0, atol=1e-12)

    def test_sparse_annotations_use_consecutive_annotated_frames(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        calib = CalibrationPoint(WORLD_POINT, 0, 0)
        report = evaluate_sequence(bundle, poses, "cam0", calib,
                                   _annotation([0, 2, 3]))
        assert report.frames == (0, 2, 3)
        assert report.jitter.shape == (2,)

    def test_too_few_annotations(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        calib = CalibrationPoint(WORLD_POINT, 0, 0)
        with pytest.raises(TooFewAnnotations):
            evaluate_sequence(bundle, poses, "cam0", calib, _annotation([0]))

    def test_point_behind_camera(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        calib = CalibrationPoint(np.array([-5.0, 0.0, 0.0]), 0, 0)
        ann = CalibrationAnnotation("cam0", {0: (10.0, 10.0), 1: (10.0, 10.0)})
        with pytest.raises(CalibrationPointNotVisible):
            evaluate_sequence(bundle, poses, "cam0", calib, ann)

    def test_unknown_camera(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        calib = CalibrationPoint(WORLD_POINT, 0, 0)
        with pytest.raises(SchemaViolation):
            evaluate_sequence(bundle, poses, "left", calib, _annotation([0, 1]))

    def test_frame_offsets_are_gt_minus_projection(self, tmp_path):
        bundle = _make_bundle(tmp_path)
        poses = raw_gnss(bundle)
        calib = CalibrationPoint(WORLD_POINT, 0, 0)
        report = evaluate_sequence(bundle, poses, "cam0", calib,
                                   _annotation([0, 1], offset=(3.0, -2.0)))
        offsets = frame_offsets(report)
        assert set(offsets) == {0, 1}
        assert offsets[0] == pytest.approx((3.0, -2.0), abs=1e-12)
        assert offsets[1] == pytest.approx((3.0, -2.0), abs=1e-12)


class TestRenderedCrossCheck:
    def test_rendered_centroid_near_analytic_projection(self):
        cam = forward_camera()
        pose = Pose(0.0, RigidTransform.identity())
        calib = CalibrationPoint(WORLD_POINT, 0, 0)
        analytic = project_calibration_point(calib, cam, pose)
        rendered = rendered_point_estimate(calib, cam, pose, radius=0.5)
        assert rendered[0] == pytest.approx(analytic[0], abs=1.0)
        assert rendered[1] == pytest.approx(analytic[1], abs=1.0)


class TestReports:
    def _reports(self):
        gt = np.array([[10.0, 10.0], [11.0, 10.0], [12.0, 10.0]])
        out = []
        for k, source in enumerate(("raw_gnss", "icp_odometry",
                                    "segmentation_refined")):
            projected = gt + [[1.0 + k, 0.0]] * 3
            out.append(MetricsReport("seq", "cam0", source, (0, 1, 2),
                                     gt, projected))
        return out

    def test_csv_layout(self, tmp_path):
        path = write_report(self._reports(), tmp_path / "metrics.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ("sequence,camera,source,mean_rpe,std_rpe,"
                            "mean_jitter,std_jitter,n_frames")
        assert len(lines) == 4  # three sources, one camera
        cells = lines[1].split(",")
        assert cells[:3] == ["seq", "cam0", "raw_gnss"]
        assert cells[3] == "1.00"
        assert cells[7] == "3"

    def test_companion_text_layout(self, tmp_path):
        path = write_report(self._reports(), tmp_path / "metrics.csv")
        text = path.with_suffix(".txt").read_text()
        assert "1.0 ± 0.0 px" in text
        assert text.count("\n") == 3

    def test_empty_reports_refused(self, tmp_path):
        with pytest.raises(EmptyInput):
            write_report([], tmp_path / "metrics.csv")
        with pytest.raises(EmptyInput):
            save_metrics_json([], tmp_path / "metrics.json")

    def test_json_round_trip(self, tmp_path):
        reports = self._reports()
        path = save_metrics_json(reports, tmp_path / "metrics.json")
        back = load_metrics_json(path)
        assert len(back) == 3
        for a, b in zip(back, reports):
            np.testing.assert_array_equal(a.rpe, b.rpe)
            np.testing.assert_array_equal(a.gt, b.gt)
            assert a.source == b.source
