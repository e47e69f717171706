import numpy as np
import pytest

from railar.core import (
    CameraModel,
    ImageBuffer,
    LabeledPointCloud,
    Pose,
    RigidTransform,
    SemanticClassMap,
    TrackCenterline,
    compose,
    transform_cloud,
)
from railar.errors import (
    ArclengthOutOfRange,
    PointBehindCamera,
    ValidationError,
)


def random_transform(rng):
    yaw, pitch, roll = rng.uniform(-np.pi, np.pi, 3)
    t = rng.uniform(-10, 10, 3)
    return RigidTransform.from_euler_zyx(yaw, pitch, roll, t)


class TestRigidTransform:
    def test_compose_identity(self):
        rng = np.random.default_rng(0)
        T = random_transform(rng)
        I = RigidTransform.identity()
        assert compose(I, T).almost_equal(T)
        assert compose(T, I).almost_equal(T)

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            T = random_transform(rng)
            assert compose(T, T.invert()).almost_equal(RigidTransform.identity())
            assert compose(T.invert(), T).almost_equal(RigidTransform.identity())

    def test_commuting_translations(self):
        a = RigidTransform.from_translation(1, 0, 0)
        b = RigidTransform.from_translation(0, 2, 0)
        assert compose(a, b).almost_equal(RigidTransform.from_translation(1, 2, 0))

    def test_compose_matches_sequential_apply(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = random_transform(rng), random_transform(rng)
            p = rng.uniform(-5, 5, 3)
            np.testing.assert_allclose(
                compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-12
            )

    def test_composition_associative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b, c = (random_transform(rng) for _ in range(3))
            lhs = compose(compose(a, b), c)
            rhs = compose(a, compose(b, c))
            assert lhs.almost_equal(rhs, tol=1e-9)

    def test_rigid_preserves_pairwise_distances(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-100, 100, (50, 3))
        d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        for _ in range(5):
            T = random_transform(rng)
            q = T.apply(pts)
            d1 = np.linalg.norm(q[:, None] - q[None, :], axis=-1)
            mask = d0 > 0
            assert np.abs((d1[mask] - d0[mask]) / d0[mask]).max() < 1e-9

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValidationError):
            RigidTransform(np.eye(3) * 1.01, np.zeros(3))

    def test_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValidationError):
            RigidTransform(R, np.zeros(3))

    def test_orthonormalized_repairs_small_drift(self):
        rng = np.random.default_rng(5)
        T = random_transform(rng)
        noisy = T.rotation + rng.uniform(-1e-8, 1e-8, (3, 3))
        fixed = RigidTransform.orthonormalized(noisy, T.translation)
        assert fixed.almost_equal(T, tol=1e-7)

    def test_orthonormalized_rejects_garbage(self):
        with pytest.raises(ValidationError):
            RigidTransform.orthonormalized(np.ones((3, 3)), np.zeros(3))

    def test_euler_round_trip(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            yaw = rng.uniform(-np.pi, np.pi)
            pitch = rng.uniform(-np.pi / 2 + 0.01, np.pi / 2 - 0.01)
            roll = rng.uniform(-np.pi, np.pi)
            T = RigidTransform.from_euler_zyx(yaw, pitch, roll)
            y2, p2, r2 = T.euler_zyx()
            np.testing.assert_allclose([y2, p2, r2], [yaw, pitch, roll], atol=1e-12)


class TestCameraModel:
    def make_cam(self):
        return CameraModel(fx=500, fy=500, cx=320, cy=240, width=640, height=480)

    def test_optical_axis_maps_to_principal_point(self):
        u, v, d = self.make_cam().project((0, 0, 5))
        assert (u, v, d) == (320.0, 240.0, 5.0)

    def test_analytic_pinhole(self):
        u, v, d = self.make_cam().project((1, 0, 2))
        assert u == 320 + 500 * 0.5
        assert d == 2.0

    def test_point_behind_camera(self):
        with pytest.raises(PointBehindCamera):
            self.make_cam().project((0, 0, -1))
        with pytest.raises(PointBehindCamera):
            self.make_cam().project((1, 1, 0))

    def test_project_back_project_round_trip(self):
        cam = self.make_cam()
        rng = np.random.default_rng(7)
        for _ in range(200):
            u = rng.uniform(0, cam.width)
            v = rng.uniform(0, cam.height)
            depth = rng.uniform(0.1, 200)
            u2, v2, d2 = cam.project(cam.back_project(u, v, depth))
            assert abs(u2 - u) < 1e-6 and abs(v2 - v) < 1e-6
            assert abs(d2 - depth) < 1e-9

    def test_project_points_matches_scalar(self):
        cam = self.make_cam()
        rng = np.random.default_rng(8)
        pts = rng.uniform(-3, 3, (100, 3))
        pts[:, 2] = rng.uniform(0.5, 50, 100)
        uv, depth, valid = cam.project_points(pts)
        assert valid.all()
        for i in range(0, 100, 13):
            u, v, d = cam.project(pts[i])
            np.testing.assert_allclose(uv[i], [u, v], atol=1e-12)
            assert depth[i] == d

    def test_validation(self):
        with pytest.raises(ValidationError):
            CameraModel(fx=-1, fy=500, cx=320, cy=240, width=640, height=480)
        with pytest.raises(ValidationError):
            CameraModel(fx=500, fy=500, cx=700, cy=240, width=640, height=480)


class TestLabeledPointCloud:
    def test_transform_identity(self):
        cloud = LabeledPointCloud([[1, 2, 3]], labels=[4], intensity=[0.5])
        out = transform_cloud(RigidTransform.identity(), cloud)
        np.testing.assert_array_equal(out.points, cloud.points)
        np.testing.assert_array_equal(out.labels, cloud.labels)
        np.testing.assert_array_equal(out.intensity, cloud.intensity)

    def test_pure_translation(self):
        cloud = LabeledPointCloud([[1, 2, 3]])
        out = transform_cloud(RigidTransform.from_translation(0, 0, 1), cloud)
        np.testing.assert_allclose(out.points, [[1, 2, 4]])

    def test_round_trip_inverse(self):
        rng = np.random.default_rng(9)
        cloud = LabeledPointCloud(rng.uniform(-10, 10, (100, 3)))
        T = random_transform(rng)
        back = transform_cloud(T.invert(), transform_cloud(T, cloud))
        np.testing.assert_allclose(back.points, cloud.points, atol=1e-9)

    def test_input_unmodified(self):
        cloud = LabeledPointCloud([[1, 2, 3]])
        before = cloud.points.copy()
        transform_cloud(RigidTransform.from_translation(5, 5, 5), cloud)
        np.testing.assert_array_equal(cloud.points, before)

    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            LabeledPointCloud([[np.nan, 0, 0]])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValidationError):
            LabeledPointCloud([[0, 0, 0]], labels=[1, 2])


class TestImageBuffer:
    def test_formats(self):
        ImageBuffer(np.zeros((4, 6, 3), np.uint8), "RGB8")
        ImageBuffer(np.zeros((4, 6), np.uint8), "GRAY8")
        ImageBuffer(np.zeros((4, 6), np.uint16), "LABEL16")
        ImageBuffer(np.zeros((4, 6), np.float32), "DEPTH32")

    def test_rejects_wrong_dtype(self):
        with pytest.raises(ValidationError):
            ImageBuffer(np.zeros((4, 6), np.uint8), "LABEL16")

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValidationError):
            ImageBuffer(np.zeros((4, 6), np.uint8), "RGB8")

    def test_zeros(self):
        buf = ImageBuffer.zeros(6, 4, "RGB8")
        assert buf.width == 6 and buf.height == 4
        assert buf.data.shape == (4, 6, 3)


class TestTrackCenterline:
    def test_arclengths_computed(self):
        c = TrackCenterline([[0, 0, 0], [3, 0, 0], [3, 4, 0]])
        np.testing.assert_allclose(c.arclengths, [0, 3, 7])
        assert c.length == 7

    def test_rejects_inconsistent_arclengths(self):
        with pytest.raises(ValidationError):
            TrackCenterline([[0, 0, 0], [1, 0, 0]], arclengths=[0, 2])

    def test_point_at(self):
        c = TrackCenterline([[0, 0, 0], [10, 0, 0]])
        np.testing.assert_allclose(c.point_at(2.5), [2.5, 0, 0])
        with pytest.raises(ArclengthOutOfRange):
            c.point_at(11)
        with pytest.raises(ArclengthOutOfRange):
            c.point_at(-0.1)

    def test_project_xy(self):
        c = TrackCenterline([[0, 0, 0], [10, 0, 1]])
        s, foot = c.project_xy([3, 1, 50])
        assert abs(s - 3 * c.length / 10) < 1e-9
        np.testing.assert_allclose(foot[:2], [3, 0], atol=1e-12)

    def test_distance_xy(self):
        c = TrackCenterline([[0, 0, 0], [10, 0, 0]])
        d = c.distance_xy(np.array([[5, 2, 0], [-3, 0, 0], [12, 0, 9]]))
        np.testing.assert_allclose(d, [2, 3, 2], atol=1e-12)

    def test_tangents_straight(self):
        c = TrackCenterline([[0, 0, 0], [5, 0, 0], [10, 0, 0]])
        np.testing.assert_allclose(c.tangent_at(7.0, smooth=3), [1, 0, 0], atol=1e-12)


class TestSemanticClassMap:
    def test_default_round_trip(self):
        m = SemanticClassMap.default()
        assert m.id_of("track") == 1
        assert m.name_of(1) == "track"
        assert m.name_of(m.obstacle_base + 2) == "obstacle_2"
        assert m.contains_id(0)
        assert not m.contains_id(7)

    def test_requires_unlabeled_zero(self):
        with pytest.raises(ValidationError):
            SemanticClassMap({"unlabeled": 1, "track": 2, "platform": 3,
                              "near_track_ground": 4, "pole": 5, "obstacle_base": 10})

    def test_rejects_duplicate_ids(self):
        with pytest.raises(ValidationError):
            SemanticClassMap({"unlabeled": 0, "track": 1, "platform": 1,
                              "near_track_ground": 3, "pole": 4, "obstacle_base": 10})

    def test_validate_labels(self):
        m = SemanticClassMap.default()
        m.validate_labels(np.array([0, 1, 4, 12], np.uint16))
        with pytest.raises(ValidationError):
            m.validate_labels(np.array([0, 7], np.uint16))


class TestPose:
    def test_rejects_nan_timestamp(self):
        with pytest.raises(ValidationError):
            Pose(float("nan"), RigidTransform.identity())

    def test_position(self):
        p = Pose(1.0, RigidTransform.from_translation(1, 2, 3))
        np.testing.assert_array_equal(p.position, [1, 2, 3])
