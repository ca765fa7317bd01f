import math

import numpy as np
import pytest

from motionwatch.errors import DegenerateGeometryError
from motionwatch.imaging import FlowField, Image, Mask, SimilarityTransform
from motionwatch.kinematics import (
    CameraIntrinsics,
    DepthModel,
    RelativeCameraMotion,
    body_error,
    body_mask,
    camera_error,
    expected_correspondences,
    expected_similarity,
    fit_similarity,
    interior_grid,
)


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


K = CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=32.0)


class TestExpectedCorrespondences:
    def test_pure_translation_shifts_all_points(self):
        motion = RelativeCameraMotion(np.eye(3), np.array([0.1, 0.0, 0.0]))
        pts = np.array([[32.0, 32.0], [10.0, 50.0], [60.0, 5.0]])
        pairs = expected_correspondences(K, motion, DepthModel(2.0), pts)
        np.testing.assert_allclose(pairs[:, 1, 0], pts[:, 0] + 5.0, atol=1e-12)
        np.testing.assert_allclose(pairs[:, 1, 1], pts[:, 1], atol=1e-12)

    def test_zero_motion_is_identity(self):
        pairs = expected_correspondences(
            K, RelativeCameraMotion.identity(), DepthModel(1.0), interior_grid(64, 64)
        )
        np.testing.assert_allclose(pairs[:, 1], pairs[:, 0], atol=1e-12)

    def test_optical_axis_rotation_matches_planar_rotation(self):
        angle = 0.01
        motion = RelativeCameraMotion(rot_z(angle), np.zeros(3))
        pts = interior_grid(64, 64)
        pairs = expected_correspondences(K, motion, DepthModel(3.0), pts)
        centered = pts - [K.cx, K.cy]
        c, s = math.cos(angle), math.sin(angle)
        expected = np.stack(
            [c * centered[:, 0] - s * centered[:, 1], s * centered[:, 0] + c * centered[:, 1]],
            axis=1,
        ) + [K.cx, K.cy]
        np.testing.assert_allclose(pairs[:, 1], expected, atol=1e-6)

    def test_general_map_equals_translation_map_when_r_is_identity(self):
        # Both code paths must agree to machine precision for R = I.
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.normal(size=3) * 0.2
            z = rng.uniform(0.5, 5.0)
            motion_t = RelativeCameraMotion(np.eye(3), t)
            pts = interior_grid(64, 64)
            via_fast = expected_correspondences(K, motion_t, DepthModel(z), pts)

            # Force the general epipolar path with an R that is I only
            # numerically (exactly I here, but routed generally).
            k = K.matrix()
            hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
            general = (k @ np.eye(3) @ np.linalg.inv(k) @ hom.T).T
            general += (k @ t)[None, :] / z
            general = general[:, :2] / general[:, 2:3]
            np.testing.assert_allclose(via_fast[:, 1], general, rtol=0, atol=1e-9)

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(ValueError):
            DepthModel(0.0)
        with pytest.raises(ValueError):
            DepthModel(np.array([1.0, -2.0]))

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            expected_correspondences(
                K, RelativeCameraMotion.identity(), DepthModel(1.0), np.array([[1.0, 2.0]])
            )


class TestFitSimilarity:
    def test_pure_translation(self):
        pairs = np.array([[[0.0, 0.0], [3.0, 4.0]], [[10.0, 0.0], [13.0, 4.0]]])
        tf = fit_similarity(pairs)
        assert (tf.t_x, tf.t_y) == pytest.approx((3.0, 4.0), abs=1e-12)
        assert tf.sigma == pytest.approx(1.0, abs=1e-12)
        assert tf.theta == pytest.approx(0.0, abs=1e-12)

    def test_pure_scale(self):
        pairs = np.array(
            [[[0.0, 0.0], [0.0, 0.0]], [[2.0, 0.0], [4.0, 0.0]], [[0.0, 2.0], [0.0, 4.0]]]
        )
        tf = fit_similarity(pairs)
        assert tf.sigma == pytest.approx(2.0, abs=1e-12)
        assert tf.theta == pytest.approx(0.0, abs=1e-12)
        assert (tf.t_x, tf.t_y) == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_pure_rotation(self):
        pairs = np.array(
            [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [-1.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
        )
        tf = fit_similarity(pairs)
        assert tf.theta == pytest.approx(math.pi / 2, abs=1e-12)
        assert tf.sigma == pytest.approx(1.0, abs=1e-12)
        assert (tf.t_x, tf.t_y) == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_recovers_random_generating_transforms(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            tf = SimilarityTransform(
                t_x=rng.uniform(-10, 10),
                t_y=rng.uniform(-10, 10),
                sigma=rng.uniform(0.2, 4.0),
                theta=rng.uniform(-math.pi, math.pi),
            )
            src = rng.normal(size=(int(rng.integers(2, 12)), 2)) * 10
            dst = tf.apply(src)
            got = fit_similarity(np.stack([src, dst], axis=1))
            assert abs(got.t_x - tf.t_x) < 1e-9
            assert abs(got.t_y - tf.t_y) < 1e-9
            assert abs(got.sigma - tf.sigma) < 1e-9
            assert abs(math.remainder(got.theta - tf.theta, 2 * math.pi)) < 1e-9

    def test_translation_equivariance(self):
        rng = np.random.default_rng(2)
        src = rng.normal(size=(6, 2)) * 5
        dst = SimilarityTransform(1.0, -2.0, 1.3, 0.4).apply(src)
        base = fit_similarity(np.stack([src, dst], axis=1))
        shifted = fit_similarity(np.stack([src, dst + [2.5, -1.5]], axis=1))
        assert shifted.t_x - base.t_x == pytest.approx(2.5, abs=1e-9)
        assert shifted.t_y - base.t_y == pytest.approx(-1.5, abs=1e-9)

    def test_coincident_sources_rejected(self):
        pairs = np.array([[[1.0, 1.0], [0.0, 0.0]], [[1.0, 1.0], [2.0, 2.0]]])
        with pytest.raises(DegenerateGeometryError):
            fit_similarity(pairs)


class TestCameraError:
    def test_equal_transforms(self):
        tf = SimilarityTransform(5.0, 0.0)
        assert camera_error(tf, tf) == 0.0

    def test_translation_difference(self):
        a = SimilarityTransform(5.0, 0.0)
        b = SimilarityTransform(5.4, -0.3)
        assert camera_error(a, b) == pytest.approx(0.7, abs=1e-12)

    def test_weighted_scale_term(self):
        a = SimilarityTransform(0.0, 0.0, 1.0)
        b = SimilarityTransform(0.0, 0.0, 1.1)
        assert camera_error(a, b, w_sigma=10.0) == pytest.approx(1.0, abs=1e-9)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = SimilarityTransform(*rng.uniform(-3, 3, 2), rng.uniform(0.5, 2), rng.uniform(-1, 1))
            b = SimilarityTransform(*rng.uniform(-3, 3, 2), rng.uniform(0.5, 2), rng.uniform(-1, 1))
            e = camera_error(a, b, w_sigma=1.0, w_theta=1.0)
            assert e >= 0.0
            assert e == pytest.approx(camera_error(b, a, w_sigma=1.0, w_theta=1.0), abs=1e-12)


class TestBodyMask:
    def test_black_rendering_gives_empty_mask(self):
        mask = body_mask(Image(np.zeros((32, 32), np.float32)))
        assert mask.is_empty()

    def test_square_without_dilation_is_exact(self):
        data = np.zeros((32, 32), np.float32)
        data[10:20, 10:20] = 1.0
        mask = body_mask(Image(data), dilate_radius=0)
        np.testing.assert_array_equal(mask.bits, data >= 0.5)
        assert mask.count() == 100

    def test_ring_interior_filled(self):
        data = np.zeros((48, 48), np.float32)
        yy, xx = np.mgrid[0:48, 0:48]
        r = np.hypot(yy - 24, xx - 24)
        ring = (r >= 10) & (r <= 14)
        data[ring] = 1.0
        mask = body_mask(Image(data), dilate_radius=0)

        # Flood-fill oracle: everything not reachable from the border
        # through non-ring pixels belongs to the filled mask.
        from scipy import ndimage

        outside = np.zeros((48, 48), bool)
        outside[0, :] = outside[-1, :] = outside[:, 0] = outside[:, -1] = True
        outside = ndimage.binary_propagation(outside & ~ring, mask=~ring)
        expected = ~outside
        np.testing.assert_array_equal(mask.bits, expected)

    def test_dilation_grows_mask(self):
        data = np.zeros((32, 32), np.float32)
        data[15, 15] = 1.0
        grown = body_mask(Image(data), dilate_radius=2)
        assert grown.count() == 13  # radius-2 disk


class TestBodyError:
    def test_identical_flows(self):
        flow = FlowField(np.full((8, 8), 1.5, np.float32), np.full((8, 8), -0.5, np.float32))
        bits = np.zeros((8, 8), bool)
        bits[2:6, 2:6] = True
        assert body_error(flow, flow, Mask(bits)) == 0.0

    def test_median_difference(self):
        obs = FlowField(np.full((8, 8), 1.0, np.float32), np.full((8, 8), 0.0, np.float32))
        ren = FlowField(np.full((8, 8), 3.0, np.float32), np.full((8, 8), 1.0, np.float32))
        assert body_error(obs, ren, Mask.full(8, 8)) == pytest.approx(3.0, abs=1e-12)

    def test_empty_mask_scores_zero(self):
        obs = FlowField(np.full((8, 8), 9.0, np.float32), np.zeros((8, 8), np.float32))
        ren = FlowField.zeros(8, 8)
        assert body_error(obs, ren, Mask.empty(8, 8)) == 0.0

    def test_invariant_to_changes_outside_mask(self):
        rng = np.random.default_rng(4)
        bits = np.zeros((12, 12), bool)
        bits[3:8, 4:9] = True
        mask = Mask(bits)
        dx = rng.normal(size=(12, 12)).astype(np.float32)
        dy = rng.normal(size=(12, 12)).astype(np.float32)
        ren = FlowField(rng.normal(size=(12, 12)).astype(np.float32),
                        rng.normal(size=(12, 12)).astype(np.float32))
        base = body_error(FlowField(dx, dy), ren, mask)
        dx2 = dx.copy()
        dy2 = dy.copy()
        dx2[~bits] = 99.0
        dy2[~bits] = -99.0
        assert body_error(FlowField(dx2, dy2), ren, mask) == pytest.approx(base, abs=1e-12)


class TestExpectedSimilarity:
    def test_translation_projects_to_pixel_shift(self):
        motion = RelativeCameraMotion(np.eye(3), np.array([0.2 * 2.0 / 100.0, 0.0, 0.0]))
        tf = expected_similarity(K, motion, DepthModel(2.0), 64, 64)
        assert tf.t_x == pytest.approx(0.2, abs=1e-9)
        assert tf.t_y == pytest.approx(0.0, abs=1e-9)
        assert tf.sigma == pytest.approx(1.0, abs=1e-9)
