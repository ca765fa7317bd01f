import math
import struct

import numpy as np
import pytest

from motionwatch.errors import EmptySelectionError, FlowFormatError
from motionwatch.imaging import (
    FlowField,
    Image,
    Mask,
    SimilarityTransform,
    displacement_field,
    lower_median,
    masked_median,
    read_flo,
    resize_center_crop,
    resize_flow,
    warp_by_similarity,
    write_flo,
)


def checker_image(h, w, period=8, seed=None):
    if seed is not None:
        rng = np.random.default_rng(seed)
        return Image(rng.uniform(0.0, 1.0, (h, w)).astype(np.float32))
    gy, gx = np.mgrid[0:h, 0:w]
    return Image((((gy // period) + (gx // period)) % 2).astype(np.float32))


def smooth_image(h, w):
    # Band-limited content: bilinear round trips only make sense on images
    # whose curvature per pixel is small.
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    data = 0.5 + 0.15 * np.sin(2 * np.pi * gx / 40.0) * np.cos(2 * np.pi * gy / 36.0)
    data += 0.1 * (gx + gy) / (h + w)
    return Image(data.astype(np.float32))


class TestTypes:
    def test_image_range_validation(self):
        with pytest.raises(ValueError):
            Image(np.full((4, 4), 1.5, np.float32))
        with pytest.raises(ValueError):
            Image(np.full((4, 4), np.nan, np.float32))

    def test_flow_shape_validation(self):
        with pytest.raises(ValueError):
            FlowField(np.zeros((4, 4), np.float32), np.zeros((4, 5), np.float32))

    def test_arrays_frozen(self):
        img = checker_image(8, 8)
        with pytest.raises(ValueError):
            img.data[0, 0] = 0.5

    def test_transform_requires_positive_scale(self):
        with pytest.raises(ValueError):
            SimilarityTransform(sigma=0.0)

    def test_transform_inverse_composes_to_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            tf = SimilarityTransform(
                t_x=rng.uniform(-10, 10),
                t_y=rng.uniform(-10, 10),
                sigma=rng.uniform(0.3, 3.0),
                theta=rng.uniform(-math.pi, math.pi),
            )
            ident = tf.compose(tf.inverse())
            assert abs(ident.t_x) < 1e-9
            assert abs(ident.t_y) < 1e-9
            assert abs(ident.sigma - 1.0) < 1e-9
            assert abs(ident.theta) < 1e-9

    def test_transform_apply_matches_matrix(self):
        tf = SimilarityTransform(1.0, -2.0, 1.5, 0.3)
        pts = np.random.default_rng(0).uniform(-5, 5, (20, 2))
        hom = np.concatenate([pts, np.ones((20, 1))], axis=1)
        expected = (tf.matrix() @ hom.T).T[:, :2]
        np.testing.assert_allclose(tf.apply(pts), expected, atol=1e-12)


class TestResizeCenterCrop:
    def test_identity_on_matching_square(self):
        img = checker_image(64, 64, seed=1)
        out = resize_center_crop(img, 64)
        np.testing.assert_array_equal(out.data, img.data)

    def test_wide_input_crops_columns(self):
        # 128x64 input: short edge already 64, so pure crop of columns 32..96.
        img = checker_image(64, 128, seed=2)
        out = resize_center_crop(img, 64)
        np.testing.assert_allclose(out.data, img.data[:, 32:96], atol=1e-7)

    def test_vga_resize_geometry(self):
        # 640x480 -> short edge 480 -> 64, width 640 -> 85.333 -> 85 (round
        # half-up), then crop columns 10..74.
        img = checker_image(480, 640, period=40)
        out = resize_center_crop(img, 64)
        assert out.data.shape == (64, 64)

    def test_rejects_bad_side(self):
        img = checker_image(16, 16)
        with pytest.raises(ValueError):
            resize_center_crop(img, 0)
        with pytest.raises(ValueError):
            resize_center_crop(img, 32)


class TestMaskedMedian:
    def test_uniform_flow(self):
        flow = FlowField(np.full((4, 4), 2.0, np.float32), np.full((4, 4), 3.0, np.float32))
        assert masked_median(flow, Mask.full(4, 4)) == (2.0, 3.0)

    def test_outlier_robustness(self):
        dx = np.array([[1.0, 2.0, 100.0]], np.float32)
        flow = FlowField(dx, np.zeros_like(dx))
        med_x, _ = masked_median(flow, Mask.full(1, 3))
        assert med_x == 2.0

    def test_even_count_takes_lower_median(self):
        dx = np.array([[100.0, 2.0, 1.0, 3.0]], np.float32)
        flow = FlowField(dx, np.zeros_like(dx))
        med_x, _ = masked_median(flow, Mask.full(1, 4))
        # Sort-based oracle: sorted {1,2,3,100}, lower of the middle pair.
        assert med_x == 2.0

    def test_empty_mask_raises(self):
        flow = FlowField.zeros(4, 4)
        with pytest.raises(EmptySelectionError):
            masked_median(flow, Mask.empty(4, 4))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        vals = rng.normal(size=25).astype(np.float32)
        base = lower_median(vals)
        for _ in range(10):
            assert lower_median(rng.permutation(vals)) == base

    def test_single_outlier_moves_median_within_order_statistics(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            vals = np.sort(rng.normal(size=21))
            k = (vals.size - 1) // 2
            corrupted = vals.copy()
            corrupted[rng.integers(vals.size)] = rng.normal() * 100
            med = lower_median(corrupted)
            # The median of a singly-corrupted sample stays within the
            # adjacent order statistics of the clean sample.
            assert vals[k - 1] <= med <= vals[k + 1]


class TestWarpBySimilarity:
    def test_identity(self):
        img = checker_image(32, 32, seed=5)
        out = warp_by_similarity(img, SimilarityTransform.identity())
        np.testing.assert_allclose(out.data, img.data, atol=1e-7)

    def test_translation_roundtrip(self):
        img = checker_image(32, 32, seed=6)
        fwd = warp_by_similarity(img, SimilarityTransform(t_x=1.0))
        back = warp_by_similarity(fwd, SimilarityTransform(t_x=-1.0))
        np.testing.assert_allclose(back.data[4:-4, 4:-4], img.data[4:-4, 4:-4], atol=1e-6)

    def test_quarter_turn_on_symmetric_cross(self):
        img = np.zeros((33, 33), np.float32)
        img[14:19, :] = 1.0
        img[:, 14:19] = 1.0
        cross = Image(img)
        out = warp_by_similarity(cross, SimilarityTransform(theta=math.pi / 2))
        np.testing.assert_allclose(out.data, cross.data, atol=1e-3)

    def test_inverse_composition_restores_interior(self):
        rng = np.random.default_rng(8)
        img = smooth_image(48, 48)
        for _ in range(5):
            tf = SimilarityTransform(
                t_x=rng.uniform(-2, 2),
                t_y=rng.uniform(-2, 2),
                sigma=rng.uniform(0.9, 1.1),
                theta=rng.uniform(-0.2, 0.2),
            )
            there = warp_by_similarity(img, tf)
            back = warp_by_similarity(there, tf.inverse())
            err = np.abs(back.data[8:-8, 8:-8] - img.data[8:-8, 8:-8])
            assert err.mean() < 1e-3

    def test_displacement_field_matches_transform(self):
        tf = SimilarityTransform(2.0, -1.0, 1.05, 0.1)
        disp = displacement_field(tf, 9, 9)
        # Center pixel is the coordinate origin: displacement there is t.
        assert abs(disp.dx[4, 4] - 2.0) < 1e-6
        assert abs(disp.dy[4, 4] + 1.0) < 1e-6


class TestFloIO:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        for i in range(5):
            h, w = rng.integers(1, 40, 2)
            flow = FlowField(
                rng.normal(size=(h, w)).astype(np.float32),
                rng.normal(size=(h, w)).astype(np.float32),
            )
            path = tmp_path / f"f{i}.flo"
            write_flo(flow, path)
            back = read_flo(path)
            assert back.dx.tobytes() == flow.dx.tobytes()
            assert back.dy.tobytes() == flow.dy.tobytes()

    def test_hand_assembled_bytes(self, tmp_path):
        flow = FlowField(np.array([[1.0, 0.5]], np.float32), np.array([[-1.0, 0.0]], np.float32))
        path = tmp_path / "tiny.flo"
        write_flo(flow, path)
        blob = path.read_bytes()
        expected = struct.pack("<f", 202021.25) + struct.pack("<ii", 2, 1)
        expected += struct.pack("<ffff", 1.0, -1.0, 0.5, 0.0)
        assert len(blob) == 28
        assert blob == expected

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(struct.pack("<fii", 1234.5, 1, 1) + b"\x00" * 8)
        with pytest.raises(FlowFormatError):
            read_flo(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.flo"
        path.write_bytes(struct.pack("<fii", 202021.25, 4, 4) + b"\x00" * 16)
        with pytest.raises(FlowFormatError):
            read_flo(path)


class TestResizeFlow:
    def test_halving_rescales_magnitudes(self):
        dx = np.full((64, 64), 2.0, np.float32)
        dy = np.full((64, 64), -4.0, np.float32)
        out = resize_flow(FlowField(dx, dy), 32)
        assert out.dx.shape == (32, 32)
        np.testing.assert_allclose(out.dx, 1.0, atol=1e-6)
        np.testing.assert_allclose(out.dy, -2.0, atol=1e-6)

    def test_identity_when_sides_match(self):
        flow = FlowField.zeros(32, 32)
        assert resize_flow(flow, 32) is flow
