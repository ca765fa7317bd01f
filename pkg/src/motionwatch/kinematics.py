"""Expected image motion from known camera motion and rendered silhouettes.

Camera-induced pixel motion follows the epipolar point-transfer map for a
calibrated camera pair; the expected transform is fitted to a grid of
transferred points and compared against the registered transform.  Body
motion is compared through channel-wise masked flow medians over the
rendered-silhouette mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateGeometryError, EmptySelectionError
from .imaging import FlowField, Image, Mask, SimilarityTransform, masked_median


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RelativeCameraMotion:
    """Rigid motion mapping points in the first camera frame to the second."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        r.setflags(write=False)
        t.setflags(write=False)

    @staticmethod
    def identity() -> "RelativeCameraMotion":
        return RelativeCameraMotion(np.eye(3), np.zeros(3))

    def is_pure_translation(self, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.rotation, np.eye(3), atol=atol))


@dataclass(frozen=True)
class DepthModel:
    """Scene depth: a single uniform value or one depth per point."""

    z: float | np.ndarray

    def __post_init__(self):
        if np.isscalar(self.z):
            if float(self.z) <= 0:
                raise ValueError("depth must be positive")
            object.__setattr__(self, "z", float(self.z))
        else:
            arr = np.asarray(self.z, dtype=np.float64)
            if arr.ndim != 1 or (arr <= 0).any():
                raise ValueError("per-point depths must be a positive 1D array")
            arr.setflags(write=False)
            object.__setattr__(self, "z", arr)

    @property
    def uniform(self) -> bool:
        return np.isscalar(self.z)

    def per_point(self, n: int) -> np.ndarray:
        if self.uniform:
            return np.full(n, self.z)
        arr = self.z
        if arr.shape[0] != n:
            raise ValueError(f"depth count {arr.shape[0]} does not match {n} points")
        return arr


def expected_correspondences(
    intrinsics: CameraIntrinsics,
    motion: RelativeCameraMotion,
    depth: DepthModel,
    points: np.ndarray,
) -> np.ndarray:
    """Transfer image points through the calibrated two-view map.

    `points` is (N, 2) pixel positions in the first view; returns (N, 2, 2)
    pairs (x, x').  The pure-translation case reduces exactly to adding
    K t / Z to each point.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (x, y) points")
    k = intrinsics.matrix()
    z = depth.per_point(pts.shape[0])

    hom = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    if motion.is_pure_translation():
        moved = hom + (k @ motion.translation)[None, :] / z[:, None]
    else:
        k_inv = np.linalg.inv(k)
        moved = (k @ motion.rotation @ k_inv @ hom.T).T
        moved += (k @ motion.translation)[None, :] / z[:, None]
    moved = moved[:, :2] / moved[:, 2:3]
    return np.stack([pts, moved], axis=1)


def interior_grid(width: int, height: int, n: int = 8) -> np.ndarray:
    """Regular n-by-n grid of sample points away from the image border."""
    xs = (np.arange(n) + 0.5) * width / n
    ys = (np.arange(n) + 0.5) * height / n
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def fit_similarity(pairs: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity from (N, 2, 2) point pairs (x, x').

    Closed form via the centered complex cross-covariance; exact on
    noiseless similarity-generated pairs.
    """
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1:] != (2, 2) or arr.shape[0] < 2:
        raise ValueError("need at least two (x, x') pairs")
    src = arr[:, 0, 0] + 1j * arr[:, 0, 1]
    dst = arr[:, 1, 0] + 1j * arr[:, 1, 1]

    src_mean = src.mean()
    dst_mean = dst.mean()
    src_c = src - src_mean
    dst_c = dst - dst_mean
    power = np.vdot(src_c, src_c).real
    if power < 1e-24:
        raise DegenerateGeometryError("all source points coincide")
    a = np.vdot(src_c, dst_c) / power  # vdot conjugates the first argument
    sigma = abs(a)
    if sigma < 1e-12:
        raise DegenerateGeometryError("target points collapse to a point")
    theta = math.atan2(a.imag, a.real)
    t = dst_mean - a * src_mean
    return SimilarityTransform(t.real, t.imag, sigma, theta)


def expected_similarity(
    intrinsics: CameraIntrinsics,
    motion: RelativeCameraMotion,
    depth: DepthModel,
    width: int,
    height: int,
    grid_n: int = 8,
) -> SimilarityTransform:
    """Expected image-plane transform for a frame pair.

    Points are transferred on an interior grid and the similarity is
    fitted in principal-point-relative coordinates so the result is
    directly comparable with the registration estimate.
    """
    pairs = expected_correspondences(
        intrinsics, motion, depth, interior_grid(width, height, grid_n)
    )
    centered = pairs - np.array([intrinsics.cx, intrinsics.cy])[None, None, :]
    return fit_similarity(centered)


def camera_error(
    expected: SimilarityTransform,
    observed: SimilarityTransform,
    w_sigma: float = 0.0,
    w_theta: float = 0.0,
) -> float:
    """Absolute translation difference, optionally weighting scale/rotation.

    The default compares translations only (the use case where camera
    motion is translational); weights fold |d sigma| and the wrapped
    |d theta| into the sum.
    """
    err = abs(expected.t_x - observed.t_x) + abs(expected.t_y - observed.t_y)
    if w_sigma:
        err += w_sigma * abs(expected.sigma - observed.sigma)
    if w_theta:
        dt = math.remainder(expected.theta - observed.theta, 2.0 * math.pi)
        err += w_theta * abs(dt)
    return err


def body_mask(rendered: Image, threshold: float = 0.5, dilate_radius: int = 2) -> Mask:
    """Silhouette mask from a rendered body-only frame.

    Pixels at or above `threshold` are selected, enclosed holes are
    filled, and the region is dilated to absorb silhouette aliasing
    between the real and rendered streams.
    """
    if rendered.channels != 1:
        raise ValueError("body_mask expects a single-channel rendering")
    bits = rendered.data >= threshold
    if bits.any():
        bits = ndimage.binary_fill_holes(bits)
        if dilate_radius > 0:
            r = dilate_radius
            yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
            disk = (xx * xx + yy * yy) <= r * r
            bits = ndimage.binary_dilation(bits, structure=disk)
    return Mask(bits)


def body_error(observed: FlowField, rendered_flow: FlowField, mask: Mask) -> float:
    """Channel-wise absolute difference of masked flow medians.

    An empty mask means the body is not visible; by convention that frame
    contributes no body-motion error.
    """
    if (observed.height, observed.width) != (rendered_flow.height, rendered_flow.width):
        raise ValueError("flow dimensions disagree")
    if mask.is_empty():
        return 0.0
    try:
        obs_x, obs_y = masked_median(observed, mask)
        ren_x, ren_y = masked_median(rendered_flow, mask)
    except EmptySelectionError:  # pragma: no cover - guarded above
        return 0.0
    return abs(ren_x - obs_x) + abs(ren_y - obs_y)
