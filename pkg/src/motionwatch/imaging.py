"""Core image, optical-flow, mask and similarity-transform types.

Images are stored as float32 scalars in [0, 1] (8-bit inputs are divided
by 255 on load).  Flow fields carry per-pixel horizontal (dx) and vertical
(dy) displacement in pixels.  All types freeze their arrays after
construction so instances can be shared freely across threads.

Similarity transforms are the plain map ``p' = sigma * R(theta) @ p + t``
on 2D points.  When a transform is applied to an *image* (see
:func:`warp_by_similarity`), point coordinates are measured relative to
the image center, so a pure rotation rotates the image about its center.
This matches how the frequency-domain registration reports rotations and
keeps translation components directly comparable between the kinematic
expectation and the registered measurement.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import EmptySelectionError, FlowFormatError

# Rec. 601 luma weights used for all RGB -> gray conversion.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

FLO_MAGIC = 202021.25


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Image:
    """A gray (H, W) or RGB (H, W, 3) image with intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            pass
        elif arr.ndim == 3 and arr.shape[2] == 3:
            pass
        else:
            raise ValueError(f"image must be (H, W) or (H, W, 3), got {arr.shape}")
        if arr.size == 0:
            raise ValueError("image must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def to_gray(self) -> "Image":
        if self.channels == 1:
            return self
        r, g, b = LUMA_WEIGHTS
        gray = r * self.data[..., 0] + g * self.data[..., 1] + b * self.data[..., 2]
        return Image(np.clip(gray, 0.0, 1.0))


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement field: dx along columns, dy along rows."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = np.asarray(self.dx, dtype=np.float32)
        dy = np.asarray(self.dy, dtype=np.float32)
        if dx.ndim != 2 or dx.shape != dy.shape:
            raise ValueError(f"dx/dy must be matching 2D arrays, got {dx.shape} and {dy.shape}")
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise ValueError("flow contains non-finite values")
        object.__setattr__(self, "dx", _freeze(dx))
        object.__setattr__(self, "dy", _freeze(dy))

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx.astype(np.float64), self.dy.astype(np.float64))

    @staticmethod
    def zeros(height: int, width: int) -> "FlowField":
        return FlowField(np.zeros((height, width), np.float32), np.zeros((height, width), np.float32))


@dataclass(frozen=True)
class Mask:
    """Boolean pixel-selection mask (True = selected)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.dtype != np.bool_:
            bits = bits.astype(bool)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def is_empty(self) -> bool:
        return self.count() == 0

    @staticmethod
    def full(height: int, width: int) -> "Mask":
        return Mask(np.ones((height, width), bool))

    @staticmethod
    def empty(height: int, width: int) -> "Mask":
        return Mask(np.zeros((height, width), bool))


@dataclass(frozen=True)
class SimilarityTransform:
    """Translation + uniform scale + rotation: ``p' = sigma * R(theta) @ p + t``."""

    t_x: float = 0.0
    t_y: float = 0.0
    sigma: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        for name in ("t_x", "t_y", "sigma", "theta"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        # Canonical rotation range (-pi, pi].
        theta = math.remainder(self.theta, 2.0 * math.pi)
        if theta <= -math.pi:
            theta += 2.0 * math.pi
        object.__setattr__(self, "theta", theta)

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform()

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix of the transform."""
        c = self.sigma * math.cos(self.theta)
        s = self.sigma * math.sin(self.theta)
        return np.array(
            [[c, -s, self.t_x],
             [s, c, self.t_y],
             [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (N, 2) array of (x, y) points."""
        pts = np.asarray(points, dtype=np.float64)
        c = math.cos(self.theta)
        s = math.sin(self.theta)
        x = self.sigma * (c * pts[..., 0] - s * pts[..., 1]) + self.t_x
        y = self.sigma * (s * pts[..., 0] + c * pts[..., 1]) + self.t_y
        return np.stack([x, y], axis=-1)

    def inverse(self) -> "SimilarityTransform":
        inv_sigma = 1.0 / self.sigma
        c = math.cos(-self.theta)
        s = math.sin(-self.theta)
        tx = -inv_sigma * (c * self.t_x - s * self.t_y)
        ty = -inv_sigma * (s * self.t_x + c * self.t_y)
        return SimilarityTransform(tx, ty, inv_sigma, -self.theta)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Return self after other: ``(self.compose(other)).apply(p) == self.apply(other.apply(p))``."""
        m = self.matrix() @ other.matrix()
        sigma = math.hypot(m[0, 0], m[1, 0])
        theta = math.atan2(m[1, 0], m[0, 0])
        return SimilarityTransform(m[0, 2], m[1, 2], sigma, theta)


def load_image(path: str | Path) -> Image:
    """Load a PNG/PGM image; 8-bit values are divided by 255."""
    with PILImage.open(path) as pil:
        if pil.mode in ("L", "I;16", "I"):
            arr = np.asarray(pil.convert("L"), dtype=np.float32) / 255.0
        else:
            arr = np.asarray(pil.convert("RGB"), dtype=np.float32) / 255.0
    return Image(arr)


def save_image(img: Image, path: str | Path) -> None:
    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample `data` at fractional (x, y) positions, clamping to the edges."""
    coords = np.stack([ys.ravel(), xs.ravel()])
    out = ndimage.map_coordinates(data.astype(np.float64), coords, order=1, mode="nearest")
    return out.reshape(xs.shape)


def _resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = data.shape[:2]
    # Pixel-center convention: u_in = (u_out + 0.5) * in/out - 0.5 (exact
    # identity when in == out).
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    if data.ndim == 2:
        return bilinear_sample(data, gx, gy)
    return np.stack([bilinear_sample(data[..., c], gx, gy) for c in range(data.shape[2])], axis=-1)


def resize_scale_for_side(height: int, width: int, side: int) -> tuple[int, int, float]:
    """Output (H, W) and scale for a shorter-edge resize to `side`.

    The long edge uses round-half-up.  Upscaling is rejected: `side` must
    not exceed the shorter input edge.
    """
    short = min(height, width)
    if side > short:
        raise ValueError(f"side {side} exceeds shorter input edge {short}")
    scale = side / short
    if height <= width:
        out_h = side
        out_w = int(math.floor(width * scale + 0.5))
    else:
        out_w = side
        out_h = int(math.floor(height * scale + 0.5))
    return out_h, out_w, scale


def resize_center_crop(img: Image, side: int) -> Image:
    """Aspect-preserving resize of the shorter edge to `side`, then center crop."""
    if side <= 0 or side % 2 != 0:
        raise ValueError(f"side must be a positive even integer, got {side}")
    out_h, out_w, _ = resize_scale_for_side(img.height, img.width, side)
    if side > out_h or side > out_w:
        raise ValueError(f"side {side} exceeds resized dimensions {out_h}x{out_w}")
    if (out_h, out_w) == (img.height, img.width):
        resized = img.data.astype(np.float64)
    else:
        resized = _resize_bilinear(img.data, out_h, out_w)
    top = (out_h - side) // 2
    left = (out_w - side) // 2
    cropped = resized[top:top + side, left:left + side]
    return Image(np.clip(cropped, 0.0, 1.0))


def resize_flow(flow: FlowField, side: int) -> FlowField:
    """Shorter-edge resize + center crop of a flow field.

    Displacement values are rescaled by the resize factor so they stay in
    output-pixel units.
    """
    if side <= 0 or side % 2 != 0:
        raise ValueError(f"side must be a positive even integer, got {side}")
    out_h, out_w, scale = resize_scale_for_side(flow.height, flow.width, side)
    if side > out_h or side > out_w:
        raise ValueError(f"side {side} exceeds resized dimensions {out_h}x{out_w}")
    if (out_h, out_w) == (flow.height, flow.width):
        return flow
    dx = _resize_bilinear(flow.dx, out_h, out_w) * scale
    dy = _resize_bilinear(flow.dy, out_h, out_w) * scale
    top = (out_h - side) // 2
    left = (out_w - side) // 2
    return FlowField(dx[top:top + side, left:left + side], dy[top:top + side, left:left + side])


def lower_median(values: np.ndarray) -> float:
    """Median with the lower element chosen for even counts."""
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise EmptySelectionError("median of an empty selection")
    k = (vals.size - 1) // 2
    return float(np.partition(vals, k)[k])


def masked_median(flow: FlowField, mask: Mask) -> tuple[float, float]:
    """Channel-wise lower median of the flow over the selected pixels."""
    if (mask.height, mask.width) != (flow.height, flow.width):
        raise ValueError(
            f"mask {mask.height}x{mask.width} does not match flow {flow.height}x{flow.width}"
        )
    sel = mask.bits
    if not sel.any():
        raise EmptySelectionError("mask selects no pixels")
    return lower_median(flow.dx[sel]), lower_median(flow.dy[sel])


def warp_by_similarity(img: Image, tf: SimilarityTransform) -> Image:
    """Warp an image so its content moves by `tf` (center-relative coordinates).

    Inverse bilinear warp; samples falling outside the image take the
    nearest edge value.
    """
    if img.channels != 1:
        raise ValueError("warp_by_similarity expects a single-channel image")
    h, w = img.height, img.width
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    inv = tf.inverse()
    src = inv.apply(np.stack([(gx - cx).ravel(), (gy - cy).ravel()], axis=-1))
    sx = (src[:, 0] + cx).reshape(h, w)
    sy = (src[:, 1] + cy).reshape(h, w)
    out = bilinear_sample(img.data, sx, sy)
    return Image(np.clip(out, 0.0, 1.0))


def displacement_field(tf: SimilarityTransform, height: int, width: int) -> FlowField:
    """Per-pixel displacement induced by `tf` in center-relative coordinates."""
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    gx, gy = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    moved = tf.apply(np.stack([(gx - cx).ravel(), (gy - cy).ravel()], axis=-1))
    dx = moved[:, 0].reshape(height, width) - (gx - cx)
    dy = moved[:, 1].reshape(height, width) - (gy - cy)
    return FlowField(dx.astype(np.float32), dy.astype(np.float32))


def write_flo(flow: FlowField, path: str | Path) -> None:
    """Write Middlebury .flo: magic, int32 width/height, interleaved float32 (dx, dy)."""
    h, w = flow.height, flow.width
    payload = np.empty((h, w, 2), dtype="<f4")
    payload[..., 0] = flow.dx
    payload[..., 1] = flow.dy
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(payload.tobytes())


def read_flo(path: str | Path) -> FlowField:
    """Read a Middlebury .flo file; round-trips with :func:`write_flo` bit-exactly."""
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12:
            raise FlowFormatError(f"{path}: truncated header")
        magic, w, h = struct.unpack("<fii", head)
        if magic != FLO_MAGIC:
            raise FlowFormatError(f"{path}: bad magic {magic!r}")
        if w <= 0 or h <= 0:
            raise FlowFormatError(f"{path}: invalid dimensions {w}x{h}")
        payload = f.read(4 * 2 * w * h)
        if len(payload) != 4 * 2 * w * h:
            raise FlowFormatError(f"{path}: truncated payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    return FlowField(data[..., 0].copy(), data[..., 1].copy())
