"""Deterministic synthetic stand-in for the robot dataset.

A 2D sprite world: a value-noise background plane at uniform depth is
viewed by a translating camera, while a three-segment articulated arm
carries a rectangular book sprite, releases it mid-sequence and retracts.
"Real" frames composite the textured arm and book over the background;
"rendered" frames contain the white arm+book silhouette on black, driven
by the reported joint script.  Camera motion is restricted to
translations, so the expected image motion is a pure pixel shift.

Anomaly injectors deviate the real stream only: a falling book
(0.4 px/frame^2 gravity), a near-uniform occluding blob (>= 60% coverage),
camera shake (+-3 px jitter absent from the reported trajectory), and an
arm drifting away from the reported joints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import Image
from .kinematics import CameraIntrinsics, RelativeCameraMotion

ANOMALY_KINDS = ("none", "falling_object", "occlusion", "camera_shake", "arm_deviation")

FRAME_RATE_HZ = 10.0
SCENE_DEPTH_M = 2.0
FOCAL_PX = 100.0
GRAVITY_PX = 0.4
SHAKE_AMPLITUDE_PX = 3.0
OCCLUSION_MIN_COVERAGE = 0.6


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_frames: int = 100
    image_side: int = 64
    anomaly: str = "none"
    anomaly_onset: int = 50
    texture_complexity: float = 1.0

    def __post_init__(self):
        if self.anomaly not in ANOMALY_KINDS:
            raise ValueError(f"unknown anomaly kind {self.anomaly!r}")
        if self.n_frames < 2:
            raise ValueError("need at least two frames")
        if self.image_side % 2 or self.image_side < 32:
            raise ValueError("image_side must be even and >= 32")
        if self.anomaly != "none" and not 0 <= self.anomaly_onset < self.n_frames:
            raise ValueError("anomaly_onset must lie inside the sequence")
        if self.texture_complexity <= 0:
            raise ValueError("texture_complexity must be positive")


@dataclass(frozen=True)
class CameraTrack:
    """Reported camera intrinsics and per-frame centers (identity rotation)."""

    intrinsics: CameraIntrinsics
    centers: np.ndarray  # (T, 3) meters
    depth: float = SCENE_DEPTH_M

    def __post_init__(self):
        arr = np.asarray(self.centers, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "centers", arr)

    def pose_rows(self, t: int) -> np.ndarray:
        pose = np.zeros((3, 4))
        pose[:, :3] = np.eye(3)
        pose[:, 3] = self.centers[t]
        return pose


@dataclass
class Execution:
    id: str
    config: ScenarioConfig
    frames_real: list[Image]
    frames_rendered: list[Image]
    joints: np.ndarray  # (T, 3) radians, the reported script
    camera: CameraTrack
    labels: np.ndarray  # (T,) bool
    sprite_alpha: list[np.ndarray] = field(default_factory=list, repr=False)
    rate: float = FRAME_RATE_HZ

    @property
    def n_frames(self) -> int:
        return len(self.frames_real)


def ground_truth_camera_motion(execution: Execution, t: int) -> RelativeCameraMotion:
    """Scripted relative camera motion between frames t-1 and t.

    Camera shake is a disturbance: it never appears here, exactly as it
    would not appear in odometry derived from commanded joint states.
    """
    if not 1 <= t < execution.n_frames:
        raise ValueError(f"t={t} outside 1..{execution.n_frames - 1}")
    centers = execution.camera.centers
    return RelativeCameraMotion(np.eye(3), centers[t - 1] - centers[t])


# -- background texture ---------------------------------------------------


class _NoiseTexture:
    """Periodic multi-octave value noise sampled at fractional offsets."""

    def __init__(self, rng: np.random.Generator, period_px: float, octaves: int):
        self.period_px = period_px
        self.grids = []
        cells = 8
        for _ in range(octaves):
            self.grids.append(rng.normal(size=(cells, cells)))
            cells *= 2

    def sample(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        out = np.zeros_like(xs, dtype=np.float64)
        amplitude = 1.0
        for grid in self.grids:
            cells = grid.shape[0]
            gx = (xs * cells / self.period_px) % cells
            gy = (ys * cells / self.period_px) % cells
            x0 = gx.astype(int) % cells
            y0 = gy.astype(int) % cells
            x1 = (x0 + 1) % cells
            y1 = (y0 + 1) % cells
            fx = gx - np.floor(gx)
            fy = gy - np.floor(gy)
            val = (
                grid[y0, x0] * (1 - fy) * (1 - fx)
                + grid[y1, x0] * fy * (1 - fx)
                + grid[y0, x1] * (1 - fy) * fx
                + grid[y1, x1] * fy * fx
            )
            out += amplitude * val
            amplitude *= 0.5
        return out


# -- sprites ---------------------------------------------------------------


def _segment_alpha(side: int, p0: np.ndarray, p1: np.ndarray, width: float) -> np.ndarray:
    """Coverage of a thick segment (capsule) with a 1 px soft edge."""
    gy, gx = np.mgrid[0:side, 0:side].astype(np.float64)
    d = p1 - p0
    length_sq = float(d @ d)
    if length_sq < 1e-12:
        dist = np.hypot(gx - p0[0], gy - p0[1])
    else:
        t = ((gx - p0[0]) * d[0] + (gy - p0[1]) * d[1]) / length_sq
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(gx - (p0[0] + t * d[0]), gy - (p0[1] + t * d[1]))
    return np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)


def _rect_alpha(side: int, center: np.ndarray, half_w: float, half_h: float) -> np.ndarray:
    gy, gx = np.mgrid[0:side, 0:side].astype(np.float64)
    ax = np.clip(half_w + 0.5 - np.abs(gx - center[0]), 0.0, 1.0)
    ay = np.clip(half_h + 0.5 - np.abs(gy - center[1]), 0.0, 1.0)
    return ax * ay


def _ellipse_alpha(side: int, center: np.ndarray, rx: float, ry: float) -> np.ndarray:
    gy, gx = np.mgrid[0:side, 0:side].astype(np.float64)
    r = np.hypot((gx - center[0]) / rx, (gy - center[1]) / ry)
    return np.clip((1.0 - r) * max(rx, ry) + 0.5, 0.0, 1.0)


# -- scripts ---------------------------------------------------------------

# (phase, shoulder, elbow, wrist) in degrees; shoulder measured from
# straight-up toward the upper-left, elbow/wrist relative to the parent.
_JOINT_KEYFRAMES = (
    (0.00, 16.0, -10.0, -4.0),
    (0.40, 46.0, 6.0, 4.0),
    (0.50, 50.0, 2.0, 0.0),
    (0.58, 46.0, 6.0, 4.0),
    (1.00, 10.0, -14.0, -8.0),
)
_RELEASE_PHASE = 0.52


def _ease(a: float, b: float, frac: float) -> float:
    return a + (b - a) * (1.0 - math.cos(math.pi * frac)) / 2.0


def _joint_script(n_frames: int) -> np.ndarray:
    phases = np.arange(n_frames) / max(n_frames - 1, 1)
    joints = np.zeros((n_frames, 3))
    for i, phase in enumerate(phases):
        for (p0, *q0), (p1, *q1) in zip(_JOINT_KEYFRAMES, _JOINT_KEYFRAMES[1:]):
            if p0 <= phase <= p1:
                frac = (phase - p0) / (p1 - p0) if p1 > p0 else 0.0
                joints[i] = [math.radians(_ease(a, b, frac)) for a, b in zip(q0, q1)]
                break
        else:
            joints[i] = [math.radians(v) for v in _JOINT_KEYFRAMES[-1][1:]]
    return joints


def release_frame(n_frames: int) -> int:
    return int(_RELEASE_PHASE * (n_frames - 1))


@dataclass(frozen=True)
class _ArmGeometry:
    base: np.ndarray
    lengths: tuple[float, float, float]
    widths: tuple[float, float, float]

    @staticmethod
    def for_side(side: int) -> "_ArmGeometry":
        s = float(side)
        return _ArmGeometry(
            base=np.array([0.80 * s, 1.04 * s]),
            lengths=(0.46 * s, 0.34 * s, 0.15 * s),
            widths=(0.095 * s, 0.07 * s, 0.05 * s),
        )


def _forward_kinematics(geometry: _ArmGeometry, q: np.ndarray) -> list[np.ndarray]:
    """Joint positions [base, elbow, wrist, end-effector] in nominal world
    pixels; the shoulder angle swings the arm up-left from vertical."""
    pts = [geometry.base.copy()]
    angle = 0.0
    for qi, length in zip(q, geometry.lengths):
        angle += qi
        direction = np.array([-math.sin(angle), -math.cos(angle)])
        pts.append(pts[-1] + length * direction)
    return pts


def _book_size(side: int) -> tuple[float, float]:
    return 0.085 * side, 0.055 * side  # half-width, half-height


# -- generation -------------------------------------------------------------


def _camera_pixel_offsets(config: ScenarioConfig) -> np.ndarray:
    """Nominal per-frame background sampling offsets (pixels)."""
    t_len = config.n_frames
    phases = np.arange(t_len) / max(t_len - 1, 1)
    vx = np.zeros(t_len)
    approach = phases < 0.40
    vx[approach] = 1.0 * np.sin(np.pi * phases[approach] / 0.40) ** 2
    retract = phases >= 0.58
    vx[retract] = -0.7 * np.sin(np.pi * (phases[retract] - 0.58) / 0.42) ** 2
    vy = 0.15 * np.sin(2 * np.pi * phases)
    offsets = np.zeros((t_len, 2))
    offsets[:, 0] = np.cumsum(vx) - vx[0]
    offsets[:, 1] = np.cumsum(vy) - vy[0]
    return offsets


def _arm_alpha_and_color(
    side: int,
    geometry: _ArmGeometry,
    joint_positions: list[np.ndarray],
    view_shift: np.ndarray,
    texture_phase: float,
    base_tone: float = 0.22,
    tone_amp: float = 0.10,
) -> tuple[np.ndarray, np.ndarray]:
    """Composite coverage and intensity for the arm segments.

    The pattern lives in limb-local coordinates (along, across) so it
    moves rigidly with each segment and varies in both directions; a flat
    fill would leave interior flow underdetermined.
    """
    alpha = np.zeros((side, side))
    color = np.zeros((side, side))
    gy, gx = np.mgrid[0:side, 0:side].astype(np.float64)
    for idx, (p0, p1) in enumerate(zip(joint_positions, joint_positions[1:])):
        a = _segment_alpha(side, p0 - view_shift, p1 - view_shift, geometry.widths[idx])
        d = p1 - p0
        norm = math.hypot(*d) + 1e-9
        ux, uy = d[0] / norm, d[1] / norm
        rel_x = gx + view_shift[0] - p0[0]
        rel_y = gy + view_shift[1] - p0[1]
        s_local = rel_x * ux + rel_y * uy
        d_local = -rel_x * uy + rel_y * ux
        tone = base_tone + tone_amp * np.sin(
            2.0 * np.pi * s_local / 6.5 + texture_phase + idx
        ) * np.cos(2.0 * np.pi * d_local / 4.7 + 0.7 * idx)
        update = a > alpha
        color = np.where(update, tone, color)
        alpha = np.maximum(alpha, a)
    return alpha, color


def _book_alpha_and_color(
    side: int,
    center: np.ndarray,
    view_shift: np.ndarray,
    base_tone: float = 0.62,
    tone_amp: float = 0.06,
) -> tuple[np.ndarray, np.ndarray]:
    half_w, half_h = _book_size(side)
    shifted = center - view_shift
    alpha = _rect_alpha(side, shifted, half_w, half_h)
    gy, gx = np.mgrid[0:side, 0:side].astype(np.float64)
    color = base_tone + tone_amp * np.sin((gx - shifted[0]) * 1.3) * np.cos(
        (gy - shifted[1]) * 1.1
    )
    return alpha, color


def generate(config: ScenarioConfig) -> Execution:
    """Generate one execution; byte-identical for identical configs."""
    side = config.image_side
    t_len = config.n_frames
    rng_world = np.random.default_rng([config.seed, 11])
    rng_anomaly = np.random.default_rng([config.seed, 23])

    octaves = max(2, min(5, int(round(2 + 2 * config.texture_complexity))))
    texture = _NoiseTexture(rng_world, period_px=4.0 * side, octaves=octaves)
    texture_phase = float(rng_world.uniform(0, 2 * math.pi))

    offsets = _camera_pixel_offsets(config)
    joints = _joint_script(t_len)
    geometry = _ArmGeometry.for_side(side)
    rel_frame = release_frame(t_len)

    fx = fy = FOCAL_PX
    intrinsics = CameraIntrinsics(fx, fy, (side - 1) / 2.0, (side - 1) / 2.0)
    centers = np.zeros((t_len, 3))
    centers[:, 0] = offsets[:, 0] * SCENE_DEPTH_M / fx
    centers[:, 1] = offsets[:, 1] * SCENE_DEPTH_M / fy
    camera = CameraTrack(intrinsics, centers)

    labels = np.zeros(t_len, bool)
    if config.anomaly != "none":
        labels[config.anomaly_onset:] = True

    shake = np.zeros((t_len, 2))
    if config.anomaly == "camera_shake":
        shake[config.anomaly_onset:] = rng_anomaly.uniform(
            -SHAKE_AMPLITUDE_PX, SHAKE_AMPLITUDE_PX, (t_len - config.anomaly_onset, 2)
        )

    occ_center = np.array([side * 0.5, side * 0.5]) + rng_anomaly.uniform(-0.05 * side, 0.05 * side, 2)
    occ_rx = 0.50 * side
    occ_ry = 0.44 * side

    # Book trajectory in nominal world pixels: attached to the
    # end-effector until release, then resting at the release position.
    nominal_book = np.zeros((t_len, 2))
    for t in range(t_len):
        q = joints[min(t, rel_frame)]
        nominal_book[t] = _forward_kinematics(geometry, q)[3]

    real_book = nominal_book.copy()
    if config.anomaly == "falling_object":
        fall_t = np.arange(t_len) - config.anomaly_onset
        falling = fall_t > 0
        real_book[falling, 1] += 0.5 * GRAVITY_PX * fall_t[falling] ** 2

    frames_real: list[Image] = []
    frames_rendered: list[Image] = []
    sprite_alpha: list[np.ndarray] = []
    gy, gx = np.mgrid[0:side, 0:side].astype(np.float64)

    for t in range(t_len):
        view_nominal = offsets[t]
        view_real = view_nominal + shake[t]

        background = texture.sample(gx + view_real[0], gy + view_real[1])
        background = 0.5 + 0.18 * background
        background = np.clip(background, 0.02, 0.98)

        real_joints = joints[t].copy()
        if config.anomaly == "arm_deviation" and t >= config.anomaly_onset:
            drift = min(0.012 * (t - config.anomaly_onset), 0.30)
            real_joints[0] += drift
            real_joints[1] -= 0.6 * drift

        real_positions = _forward_kinematics(geometry, real_joints)
        arm_a, arm_c = _arm_alpha_and_color(
            side, geometry, real_positions, view_real, texture_phase
        )
        book_center = real_book[t].copy()
        if config.anomaly == "arm_deviation" and t >= config.anomaly_onset and t < rel_frame:
            book_center = real_positions[3]  # still in the drifting gripper
        book_a, book_c = _book_alpha_and_color(side, book_center, view_real)

        frame = background * (1 - arm_a) + arm_c * arm_a
        frame = frame * (1 - book_a) + book_c * book_a
        alpha = np.maximum(arm_a, book_a)

        if config.anomaly == "occlusion" and t >= config.anomaly_onset:
            occ_a = _ellipse_alpha(side, occ_center, occ_rx, occ_ry)
            tone = 0.45 + 0.02 * np.sin(gx / side * 2.2) * np.cos(gy / side * 1.9)
            frame = frame * (1 - occ_a) + tone * occ_a

        frames_real.append(Image(np.clip(frame, 0.0, 1.0).astype(np.float32)))
        sprite_alpha.append(alpha)

        # Rendered stream: shaded silhouette on black, as a textured CAD
        # render would look.  Tones stay >= 0.55 so binary thresholding at
        # 0.5 still recovers the mask, while interior gradients keep the
        # silhouette flow well-posed.
        rendered_positions = _forward_kinematics(geometry, joints[t])
        ren_arm_a, ren_arm_c = _arm_alpha_and_color(
            side, geometry, rendered_positions, view_nominal, texture_phase,
            base_tone=0.75, tone_amp=0.18,
        )
        ren_book_a, ren_book_c = _book_alpha_and_color(
            side, nominal_book[t], view_nominal, base_tone=0.80, tone_amp=0.12
        )
        rendered = ren_arm_c * ren_arm_a * (1 - ren_book_a) + ren_book_c * ren_book_a
        frames_rendered.append(Image(np.clip(rendered, 0.0, 1.0).astype(np.float32)))

    return Execution(
        id=f"seed{config.seed}_{config.anomaly}",
        config=config,
        frames_real=frames_real,
        frames_rendered=frames_rendered,
        joints=joints,
        camera=camera,
        labels=labels,
        sprite_alpha=sprite_alpha,
    )
