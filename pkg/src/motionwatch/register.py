"""Frequency-domain image registration.

Translation is recovered by phase correlation (normalized cross-power
spectrum, subpixel parabolic refinement).  Rotation and scale are
recovered from log-polar resampled magnitude spectra, after which the
second image is de-rotated/de-scaled and the translation is measured.
Everything runs on plain FFTs; no feature points.

The recovered :class:`~motionwatch.imaging.SimilarityTransform` maps the
content of the first image onto the second in center-relative pixel
coordinates, matching :func:`motionwatch.imaging.warp_by_similarity`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import Image, Mask, SimilarityTransform, warp_by_similarity

# Masks covering more than this fraction of the frame leave too little
# background for registration; the result is flagged instead of trusted.
MAX_MASK_FRACTION = 0.9


@dataclass(frozen=True)
class RegistrationResult:
    transform: SimilarityTransform
    peak_response: float

    def __post_init__(self):
        if not math.isfinite(self.peak_response) or self.peak_response < 0.0:
            raise ValueError("peak_response must be finite and non-negative")


def _check_pair(a: Image, b: Image) -> None:
    if a.channels != 1 or b.channels != 1:
        raise ValueError("registration expects single-channel images")
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(f"image sizes differ: {a.height}x{a.width} vs {b.height}x{b.width}")
    if a.height % 2 or a.width % 2:
        raise ValueError("registration expects even image dimensions")


def _parabolic_offset(left: float, center: float, right: float) -> float:
    denom = left - 2.0 * center + right
    if abs(denom) < 1e-12:
        return 0.0
    offset = 0.5 * (left - right) / denom
    return float(np.clip(offset, -0.5, 0.5))


def _phase_correlate_arrays(
    a: np.ndarray, b: np.ndarray, alpha: float = 0.0
) -> tuple[float, float, float]:
    """Shift (dx, dy) moving content of `a` onto `b`, plus the correlation peak.

    `alpha` regularizes the cross-power normalization: 0 is strict phase
    correlation; larger values damp low-energy bins, which suppresses the
    fixed-pattern zero-shift peak that plagues log-polar spectra.
    """
    fa = np.fft.fft2(a)
    fb = np.fft.fft2(b)
    cross = fa * np.conj(fb)
    mag = np.abs(cross)
    if alpha > 0.0:
        norm = cross / (mag + alpha * mag.mean() + 1e-300)
    else:
        eps = 1e-12 * (mag.max() + 1e-300)
        norm = np.where(mag > eps, cross / np.maximum(mag, eps), 0.0)
    surface = np.real(np.fft.ifft2(norm))

    h, w = surface.shape
    py, px = np.unravel_index(int(np.argmax(surface)), surface.shape)
    peak = float(surface[py, px])

    off_x = _parabolic_offset(
        surface[py, (px - 1) % w], surface[py, px], surface[py, (px + 1) % w]
    )
    off_y = _parabolic_offset(
        surface[(py - 1) % h, px], surface[py, px], surface[(py + 1) % h, px]
    )

    # The correlation surface peaks at minus the shift (mod image size).
    dx = -(px + off_x)
    dy = -(py + off_y)
    if dx <= -w / 2:
        dx += w
    if dy <= -h / 2:
        dy += h
    return dx, dy, peak


def _lowpass_bins(h: int, w: int) -> np.ndarray:
    # Half-band mask in unshifted FFT layout.  Bins above half Nyquist are
    # wiped out by subpixel resampling and only inject phase noise.
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    return (np.abs(fy) <= 0.25) & (np.abs(fx) <= 0.25)


def _phase_correlate_lowpass(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    fa = np.fft.fft2(a)
    fb = np.fft.fft2(b)
    cross = fa * np.conj(fb)
    mag = np.abs(cross)
    eps = 1e-12 * (mag.max() + 1e-300)
    norm = np.where(mag > eps, cross / np.maximum(mag, eps), 0.0)
    keep = _lowpass_bins(*norm.shape)
    norm *= keep
    surface = np.real(np.fft.ifft2(norm))

    h, w = surface.shape
    py, px = np.unravel_index(int(np.argmax(surface)), surface.shape)
    # Renormalize so a perfect match still scores ~1 despite the dropped bins.
    peak = float(surface[py, px]) * surface.size / max(int(keep.sum()), 1)

    off_x = _parabolic_offset(
        surface[py, (px - 1) % w], surface[py, px], surface[py, (px + 1) % w]
    )
    off_y = _parabolic_offset(
        surface[(py - 1) % h, px], surface[py, px], surface[(py + 1) % h, px]
    )
    dx = -(px + off_x)
    dy = -(py + off_y)
    if dx <= -w / 2:
        dx += w
    if dy <= -h / 2:
        dy += h
    return dx, dy, peak


def phase_correlate(a: Image, b: Image) -> tuple[float, float, float]:
    """Translation (t_x, t_y) of image content from `a` to `b` and peak response.

    Inputs are mean-subtracted and Hann-windowed (edge leakage otherwise
    biases subpixel estimates toward integers), then correlated via the
    normalized cross-power spectrum with the upper half-band discarded
    (subpixel resampling leaves no usable phase there); integer peak plus
    parabolic refinement.  Degenerate (constant) inputs return (0, 0) with
    zero response.
    """
    _check_pair(a, b)
    arr_a = a.data.astype(np.float64)
    arr_b = b.data.astype(np.float64)
    if arr_a.std() < 1e-9 or arr_b.std() < 1e-9:
        return 0.0, 0.0, 0.0
    window = _hann2d(a.height, a.width)
    dx, dy, peak = _phase_correlate_lowpass(
        (arr_a - arr_a.mean()) * window, (arr_b - arr_b.mean()) * window
    )
    return dx, dy, float(np.clip(peak, 0.0, 1.0))


def _hann2d(h: int, w: int) -> np.ndarray:
    return np.outer(np.hanning(h), np.hanning(w))


def _highpass(h: int, w: int) -> np.ndarray:
    # Emphasis filter suppressing the low-frequency bulk of the spectrum
    # before log-polar resampling.
    eta = (np.arange(h) - h / 2.0) / h
    xi = (np.arange(w) - w / 2.0) / w
    x = np.cos(np.pi * eta)[:, None] * np.cos(np.pi * xi)[None, :]
    return (1.0 - x) * (2.0 - x)


def _log_polar_spectrum(
    arr: np.ndarray, n_angles: int, n_radii: int
) -> tuple[np.ndarray, float]:
    """Log-polar resampling of the high-pass filtered magnitude spectrum.

    Angles cover [0, pi) (the magnitude spectrum of a real image is point
    symmetric), radii are log-spaced.  Returns the resampled grid and the
    log-radius step.
    """
    h, w = arr.shape
    spectrum = np.abs(np.fft.fftshift(np.fft.fft2(arr)))
    spectrum *= _highpass(h, w)
    spectrum = np.log1p(spectrum)

    cy, cx = h / 2.0, w / 2.0
    r_min = 1.5
    r_max = min(h, w) / 2.0 - 1.0
    log_step = math.log(r_max / r_min) / (n_radii - 1)
    radii = r_min * np.exp(log_step * np.arange(n_radii))
    angles = np.pi * np.arange(n_angles) / n_angles

    ys = cy + radii[None, :] * np.sin(angles)[:, None]
    xs = cx + radii[None, :] * np.cos(angles)[:, None]
    grid = ndimage.map_coordinates(
        spectrum, np.stack([ys.ravel(), xs.ravel()]), order=1, mode="constant"
    ).reshape(n_angles, n_radii)
    return grid, log_step


def _masked_ncc_shift(
    f1: np.ndarray, f2: np.ndarray, valid: np.ndarray
) -> tuple[float, float, float]:
    """Translation between two frames ignoring invalid pixels entirely.

    Masked normalized cross-correlation computed with FFTs (running sums
    over the shifting valid-pixel overlap), zero-padded so nothing wraps.
    Filling masked pixels and phase-correlating instead locks onto the
    static mask aperture, so the masked path avoids the fill altogether.
    """
    h, w = f1.shape
    ph, pw = 2 * h, 2 * w

    def pad(arr):
        out = np.zeros((ph, pw))
        out[:h, :w] = arr
        return out

    m = valid.astype(np.float64)
    fm = np.fft.fft2(pad(m))
    g1 = np.fft.fft2(pad(f1 * m))
    g2 = np.fft.fft2(pad(f2 * m))
    s1 = np.fft.fft2(pad(f1 * f1 * m))
    s2 = np.fft.fft2(pad(f2 * f2 * m))

    def xc(a, b):
        return np.real(np.fft.ifft2(a * np.conj(b)))

    overlap = xc(fm, fm)
    min_overlap = max(64.0, 0.25 * overlap.max())
    ok = overlap >= min_overlap
    overlap = np.maximum(overlap, 1e-9)

    sum12 = xc(g1, g2)
    sum1 = xc(g1, fm)
    sum2 = xc(fm, g2)
    num = sum12 - sum1 * sum2 / overlap
    den1 = xc(s1, fm) - sum1 * sum1 / overlap
    den2 = xc(fm, s2) - sum2 * sum2 / overlap
    den = np.sqrt(np.maximum(den1, 0.0) * np.maximum(den2, 0.0))
    ncc = np.where(ok & (den > 1e-9), num / np.maximum(den, 1e-9), -1.0)

    py, px = np.unravel_index(int(np.argmax(ncc)), ncc.shape)
    peak = float(ncc[py, px])
    off_x = _parabolic_offset(
        ncc[py, (px - 1) % pw], ncc[py, px], ncc[py, (px + 1) % pw]
    )
    off_y = _parabolic_offset(
        ncc[(py - 1) % ph, px], ncc[py, px], ncc[(py + 1) % ph, px]
    )
    dx = -(px + off_x)
    dy = -(py + off_y)
    if dx <= -pw / 2:
        dx += pw
    if dy <= -ph / 2:
        dy += ph
    return dx, dy, peak


def _fill_masked(img: Image, body_mask: Mask | None) -> np.ndarray:
    arr = img.data.astype(np.float64)
    if body_mask is None or body_mask.is_empty():
        return arr
    if (body_mask.height, body_mask.width) != (img.height, img.width):
        raise ValueError("mask dimensions do not match image")
    sel = body_mask.bits
    keep = ~sel
    fill = float(arr[keep].mean()) if keep.any() else float(arr.mean())
    out = arr.copy()
    out[sel] = fill
    return out


def register_similarity(
    a: Image,
    b: Image,
    body_mask: Mask | None = None,
    n_angles: int = 180,
    n_radii: int = 192,
) -> RegistrationResult:
    """Estimate the similarity transform mapping content of `a` onto `b`.

    Masked pixels (robot body) are replaced by the image mean before any
    spectra are taken.  Rotation is resolved between theta and theta+pi by
    keeping the candidate whose de-rotated translation correlation peaks
    higher.
    """
    _check_pair(a, b)
    h, w = a.height, a.width

    arr_a = _fill_masked(a, body_mask)
    arr_b = _fill_masked(b, body_mask)
    window = _hann2d(h, w)
    win_a = (arr_a - arr_a.mean()) * window
    win_b = (arr_b - arr_b.mean()) * window

    degenerate = arr_a.std() < 1e-9 or arr_b.std() < 1e-9
    if degenerate:
        return RegistrationResult(SimilarityTransform.identity(), 0.0)

    lp_a, log_step = _log_polar_spectrum(win_a, n_angles, n_radii)
    lp_b, _ = _log_polar_spectrum(win_b, n_angles, n_radii)

    # Log-polar rows are angle, columns are log-radius;
    # _phase_correlate_arrays reports (dx=columns, dy=rows).
    d_rad, d_ang, _ = _phase_correlate_arrays(
        lp_a - lp_a.mean(), lp_b - lp_b.mean(), alpha=1.0
    )
    theta = float(d_ang) * math.pi / n_angles
    sigma = math.exp(-float(d_rad) * log_step)
    sigma = float(np.clip(sigma, 0.25, 4.0))

    use_masked_ncc = body_mask is not None and not body_mask.is_empty()
    best: tuple[float, float, float, float] | None = None
    for cand in (theta, theta + math.pi):
        undo = SimilarityTransform(0.0, 0.0, sigma, cand).inverse()
        b_undone = warp_by_similarity(Image(np.clip(arr_b, 0.0, 1.0)), undo)
        if use_masked_ncc:
            # De-rotate the validity mask along with the image so the NCC
            # keeps ignoring the body region.
            valid = warp_by_similarity(
                Image((~body_mask.bits).astype(np.float32)), undo
            ).data > 0.999
            valid &= ~body_mask.bits
            ddx, ddy, peak = _masked_ncc_shift(
                a.data.astype(np.float64), b_undone.data.astype(np.float64), valid
            )
        else:
            wa = (arr_a - arr_a.mean()) * window
            wb = (b_undone.data.astype(np.float64) - b_undone.data.mean()) * window
            ddx, ddy, peak = _phase_correlate_lowpass(wa, wb)
        if best is None or peak > best[0]:
            best = (peak, ddx, ddy, cand)

    peak, ddx, ddy, theta_final = best
    # The de-rotated/de-scaled second image is the first translated by
    # S^-1(t); map the measured shift back through S.
    c, s = math.cos(theta_final), math.sin(theta_final)
    t_x = sigma * (c * ddx - s * ddy)
    t_y = sigma * (s * ddx + c * ddy)

    response = float(np.clip(peak, 0.0, 1.0))
    if body_mask is not None and body_mask.count() > MAX_MASK_FRACTION * h * w:
        response = 0.0
    tf = SimilarityTransform(t_x, t_y, sigma, theta_final)
    return RegistrationResult(tf, response)
