import math
import numpy as np
from motionwatch.imaging import Image, SimilarityTransform, warp_by_similarity
from motionwatch.register import _log_polar_spectrum, _hann2d, _phase_correlate_arrays
from scratch_reg import noise_image

img = noise_image(64, 64, 0)
tf = SimilarityTransform(sigma=1.1)
b = warp_by_similarity(img, tf)

arr_a = img.data.astype(np.float64)
arr_b = b.data.astype(np.float64)
window = _hann2d(64, 64)
win_a = (arr_a - arr_a.mean()) * window
win_b = (arr_b - arr_b.mean()) * window

for n_ang, n_rad in [(180, 192), (256, 256)]:
    lp_a, log_step = _log_polar_spectrum(win_a, n_ang, n_rad)
    lp_b, _ = _log_polar_spectrum(win_b, n_ang, n_rad)
    expected_rad_shift = -math.log(1.1) / log_step
    d_rad, d_ang, peak = _phase_correlate_arrays(lp_a, lp_b)
    print(f"n_ang={n_ang}: expected d_rad={expected_rad_shift:.2f}, got d_rad={d_rad:.2f} d_ang={d_ang:.2f} peak={peak:.4f}")

    # top-5 peaks of the surface
    fa = np.fft.fft2(lp_a); fb = np.fft.fft2(lp_b)
    cross = fa * np.conj(fb)
    norm = cross / np.maximum(np.abs(cross), 1e-300)
    surf = np.real(np.fft.ifft2(norm))
    flat = np.argsort(surf.ravel())[::-1][:5]
    for idx in flat:
        py, px = np.unravel_index(idx, surf.shape)
        print(f"   peak at row={py} col={px} val={surf[py, px]:.4f}")

# try windowing the LP images along radius before correlation
lp_a, log_step = _log_polar_spectrum(win_a, 180, 192)
lp_b, _ = _log_polar_spectrum(win_b, 180, 192)
rad_win = np.hanning(lp_a.shape[1])[None, :]
lp_a2 = (lp_a - lp_a.mean()) * rad_win
lp_b2 = (lp_b - lp_b.mean()) * rad_win
d_rad, d_ang, peak = _phase_correlate_arrays(lp_a2, lp_b2)
print(f"with radial window: d_rad={d_rad:.2f} (want {-math.log(1.1)/log_step:.2f}) d_ang={d_ang:.2f} peak={peak:.4f}")

# cross-correlation (not phase) as alternative for the LP stage
a0 = lp_a - lp_a.mean(); b0 = lp_b - lp_b.mean()
fa = np.fft.fft2(a0); fb = np.fft.fft2(b0)
surf = np.real(np.fft.ifft2(fa * np.conj(fb)))
py, px = np.unravel_index(np.argmax(surf), surf.shape)
print("plain xcorr peak row,col:", py, px, "expect col≈", (192 + round(math.log(1.1)/log_step)) % 192)
