import math
import numpy as np
from motionwatch.imaging import Image, SimilarityTransform, warp_by_similarity
from motionwatch.register import _log_polar_spectrum, _hann2d
from scratch_reg import noise_image


def correlate(a, b, alpha):
    fa = np.fft.fft2(a - a.mean())
    fb = np.fft.fft2(b - b.mean())
    cross = fa * np.conj(fb)
    mag = np.abs(cross)
    if alpha is None:  # plain cross-correlation
        norm = cross
    else:
        norm = cross / (mag + alpha * mag.mean() + 1e-300)
    surf = np.real(np.fft.ifft2(norm))
    h, w = surf.shape
    py, px = np.unravel_index(np.argmax(surf), surf.shape)

    def par(l, c, r):
        d = l - 2 * c + r
        return 0.0 if abs(d) < 1e-12 else max(-0.5, min(0.5, 0.5 * (l - r) / d))

    ox = par(surf[py, (px - 1) % w], surf[py, px], surf[py, (px + 1) % w])
    oy = par(surf[(py - 1) % h, px], surf[py, px], surf[(py + 1) % h, px])
    dx, dy = -(px + ox), -(py + oy)
    if dx <= -w / 2: dx += w
    if dy <= -h / 2: dy += h
    return dx, dy


def estimate_rotscale(im_a, im_b, alpha, n_ang=180, n_rad=192):
    window = _hann2d(im_a.height, im_a.width)
    wa = (im_a.data.astype(np.float64) - im_a.data.mean()) * window
    wb = (im_b.data.astype(np.float64) - im_b.data.mean()) * window
    lp_a, log_step = _log_polar_spectrum(wa, n_ang, n_rad)
    lp_b, _ = _log_polar_spectrum(wb, n_ang, n_rad)
    d_rad, d_ang = correlate(lp_a, lp_b, alpha)
    theta = d_ang * math.pi / n_ang
    sigma = math.exp(-d_rad * log_step)
    return theta, sigma


for alpha in (0.02, 0.1, 0.5, 2.0, None):
    errs = []
    for k in range(40):
        rng = np.random.default_rng(100 + k)
        im = noise_image(64, 64, 200 + k)
        tf = SimilarityTransform(sigma=rng.uniform(0.9, 1.12), theta=rng.uniform(-0.3, 0.3))
        b = warp_by_similarity(im, tf)
        theta, sigma = estimate_rotscale(im, b, alpha)
        # fold theta ambiguity for the stage test
        dth = min(abs(theta - tf.theta), abs(theta + math.pi - tf.theta), abs(theta - math.pi - tf.theta))
        errs.append((dth, abs(sigma - tf.sigma)))
    errs = np.array(errs)
    print(f"alpha={alpha}: theta err mean={errs[:,0].mean():.4f} max={errs[:,0].max():.4f} | "
          f"sigma err mean={errs[:,1].mean():.4f} max={errs[:,1].max():.4f}")
