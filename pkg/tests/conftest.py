import numpy as np

from motionwatch.imaging import Image


def noise_image(h, w, seed, octaves=4):
    """Seeded multi-octave value noise: band-limited, registration-friendly."""
    rng = np.random.default_rng(seed)
    out = np.zeros((h, w))
    for o in range(octaves):
        cells = 4 * 2**o
        grid = rng.normal(size=(cells + 1, cells + 1))
        ys = np.linspace(0, cells, h, endpoint=False)
        xs = np.linspace(0, cells, w, endpoint=False)
        y0 = ys.astype(int)
        x0 = xs.astype(int)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        g = (
            grid[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
            + grid[np.ix_(y0 + 1, x0)] * fy * (1 - fx)
            + grid[np.ix_(y0, x0 + 1)] * (1 - fy) * fx
            + grid[np.ix_(y0 + 1, x0 + 1)] * fy * fx
        )
        out += g / 2**o
    out -= out.min()
    peak = out.max()
    if peak > 0:
        out /= peak
    return Image(out.astype(np.float32))
