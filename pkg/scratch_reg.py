import math
import numpy as np
from motionwatch.imaging import Image, SimilarityTransform, warp_by_similarity
from motionwatch.register import phase_correlate, register_similarity


def noise_image(h, w, seed, octaves=4):
    rng = np.random.default_rng(seed)
    out = np.zeros((h, w))
    for o in range(octaves):
        cells = 4 * 2**o
        grid = rng.normal(size=(cells + 1, cells + 1))
        ys = np.linspace(0, cells, h, endpoint=False)
        xs = np.linspace(0, cells, w, endpoint=False)
        y0 = ys.astype(int); x0 = xs.astype(int)
        fy = (ys - y0)[:, None]; fx = (xs - x0)[None, :]
        g = (grid[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
             + grid[np.ix_(y0 + 1, x0)] * fy * (1 - fx)
             + grid[np.ix_(y0, x0 + 1)] * (1 - fy) * fx
             + grid[np.ix_(y0 + 1, x0 + 1)] * fy * fx)
        out += g / 2**o
    out -= out.min()
    out /= out.max()
    return Image(out.astype(np.float32))


img = noise_image(64, 64, 0)

# 1. cyclic shift
b = Image(np.roll(img.data, (-2, 3), axis=(0, 1)))
print("cyclic shift (3,-2):", phase_correlate(img, b))

# 2. identity
print("identity:", phase_correlate(img, img))

# 3. subpixel via warp
b = warp_by_similarity(img, SimilarityTransform(t_x=0.5))
print("subpixel (0.5,0):", phase_correlate(img, b))

# 4. register identity
r = register_similarity(img, img)
print("reg identity:", r.transform, r.peak_response)

# 5. rotation 10 deg
tf = SimilarityTransform(theta=math.radians(10))
b = warp_by_similarity(img, tf)
r = register_similarity(img, b)
print("reg rot10:", math.degrees(r.transform.theta), r.transform.sigma, r.transform.t_x, r.transform.t_y, r.peak_response)

# 6. scale 1.1
tf = SimilarityTransform(sigma=1.1)
b = warp_by_similarity(img, tf)
r = register_similarity(img, b)
print("reg scale1.1:", r.transform.sigma, math.degrees(r.transform.theta), r.peak_response)

# 7. translation via register_similarity
tf = SimilarityTransform(t_x=3.0, t_y=-2.0)
b = warp_by_similarity(img, tf)
r = register_similarity(img, b)
print("reg trans(3,-2):", r.transform.t_x, r.transform.t_y, r.transform.sigma, math.degrees(r.transform.theta), r.peak_response)

# 8. combined
tf = SimilarityTransform(t_x=2.0, t_y=1.0, sigma=1.05, theta=math.radians(5))
b = warp_by_similarity(img, tf)
r = register_similarity(img, b)
print("reg combo:", r.transform, r.peak_response)

# randomized suite
errs = []
for k in range(30):
    rng = np.random.default_rng(100 + k)
    im = noise_image(64, 64, 200 + k)
    tf = SimilarityTransform(
        t_x=rng.uniform(-4, 4), t_y=rng.uniform(-4, 4),
        sigma=rng.uniform(0.92, 1.08), theta=rng.uniform(-0.25, 0.25))
    b = warp_by_similarity(im, tf)
    r = register_similarity(im, b)
    errs.append((abs(r.transform.t_x - tf.t_x), abs(r.transform.t_y - tf.t_y),
                 abs(r.transform.sigma - tf.sigma), abs(r.transform.theta - tf.theta)))
errs = np.array(errs)
print("random suite max err (tx,ty,sigma,theta):", errs.max(axis=0))
print("random suite mean err:", errs.mean(axis=0))
