import time
import warnings
import numpy as np

warnings.simplefilter("ignore")

from motionwatch.synth import ScenarioConfig, generate, ground_truth_camera_motion, release_frame
from motionwatch.kinematics import expected_similarity, body_mask, body_error
from motionwatch.register import register_similarity
from motionwatch.tvl1 import compute_flow
from motionwatch.imaging import Image, save_image

cfg = ScenarioConfig(seed=3, n_frames=80, image_side=64)
t0 = time.time()
ex = generate(cfg)
print(f"generate: {time.time()-t0:.2f}s for {ex.n_frames} frames")

# sanity: silhouette inside frame, coverage reasonable
cov = [m.data[m.data > 0.5].size / 64**2 for m in ex.frames_rendered]
print(f"silhouette coverage: min={min(cov):.3f} max={max(cov):.3f}")

# EE speed in real pixels
from motionwatch.synth import _forward_kinematics, _ArmGeometry
geo = _ArmGeometry.for_side(64)
ee = np.array([_forward_kinematics(geo, q)[3] for q in ex.joints])
speed = np.hypot(*np.diff(ee, axis=0).T)
print(f"EE speed px/frame: max={speed.max():.2f} mean={speed.mean():.2f}")
print(f"EE range x: {ee[:,0].min():.1f}..{ee[:,0].max():.1f}  y: {ee[:,1].min():.1f}..{ee[:,1].max():.1f}")
print("release frame:", release_frame(80), "book rest:", ex.frames_rendered[79].data.sum())

# centroid coincidence (nominal)
worst = 0.0
for t in range(ex.n_frames):
    ren = ex.frames_rendered[t].data >= 0.5
    alpha = ex.sprite_alpha[t]
    if ren.sum() == 0 or alpha.sum() == 0:
        continue
    gy, gx = np.mgrid[0:64, 0:64]
    c_ren = np.array([gx[ren].mean(), gy[ren].mean()])
    c_real = np.array([(gx * alpha).sum() / alpha.sum(), (gy * alpha).sum() / alpha.sum()])
    worst = max(worst, float(np.hypot(*(c_ren - c_real))))
print(f"nominal centroid coincidence worst: {worst:.3f} px")

# save a few frames for inspection
for t in (0, 20, 40, 41, 50, 79):
    save_image(ex.frames_real[t], f"/tmp/real_{t:03d}.png")
    save_image(ex.frames_rendered[t], f"/tmp/ren_{t:03d}.png")

# registration vs Eq.2 on sampled frames
K = ex.camera.intrinsics
from motionwatch.kinematics import DepthModel
errs = []
t1 = time.time()
for t in range(1, ex.n_frames):
    motion = ground_truth_camera_motion(ex, t)
    exp_tf = expected_similarity(K, motion, DepthModel(ex.camera.depth), 64, 64)
    mask_a = body_mask(ex.frames_rendered[t - 1])
    mask_b = body_mask(ex.frames_rendered[t])
    from motionwatch.imaging import Mask
    union = Mask(mask_a.bits | mask_b.bits)
    res = register_similarity(ex.frames_real[t - 1], ex.frames_real[t], union)
    errs.append(abs(res.transform.t_x - exp_tf.t_x) + abs(res.transform.t_y - exp_tf.t_y))
errs = np.array(errs)
print(f"registration vs expectation: mean={errs.mean():.3f} p95={np.percentile(errs, 95):.3f} max={errs.max():.3f} ({time.time()-t1:.1f}s)")

# body error on sampled frames
t2 = time.time()
bes = []
for t in range(1, ex.n_frames, 4):
    o = compute_flow(ex.frames_real[t - 1], ex.frames_real[t])
    oj = compute_flow(ex.frames_rendered[t - 1], ex.frames_rendered[t])
    mask_a = body_mask(ex.frames_rendered[t - 1])
    mask_b = body_mask(ex.frames_rendered[t])
    from motionwatch.imaging import Mask
    union = Mask(mask_a.bits | mask_b.bits)
    bes.append(body_error(o, oj, union))
bes = np.array(bes)
print(f"body error: mean={bes.mean():.3f} max={bes.max():.3f} ({time.time()-t2:.1f}s for {len(bes)} pairs)")
