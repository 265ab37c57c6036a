"""Tour of the evaluation metrics: PSNR, SSIM, masked temporal variation,
and spatiotemporal slice images.

Run: python3 demos/04_metrics_and_slices.py
"""

import numpy as np

from splatstream import StaticMask, make_scene, mtv, psnr, ssim, st_slice, synth
from splatstream.io import quantize_image, write_ppm

rng = np.random.default_rng(0)

a = rng.uniform(size=(32, 32, 3))
print(f"psnr(a, a)             = {psnr(a, a):.1f} dB (capped)")
print(f"psnr(a, a+0.1)         = {psnr(a, np.clip(a, 0, 0.9) + 0.1):.3f} dB")
print(f"ssim(a, a)             = {ssim(a, a):.6f}")
print(f"ssim(a, shuffled)      = {ssim(a, rng.permutation(a.ravel()).reshape(a.shape)):.4f}")

# mTV: temporal flicker inside a static mask.
mask = StaticMask(np.ones((32, 32), dtype=bool))
constant = [a] * 5
flicker = [a + rng.normal(scale=0.02, size=a.shape) for _ in range(5)]
print(f"mtv(constant video)    = {mtv(constant, mask):.4f}")
print(f"mtv(noisy video)       = {mtv(flicker, mask):.4f}")

# Spatiotemporal slice of a dynamic scene: a fixed column over time.
scene = make_scene(seed=0, n_static=80, n_dynamic=8, n_cameras=2, frames=24,
                   resolution=48)
frames = [quantize_image(synth.render_clean(scene, t, 0))
          for t in range(scene.frames)]
column = 30
slice_img = st_slice(frames, column)
write_ppm("demo_slice.ppm", slice_img)
moving = np.abs(np.diff(np.stack(frames), axis=0)).mean()
print(f"wrote demo_slice.ppm ({slice_img.shape[1]} time steps of column "
      f"{column}); clean sequence mean |temporal diff| = {moving:.5f}")
