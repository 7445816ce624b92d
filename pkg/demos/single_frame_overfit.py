"""Overfit one synthetic RGBD frame with both field models.

The classic sanity check: if a model can't memorize a single view it will
never track a stream. Trains the SH-decoded field and the grid+SH-input
baseline for 800 iterations each, prints the loss trajectory, and writes
ground truth and re-renders next to each other as PNGs.
"""

import time

import numpy as np

from nslfol.ingest import (
    CameraIntrinsics,
    look_at,
    make_scene,
    primitive_mesh,
    render_scene_frame,
    unproject_frame,
)
from nslfol.mana import ManaRuntime, RegionGridConfig
from nslfol.render import Image, build_bvh, psnr, render_view, ssim, write_image_png

ITERS = 800
intr = CameraIntrinsics(144.0, 144.0, 79.5, 59.5, 160, 120)

scene = make_scene("plane", seed=5)
pose = look_at((0.5, 0.4, 2.5), (0.0, 0.0, 0.0))
frame = render_scene_frame(scene, intr, pose)
cloud = unproject_frame(frame)
print(f"one {intr.width}x{intr.height} frame -> {len(cloud)} surface samples")

bvh = build_bvh(primitive_mesh(scene.surface, resolution=64))
truth = Image(frame.color.astype(np.float32), mask=frame.depth > 0)
write_image_png(truth, "overfit_truth.png")

# one region covers the whole plane, so a single agent owns every sample
region_cfg = RegionGridConfig(np.full(3, -2.0), np.full(3, 2.0), 4.0)

for kind, label in (("nslf", "sh-decoded field"), ("hg", "grid+sh baseline")):
    runtime = ManaRuntime(region_cfg, model_kind=kind, quota=ITERS,
                          batch_size=256, seed=5)
    runtime.feed_frame(cloud)
    t0 = time.perf_counter()
    runtime.run_pending()
    train_s = time.perf_counter() - t0

    agent = runtime.agents[(0, 0, 0)]
    losses = np.array(agent.losses)
    marks = [0, len(losses) // 4, len(losses) // 2, len(losses) - 1]
    trail = ", ".join(f"it {m}: {losses[m]:.3f}" for m in marks)
    print(f"\n{label}: {train_s:.1f}s for {ITERS} iterations")
    print(f"  batch loss {trail}")

    snapshot = runtime.quiesce_and_snapshot()
    rendered = render_view(snapshot, bvh, intr, pose)
    print(f"  training view: psnr {psnr(rendered, truth):.2f} dB, "
          f"ssim {ssim(rendered, truth):.4f}")
    write_image_png(rendered, f"overfit_{kind}.png")

print("\nwrote overfit_truth.png, overfit_nslf.png, overfit_hg.png")
