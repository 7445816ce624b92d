"""What happens when you query a surface light field off-axis.

Both model families see a shiny sphere through a narrow cone of views
(six cameras within 15 degrees of the +z axis) and then get scored at a
ring of cameras 52.5 degrees off that axis. Per-pixel novelty is the
angle between the query direction and the nearest trained direction at
that surface point; bucketing PSNR by that angle shows how each model
degrades as queries leave the trained cone.

The view-direction head decoded through a spherical harmonic basis
degrades gently, because the basis forces angular smoothness. Feeding
raw direction features into the trunk instead lets far-off queries land
on effectively untrained inputs. One seed here; the three-seed version
of the same protocol lives in tests/test_acceptance.py.
"""

import math

import numpy as np

from nslfol.ingest import (
    CameraIntrinsics,
    make_scene,
    poses_toward,
    primitive_mesh,
    render_scene_frame,
    ring_directions,
    unproject_frame,
)
from nslfol.mana import ManaRuntime, RegionGridConfig
from nslfol.render import build_bvh, novelty_angles, raycast

SEED = 0
QUOTA = 300
BANDS = [(0.0, 15.0), (15.0, 30.0), (30.0, 45.0), (45.0, 60.0)]

intr = CameraIntrinsics(144.0, 144.0, 79.5, 59.5, 160, 120)
scene = make_scene("sphere", seed=SEED)

# -- capture ---------------------------------------------------------------
# Train views: a 12 degree ring of five cameras plus one on-axis, all
# aimed at the sphere from 3m. Eval views: rings at four offsets, each
# rotated half a step so no camera reuses a train azimuth. The near ring
# lands pixels in the small-novelty bands, the far rings in the large.

train_dirs = np.concatenate([ring_directions((0, 0, 1), 12.0, 5), [[0, 0, 1.0]]])
eval_dirs = np.concatenate(
    [ring_directions((0, 0, 1), a, 5, phase=0.5) for a in (12.0, 25.0, 40.0, 52.5)]
)
train_frames = [
    render_scene_frame(scene, intr, p, i / 30.0, i)
    for i, p in enumerate(poses_toward((0, 0, 0), train_dirs, 3.0))
]
eval_frames = [
    render_scene_frame(scene, intr, p, i / 30.0, i)
    for i, p in enumerate(poses_toward((0, 0, 0), eval_dirs, 3.0))
]
clouds = [unproject_frame(f) for f in train_frames]
fed_points = np.concatenate([c.points for c in clouds])
fed_dirs = np.concatenate([c.dirs for c in clouds])
bvh = build_bvh(primitive_mesh(scene.surface, resolution=64))

region_cfg = RegionGridConfig(np.full(3, -2.0), np.full(3, 2.0), 4.0)

# geometry, truth and novelty per eval pixel are model-independent;
# compute them once
eval_pixels = []
for frame in eval_frames:
    rc = raycast(bvh, frame.intrinsics, frame.pose)
    valid = rc.mask & (frame.depth > 0)
    pts = rc.points[valid]
    view = pts - frame.pose.translation
    view /= np.linalg.norm(view, axis=1, keepdims=True)
    angles = novelty_angles(pts, view, fed_points, fed_dirs)
    eval_pixels.append((pts, view, frame.color[valid].astype(np.float64), angles))


def band_table(snapshot):
    """Accumulate squared error per novelty band over the eval rings."""
    sse = np.zeros(len(BANDS))
    count = np.zeros(len(BANDS), dtype=int)
    for pts, view, truth, angles in eval_pixels:
        colors, covered = snapshot.predict(pts, view)
        err = np.sum((colors - truth) ** 2, axis=1)
        for b, (lo, hi) in enumerate(BANDS):
            sel = covered & (angles > lo) & (angles <= hi)
            sse[b] += float(err[sel].sum())
            count[b] += int(sel.sum())
    return [
        10.0 * math.log10(3.0 * c / s) if c else float("nan")
        for s, c in zip(sse, count)
    ], count


results = {}
for kind in ("nslf", "hg"):
    runtime = ManaRuntime(region_cfg, model_kind=kind, quota=QUOTA,
                          batch_size=256, seed=SEED)
    for cloud in clouds:
        runtime.feed_frame(cloud)
    steps = runtime.run_pending()
    results[kind], pixels = band_table(runtime.quiesce_and_snapshot())
    print(f"trained {kind} for {steps} steps")

print("\nnovelty band   pixels   nslf PSNR   hg PSNR   margin")
for b, (lo, hi) in enumerate(BANDS):
    n, h = results["nslf"][b], results["hg"][b]
    print(f"{lo:4.0f}..{hi:2.0f} deg {pixels[b]:8d}   {n:9.2f} {h:9.2f}"
          f"   {n - h:+6.2f}")
print("\nboth models are strong near the trained cone, and the raw-input"
      "\nmodel even edges ahead there by overfitting it. far off-axis the"
      "\nordering flips: angular smoothness from the basis is worth ~2 dB"
      "\nin the 45..60 band. the 30..45 dip is rim surface that training"
      "\nonly ever saw at grazing angles, bad for both models.")
