"""Online-learned neural surface light fields over streamed RGBD frames.

Region-local models are trained asynchronously while frames arrive; novel
views render by casting rays against the reconstructed mesh and querying the
learned field at each hit. Subpackage layout:

- numerics: dense layers, hand-written backprop, Adam, finite differences
- encoding: multi-resolution hash grid and real spherical harmonics
- models: the SH-decoded field, the direct hash-grid baseline, training steps
- mana: region partition, per-region agents, schedulers, snapshots
- ingest: sequence readers, unprojection, synthetic scenes, meshes
- render: BVH ray casting, view rendering, PSNR/SSIM, angle-filtered eval
- verify: self-check suites shared by the test suite and the CLI
- cli: train / render / eval / synth / verify subcommands
"""

from . import encoding, errors, ingest, mana, models, numerics, render, verify
from .ingest import (
    CameraIntrinsics,
    ColoredPointBatch,
    Frame,
    Pose,
    TriangleMesh,
    load_mesh,
    look_at,
    make_scene,
    primitive_mesh,
    read_sequence,
    render_scene_frame,
    unproject_frame,
    write_sequence,
)
from .mana import (
    ManaRuntime,
    RegionGridConfig,
    Snapshot,
    load_runtime_checkpoint,
    save_runtime_checkpoint,
)
from .models import HgConfig, NslfConfig, create_model, train_steps
from .render import (
    Image,
    angle_filtered_eval,
    build_bvh,
    psnr,
    raycast,
    render_view,
    ssim,
)
from .verify import run_suites

__version__ = "0.1.0"

__all__ = [
    "encoding", "errors", "ingest", "mana", "models", "numerics", "render",
    "verify",
    "CameraIntrinsics", "ColoredPointBatch", "Frame", "Pose", "TriangleMesh",
    "load_mesh", "look_at", "make_scene", "primitive_mesh", "read_sequence",
    "render_scene_frame", "unproject_frame", "write_sequence",
    "ManaRuntime", "RegionGridConfig", "Snapshot", "load_runtime_checkpoint",
    "save_runtime_checkpoint",
    "HgConfig", "NslfConfig", "create_model", "train_steps",
    "Image", "angle_filtered_eval", "build_bvh", "psnr", "raycast",
    "render_view", "ssim",
    "run_suites",
    "__version__",
]
