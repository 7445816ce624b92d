"""Operator commands: train on an RGBD stream, render and score views,
generate synthetic test sequences, run the verification suites.

Settings resolve in four layers, later ones winning: built-in defaults,
`--config` key=value file, `NSLFOL_*` environment variables, explicit
flags. Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import HashGridConfig
from .errors import DomainError, NslfError
from .ingest import (
    CameraIntrinsics,
    TriangleMesh,
    _read_trajectory,
    load_mesh,
    make_scene,
    poses_toward,
    primitive_mesh,
    read_sequence,
    render_scene_frame,
    ring_directions,
    scene_to_dict,
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
from .models import HgConfig, NslfConfig
from .render import (
    Image,
    angle_filtered_eval,
    build_bvh,
    psnr,
    render_view,
    ssim,
    write_image_png,
)
from .verify import SUITES, run_suites

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3

REPORT_VERSION = 1

# "nslf_sh" is the public name of the SH-decoded model; the library calls
# the same thing "nslf"
_MODEL_KINDS = {"nslf_sh": "nslf", "hg": "hg"}
_FORMATS = ("tum_assoc", "icl_nuim")

_TRAINED_VIEWS_CAP = 150_000


class UsageError(NslfError):
    pass


DEFAULTS = {
    "dataset": None,
    "format": "tum_assoc",
    "skip": 20,
    "model": "nslf_sh",
    "cell_edge": 4.0,
    "quota": 200,
    "seed": 0,
    "deterministic": False,
    "executors": 2,
    "out": "out",
    "lr": 1e-3,
    "n_max": 512,
    "stride": 1,
    "batch_size": 256,
    "width": 160,
    "height": 120,
    "fx": None,
    "fy": None,
    "cx": None,
    "cy": None,
    "bounds": None,
    "memory_cap": None,
}

_INT_KEYS = {"skip", "quota", "seed", "executors", "n_max", "stride",
             "batch_size", "width", "height", "memory_cap"}
_FLOAT_KEYS = {"cell_edge", "lr", "fx", "fy", "cx", "cy"}
_BOOL_KEYS = {"deterministic"}


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {value!r}") from exc
    if key in _BOOL_KEYS:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"bad boolean for {key}: {value!r}")
    return value


def parse_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for ln, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{ln}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{ln}: unknown config key {key!r}")
        out[key] = value
    return out


def _env_overrides() -> dict:
    out = {}
    for key in DEFAULTS:
        env = os.environ.get("NSLFOL_" + key.upper())
        if env is not None:
            out[key] = env
    return out


@dataclass
class RunConfig:
    """One resolved settings bundle shared by every subcommand."""

    dataset: str | None
    format: str
    skip: int
    model: str
    cell_edge: float
    quota: int
    seed: int
    deterministic: bool
    executors: int
    out: str
    lr: float
    n_max: int
    stride: int
    batch_size: int
    width: int
    height: int
    fx: float | None
    fy: float | None
    cx: float | None
    cy: float | None
    bounds: str | None
    memory_cap: int | None

    def validate(self) -> None:
        if self.model not in _MODEL_KINDS:
            raise UsageError(
                f"unknown model {self.model!r}; choose from "
                + "/".join(sorted(_MODEL_KINDS))
            )
        if self.format not in _FORMATS:
            raise UsageError(f"unknown format {self.format!r}")
        if self.skip < 1:
            raise UsageError("skip must be >= 1")
        if self.stride < 1:
            raise UsageError("stride must be >= 1")
        if self.cell_edge <= 0:
            raise UsageError("cell_edge must be positive")
        if self.quota < 0:
            raise UsageError("quota must be >= 0")
        if self.executors < 1:
            raise UsageError("executors must be >= 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.width < 1 or self.height < 1:
            raise UsageError("image size must be positive")

    def intrinsics(self) -> CameraIntrinsics:
        w, h = self.width, self.height
        fx = self.fx if self.fx is not None else 0.9 * w
        fy = self.fy if self.fy is not None else fx
        cx = self.cx if self.cx is not None else (w - 1) / 2.0
        cy = self.cy if self.cy is not None else (h - 1) / 2.0
        return CameraIntrinsics(fx, fy, cx, cy, w, h)

    def model_setup(self):
        grid = HashGridConfig(max_resolution=self.n_max)
        kind = _MODEL_KINDS[self.model]
        config = NslfConfig(grid=grid) if kind == "nslf" else HgConfig(grid=grid)
        return kind, config

    def region_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        if self.bounds is None:
            return None
        parts = self.bounds.replace(":", ",").split(",")
        if len(parts) != 6:
            raise UsageError(
                "bounds must be 'x0,y0,z0:x1,y1,z1', got " + repr(self.bounds)
            )
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise UsageError(f"bad bounds {self.bounds!r}") from exc
        lo, hi = np.array(vals[:3]), np.array(vals[3:])
        if not np.all(hi > lo):
            raise UsageError("bounds max must exceed min on every axis")
        return lo, hi


def resolve_config(args: argparse.Namespace) -> RunConfig:
    layers = dict(DEFAULTS)
    if getattr(args, "config", None):
        layers.update(parse_config_file(args.config))
    layers.update(_env_overrides())
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            layers[key] = flag
    resolved = {k: _coerce(k, v) for k, v in layers.items()}
    cfg = RunConfig(**resolved)
    cfg.validate()
    return cfg


# -- train -----------------------------------------------------------------


def _auto_bounds(points: np.ndarray, cell_edge: float):
    # snap the first frame's cloud outward to whole cells; later frames
    # that leave this box are counted out-of-bounds, not fatal
    lo = np.floor(points.min(axis=0) / cell_edge) * cell_edge
    hi = np.ceil(points.max(axis=0) / cell_edge) * cell_edge
    hi = np.maximum(hi, lo + cell_edge)
    return lo, hi


class _ViewSink:
    """Bounded, deterministic sample of the fed (point, dir) pairs.

    Kept for the angle-novelty evaluation; halves every stored block when
    the total crosses 2x the cap so memory stays flat on long streams.
    """

    def __init__(self, cap: int = _TRAINED_VIEWS_CAP):
        self.cap = cap
        self.blocks: list[tuple[np.ndarray, np.ndarray]] = []
        self.total = 0

    def add(self, points: np.ndarray, dirs: np.ndarray) -> None:
        if len(points) == 0:
            return
        self.blocks.append(
            (points.astype(np.float32), dirs.astype(np.float32))
        )
        self.total += len(points)
        while self.total > 2 * self.cap:
            self.blocks = [(p[::2], d[::2]) for p, d in self.blocks]
            self.total = sum(len(p) for p, _ in self.blocks)

    def arrays(self):
        if not self.blocks:
            return np.zeros((0, 3), np.float32), np.zeros((0, 3), np.float32)
        pts = np.concatenate([p for p, _ in self.blocks])
        dirs = np.concatenate([d for _, d in self.blocks])
        if len(pts) > self.cap:
            step = -(-len(pts) // self.cap)
            pts, dirs = pts[::step], dirs[::step]
        return pts, dirs


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.dataset is None:
        raise UsageError("train needs --dataset")
    root = Path(cfg.dataset)
    if not root.exists():
        print(f"dataset not found: {root}", file=sys.stderr)
        return EXIT_DATA
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    kind, model_config = cfg.model_setup()
    scheduler = "serial" if cfg.deterministic else "threaded"

    runtime = None
    sink = _ViewSink()
    frame_rows = []
    n_frames = 0
    for frame in read_sequence(root, fmt=cfg.format, skip=cfg.skip):
        cloud = unproject_frame(frame, stride=cfg.stride)
        if runtime is None:
            fixed = cfg.region_bounds()
            lo, hi = fixed if fixed else _auto_bounds(cloud.points, cfg.cell_edge)
            region_cfg = RegionGridConfig(lo, hi, cfg.cell_edge)
            runtime = ManaRuntime(
                region_cfg,
                model_kind=kind,
                model_config=model_config,
                quota=cfg.quota,
                batch_size=cfg.batch_size,
                seed=cfg.seed,
                lr=cfg.lr,
                scheduler=scheduler,
                executors=cfg.executors,
                memory_cap_slices=cfg.memory_cap,
            )
        try:
            report = runtime.feed_frame(cloud)
        except NslfError as exc:
            # keep the stream going; an odd frame should not kill the run
            print(f"frame {frame.index:06d}: {exc}", file=sys.stderr)
            continue
        sink.add(cloud.points, cloud.dirs)
        n_frames += 1
        frame_rows.append(
            {
                "index": frame.index,
                "timestamp": frame.timestamp,
                "points": len(cloud),
                "routed": int(sum(report.routed.values())),
                "out_of_bounds": report.out_of_bounds,
                "spawned": len(report.spawned),
                "feed_ms": report.elapsed_s * 1e3,
            }
        )
        print(
            f"frame {frame.index:06d}: {len(cloud)} pts, "
            f"{report.out_of_bounds} oob, {len(report.spawned)} new agents, "
            f"feed {report.elapsed_s * 1e3:.1f} ms"
        )

    if runtime is None:
        warnings.warn("empty sequence: writing an empty checkpoint")
        edge = cfg.cell_edge
        empty_cfg = RegionGridConfig(np.zeros(3), np.full(3, edge), edge)
        save_runtime_checkpoint(
            Snapshot(empty_cfg, {}, {}), out_dir / "checkpoint"
        )
        (out_dir / "train_log.json").write_text(
            json.dumps(
                {"format_version": REPORT_VERSION, "frames": [], "agents": {}},
                sort_keys=True,
                indent=1,
            )
        )
        return EXIT_OK

    snapshot = runtime.quiesce_and_snapshot(drain=True, timeout=600.0)
    agent_rows = {}
    for region in sorted(runtime.agents):
        agent = runtime.agents[region]
        agent_rows["%d,%d,%d" % region] = {
            "trained": agent.trained_iters,
            "skipped": agent.skipped_iters,
            "fed_points": agent.fed_points,
            "losses": [round(v, 8) for v in agent.losses],
        }
    runtime.shutdown()

    ckpt = save_runtime_checkpoint(snapshot, out_dir / "checkpoint")
    pts, dirs = sink.arrays()
    np.savez(out_dir / "trained_views.npz", points=pts, dirs=dirs)
    log = {
        "format_version": REPORT_VERSION,
        "frames": frame_rows,
        "agents": agent_rows,
    }
    (out_dir / "train_log.json").write_text(
        json.dumps(log, sort_keys=True, indent=1)
    )
    total_iters = sum(a.trained_iters for a in runtime.agents.values())
    print(
        f"{n_frames} frames, {len(runtime.agents)} agents, "
        f"{total_iters} iterations -> {ckpt}"
    )
    return EXIT_OK


# -- synth -----------------------------------------------------------------


def _write_obj(mesh: TriangleMesh, path: Path) -> None:
    lines = [
        "v %.9f %.9f %.9f" % tuple(v) for v in mesh.vertices
    ] + [
        "f %d %d %d" % (t[0] + 1, t[1] + 1, t[2] + 1) for t in mesh.triangles
    ]
    path.write_text("\n".join(lines) + "\n")


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = Path(cfg.out)
    scene = make_scene(args.scene, seed=cfg.seed)
    intr = cfg.intrinsics()
    if args.frames < 1:
        raise UsageError("frames must be >= 1")
    if args.cone_deg <= 1.0 or args.cone_deg >= 89.0:
        raise UsageError("cone-deg must be in (1, 89)")
    if args.distance <= 0:
        raise UsageError("distance must be positive")
    dirs = ring_directions((0.0, 0.0, 1.0), args.cone_deg, args.frames)
    poses = poses_toward((0.0, 0.0, 0.0), dirs, args.distance)
    frames = [
        render_scene_frame(scene, intr, pose, timestamp=i / 30.0, index=i)
        for i, pose in enumerate(poses)
    ]
    write_sequence(out_dir, frames, scene_meta=scene_to_dict(scene))
    mesh = primitive_mesh(scene.surface, resolution=args.mesh_resolution)
    _write_obj(mesh, out_dir / "mesh.obj")
    print(
        f"{len(frames)} frames of the {args.scene} scene "
        f"({intr.width}x{intr.height}) -> {out_dir}"
    )
    return EXIT_OK


# -- render ----------------------------------------------------------------


def _dataset_intrinsics(root: Path) -> CameraIntrinsics | None:
    meta = root / "intrinsics.json"
    if meta.exists():
        return CameraIntrinsics(**json.loads(meta.read_text()))
    return None


def _render_poses(cfg: RunConfig, args: argparse.Namespace):
    """(intrinsics, poses) from --traj, falling back to the dataset."""
    if getattr(args, "traj", None):
        path = Path(args.traj)
        if not path.exists():
            raise FileNotFoundError(f"trajectory not found: {path}")
        _, poses = _read_trajectory(path)
        intr = None
        if cfg.dataset:
            intr = _dataset_intrinsics(Path(cfg.dataset))
        return intr or cfg.intrinsics(), poses[:: cfg.skip]
    if cfg.dataset:
        root = Path(cfg.dataset)
        if not root.exists():
            raise FileNotFoundError(f"dataset not found: {root}")
        gt = root / "groundtruth.txt"
        if not gt.exists():
            raise FileNotFoundError(f"no groundtruth.txt under {root}")
        _, poses = _read_trajectory(gt)
        return _dataset_intrinsics(root) or cfg.intrinsics(), poses[:: cfg.skip]
    raise UsageError("render needs --traj or --dataset for poses")


def cmd_render(cfg: RunConfig, args: argparse.Namespace) -> int:
    if not args.checkpoint:
        raise UsageError("render needs --checkpoint")
    if not args.mesh:
        raise UsageError("render needs --mesh")
    snapshot = load_runtime_checkpoint(args.checkpoint)
    mesh = load_mesh(args.mesh)
    bvh = build_bvh(mesh)
    intr, poses = _render_poses(cfg, args)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for i, pose in enumerate(poses):
        t0 = time.perf_counter()
        image = render_view(snapshot, bvh, intr, pose)
        dt = time.perf_counter() - t0
        name = f"frame_{i:06d}.png"
        write_image_png(image, out_dir / name)
        coverage = float(image.mask.mean()) if image.mask is not None else 1.0
        rows.append({"name": name, "seconds": dt, "coverage": coverage})
        print(f"{name}: {dt:.3f} s, {coverage * 100.0:.1f}% covered")
    log = {
        "format_version": REPORT_VERSION,
        "frames": rows,
        "mean_seconds": (
            float(np.mean([r["seconds"] for r in rows])) if rows else 0.0
        ),
    }
    (out_dir / "render_log.json").write_text(
        json.dumps(log, sort_keys=True, indent=1)
    )
    return EXIT_OK


# -- eval ------------------------------------------------------------------


def _metrics_text(report: dict) -> str:
    """Human form derived from the machine-readable report, never computed
    separately from it."""
    lines = ["frame      psnr_db   ssim"]
    for row in report["frames"]:
        p = "       -" if row["psnr"] is None else f"{row['psnr']:8.3f}"
        s = "     -" if row["ssim"] is None else f"{row['ssim']:6.4f}"
        lines.append(f"{row['index']:6d}   {p}   {s}")
    agg = report["aggregates"]
    lines.append(
        f"mean over {agg['frames']} frames: psnr "
        + ("-" if agg["psnr_mean"] is None else f"{agg['psnr_mean']:.3f} dB")
        + ", ssim "
        + ("-" if agg["ssim_mean"] is None else f"{agg['ssim_mean']:.4f}")
    )
    for key, row in sorted(report["angle_buckets"].items(), key=lambda kv: float(kv[0])):
        lines.append(
            f"<= {float(key):5.1f} deg: psnr {row['psnr']:.3f} dB "
            f"over {row['pixels']} px"
        )
    return "\n".join(lines) + "\n"


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.dataset is None:
        raise UsageError("eval needs --dataset with ground-truth frames")
    root = Path(cfg.dataset)
    if not root.exists():
        print(f"dataset not found: {root}", file=sys.stderr)
        return EXIT_DATA
    if not args.oracle and not (args.checkpoint and args.mesh):
        raise UsageError("eval needs --checkpoint and --mesh (or --oracle)")
    try:
        thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --thresholds {args.thresholds!r}") from exc
    if not thresholds:
        raise UsageError("need at least one angle threshold")

    frames = list(read_sequence(root, fmt=cfg.format, skip=cfg.skip))
    if not frames:
        print(f"no frames in {root}", file=sys.stderr)
        return EXIT_DATA

    snapshot = bvh = None
    if not args.oracle:
        snapshot = load_runtime_checkpoint(args.checkpoint)
        bvh = build_bvh(load_mesh(args.mesh))

    rows = []
    for frame in frames:
        gt = Image(frame.color.astype(np.float32), mask=frame.depth > 0)
        t0 = time.perf_counter()
        if args.oracle:
            # ground truth scored against itself: the metric path's fixed
            # point, lands on the psnr cap
            rendered = gt
        else:
            rendered = render_view(snapshot, bvh, frame.intrinsics, frame.pose)
        dt = time.perf_counter() - t0
        # a frame with no covered-and-valid overlap has undefined metrics;
        # record the hole instead of aborting the whole report
        try:
            p = psnr(rendered, gt)
        except DomainError:
            p = None
        try:
            s = ssim(rendered, gt)
        except DomainError:
            s = None
        rows.append(
            {"index": frame.index, "psnr": p, "ssim": s, "render_s": dt}
        )

    buckets = {}
    note = None
    if args.oracle:
        note = "oracle self-check: no model, angle buckets skipped"
    else:
        views = Path(args.checkpoint).parent / "trained_views.npz"
        if views.exists():
            data = np.load(views)
            table = angle_filtered_eval(
                snapshot,
                bvh,
                frames,
                (data["points"].astype(np.float64), data["dirs"].astype(np.float64)),
                thresholds_deg=thresholds,
            )
            buckets = {f"{thr:.1f}": row for thr, row in table.items()}
        else:
            note = "no trained_views.npz next to checkpoint; angle buckets skipped"

    psnrs = [r["psnr"] for r in rows if r["psnr"] is not None]
    ssims = [r["ssim"] for r in rows if r["ssim"] is not None]
    report = {
        "format_version": REPORT_VERSION,
        "frames": rows,
        "aggregates": {
            "frames": len(rows),
            "psnr_mean": float(np.mean(psnrs)) if psnrs else None,
            "ssim_mean": float(np.mean(ssims)) if ssims else None,
        },
        "angle_buckets": buckets,
        "timings": {
            "render_mean_s": float(np.mean([r["render_s"] for r in rows])),
        },
    }
    if note:
        report["note"] = note
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(
        json.dumps(report, sort_keys=True, indent=1)
    )
    text = _metrics_text(report)
    (out_dir / "metrics.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# -- verify ----------------------------------------------------------------


def cmd_verify(cfg: RunConfig, args: argparse.Namespace) -> int:
    names = args.suites or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(
            "unknown suite(s) " + " ".join(unknown)
            + "; choose from " + " ".join(sorted(SUITES))
        )
    results = run_suites(names)
    for result in results:
        print(result.summary())
        for line in result.details:
            print("   ", line)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# -- wiring ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("run configuration")
    g.add_argument("--config", metavar="FILE", help="key=value settings file")
    g.add_argument("--dataset", help="sequence root directory")
    g.add_argument("--format", choices=_FORMATS, help="dataset layout")
    g.add_argument("--skip", type=int, help="take every Nth frame/pose")
    g.add_argument("--model", choices=sorted(_MODEL_KINDS), help="field model")
    g.add_argument("--cell-edge", type=float, dest="cell_edge",
                   help="region cell size in meters")
    g.add_argument("--quota", type=int, help="training iterations per feed")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--deterministic", action="store_true", default=None,
                   help="serial scheduler, bit-reproducible runs")
    g.add_argument("--executors", type=int, help="async worker thread count")
    g.add_argument("--out", help="output directory")

    parser = _Parser(
        prog="nslfol",
        description="Online surface light fields: train, render, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("train", parents=[common],
                       help="stream a sequence into region agents")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", parents=[common],
                       help="render checkpoint views along a trajectory")
    p.add_argument("--checkpoint", help="checkpoint directory from train")
    p.add_argument("--mesh", help="scene mesh (.obj/.ply)")
    p.add_argument("--traj", help="trajectory file (ts tx ty tz qx qy qz qw)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common],
                       help="score renders against ground-truth frames")
    p.add_argument("--checkpoint", help="checkpoint directory from train")
    p.add_argument("--mesh", help="scene mesh (.obj/.ply)")
    p.add_argument("--thresholds", default="15,30,60",
                   help="angle buckets in degrees, comma separated")
    p.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself (metric self-check)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common],
                       help="write a synthetic RGBD sequence + mesh")
    p.add_argument("--scene", choices=("plane", "sphere"), default="plane")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--cone-deg", type=float, default=25.0, dest="cone_deg",
                   help="view-cone half angle of the camera ring")
    p.add_argument("--distance", type=float, default=3.0,
                   help="camera distance from the scene origin")
    p.add_argument("--mesh-resolution", type=int, default=48,
                   dest="mesh_resolution")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", parents=[common],
                       help="run the invariant suites")
    p.add_argument("suites", nargs="*", metavar="suite",
                   help="subset of: " + " ".join(sorted(SUITES)))
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NslfError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
