"""Data ingestion: posed RGBD sequences, unprojection, synthetic scenes, meshes.

Conventions used throughout:

- Camera model is pinhole, OpenCV axes: x right, y down, z forward. A pixel
  (u, v) = (column, row) at depth z unprojects to z * ((u-cx)/fx, (v-cy)/fy, 1)
  in camera space. Depth means z-depth, not ray length.
- Pose is camera-to-world; the camera center is pose.translation.
- View directions point from the camera center toward the surface point and
  are unit length.
- Depth PNGs are 16-bit with depth_scale meters per unit (1/5000 by default,
  the TUM convention); zero marks invalid.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .errors import DataFormatError, DomainError, ShapeMismatchError

DEPTH_SCALE_TUM = 1.0 / 5000.0
DEPTH_MAX_METERS = 65.0
TUM_DEFAULT_INTRINSICS = (525.0, 525.0, 319.5, 239.5)
ICL_DEFAULT_INTRINSICS = (481.2, 480.0, 319.5, 239.5)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = DEPTH_SCALE_TUM

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise DomainError("image dimensions must be positive")
        if self.depth_scale <= 0:
            raise DomainError("depth_scale must be positive")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "depth_scale": self.depth_scale,
        }


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ShapeMismatchError("rotation must be (3,3), translation (3,)")
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6:
            raise DomainError("rotation is not orthonormal within 1e-6")
        if np.linalg.det(r) < 0:
            raise DomainError("rotation is a reflection (det < 0)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, t, qx, qy, qz, qw) -> "Pose":
        n = np.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
        if n < 1e-12:
            raise DomainError("zero-norm quaternion")
        x, y, z, w = qx / n, qy / n, qz / n, qw / n
        r = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(r, np.asarray(t, dtype=np.float64))

    def to_quaternion(self) -> tuple[float, float, float, float]:
        """Return (qx, qy, qz, qw), w kept non-negative."""
        r = self.rotation
        tr = np.trace(r)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            w = 0.25 * s
            x = (r[2, 1] - r[1, 2]) / s
            y = (r[0, 2] - r[2, 0]) / s
            z = (r[1, 0] - r[0, 1]) / s
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            w = (r[2, 1] - r[1, 2]) / s
            x = 0.25 * s
            y = (r[0, 1] + r[1, 0]) / s
            z = (r[0, 2] + r[2, 0]) / s
        elif r[1, 1] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            w = (r[0, 2] - r[2, 0]) / s
            x = (r[0, 1] + r[1, 0]) / s
            y = 0.25 * s
            z = (r[1, 2] + r[2, 1]) / s
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            w = (r[1, 0] - r[0, 1]) / s
            x = (r[0, 2] + r[2, 0]) / s
            y = (r[1, 2] + r[2, 1]) / s
            z = 0.25 * s
        if w < 0:
            x, y, z, w = -x, -y, -z, -w
        return (float(x), float(y), float(z), float(w))

    def transform(self, p_cam: np.ndarray) -> np.ndarray:
        return np.asarray(p_cam) @ self.rotation.T + self.translation

    def inverse_transform(self, p_world: np.ndarray) -> np.ndarray:
        return (np.asarray(p_world) - self.translation) @ self.rotation


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera at eye looking toward target, x right / y down / z forward."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    fn = np.linalg.norm(f)
    if fn < 1e-12:
        raise DomainError("eye and target coincide")
    f = f / fn
    r = np.cross(f, np.asarray(up, dtype=np.float64))
    rn = np.linalg.norm(r)
    if rn < 1e-9:
        # looking straight along up; pick any perpendicular
        alt = np.array([1.0, 0.0, 0.0])
        if abs(f @ alt) > 0.9:
            alt = np.array([0.0, 1.0, 0.0])
        r = np.cross(f, alt)
        rn = np.linalg.norm(r)
    r = r / rn
    d = np.cross(f, r)
    return Pose(np.stack([r, d, f], axis=1), eye)


@dataclass
class ColoredPointBatch:
    """World-space surface samples with view directions and colors."""

    points: np.ndarray  # (N, 3) world meters
    dirs: np.ndarray  # (N, 3) unit, camera center -> point
    colors: np.ndarray  # (N, 3) in [0, 1]

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        d = np.asarray(self.dirs, dtype=np.float64)
        c = np.asarray(self.colors, dtype=np.float64)
        if not (p.ndim == 2 and p.shape[1] == 3 and d.shape == p.shape and c.shape == p.shape):
            raise ShapeMismatchError("points, dirs, colors must be (N, 3) alike")
        self.points, self.dirs, self.colors = p, d, c

    def __len__(self) -> int:
        return self.points.shape[0]

    def take(self, idx) -> "ColoredPointBatch":
        return ColoredPointBatch(self.points[idx], self.dirs[idx], self.colors[idx])

    @staticmethod
    def empty() -> "ColoredPointBatch":
        z = np.zeros((0, 3))
        return ColoredPointBatch(z, z.copy(), z.copy())

    @staticmethod
    def concat(batches: list["ColoredPointBatch"]) -> "ColoredPointBatch":
        if not batches:
            return ColoredPointBatch.empty()
        return ColoredPointBatch(
            np.concatenate([b.points for b in batches]),
            np.concatenate([b.dirs for b in batches]),
            np.concatenate([b.colors for b in batches]),
        )


@dataclass
class Frame:
    """One posed RGBD frame; depth in meters with 0 meaning invalid."""

    depth: np.ndarray  # (H, W) float32
    color: np.ndarray  # (H, W, 3) float32 in [0, 1]
    intrinsics: CameraIntrinsics
    pose: Pose
    timestamp: float = 0.0
    index: int = 0


def unproject_frame(frame: Frame, stride: int = 1) -> ColoredPointBatch:
    """Lift valid depth pixels to colored, directed world points.

    Pixels are sampled every stride rows/columns. Depths outside
    (0, DEPTH_MAX_METERS) are dropped.
    """
    if stride < 1:
        raise DomainError("stride must be >= 1")
    k = frame.intrinsics
    depth = np.asarray(frame.depth)
    if depth.shape != (k.height, k.width):
        raise ShapeMismatchError(
            f"depth shape {depth.shape} does not match intrinsics "
            f"({k.height}, {k.width})"
        )
    vs = np.arange(0, k.height, stride)
    us = np.arange(0, k.width, stride)
    uu, vv = np.meshgrid(us, vs)
    z = depth[vv, uu].astype(np.float64)
    valid = (z > 0.0) & (z < DEPTH_MAX_METERS)
    uu, vv, z = uu[valid], vv[valid], z[valid]
    x = (uu - k.cx) / k.fx * z
    y = (vv - k.cy) / k.fy * z
    p_cam = np.stack([x, y, z], axis=1)
    p_world = frame.pose.transform(p_cam)
    rays = p_world - frame.pose.translation
    norms = np.linalg.norm(rays, axis=1, keepdims=True)
    dirs = rays / norms
    colors = np.asarray(frame.color, dtype=np.float64)[vv, uu]
    return ColoredPointBatch(p_world, dirs, colors)


def _load_depth_png(path: Path, depth_scale: float) -> np.ndarray:
    img = np.asarray(PilImage.open(path))
    if img.ndim != 2:
        raise DataFormatError(f"{path} is not a single-channel depth image")
    return (img.astype(np.float32)) * np.float32(depth_scale)


def _load_color_png(path: Path) -> np.ndarray:
    img = np.asarray(PilImage.open(path).convert("RGB"))
    return img.astype(np.float32) / 255.0


def _read_trajectory(path: Path) -> tuple[np.ndarray, list[Pose]]:
    stamps, poses = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataFormatError(
                    f"{path}:{ln}: expected 'ts tx ty tz qx qy qz qw', "
                    f"got {len(parts)} fields"
                )
            try:
                vals = [float(x) for x in parts]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{ln}: {exc}") from exc
            stamps.append(vals[0])
            poses.append(Pose.from_quaternion(vals[1:4], *vals[4:8]))
    if not stamps:
        raise DataFormatError(f"{path}: no poses")
    return np.array(stamps), poses


def _read_associations(path: Path) -> list[tuple[float, str, float, str]]:
    """Lines of 'depth_ts depth_path color_ts color_path'."""
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataFormatError(
                    f"{path}:{ln}: expected 4 fields, got {len(parts)}"
                )
            try:
                rows.append((float(parts[0]), parts[1], float(parts[2]), parts[3]))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{ln}: {exc}") from exc
    return rows


def _find_trajectory_file(root: Path, fmt: str) -> Path:
    gt = root / "groundtruth.txt"
    if gt.exists():
        return gt
    if fmt == "icl_nuim":
        candidates = sorted(root.glob("*.gt.freiburg"))
        if candidates:
            return candidates[0]
    raise DataFormatError(f"no trajectory file under {root}")


def _resolve_intrinsics(
    root: Path, fmt: str, sample_color: np.ndarray, depth_scale: float | None
) -> CameraIntrinsics:
    meta = root / "intrinsics.json"
    if meta.exists():
        d = json.loads(meta.read_text())
        return CameraIntrinsics(**d)
    h, w = sample_color.shape[:2]
    fx, fy, cx, cy = (
        ICL_DEFAULT_INTRINSICS if fmt == "icl_nuim" else TUM_DEFAULT_INTRINSICS
    )
    warnings.warn(
        f"no intrinsics.json under {root}; assuming {fmt} defaults", stacklevel=3
    )
    return CameraIntrinsics(
        fx, fy, cx, cy, w, h, depth_scale or DEPTH_SCALE_TUM
    )


def read_sequence(
    root,
    fmt: str = "tum_assoc",
    skip: int = 1,
    intrinsics: CameraIntrinsics | None = None,
    max_dt: float = 0.02,
    pacing: float | None = None,
):
    """Yield Frames from an on-disk sequence.

    fmt 'tum_assoc': root holds associations.txt (depth_ts depth color_ts
    color), groundtruth.txt, and the referenced PNGs. fmt 'icl_nuim': the
    TUM-compatible layout of those scenes; the trajectory may be a
    *.gt.freiburg file and default intrinsics differ.

    skip=k keeps every k-th associated frame (indices 0, k, 2k, ...). Frames
    whose nearest pose timestamp is further than max_dt are dropped with a
    warning. pacing sleeps that many seconds before each yield to mimic a
    live stream.
    """
    if fmt not in ("tum_assoc", "icl_nuim"):
        raise DataFormatError(f"unknown sequence format {fmt!r}")
    if skip < 1:
        raise DomainError("skip must be >= 1")
    root = Path(root)
    assoc_path = root / "associations.txt"
    if not assoc_path.exists():
        raise DataFormatError(f"missing {assoc_path}")
    assoc = _read_associations(assoc_path)
    if not assoc:
        # an index file with zero entries is an empty sequence, not a
        # broken one: ceil(0/k) frames
        return
    stamps, poses = _read_trajectory(_find_trajectory_file(root, fmt))
    order = np.argsort(stamps)
    stamps = stamps[order]
    poses = [poses[i] for i in order]

    out_index = 0
    for i in range(0, len(assoc), skip):
        ts_d, depth_rel, ts_c, color_rel = assoc[i]
        j = int(np.searchsorted(stamps, ts_d))
        best = min(
            (j_ for j_ in (j - 1, j) if 0 <= j_ < len(stamps)),
            key=lambda j_: abs(stamps[j_] - ts_d),
        )
        if abs(stamps[best] - ts_d) > max_dt:
            warnings.warn(
                f"frame at t={ts_d:.4f} has no pose within {max_dt}s; dropped",
                stacklevel=2,
            )
            continue
        color = _load_color_png(root / color_rel)
        if intrinsics is None:
            intrinsics = _resolve_intrinsics(root, fmt, color, None)
        k = intrinsics
        depth = _load_depth_png(root / depth_rel, k.depth_scale)
        if pacing:
            time.sleep(pacing)
        yield Frame(depth, color, k, poses[best], ts_d, out_index)
        out_index += 1


def write_sequence(root, frames: list[Frame], scene_meta: dict | None = None):
    """Write frames in the TUM on-disk layout (depth/, rgb/, txt files).

    Depths outside what uint16 * depth_scale can hold are stored as 0
    (invalid) rather than clamped to a wrong value.
    """
    root = Path(root)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    assoc_lines, gt_lines = [], []
    for frame in frames:
        ts = frame.timestamp
        k = frame.intrinsics
        counts = np.round(np.asarray(frame.depth, dtype=np.float64) / k.depth_scale)
        counts[(counts < 0) | (counts > 65535)] = 0
        depth_u16 = counts.astype(np.uint16)
        rgb_u8 = np.clip(
            np.round(np.asarray(frame.color, dtype=np.float64) * 255.0), 0, 255
        ).astype(np.uint8)
        dname = f"depth/{frame.index:06d}.png"
        cname = f"rgb/{frame.index:06d}.png"
        PilImage.fromarray(depth_u16).save(root / dname)
        PilImage.fromarray(rgb_u8).save(root / cname)
        assoc_lines.append(f"{ts:.6f} {dname} {ts:.6f} {cname}")
        qx, qy, qz, qw = frame.pose.to_quaternion()
        tx, ty, tz = frame.pose.translation
        gt_lines.append(
            f"{ts:.6f} {tx:.9f} {ty:.9f} {tz:.9f} "
            f"{qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}"
        )
    (root / "associations.txt").write_text("\n".join(assoc_lines) + "\n")
    (root / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n")
    if frames:
        (root / "intrinsics.json").write_text(
            json.dumps(frames[0].intrinsics.to_dict(), sort_keys=True, indent=1)
        )
    if scene_meta is not None:
        (root / "scene.json").write_text(json.dumps(scene_meta, sort_keys=True, indent=1))


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class PlaneSurface:
    """Finite textured rectangle: origin, unit normal, in-plane axes."""

    origin: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    half_extent: float = 2.0

    @classmethod
    def from_normal(cls, origin, normal, half_extent=2.0) -> "PlaneSurface":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        pick = np.array([1.0, 0.0, 0.0])
        if abs(n @ pick) > 0.9:
            pick = np.array([0.0, 1.0, 0.0])
        u = np.cross(n, pick)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return cls(np.asarray(origin, dtype=np.float64), n, u, v, half_extent)


@dataclass(frozen=True)
class SphereSurface:
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class SynthScene:
    """A single analytic surface with procedural albedo and Phong shading.

    light_dir points from the surface toward the light. The oracle color is
    albedo * (ambient + kd * max(0, n.l)) + ks * max(0, r.v)^shininess with
    r the mirror reflection of l and v the unit vector toward the eye.
    """

    surface: PlaneSurface | SphereSurface
    base_color: np.ndarray = field(
        default_factory=lambda: np.array([0.45, 0.55, 0.5])
    )
    tex_amplitude: float = 0.25
    tex_freq: float = 1.5
    ambient: float = 0.35
    kd: float = 0.55
    ks: float = 0.15
    shininess: float = 12.0
    light_dir: np.ndarray = field(
        default_factory=lambda: np.array([0.3, -0.25, 0.92])
    )
    light_color: np.ndarray = field(default_factory=lambda: np.ones(3))

    def _uv(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.surface
        if isinstance(s, PlaneSurface):
            rel = p - s.origin
            return rel @ s.u_axis, rel @ s.v_axis
        rel = p - np.asarray(s.center)
        r = np.linalg.norm(rel, axis=-1)
        theta = np.arccos(np.clip(rel[..., 2] / np.maximum(r, 1e-12), -1, 1))
        phi = np.arctan2(rel[..., 1], rel[..., 0])
        return phi / np.pi, theta / np.pi

    def normals(self, p: np.ndarray) -> np.ndarray:
        s = self.surface
        if isinstance(s, PlaneSurface):
            return np.broadcast_to(s.normal, p.shape)
        rel = p - np.asarray(s.center)
        return rel / np.linalg.norm(rel, axis=-1, keepdims=True)

    def albedo(self, p: np.ndarray) -> np.ndarray:
        u, v = self._uv(np.asarray(p, dtype=np.float64))
        f = 2.0 * np.pi * self.tex_freq
        waves = np.stack(
            [
                np.sin(f * u) * np.sin(f * v),
                np.sin(f * u + 2.1) * np.cos(0.7 * f * v),
                np.cos(0.5 * f * u) * np.sin(f * v + 1.3),
            ],
            axis=-1,
        )
        return np.clip(self.base_color + self.tex_amplitude * waves, 0.02, 0.98)

    def shade(self, p: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Oracle color at surface points p viewed along unit directions d."""
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        d = np.atleast_2d(np.asarray(d, dtype=np.float64))
        n = np.atleast_2d(self.normals(p))
        l = self.light_dir / np.linalg.norm(self.light_dir)
        ndotl = np.clip(n @ l, 0.0, None)
        refl = 2.0 * ndotl[:, None] * n - l
        vdir = -d
        rdotv = np.clip(np.sum(refl * vdir, axis=1), 0.0, None)
        spec = np.where(ndotl > 0, rdotv**self.shininess, 0.0)
        rgb = self.albedo(p) * (self.ambient + self.kd * ndotl)[:, None]
        rgb = rgb + self.ks * spec[:, None] * self.light_color
        return np.clip(rgb, 0.0, 1.0)


def make_scene(kind: str, seed: int = 0, **overrides) -> SynthScene:
    rng = np.random.default_rng(seed)
    base = 0.35 + 0.3 * rng.uniform(size=3)
    if kind == "plane":
        surface = PlaneSurface.from_normal(
            origin=np.zeros(3), normal=np.array([0.0, 0.0, 1.0]), half_extent=2.0
        )
    elif kind == "sphere":
        surface = SphereSurface(center=np.zeros(3), radius=1.0)
    else:
        raise DomainError(f"unknown scene kind {kind!r}")
    return SynthScene(surface=surface, base_color=base, **overrides)


def scene_to_dict(scene: SynthScene) -> dict:
    s = scene.surface
    if isinstance(s, PlaneSurface):
        surf = {
            "kind": "plane",
            "origin": s.origin.tolist(),
            "normal": s.normal.tolist(),
            "u_axis": s.u_axis.tolist(),
            "v_axis": s.v_axis.tolist(),
            "half_extent": s.half_extent,
        }
    else:
        surf = {
            "kind": "sphere",
            "center": np.asarray(s.center).tolist(),
            "radius": s.radius,
        }
    return {
        "surface": surf,
        "base_color": scene.base_color.tolist(),
        "tex_amplitude": scene.tex_amplitude,
        "tex_freq": scene.tex_freq,
        "ambient": scene.ambient,
        "kd": scene.kd,
        "ks": scene.ks,
        "shininess": scene.shininess,
        "light_dir": np.asarray(scene.light_dir).tolist(),
        "light_color": np.asarray(scene.light_color).tolist(),
    }


def scene_from_dict(d: dict) -> SynthScene:
    surf = d["surface"]
    if surf["kind"] == "plane":
        surface = PlaneSurface(
            np.array(surf["origin"]),
            np.array(surf["normal"]),
            np.array(surf["u_axis"]),
            np.array(surf["v_axis"]),
            surf["half_extent"],
        )
    elif surf["kind"] == "sphere":
        surface = SphereSurface(np.array(surf["center"]), surf["radius"])
    else:
        raise DataFormatError(f"unknown surface kind {surf.get('kind')!r}")
    return SynthScene(
        surface=surface,
        base_color=np.array(d["base_color"]),
        tex_amplitude=d["tex_amplitude"],
        tex_freq=d["tex_freq"],
        ambient=d["ambient"],
        kd=d["kd"],
        ks=d["ks"],
        shininess=d["shininess"],
        light_dir=np.array(d["light_dir"]),
        light_color=np.array(d["light_color"]),
    )


def _ray_hits(scene: SynthScene, origin: np.ndarray, dirs: np.ndarray):
    """Closest-hit parameter t along (possibly unnormalized) dirs, nan = miss."""
    s = scene.surface
    t = np.full(dirs.shape[:-1], np.nan)
    if isinstance(s, PlaneSurface):
        denom = dirs @ s.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = ((s.origin - origin) @ s.normal) / denom
        q = origin + tt[..., None] * dirs
        rel = q - s.origin
        inside = (
            (np.abs(denom) > 1e-12)
            & (tt > 1e-9)
            & (np.abs(rel @ s.u_axis) <= s.half_extent)
            & (np.abs(rel @ s.v_axis) <= s.half_extent)
        )
        t[inside] = tt[inside]
    else:
        oc = origin - np.asarray(s.center)
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * (dirs @ oc)
        c = oc @ oc - s.radius**2
        disc = b * b - 4 * a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        tt = np.where(t0 > 1e-9, t0, t1)
        hit = ok & (tt > 1e-9)
        t[hit] = tt[hit]
    return t


def render_scene_frame(
    scene: SynthScene,
    intrinsics: CameraIntrinsics,
    pose: Pose,
    timestamp: float = 0.0,
    index: int = 0,
) -> Frame:
    """Analytic RGBD render of the scene: the ground-truth generator."""
    k = intrinsics
    us, vs = np.meshgrid(np.arange(k.width), np.arange(k.height))
    dirs_cam = np.stack(
        [(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us, dtype=np.float64)],
        axis=-1,
    )
    dirs_world = dirs_cam @ pose.rotation.T
    t = _ray_hits(scene, pose.translation, dirs_world)
    hit = np.isfinite(t)
    depth = np.zeros((k.height, k.width), dtype=np.float32)
    color = np.zeros((k.height, k.width, 3), dtype=np.float32)
    if not hit.any():
        warnings.warn("camera sees no surface; frame is empty", stacklevel=2)
        return Frame(depth, color, k, pose, timestamp, index)
    # z-depth equals t because the camera-space ray has z = 1
    depth[hit] = t[hit].astype(np.float32)
    q = pose.translation + t[hit][:, None] * dirs_world[hit]
    view = dirs_world[hit] / np.linalg.norm(dirs_world[hit], axis=1, keepdims=True)
    color[hit] = scene.shade(q, view).astype(np.float32)
    return Frame(depth, color, k, pose, timestamp, index)


def ring_directions(axis, angle_deg: float, n: int, phase: float = 0.0) -> np.ndarray:
    """n unit directions at a fixed angle from axis, evenly spread in azimuth."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    pick = np.array([1.0, 0.0, 0.0])
    if abs(a @ pick) > 0.9:
        pick = np.array([0.0, 1.0, 0.0])
    u = np.cross(a, pick)
    u /= np.linalg.norm(u)
    v = np.cross(a, u)
    ang = np.deg2rad(angle_deg)
    phis = phase + 2.0 * np.pi * np.arange(n) / max(n, 1)
    return (
        np.cos(ang) * a[None, :]
        + np.sin(ang) * (np.cos(phis)[:, None] * u + np.sin(phis)[:, None] * v)
    )


def poses_toward(target, directions: np.ndarray, distance: float, up=(0.0, 0.0, 1.0)):
    """One look-at pose per direction, eye = target + distance * direction."""
    target = np.asarray(target, dtype=np.float64)
    out = []
    for d in np.atleast_2d(directions):
        eye = target + distance * d
        up_vec = np.asarray(up, dtype=np.float64)
        if abs(d @ up_vec / np.linalg.norm(up_vec)) > 0.99:
            up_vec = np.array([0.0, 1.0, 0.0])
        out.append(look_at(eye, target, up_vec))
    return out


def orbit_poses(
    center, radius: float, n: int, elevation_deg: float = 35.0, up=(0.0, 0.0, 1.0)
) -> list[Pose]:
    """n poses circling center at a fixed elevation, all looking at it."""
    el = np.deg2rad(elevation_deg)
    phis = 2.0 * np.pi * np.arange(n) / max(n, 1)
    dirs = np.stack(
        [
            np.cos(el) * np.cos(phis),
            np.cos(el) * np.sin(phis),
            np.full(n, np.sin(el)),
        ],
        axis=1,
    )
    return poses_toward(center, dirs, radius, up)


# ---------------------------------------------------------------------------
# meshes


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or t.ndim != 2 or t.shape[1] != 3:
            raise ShapeMismatchError("vertices (V,3) and triangles (T,3) required")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise DataFormatError("triangle index out of range")
        self.vertices, self.triangles = v, t

    def __len__(self) -> int:
        return self.triangles.shape[0]


def _drop_degenerate(vertices, triangles, source: str) -> np.ndarray:
    tri = np.asarray(triangles, dtype=np.int64)
    if tri.size == 0:
        return tri
    a = vertices[tri[:, 0]]
    b = vertices[tri[:, 1]]
    c = vertices[tri[:, 2]]
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    scale = max(float(np.max(np.abs(vertices))), 1.0)
    keep = area2 > 1e-14 * scale * scale
    dropped = int((~keep).sum())
    if dropped:
        warnings.warn(f"{source}: dropped {dropped} zero-area triangles", stacklevel=3)
    return tri[keep]


def load_mesh(path) -> TriangleMesh:
    """Read a triangle mesh from Wavefront OBJ or binary little-endian PLY.

    OBJ: v and f records, polygons fan-triangulated, negative indices allowed.
    PLY: float32 x/y/z vertex properties (extra properties skipped) and a
    uchar-counted integer vertex_indices face list. Zero-area triangles are
    dropped with a warning carrying the count.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"mesh file {path} does not exist")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        verts, tris = _load_obj(path)
    elif suffix == ".ply":
        verts, tris = _load_ply(path)
    else:
        raise DataFormatError(f"unsupported mesh extension {suffix!r}")
    verts = np.asarray(verts, dtype=np.float64)
    if verts.size == 0:
        raise DataFormatError(f"{path}: no vertices")
    tris = _drop_degenerate(verts, tris, str(path))
    return TriangleMesh(verts, tris)


def _load_obj(path: Path):
    verts, faces = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise DataFormatError(f"{path}:{ln}: short vertex record")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as exc:
                        raise DataFormatError(f"{path}:{ln}: bad face index {tok!r}") from exc
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise DataFormatError(f"{path}:{ln}: face with <3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(
        faces, dtype=np.int64
    ).reshape(-1, 3)


_PLY_SIZES = {
    "char": 1, "uchar": 1, "int8": 1, "uint8": 1,
    "short": 2, "ushort": 2, "int16": 2, "uint16": 2,
    "int": 4, "uint": 4, "int32": 4, "uint32": 4, "float": 4, "float32": 4,
    "double": 8, "float64": 8,
}
_PLY_NP = {
    "char": "<i1", "int8": "<i1", "uchar": "<u1", "uint8": "<u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def _load_ply(path: Path):
    raw = path.read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise DataFormatError(f"{path}: not a ply file")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n") :]
    fmt = next((l.split()[1] for l in header if l.startswith("format")), None)
    if fmt != "binary_little_endian":
        raise DataFormatError(f"{path}: only binary_little_endian ply supported")
    elements = []  # (name, count, [(proptype, name) or ('list', counttype, itemtype, name)])
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property" and elements:
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1][2].append((parts[1], parts[2]))

    pos = 0
    verts = np.zeros((0, 3))
    faces: list[list[int]] = []
    for name, count, props in elements:
        if name == "vertex":
            if any(p[0] == "list" for p in props):
                raise DataFormatError(f"{path}: list-typed vertex properties unsupported")
            stride = sum(_PLY_SIZES[p[0]] for p in props)
            block = body[pos : pos + stride * count]
            if len(block) < stride * count:
                raise DataFormatError(f"{path}: truncated vertex data")
            pos += stride * count
            offsets = {}
            off = 0
            for ptype, pname in props:
                offsets[pname] = (off, ptype)
                off += _PLY_SIZES[ptype]
            cols = []
            for ax in ("x", "y", "z"):
                if ax not in offsets:
                    raise DataFormatError(f"{path}: vertex missing {ax}")
                o, ptype = offsets[ax]
                cols.append(
                    np.frombuffer(block, dtype=_PLY_NP[ptype], count=count, offset=o).copy()
                    if stride == _PLY_SIZES[ptype]
                    else np.ndarray(
                        (count,), _PLY_NP[ptype], block, o, (stride,)
                    ).copy()
                )
            verts = np.stack([c.astype(np.float64) for c in cols], axis=1)
        elif name == "face":
            if len(props) != 1 or props[0][0] != "list":
                raise DataFormatError(f"{path}: face element must be a single list")
            _, ctype, itype, _ = props[0]
            csize, isize = _PLY_SIZES[ctype], _PLY_SIZES[itype]
            for _ in range(count):
                if pos + csize > len(body):
                    raise DataFormatError(f"{path}: truncated face data")
                n = int(
                    np.frombuffer(body, dtype=_PLY_NP[ctype], count=1, offset=pos)[0]
                )
                pos += csize
                if pos + n * isize > len(body):
                    raise DataFormatError(f"{path}: truncated face data")
                idx = np.frombuffer(
                    body, dtype=_PLY_NP[itype], count=n, offset=pos
                ).astype(np.int64)
                pos += n * isize
                if n < 3:
                    raise DataFormatError(f"{path}: face with <3 vertices")
                for k in range(1, n - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        else:
            raise DataFormatError(f"{path}: unsupported element {name!r}")
    return verts, np.array(faces, dtype=np.int64).reshape(-1, 3)


def primitive_mesh(surface, resolution: int = 24) -> TriangleMesh:
    """Triangulate an analytic surface: 2 triangles for a plane, UV sphere."""
    if isinstance(surface, PlaneSurface):
        he = surface.half_extent
        corners = np.array(
            [
                surface.origin - he * surface.u_axis - he * surface.v_axis,
                surface.origin + he * surface.u_axis - he * surface.v_axis,
                surface.origin + he * surface.u_axis + he * surface.v_axis,
                surface.origin - he * surface.u_axis + he * surface.v_axis,
            ]
        )
        tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
        return TriangleMesh(corners, tris)
    if isinstance(surface, SphereSurface):
        n_lat, n_lon = resolution, 2 * resolution
        c = np.asarray(surface.center, dtype=np.float64)
        verts = [c + [0.0, 0.0, surface.radius]]
        for i in range(1, n_lat):
            theta = np.pi * i / n_lat
            for j in range(n_lon):
                phi = 2.0 * np.pi * j / n_lon
                verts.append(
                    c
                    + surface.radius
                    * np.array(
                        [
                            np.sin(theta) * np.cos(phi),
                            np.sin(theta) * np.sin(phi),
                            np.cos(theta),
                        ]
                    )
                )
        verts.append(c + [0.0, 0.0, -surface.radius])
        bottom = len(verts) - 1
        tris = []
        ring = lambda i, j: 1 + (i - 1) * n_lon + (j % n_lon)
        for j in range(n_lon):
            tris.append([0, ring(1, j), ring(1, j + 1)])
        for i in range(1, n_lat - 1):
            for j in range(n_lon):
                a, b = ring(i, j), ring(i, j + 1)
                cc, dd = ring(i + 1, j), ring(i + 1, j + 1)
                tris.append([a, cc, b])
                tris.append([b, cc, dd])
        for j in range(n_lon):
            tris.append([bottom, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
        return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64))
    raise DomainError(f"no mesh primitive for {type(surface).__name__}")
