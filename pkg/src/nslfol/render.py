"""Novel-view synthesis from frozen agent snapshots.

A triangle mesh stands in for scene geometry: pixel rays are cast against it
(BVH accelerated), the hit points and their view directions are routed
through the region table, and the predicted colors fill the image. Misses
render black; hits in regions no agent ever saw render 0.5 gray, both with
the coverage mask off, so the two failure kinds stay distinguishable.

PSNR, windowed SSIM, and the direction-novelty bucketing used to score
unseen viewing angles live here as well.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PilImage
from scipy.signal import convolve2d
from scipy.spatial import cKDTree

from .errors import DataFormatError, DomainError, ShapeMismatchError
from .ingest import CameraIntrinsics, ColoredPointBatch, Pose, TriangleMesh

__all__ = [
    "Bvh",
    "Image",
    "RaycastResult",
    "TriangleMesh",
    "angle_filtered_eval",
    "brute_force_raycast",
    "build_bvh",
    "bvh_raycast",
    "camera_rays",
    "novelty_angles",
    "psnr",
    "raycast",
    "read_image_dump",
    "read_image_png",
    "render_view",
    "ssim",
    "write_image_dump",
    "write_image_png",
]

PSNR_CAP_DB = 99.0

_LEAF_SIZE = 4
_DET_EPS = 1e-12


@dataclass
class Image:
    """RGB float image in [0, 1] with an optional validity mask."""

    pixels: np.ndarray  # (H, W, 3) float32
    mask: np.ndarray | None = None  # (H, W) bool, True where meaningful

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeMismatchError("pixels must be (H, W, 3) with H, W >= 1")
        self.pixels = np.clip(px, 0.0, 1.0)
        if self.mask is not None:
            m = np.asarray(self.mask)
            if m.shape != px.shape[:2]:
                raise ShapeMismatchError("mask must match the pixel grid")
            self.mask = m.astype(bool)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


# -- BVH --------------------------------------------------------------------


@dataclass
class Bvh:
    """Array-packed bounding volume hierarchy with baked triangle data.

    Leaves hold contiguous runs of `tri_order`; v0/e1/e2 are the triangles'
    base vertex and edge vectors in that order, so traversal never touches
    the mesh again. Leaf runs are sorted by original triangle index: the
    first minimum over a leaf is then automatically the lowest-index hit,
    which is what makes traversal tie-break exactly like a brute-force scan.
    """

    box_min: np.ndarray  # (M, 3)
    box_max: np.ndarray  # (M, 3)
    left: np.ndarray  # (M,) child node, -1 at leaves
    right: np.ndarray  # (M,)
    start: np.ndarray  # (M,) leaf run offset, -1 inside
    count: np.ndarray  # (M,) leaf run length, 0 inside
    tri_order: np.ndarray  # (T,) permutation into the source triangles
    v0: np.ndarray  # (T, 3)
    e1: np.ndarray  # (T, 3)
    e2: np.ndarray  # (T, 3)

    @property
    def n_nodes(self) -> int:
        return self.box_min.shape[0]


def build_bvh(mesh: TriangleMesh, leaf_size: int = _LEAF_SIZE) -> Bvh:
    """Median-split BVH: longest centroid axis, halved by sorted order.

    Boxes are padded by a relative epsilon so axis-aligned (zero-thickness)
    geometry cannot slip between a slab test's rounded planes.
    """
    tri = mesh.triangles
    vert = mesh.vertices
    if len(tri) == 0:
        raise DomainError("cannot build a BVH over an empty mesh")
    corners = vert[tri]  # (T, 3, 3)
    tri_lo = corners.min(axis=1)
    tri_hi = corners.max(axis=1)
    cent = corners.mean(axis=1)
    pad = 1e-9 * max(1.0, float(np.max(np.abs(vert))))

    nodes: list[tuple] = []  # (lo, hi, left, right, start, count)
    chunks: list[np.ndarray] = []
    offset = 0

    def build(ids: np.ndarray) -> int:
        nonlocal offset
        me = len(nodes)
        nodes.append(())
        lo = tri_lo[ids].min(axis=0) - pad
        hi = tri_hi[ids].max(axis=0) + pad
        if len(ids) <= leaf_size:
            nodes[me] = (lo, hi, -1, -1, offset, len(ids))
            chunks.append(np.sort(ids))
            offset += len(ids)
            return me
        axis = int(np.argmax(cent[ids].max(axis=0) - cent[ids].min(axis=0)))
        ranked = ids[np.argsort(cent[ids, axis], kind="stable")]
        half = len(ids) // 2
        l = build(ranked[:half])
        r = build(ranked[half:])
        nodes[me] = (lo, hi, l, r, -1, 0)
        return me

    build(np.arange(len(tri), dtype=np.int64))
    order = np.concatenate(chunks)
    v0 = vert[tri[order, 0]]
    return Bvh(
        box_min=np.array([n[0] for n in nodes]),
        box_max=np.array([n[1] for n in nodes]),
        left=np.array([n[2] for n in nodes], dtype=np.int64),
        right=np.array([n[3] for n in nodes], dtype=np.int64),
        start=np.array([n[4] for n in nodes], dtype=np.int64),
        count=np.array([n[5] for n in nodes], dtype=np.int64),
        tri_order=order,
        v0=v0,
        e1=vert[tri[order, 1]] - v0,
        e2=vert[tri[order, 2]] - v0,
    )


def _mt_hit_t(o, d, v0, e1, e2):
    """Moller-Trumbore t for rays (R, 3) against triangles (T, 3) -> (R, T).

    +inf marks a miss. Every (ray, triangle) pair is pure elementwise
    arithmetic, so slicing either axis into batches reproduces the exact
    same bits; the BVH leaf path and the brute-force scan share this kernel
    and therefore agree bit for bit. Edges are inclusive (u, v >= 0,
    u+v <= 1): a ray through a shared edge hits both neighbors and the
    caller's index tie-break picks one deterministically.
    """
    pv = np.cross(d[:, None, :], e2[None, :, :])
    det = np.einsum("tk,rtk->rt", e1, pv)
    tv = o[:, None, :] - v0[None, :, :]
    qv = np.cross(tv, e1[None, :, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        u = np.einsum("rtk,rtk->rt", tv, pv) * inv
        v = np.einsum("rk,rtk->rt", d, qv) * inv
        t = np.einsum("tk,rtk->rt", e2, qv) * inv
        ok = (
            (np.abs(det) > _DET_EPS)
            & (u >= 0.0)
            & (v >= 0.0)
            & (u + v <= 1.0)
            & (t > 0.0)
        )
    return np.where(ok, t, np.inf)


def brute_force_raycast(
    mesh: TriangleMesh, origins: np.ndarray, dirs: np.ndarray, chunk: int = 4096
) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive every-ray-against-every-triangle reference.

    Returns (t, tri) per ray, tri = -1 and t = +inf on miss. Nearest
    positive hit wins; equal t falls to the lower triangle index (argmin
    takes the first occurrence and columns are in index order).
    """
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    e2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    n = o.shape[0]
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        t = _mt_hit_t(o[s:e], d[s:e], v0, e1, e2)
        col = np.argmin(t, axis=1)
        rows = np.arange(e - s)
        tmin = t[rows, col]
        hit = np.isfinite(tmin)
        best_t[s:e] = tmin
        best_tri[s:e][hit] = col[hit]
    return best_t, best_tri


def bvh_raycast(
    bvh: Bvh, origins: np.ndarray, dirs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest positive-t hit per ray through the hierarchy.

    Matches brute_force_raycast exactly: same intersection kernel, and the
    running minimum is lexicographic in (t, original triangle index).
    """
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = o.shape[0]
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return best_t, best_tri
    with np.errstate(divide="ignore"):
        inv_d = 1.0 / d
    stack: list[tuple[int, np.ndarray]] = [(0, np.arange(n))]
    while stack:
        node, rays = stack.pop()
        with np.errstate(invalid="ignore"):  # 0 * inf on padded box faces
            t1 = (bvh.box_min[node] - o[rays]) * inv_d[rays]
            t2 = (bvh.box_max[node] - o[rays]) * inv_d[rays]
        # fmin/fmax drop the NaN operand, keeping the finite slab plane
        near = np.max(np.fmin(t1, t2), axis=1)
        far = np.min(np.fmax(t1, t2), axis=1)
        alive = rays[(near <= far) & (far >= 0.0)]
        if alive.size == 0:
            continue
        if bvh.count[node] > 0:
            s = bvh.start[node]
            e = s + bvh.count[node]
            t = _mt_hit_t(o[alive], d[alive], bvh.v0[s:e], bvh.e1[s:e], bvh.e2[s:e])
            col = np.argmin(t, axis=1)
            rows = np.arange(alive.size)
            tmin = t[rows, col]
            cand = bvh.tri_order[s:e][col]
            better = (tmin < best_t[alive]) | (
                (tmin == best_t[alive]) & (cand < best_tri[alive])
            )
            upd = alive[better]
            best_t[upd] = tmin[better]
            best_tri[upd] = cand[better]
        else:
            stack.append((int(bvh.left[node]), alive))
            stack.append((int(bvh.right[node]), alive))
    return best_t, best_tri


# -- per-pixel casting ------------------------------------------------------


def camera_rays(intrinsics: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """World-space pixel ray directions, (H, W, 3), camera-space z = 1.

    Left unnormalized on purpose: the ray parameter t then equals z-depth,
    the same convention the depth maps use.
    """
    k = intrinsics
    us, vs = np.meshgrid(np.arange(k.width), np.arange(k.height))
    dirs_cam = np.stack(
        [(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us, dtype=np.float64)],
        axis=-1,
    )
    return dirs_cam @ pose.rotation.T


@dataclass
class RaycastResult:
    points: np.ndarray  # (H, W, 3) world hits, zeros where missed
    depth: np.ndarray  # (H, W) z-depth, 0 where missed
    mask: np.ndarray  # (H, W) bool
    tri: np.ndarray  # (H, W) triangle index, -1 where missed


def raycast(bvh: Bvh, intrinsics: CameraIntrinsics, pose: Pose) -> RaycastResult:
    """Cast one ray per pixel; misses are data (mask off), never errors."""
    h, w = intrinsics.height, intrinsics.width
    dirs = camera_rays(intrinsics, pose).reshape(-1, 3)
    origins = np.broadcast_to(pose.translation, dirs.shape)
    t, tri = bvh_raycast(bvh, origins, dirs)
    hit = tri >= 0
    points = np.zeros((h * w, 3))
    points[hit] = pose.translation + t[hit, None] * dirs[hit]
    depth = np.where(hit, t, 0.0)
    return RaycastResult(
        points=points.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        mask=hit.reshape(h, w),
        tri=tri.reshape(h, w),
    )


def render_view(snapshot, bvh: Bvh, intrinsics: CameraIntrinsics, pose: Pose) -> Image:
    """Raycast, route the hits through the snapshot, assemble the image.

    Pure on its inputs: the snapshot's parameters are read, never written,
    so repeated renders are bit-identical.
    """
    rc = raycast(bvh, intrinsics, pose)
    h, w = rc.mask.shape
    pixels = np.zeros((h, w, 3), dtype=np.float32)
    mask = np.zeros((h, w), dtype=bool)
    flat = rc.mask.reshape(-1)
    if flat.any():
        pts = rc.points.reshape(-1, 3)[flat]
        view = pts - pose.translation
        view /= np.linalg.norm(view, axis=1, keepdims=True)
        colors, covered = snapshot.predict(pts, view)
        pixels.reshape(-1, 3)[flat] = colors
        mask.reshape(-1)[flat] = covered
    return Image(pixels, mask)


# -- metrics ----------------------------------------------------------------


def _joint_mask(a: Image, b: Image) -> np.ndarray:
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeMismatchError(
            f"image sizes differ: {a.pixels.shape[:2]} vs {b.pixels.shape[:2]}"
        )
    valid = np.ones((a.height, a.width), dtype=bool)
    if a.mask is not None:
        valid &= a.mask
    if b.mask is not None:
        valid &= b.mask
    return valid


def psnr(a: Image, b: Image) -> float:
    """10 log10(1 / MSE) with a peak of 1, over mutually valid pixels.

    Capped at 99 dB so identical images stay finite.
    """
    valid = _joint_mask(a, b)
    if not valid.any():
        raise DomainError("no mutually valid pixels to compare")
    diff = a.pixels[valid].astype(np.float64) - b.pixels[valid].astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    off = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(off * off) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _to_gray(image: Image) -> np.ndarray:
    px = image.pixels.astype(np.float64)
    return 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]


def ssim(a: Image, b: Image, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity on grayscale, 11x11 Gaussian sigma 1.5.

    Windows touching any invalid pixel are excluded. Denominator terms are
    arranged so ssim(x, x) is exactly 1.0.
    """
    valid = _joint_mask(a, b)
    size = 11
    if a.height < size or a.width < size:
        raise DomainError(f"images must be at least {size}x{size} for SSIM")
    x = _to_gray(a)
    y = _to_gray(b)
    win = _gaussian_window(size, 1.5)
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    sxx = convolve2d(x * x, win, mode="valid") - mu_x * mu_x
    syy = convolve2d(y * y, win, mode="valid") - mu_y * mu_y
    sxy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    c1 = k1 * k1
    c2 = k2 * k2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    smap = num / den
    if valid.all():
        window_ok = np.ones(smap.shape, dtype=bool)
    else:
        # a window counts only when every pixel under it is valid
        bad = convolve2d((~valid).astype(np.float64), np.ones((size, size)), "valid")
        window_ok = bad == 0.0
    if not window_ok.any():
        raise DomainError("no fully valid SSIM windows")
    return float(smap[window_ok].mean())


# -- unseen-direction scoring -----------------------------------------------


def novelty_angles(
    points: np.ndarray,
    dirs: np.ndarray,
    trained_points: np.ndarray,
    trained_dirs: np.ndarray,
    k: int = 8,
    mode: str = "point",
) -> np.ndarray:
    """Angle (degrees) from each view direction to the nearest trained one.

    mode 'point': candidates are the directions attached to the k spatially
    nearest trained surface points, so novelty is judged where the surface
    was actually observed. mode 'frame': every trained direction competes
    (camera-level fallback, trained_points ignored).
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    trained_dirs = np.atleast_2d(np.asarray(trained_dirs, dtype=np.float64))
    if len(trained_dirs) == 0:
        raise DomainError("need at least one trained direction")
    if mode == "frame":
        cos = dirs @ trained_dirs.T
        best = cos.max(axis=1)
    elif mode == "point":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        trained_points = np.atleast_2d(np.asarray(trained_points, dtype=np.float64))
        kk = min(k, len(trained_points))
        _, nn = cKDTree(trained_points).query(points, k=kk)
        nn = nn.reshape(len(points), kk)
        cand = trained_dirs[nn]  # (N, kk, 3)
        cos = np.einsum("nc,njc->nj", dirs, cand)
        best = cos.max(axis=1)
    else:
        raise ValueError(f"unknown novelty mode {mode!r}")
    return np.degrees(np.arccos(np.clip(best, -1.0, 1.0)))


def angle_filtered_eval(
    snapshot,
    bvh: Bvh,
    frames,
    trained,
    thresholds_deg=(15.0, 30.0, 60.0),
    mode: str = "point",
    k: int = 8,
) -> dict:
    """Per-threshold PSNR over pixels whose view direction is within the
    angle of some trained direction.

    frames: posed RGBD ground-truth frames; trained: the fed samples as a
    ColoredPointBatch or a (points, dirs) pair. Buckets are cumulative
    (<= threshold), so a sorted threshold list yields nested pixel sets.
    Empty buckets are left out of the result rather than scored as zero.
    """
    if isinstance(trained, ColoredPointBatch):
        t_points, t_dirs = trained.points, trained.dirs
    else:
        t_points, t_dirs = trained
    thresholds = sorted(float(t) for t in thresholds_deg)
    sse = {t: 0.0 for t in thresholds}
    cnt = {t: 0 for t in thresholds}
    for frame in frames:
        rc = raycast(bvh, frame.intrinsics, frame.pose)
        valid = rc.mask & (frame.depth > 0)
        if not valid.any():
            continue
        pts = rc.points[valid]
        view = pts - frame.pose.translation
        view /= np.linalg.norm(view, axis=1, keepdims=True)
        colors, covered = snapshot.predict(pts, view)
        gt = frame.color[valid].astype(np.float64)
        angles = novelty_angles(pts, view, t_points, t_dirs, k=k, mode=mode)
        err = np.sum((colors.astype(np.float64) - gt) ** 2, axis=1)
        for thr in thresholds:
            sel = covered & (angles <= thr)
            sse[thr] += float(err[sel].sum())
            cnt[thr] += int(sel.sum())
    out = {}
    for thr in thresholds:
        if cnt[thr] == 0:
            continue
        mse = sse[thr] / (3.0 * cnt[thr])
        db = PSNR_CAP_DB if mse == 0.0 else min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)
        out[thr] = {"psnr": db, "pixels": cnt[thr]}
    return out


# -- image files ------------------------------------------------------------


def write_image_png(image: Image, path) -> None:
    """8-bit RGB PNG; the mask is not stored (use the float dump for that
    level of fidelity's metrics)."""
    u8 = np.round(image.pixels * 255.0).astype(np.uint8)
    PilImage.fromarray(u8).save(Path(path))


def read_image_png(path) -> Image:
    arr = np.asarray(PilImage.open(Path(path)).convert("RGB"), dtype=np.float32)
    return Image(arr / 255.0)


def write_image_dump(image: Image, path) -> None:
    """Lossless pixel dump: '<II' width/height header, then float32 LE RGB."""
    payload = struct.pack("<II", image.width, image.height)
    payload += np.ascontiguousarray(image.pixels, dtype="<f4").tobytes()
    Path(path).write_bytes(payload)


def read_image_dump(path) -> Image:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated image dump header")
    w, h = struct.unpack_from("<II", raw)
    want = 8 + w * h * 3 * 4
    if len(raw) != want:
        raise DataFormatError(
            f"{path}: expected {want} bytes for {w}x{h} RGB, found {len(raw)}"
        )
    px = np.frombuffer(raw, dtype="<f4", offset=8).reshape(h, w, 3)
    return Image(px.copy())
