"""Input encodings: multi-resolution hash grid and real spherical harmonics.

The hash grid follows the multiresolution spatial-hash scheme: L levels with
geometrically spaced resolutions between base_resolution and max_resolution,
each level owning a table of table_size trainable feature rows. A point in the
unit cube is scaled to the level's lattice, its 8 surrounding corners are
hashed into the table, and the corner features are combined by trilinear
interpolation. Collisions are left to training to sort out; every level
hashes (no dense fallback at coarse levels).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeMismatchError

# Large primes for the spatial hash; the x axis is deliberately unmixed.
_HASH_PRIMES = np.array([1, 2654435761, 805459861], dtype=np.int64)


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 8
    features: int = 2
    table_size: int = 2**14
    base_resolution: int = 16
    max_resolution: int = 512

    def __post_init__(self):
        if self.levels < 1 or self.features < 1:
            raise ValueError("levels and features must be positive")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ValueError("table_size must be a positive power of two")
        if not 0 < self.base_resolution <= self.max_resolution:
            raise ValueError("need 0 < base_resolution <= max_resolution")

    @property
    def out_dim(self) -> int:
        return self.levels * self.features

    def growth_factor(self) -> float:
        if self.levels == 1:
            return 1.0
        return float(
            np.exp(
                (np.log(self.max_resolution) - np.log(self.base_resolution))
                / (self.levels - 1)
            )
        )

    def level_resolutions(self) -> np.ndarray:
        """N_l = floor(base * b**l); the last level lands on max_resolution."""
        b = self.growth_factor()
        ls = np.arange(self.levels)
        # the 1e-6 absorbs float error in b**l when the product is integral
        return np.floor(self.base_resolution * b**ls + 1e-6).astype(np.int64)


@dataclass
class HashGrid:
    """Trainable tables for one encoder instance: shape (L, T, F)."""

    config: HashGridConfig
    tables: np.ndarray

    @classmethod
    def create(
        cls,
        config: HashGridConfig,
        rng: np.random.Generator,
        dtype=np.float32,
    ) -> "HashGrid":
        tables = rng.uniform(
            -1e-4,
            1e-4,
            size=(config.levels, config.table_size, config.features),
        ).astype(dtype)
        return cls(config, tables)


def hash_index(cell: np.ndarray, config: HashGridConfig) -> np.ndarray:
    """Spatial hash of integer lattice coordinates, shape (..., 3) -> (...).

    index = (x * 1  XOR  y * 2654435761  XOR  z * 805459861) mod table_size.
    The same map serves every level.
    """
    cell = np.asarray(cell)
    if cell.shape[-1] != 3:
        raise ShapeMismatchError("cell coordinates must have a trailing 3")
    if not np.issubdtype(cell.dtype, np.integer):
        raise DomainError("cell coordinates must be integers")
    mixed = cell.astype(np.int64) * _HASH_PRIMES
    h = mixed[..., 0] ^ mixed[..., 1] ^ mixed[..., 2]
    return h & (config.table_size - 1)


@dataclass
class GridEncodeCache:
    """Per-level corner bookkeeping reused by the backward pass."""

    indices: list[np.ndarray]  # (N, 8) table rows per level
    weights: list[np.ndarray]  # (N, 8) trilinear weights per level
    single: bool


# Corner offsets in a fixed order: bit 0 -> z, bit 1 -> y, bit 2 -> x.
_CORNERS = np.array(
    [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
    dtype=np.int64,
)


def grid_encode(
    p_unit: np.ndarray, grid: HashGrid
) -> tuple[np.ndarray, GridEncodeCache]:
    """Encode unit-cube points, shape (3,) or (N, 3) -> (L*F,) or (N, L*F).

    Raises DomainError for points outside [0, 1]^3; those indicate a routing
    bug upstream, not a numerical issue to paper over.
    """
    p = np.asarray(p_unit, dtype=grid.tables.dtype)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] != 3:
        raise ShapeMismatchError(f"points must be (*, 3), got {p.shape}")
    if p.size and (p.min() < -1e-9 or p.max() > 1.0 + 1e-9):
        bad = p[np.any((p < -1e-9) | (p > 1.0 + 1e-9), axis=1)][0]
        raise DomainError(f"point {bad.tolist()} outside the unit cube")
    p = np.clip(p, 0.0, 1.0)

    cfg = grid.config
    n = p.shape[0]
    out = np.empty((n, cfg.out_dim), dtype=grid.tables.dtype)
    indices, weights = [], []
    for lvl, res in enumerate(cfg.level_resolutions()):
        scaled = p * np.asarray(res, dtype=p.dtype)
        base = np.floor(scaled).astype(np.int64)
        # points exactly on the far face belong to the last cell
        np.minimum(base, res - 1, out=base)
        frac = scaled - base
        corners = base[:, None, :] + _CORNERS[None, :, :]  # (N, 8, 3)
        idx = hash_index(corners, cfg)  # (N, 8)
        w = np.where(_CORNERS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
        w = w.prod(axis=2)  # (N, 8)
        feats = grid.tables[lvl][idx]  # (N, 8, F)
        out[:, lvl * cfg.features : (lvl + 1) * cfg.features] = (
            w[:, :, None] * feats
        ).sum(axis=1)
        indices.append(idx)
        weights.append(w.astype(grid.tables.dtype))
    cache = GridEncodeCache(indices, weights, single)
    return (out[0] if single else out), cache


@dataclass
class SparseGridGrad:
    """Per-level touched-entry gradients: (rows, values) with unique rows."""

    levels: list[tuple[np.ndarray, np.ndarray]]  # (M,), (M, F)

    def add_into(self, dense: np.ndarray) -> np.ndarray:
        """Accumulate into a dense (L, T, F) array (the tables' grad)."""
        for lvl, (rows, vals) in enumerate(self.levels):
            np.add.at(dense[lvl], rows, vals)
        return dense

    def to_dense(self, config: HashGridConfig, dtype=np.float64) -> np.ndarray:
        dense = np.zeros(
            (config.levels, config.table_size, config.features), dtype=dtype
        )
        return self.add_into(dense)


def grid_encode_backward(
    cache: GridEncodeCache, grad_out: np.ndarray, config: HashGridConfig
) -> SparseGridGrad:
    """Gradient of the encode output w.r.t. the tables.

    grad_out matches the forward output shape. Each touched entry receives
    weight * grad slice, entries that cancel to exactly zero are dropped, and
    duplicate rows (hash collisions within a cell) are merged by summation.
    """
    g = np.asarray(grad_out)
    if cache.single:
        g = g[None, :]
    n = cache.indices[0].shape[0]
    if g.shape != (n, config.out_dim):
        raise ShapeMismatchError(
            f"grad_out shape {grad_out.shape} does not match encode output"
        )
    levels = []
    for lvl in range(config.levels):
        idx = cache.indices[lvl]  # (N, 8)
        w = cache.weights[lvl]  # (N, 8)
        gl = g[:, lvl * config.features : (lvl + 1) * config.features]
        contrib = w[:, :, None] * gl[:, None, :]  # (N, 8, F)
        rows, inverse = np.unique(idx.reshape(-1), return_inverse=True)
        vals = np.zeros((rows.size, config.features), dtype=np.float64)
        np.add.at(vals, inverse, contrib.reshape(-1, config.features))
        keep = np.any(vals != 0.0, axis=1)
        levels.append((rows[keep], vals[keep]))
    return SparseGridGrad(levels)


# Real spherical harmonics up to l=3 in the graphics convention (no
# Condon-Shortley phase), hard-coded closed forms on unit directions.
_C0 = 0.28209479177387814  # 1 / (2 sqrt(pi))
_C1 = 0.4886025119029199  # sqrt(3 / (4 pi))
_C2 = (
    1.0925484305920792,  # xy, yz, xz: (1/2) sqrt(15/pi)
    0.31539156525252005,  # (3z^2 - 1): (1/4) sqrt(5/pi)
    0.5462742152960396,  # (x^2 - y^2): (1/4) sqrt(15/pi)
)
_C3 = (
    0.5900435899266435,  # y(3x^2 - y^2), x(x^2 - 3y^2): (1/4) sqrt(35/(2 pi))
    2.890611442640554,  # xyz: (1/2) sqrt(105/pi)
    0.4570457994644658,  # y(5z^2-1), x(5z^2-1): (1/4) sqrt(21/(2 pi))
    0.3731763325901154,  # z(5z^2-3): (1/4) sqrt(7/pi)
    1.445305721320277,  # z(x^2-y^2): (1/4) sqrt(105/pi)
)


def n_sh_basis(l_max: int) -> int:
    return (l_max + 1) ** 2


def sh_basis(d: np.ndarray, l_max: int = 3) -> np.ndarray:
    """Evaluate the real SH basis at unit directions.

    d has shape (3,) or (N, 3); the result appends bands in (l, m) order with
    m ascending, shape (..., (l_max+1)^2). Directions off the sphere by more
    than 1e-6 but within 1e-3 are renormalized with a warning; worse than
    that raises DomainError.
    """
    if not 0 <= l_max <= 3:
        raise DomainError(f"l_max={l_max} outside the implemented range [0, 3]")
    d = np.asarray(d, dtype=np.float64)
    single = d.ndim == 1
    if single:
        d = d[None, :]
    if d.ndim != 2 or d.shape[1] != 3:
        raise ShapeMismatchError(f"directions must be (*, 3), got {d.shape}")
    norm = np.linalg.norm(d, axis=1)
    err = np.abs(norm - 1.0)
    if np.any(err > 1e-3):
        raise DomainError(
            f"direction norm off the sphere by {err.max():.3e} (> 1e-3)"
        )
    if np.any(err > 1e-6):
        warnings.warn(
            "renormalizing directions up to 1e-3 off the unit sphere",
            stacklevel=2,
        )
        d = d / norm[:, None]

    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    cols = [np.full(x.shape, _C0)]
    if l_max >= 1:
        cols += [_C1 * y, _C1 * z, _C1 * x]
    if l_max >= 2:
        xy, yz, xz = x * y, y * z, x * z
        x2, y2, z2 = x * x, y * y, z * z
        cols += [
            _C2[0] * xy,
            _C2[0] * yz,
            _C2[1] * (3.0 * z2 - 1.0),
            _C2[0] * xz,
            _C2[2] * (x2 - y2),
        ]
    if l_max >= 3:
        cols += [
            _C3[0] * y * (3.0 * x2 - y2),
            _C3[1] * xy * z,
            _C3[2] * y * (5.0 * z2 - 1.0),
            _C3[3] * z * (5.0 * z2 - 3.0),
            _C3[2] * x * (5.0 * z2 - 1.0),
            _C3[4] * z * (x2 - y2),
            _C3[0] * x * (x2 - 3.0 * y2),
        ]
    out = np.stack(cols, axis=1)
    return out[0] if single else out
