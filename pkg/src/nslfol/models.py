"""The two field models and their training loop.

Both models map (surface point in the unit cube, unit view direction) to RGB
in [0, 1]:

- NslfModel: a hash-grid trunk feeds two small heads. One head emits a stack
  of SH coefficients per latent channel; contracting that stack against the
  SH basis of the view direction gives a latent s. The other head emits the
  weights of a tiny per-point color network applied to s (a hypernetwork:
  the weights vary with position, the input varies with direction). Sigmoid
  keeps the output in range.
- HgModel: the baseline. Hash-grid features concatenated with the SH encoding
  of the direction, pushed through one fixed MLP.

Everything differentiable is hand-written; loss_and_grad returns a parameter
bundle gradient that adam_step consumes directly. The loss is the batch sum
of squared color residuals.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoding import (
    HashGrid,
    HashGridConfig,
    grid_encode,
    grid_encode_backward,
    n_sh_basis,
    sh_basis,
)
from .errors import DataFormatError, NonFiniteGradientError, ShapeMismatchError
from .numerics import (
    AdamState,
    DenseLayer,
    Mlp,
    adam_step,
    glorot_init,
    mlp_backward,
    mlp_forward,
)

BLOB_MAGIC = b"NSLF"
BLOB_VERSION = 1
_KIND_CODES = {"nslf": 1, "hg": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class NslfConfig:
    grid: HashGridConfig = field(default_factory=HashGridConfig)
    l_max: int = 3
    # one SH coefficient stack per latent channel; 1 gives the scalar variant
    latent_channels: int = 3
    head_width: int = 32
    hyper_hidden: int = 16
    dtype: str = "float32"

    @property
    def n_basis(self) -> int:
        return n_sh_basis(self.l_max)

    @property
    def hyper_dim(self) -> int:
        """Flattened size of the per-point color net: W1, b1, W2, b2."""
        h, c = self.hyper_hidden, self.latent_channels
        return h * c + h + 3 * h + 3


@dataclass(frozen=True)
class HgConfig:
    grid: HashGridConfig = field(default_factory=HashGridConfig)
    l_max: int = 3
    width: int = 32
    depth: int = 4
    dtype: str = "float32"

    @property
    def n_basis(self) -> int:
        return n_sh_basis(self.l_max)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class NslfCache:
    enc_cache: object
    sh_cache: list
    w_cache: list
    basis: np.ndarray
    s: np.ndarray
    w1: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    w2: np.ndarray
    rgb: np.ndarray
    single: bool


class NslfModel:
    """SH-decoded surface light field with a hypernetwork color head."""

    kind = "nslf"

    def __init__(self, config: NslfConfig, grid: HashGrid, head_sh: Mlp, head_w: Mlp):
        self.config = config
        self.grid = grid
        self.head_sh = head_sh
        self.head_w = head_w

    @classmethod
    def create(cls, config: NslfConfig, rng: np.random.Generator) -> "NslfModel":
        dtype = np.dtype(config.dtype)
        grid = HashGrid.create(config.grid, rng, dtype=dtype)
        in_dim = config.grid.out_dim
        head_sh = glorot_init(
            [in_dim, config.head_width, config.latent_channels * config.n_basis],
            ["relu", "none"],
            rng,
            dtype=dtype,
        )
        head_w = glorot_init(
            [in_dim, config.head_width, config.hyper_dim],
            ["relu", "none"],
            rng,
            dtype=dtype,
        )
        return cls(config, grid, head_sh, head_w)

    def params(self) -> list[np.ndarray]:
        return [self.grid.tables] + self.head_sh.params() + self.head_w.params()

    def clone(self) -> "NslfModel":
        return _rebuild_from_params(self, [p.copy() for p in self.params()])

    def _unpack_hyper(self, w: np.ndarray):
        h, c = self.config.hyper_hidden, self.config.latent_channels
        n = w.shape[0]
        w1 = w[:, : h * c].reshape(n, h, c)
        b1 = w[:, h * c : h * c + h]
        w2 = w[:, h * c + h : h * c + h + 3 * h].reshape(n, 3, h)
        b2 = w[:, h * c + 4 * h :]
        return w1, b1, w2, b2

    def forward(self, p: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, NslfCache]:
        p = np.asarray(p)
        single = p.ndim == 1
        if single:
            p = p[None, :]
            d = np.asarray(d)[None, :]
        feats, enc_cache = grid_encode(p, self.grid)
        coef_flat, sh_cache = mlp_forward(self.head_sh, feats)
        w_flat, w_cache = mlp_forward(self.head_w, feats)
        n = p.shape[0]
        c, nb = self.config.latent_channels, self.config.n_basis
        basis = sh_basis(d, self.config.l_max).astype(feats.dtype)
        coef = coef_flat.reshape(n, c, nb)
        s = np.einsum("ncs,ns->nc", coef, basis)
        w1, b1, w2, b2 = self._unpack_hyper(w_flat)
        z1 = np.einsum("nhc,nc->nh", w1, s) + b1
        a1 = np.maximum(z1, 0.0)
        z2 = np.einsum("noh,nh->no", w2, a1) + b2
        rgb = _sigmoid(z2)
        cache = NslfCache(
            enc_cache, sh_cache, w_cache, basis, s, w1, z1, a1, w2, rgb, single
        )
        return (rgb[0] if single else rgb), cache

    def backward(self, cache: NslfCache, grad_rgb: np.ndarray) -> list[np.ndarray]:
        g = np.asarray(grad_rgb)
        if cache.single:
            g = g[None, :]
        if g.shape != cache.rgb.shape:
            raise ShapeMismatchError("grad_rgb shape does not match forward output")
        n = g.shape[0]
        c, nb = self.config.latent_channels, self.config.n_basis
        gz2 = g * cache.rgb * (1.0 - cache.rgb)
        gb2 = gz2
        gw2 = np.einsum("no,nh->noh", gz2, cache.a1)
        ga1 = np.einsum("noh,no->nh", cache.w2, gz2)
        gz1 = ga1 * (cache.z1 > 0)
        gb1 = gz1
        gw1 = np.einsum("nh,nc->nhc", gz1, cache.s)
        gs = np.einsum("nhc,nh->nc", cache.w1, gz1)
        ghyper = np.concatenate(
            [gw1.reshape(n, -1), gb1, gw2.reshape(n, -1), gb2], axis=1
        )
        gcoef = np.einsum("nc,ns->ncs", gs, cache.basis).reshape(n, c * nb)
        sh_grads, gf_sh = mlp_backward(self.head_sh, cache.sh_cache, gcoef)
        w_grads, gf_w = mlp_backward(self.head_w, cache.w_cache, ghyper)
        sparse = grid_encode_backward(cache.enc_cache, gf_sh + gf_w, self.config.grid)
        table_grad = sparse.to_dense(self.config.grid, dtype=np.float64).astype(
            self.grid.tables.dtype
        )
        return [table_grad] + sh_grads + w_grads


class HgModel:
    """Hash-grid features + SH direction encoding into one fixed MLP."""

    kind = "hg"

    def __init__(self, config: HgConfig, grid: HashGrid, decoder: Mlp):
        self.config = config
        self.grid = grid
        self.decoder = decoder

    @classmethod
    def create(cls, config: HgConfig, rng: np.random.Generator) -> "HgModel":
        dtype = np.dtype(config.dtype)
        grid = HashGrid.create(config.grid, rng, dtype=dtype)
        widths = [config.grid.out_dim + config.n_basis]
        widths += [config.width] * (config.depth - 1)
        widths += [3]
        acts = ["relu"] * (config.depth - 1) + ["sigmoid"]
        decoder = glorot_init(widths, acts, rng, dtype=dtype)
        return cls(config, grid, decoder)

    def params(self) -> list[np.ndarray]:
        return [self.grid.tables] + self.decoder.params()

    def clone(self) -> "HgModel":
        return _rebuild_from_params(self, [p.copy() for p in self.params()])

    def forward(self, p: np.ndarray, d: np.ndarray):
        p = np.asarray(p)
        single = p.ndim == 1
        if single:
            p = p[None, :]
            d = np.asarray(d)[None, :]
        feats, enc_cache = grid_encode(p, self.grid)
        basis = sh_basis(d, self.config.l_max).astype(feats.dtype)
        x = np.concatenate([feats, basis], axis=1)
        rgb, mlp_cache = mlp_forward(self.decoder, x)
        return (rgb[0] if single else rgb), (enc_cache, mlp_cache, single)

    def backward(self, cache, grad_rgb: np.ndarray) -> list[np.ndarray]:
        enc_cache, mlp_cache, single = cache
        g = np.asarray(grad_rgb)
        if single:
            g = g[None, :]
        dec_grads, gx = mlp_backward(self.decoder, mlp_cache, g)
        gfeats = gx[:, : self.config.grid.out_dim]
        sparse = grid_encode_backward(enc_cache, gfeats, self.config.grid)
        table_grad = sparse.to_dense(self.config.grid, dtype=np.float64).astype(
            self.grid.tables.dtype
        )
        return [table_grad] + dec_grads


def _rebuild_from_params(model, params):
    """Clone a model's structure around a fresh parameter bundle."""
    if isinstance(model, NslfModel):
        grid = HashGrid(model.config.grid, params[0])
        n_sh = len(model.head_sh.layers) * 2
        sh = _mlp_like(model.head_sh, params[1 : 1 + n_sh])
        w = _mlp_like(model.head_w, params[1 + n_sh :])
        return NslfModel(model.config, grid, sh, w)
    grid = HashGrid(model.config.grid, params[0])
    dec = _mlp_like(model.decoder, params[1:])
    return HgModel(model.config, grid, dec)


def _mlp_like(mlp: Mlp, params: list[np.ndarray]) -> Mlp:
    layers = []
    for i, layer in enumerate(mlp.layers):
        layers.append(DenseLayer(params[2 * i], params[2 * i + 1], layer.activation))
    return Mlp(layers)


def nslf_forward(model: NslfModel, p: np.ndarray, d: np.ndarray):
    """Field query; accepts (3,) or (N, 3) and returns (rgb, cache)."""
    return model.forward(p, d)


def hg_forward(model: HgModel, p: np.ndarray, d: np.ndarray):
    """Baseline query; same calling convention as nslf_forward."""
    return model.forward(p, d)


def create_model(kind: str, config=None, rng: np.random.Generator | None = None):
    if rng is None:
        rng = np.random.default_rng(0)
    if kind == "nslf":
        return NslfModel.create(config or NslfConfig(), rng)
    if kind == "hg":
        return HgModel.create(config or HgConfig(), rng)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class TrainBatch:
    """Colored directed samples in the encoder's unit-cube domain."""

    points: np.ndarray  # (N, 3) in [0, 1]^3
    dirs: np.ndarray  # (N, 3) unit view directions, surface toward eye origin
    colors: np.ndarray  # (N, 3) in [0, 1]

    def __post_init__(self):
        if not (
            self.points.ndim == 2
            and self.points.shape[1] == 3
            and self.dirs.shape == self.points.shape
            and self.colors.shape == self.points.shape
        ):
            raise ShapeMismatchError(
                "points, dirs and colors must all be (N, 3) with equal N"
            )

    def __len__(self) -> int:
        return self.points.shape[0]

    def take(self, idx: np.ndarray) -> "TrainBatch":
        return TrainBatch(self.points[idx], self.dirs[idx], self.colors[idx])


def loss_and_grad(model, batch: TrainBatch) -> tuple[float, list[np.ndarray]]:
    """Sum of squared color residuals over the batch, with its gradient."""
    pred, cache = model.forward(batch.points, batch.dirs)
    resid = pred - batch.colors.astype(pred.dtype)
    loss = float(np.sum(resid * resid))
    grads = model.backward(cache, 2.0 * resid)
    return loss, grads


def training_iteration(
    model,
    optimizer: AdamState,
    memory: list[TrainBatch],
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    """One step: pick a stored slice, sample with replacement, descend.

    Returns the loss, or NaN if the step was skipped because the loss or
    gradients were non-finite. The rng is consumed identically regardless of
    outcome, which is what makes scheduler variants bit-for-bit comparable.
    """
    slice_idx = int(rng.integers(len(memory)))
    sl = memory[slice_idx]
    idx = rng.integers(0, len(sl), size=batch_size)
    sub = sl.take(idx)
    loss, grads = loss_and_grad(model, sub)
    if not np.isfinite(loss):
        return float("nan")
    try:
        adam_step(optimizer, model.params(), grads)
    except NonFiniteGradientError:
        return float("nan")
    return loss


@dataclass
class TrainTrace:
    losses: np.ndarray
    skipped: int


def train_steps(
    model,
    optimizer: AdamState,
    memory: list[TrainBatch],
    iters: int,
    batch_size: int,
    rng: np.random.Generator,
) -> TrainTrace:
    """Run iters training iterations against a fixed memory stack."""
    if not memory:
        raise ValueError("memory holds no slices to train on")
    losses = np.empty(iters, dtype=np.float64)
    skipped = 0
    for i in range(iters):
        loss = training_iteration(model, optimizer, memory, batch_size, rng)
        losses[i] = loss
        if not np.isfinite(loss):
            skipped += 1
    return TrainTrace(losses, skipped)


def _config_to_json(model) -> bytes:
    cfg = model.config
    d = {
        "grid": {
            "levels": cfg.grid.levels,
            "features": cfg.grid.features,
            "table_size": cfg.grid.table_size,
            "base_resolution": cfg.grid.base_resolution,
            "max_resolution": cfg.grid.max_resolution,
        },
        "l_max": cfg.l_max,
        "dtype": cfg.dtype,
    }
    if model.kind == "nslf":
        d["latent_channels"] = cfg.latent_channels
        d["head_width"] = cfg.head_width
        d["hyper_hidden"] = cfg.hyper_hidden
    else:
        d["width"] = cfg.width
        d["depth"] = cfg.depth
    return json.dumps(d, sort_keys=True).encode()


def _config_from_json(kind: str, data: bytes):
    d = json.loads(data.decode())
    grid = HashGridConfig(**d.pop("grid"))
    if kind == "nslf":
        return NslfConfig(grid=grid, **d)
    return HgConfig(grid=grid, **d)


def save_model_blob(model) -> bytes:
    """Serialize to the portable blob: magic, version, kind, config, params.

    Parameter arrays are stored little-endian float32 in params() order, each
    prefixed by its shape. Models in a wider dtype are narrowed on save.
    """
    cfg_json = _config_to_json(model)
    parts = [
        BLOB_MAGIC,
        struct.pack("<I", BLOB_VERSION),
        struct.pack("<B", _KIND_CODES[model.kind]),
        struct.pack("<I", len(cfg_json)),
        cfg_json,
    ]
    for p in model.params():
        parts.append(struct.pack("<I", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataFormatError("model blob truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_model_blob(data: bytes):
    r = _Reader(data)
    if r.read(4) != BLOB_MAGIC:
        raise DataFormatError("bad magic; not a model blob")
    (version,) = struct.unpack("<I", r.read(4))
    if version > BLOB_VERSION:
        raise DataFormatError(f"blob version {version} is newer than supported")
    (kind_code,) = struct.unpack("<B", r.read(1))
    if kind_code not in _KIND_NAMES:
        raise DataFormatError(f"unknown model kind code {kind_code}")
    kind = _KIND_NAMES[kind_code]
    (cfg_len,) = struct.unpack("<I", r.read(4))
    config = _config_from_json(kind, r.read(cfg_len))
    # build a skeleton with the right shapes, then overwrite every array
    model = create_model(kind, config, np.random.default_rng(0))
    dtype = np.dtype(config.dtype)
    params = []
    for ref in model.params():
        (ndim,) = struct.unpack("<I", r.read(4))
        shape = struct.unpack(f"<{ndim}I", r.read(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.read(4 * count), dtype="<f4").reshape(shape)
        if arr.shape != ref.shape:
            raise DataFormatError(
                f"parameter shape {arr.shape} does not match config {ref.shape}"
            )
        params.append(arr.astype(dtype))
    if r.pos != len(r.data):
        raise DataFormatError("trailing bytes after model blob")
    return _rebuild_from_params(model, params)
