"""Dense networks with hand-written reverse-mode gradients, plus Adam.

No autodiff anywhere: every layer stores what its backward pass needs and the
caller chains the passes explicitly. Losses are sums over the batch (not
means), so gradients from mlp_backward are batch sums as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradientError, ShapeMismatchError

ACTIVATIONS = ("relu", "sigmoid", "none")

# Per-step guard against exploding gradients; generous enough to never bind
# during healthy training.
GRAD_CLAMP = 1e3


@dataclass
class DenseLayer:
    """One affine layer y = act(W x + b), weights stored (out_dim, in_dim)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "none"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeMismatchError("weights must be 2-d and bias 1-d")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeMismatchError(
                f"bias has {self.bias.shape[0]} entries for "
                f"{self.weights.shape[0]} output rows"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Mlp:
    """A stack of DenseLayers applied in order."""

    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeMismatchError(
                    f"layer widths {prev.out_dim} -> {nxt.in_dim} do not chain"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        """Flat parameter bundle [W0, b0, W1, b1, ...] (views, not copies)."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise ShapeMismatchError("parameter bundle length mismatch")
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ShapeMismatchError("parameter bundle shape mismatch")
            layer.weights = w
            layer.bias = b


def glorot_init(
    widths: list[int],
    activations: list[str],
    rng: np.random.Generator,
    dtype=np.float32,
) -> Mlp:
    """Build an Mlp with Glorot-uniform weights and zero biases.

    widths is [in, hidden..., out]; activations has one entry per layer.
    """
    if len(activations) != len(widths) - 1:
        raise ShapeMismatchError("need one activation per layer")
    layers = []
    for i, act in enumerate(activations):
        fan_in, fan_out = widths[i], widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        layers.append(DenseLayer(w, b, act))
    return Mlp(layers)


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        # Split by sign so the exp never overflows.
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def mlp_forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the network on x of shape (in_dim,) or (N, in_dim).

    Returns (y, cache); pass the cache to mlp_backward unchanged.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise ShapeMismatchError(
            f"input has shape {x.shape}, expected (*, {mlp.in_dim})"
        )
    cache = []
    h = x
    for layer in mlp.layers:
        z = h @ layer.weights.T + layer.bias
        a = _apply_activation(z, layer.activation)
        cache.append((h, z, a))
        h = a
    return (h[0] if single else h), cache


def mlp_backward(
    mlp: Mlp, cache: list, grad_y: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Backprop grad_y through the cached forward pass.

    Returns (param_grads, grad_x). param_grads matches mlp.params() order and
    is summed over the batch; grad_x matches the forward input shape.
    """
    grad_y = np.asarray(grad_y)
    single = grad_y.ndim == 1
    if single:
        grad_y = grad_y[None, :]
    if grad_y.shape != cache[-1][2].shape:
        raise ShapeMismatchError(
            f"grad_y shape {grad_y.shape} does not match forward output "
            f"{cache[-1][2].shape}"
        )
    grads: list[np.ndarray] = [None] * (2 * len(mlp.layers))
    g = grad_y
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        x_in, z, a = cache[i]
        if layer.activation == "relu":
            g = g * (z > 0)
        elif layer.activation == "sigmoid":
            g = g * a * (1.0 - a)
        grads[2 * i] = g.T @ x_in
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weights
    return grads, (g[0] if single else g)


@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter bundle."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-3) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
        )


def adam_step(
    state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]
) -> None:
    """One in-place Adam update with bias correction.

    Gradients are clamped entrywise to [-GRAD_CLAMP, GRAD_CLAMP] first; NaN or
    infinite entries raise NonFiniteGradientError before any state mutates.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatchError("params/grads/state bundle lengths differ")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} does not match parameter {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient entry")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.clip(g, -GRAD_CLAMP, GRAD_CLAMP)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def finite_diff_check(
    f,
    params: list[np.ndarray],
    grads: list[np.ndarray],
    h: float = 1e-5,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic grads and central differences of f.

    f maps the (mutated in place, then restored) params to a scalar. With
    sample set, only that many coordinates per array are probed: all
    coordinates with nonzero analytic gradient first, padded with random
    zero-gradient ones. Relative error is |a - fd| / max(|a|, |fd|, 1e-6);
    the floor keeps zero-gradient coordinates from dividing by noise.
    """
    if len(params) != len(grads):
        raise ShapeMismatchError("params and grads bundle lengths differ")
    floor = 1e-6
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatchError("gradient shape mismatch")
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        if sample is None or flat_p.size <= sample:
            coords = np.arange(flat_p.size)
        else:
            nonzero = np.flatnonzero(flat_g)
            if nonzero.size >= sample:
                coords = rng.choice(nonzero, size=sample, replace=False)
            else:
                zero = np.setdiff1d(np.arange(flat_p.size), nonzero)
                extra = rng.choice(
                    zero, size=sample - nonzero.size, replace=False
                )
                coords = np.concatenate([nonzero, extra])
        for i in coords:
            orig = flat_p[i]
            flat_p[i] = orig + h
            f_plus = f(params)
            flat_p[i] = orig - h
            f_minus = f(params)
            flat_p[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(flat_g[i]), abs(fd), floor)
            worst = max(worst, abs(flat_g[i] - fd) / denom)
    return worst
