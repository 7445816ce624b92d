import numpy as np
import pytest

from nslfol.errors import NonFiniteGradientError, ShapeMismatchError
from nslfol.numerics import (
    AdamState,
    DenseLayer,
    GRAD_CLAMP,
    Mlp,
    adam_step,
    finite_diff_check,
    glorot_init,
    mlp_backward,
    mlp_forward,
)


def manual_forward(mlp, x):
    # Per-sample, per-layer scalar loop; deliberately nothing like the
    # vectorized path.
    outs = []
    for row in np.atleast_2d(x):
        h = list(row)
        for layer in mlp.layers:
            z = []
            for o in range(layer.out_dim):
                acc = float(layer.bias[o])
                for i in range(layer.in_dim):
                    acc += float(layer.weights[o, i]) * h[i]
                z.append(acc)
            if layer.activation == "relu":
                h = [max(v, 0.0) for v in z]
            elif layer.activation == "sigmoid":
                h = [1.0 / (1.0 + np.exp(-v)) for v in z]
            else:
                h = z
        outs.append(h)
    return np.array(outs)


def scripted_adam(params, grad_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    # Textbook Adam, recomputed from scratch each call.
    p = [np.array(x, dtype=np.float64) for x in params]
    m = [np.zeros_like(x) for x in p]
    v = [np.zeros_like(x) for x in p]
    for t, grads in enumerate(grad_seq, start=1):
        for j, g in enumerate(grads):
            m[j] = b1 * m[j] + (1 - b1) * g
            v[j] = b2 * v[j] + (1 - b2) * g * g
            mh = m[j] / (1 - b1**t)
            vh = v[j] / (1 - b2**t)
            p[j] = p[j] - lr * mh / (np.sqrt(vh) + eps)
    return p


def small_mlp(rng, widths, activations, dtype=np.float64):
    return glorot_init(widths, activations, rng, dtype=dtype)


def test_identity_layer_is_identity():
    layer = DenseLayer(np.eye(4), np.zeros(4), "none")
    mlp = Mlp([layer])
    x = np.array([0.3, -1.2, 0.0, 7.5])
    y, _ = mlp_forward(mlp, x)
    assert np.array_equal(y, x)


def test_forward_matches_manual_loop():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        mlp = small_mlp(rng, [3, 8, 5, 2], ["relu", "sigmoid", "none"])
        x = rng.normal(size=(7, 3))
        y, _ = mlp_forward(mlp, x)
        assert np.allclose(y, manual_forward(mlp, x), atol=1e-12)


def test_forward_single_sample_matches_batch_row():
    rng = np.random.default_rng(11)
    mlp = small_mlp(rng, [4, 6, 3], ["relu", "sigmoid"])
    x = rng.normal(size=(5, 4))
    y_batch, _ = mlp_forward(mlp, x)
    for i in range(5):
        y_one, _ = mlp_forward(mlp, x[i])
        assert y_one.shape == (3,)
        # gemv and gemm may sum in different orders, so not bit-equal
        assert np.allclose(y_one, y_batch[i], atol=1e-13)


def test_forward_rejects_wrong_width():
    rng = np.random.default_rng(0)
    mlp = small_mlp(rng, [4, 2], ["none"])
    with pytest.raises(ShapeMismatchError):
        mlp_forward(mlp, np.zeros(3))


def test_layer_width_chaining_validated():
    a = DenseLayer(np.zeros((3, 2)), np.zeros(3))
    b = DenseLayer(np.zeros((2, 4)), np.zeros(2))
    with pytest.raises(ShapeMismatchError):
        Mlp([a, b])


def test_glorot_bounds_and_zero_bias():
    rng = np.random.default_rng(3)
    mlp = glorot_init([10, 20, 4], ["relu", "none"], rng)
    for layer in mlp.layers:
        limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        assert np.all(np.abs(layer.weights) <= limit)
        assert np.all(layer.bias == 0)


def test_backward_param_grads_match_finite_differences():
    for seed in range(8):
        rng = np.random.default_rng(100 + seed)
        mlp = small_mlp(rng, [3, 6, 6, 2], ["relu", "sigmoid", "none"])
        # Keep preactivations away from the relu kink so central differences
        # stay valid.
        for layer in mlp.layers:
            layer.bias = layer.bias + 0.05
        x = rng.normal(size=(4, 3))
        target = rng.normal(size=(4, 2))

        def loss(params):
            y, _ = mlp_forward(mlp, x)
            return float(np.sum((y - target) ** 2))

        y, cache = mlp_forward(mlp, x)
        grads, _ = mlp_backward(mlp, cache, 2.0 * (y - target))
        assert finite_diff_check(loss, mlp.params(), grads, h=1e-5) < 1e-4


def test_backward_input_grad_matches_finite_differences():
    rng = np.random.default_rng(42)
    mlp = small_mlp(rng, [3, 5, 2], ["sigmoid", "none"])
    x = rng.normal(size=3)
    y, cache = mlp_forward(mlp, x)
    w = rng.normal(size=2)
    _, gx = mlp_backward(mlp, cache, w)
    h = 1e-6
    for i in range(3):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (mlp_forward(mlp, xp)[0] @ w - mlp_forward(mlp, xm)[0] @ w) / (2 * h)
        assert abs(gx[i] - fd) < 1e-7


def test_backward_sums_over_batch():
    rng = np.random.default_rng(9)
    mlp = small_mlp(rng, [2, 3], ["none"])
    x = rng.normal(size=(6, 2))
    g = rng.normal(size=(6, 3))
    _, cache = mlp_forward(mlp, x)
    grads, _ = mlp_backward(mlp, cache, g)
    total = [np.zeros_like(p) for p in mlp.params()]
    for i in range(6):
        _, ci = mlp_forward(mlp, x[i])
        gi, _ = mlp_backward(mlp, ci, g[i])
        for acc, part in zip(total, gi):
            acc += part
    for a, b in zip(grads, total):
        assert np.allclose(a, b, atol=1e-12)


# First Adam step with g=1, lr=1e-3: both moment corrections cancel, so the
# update is exactly lr/(1+eps) = 9.9999999e-4 per entry.
FIRST_STEP = 1e-3 / (1.0 + 1e-8)


def test_adam_first_step_constant_gradient():
    p = [np.full(4, 0.5)]
    state = AdamState.for_params(p)
    adam_step(state, p, [np.ones(4)])
    assert np.allclose(p[0], 0.5 - FIRST_STEP, atol=1e-15)
    assert abs(FIRST_STEP - 9.99999e-4) < 1e-9


def test_adam_constant_gradient_keeps_unit_ratio():
    # With a constant gradient the bias corrections keep m_hat/sqrt(v_hat)=1,
    # so every step moves by the same FIRST_STEP.
    p = [np.zeros(3)]
    state = AdamState.for_params(p)
    for t in range(1, 6):
        adam_step(state, p, [np.ones(3)])
        assert np.allclose(p[0], -t * FIRST_STEP, atol=1e-12)


def test_adam_matches_scripted_trace():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        p0 = [rng.normal(size=(3, 2)), rng.normal(size=4)]
        grad_seq = [
            [rng.normal(size=(3, 2)), rng.normal(size=4)] for _ in range(10)
        ]
        expected = scripted_adam(p0, grad_seq)
        p = [x.copy() for x in p0]
        state = AdamState.for_params(p)
        for grads in grad_seq:
            adam_step(state, p, grads)
        for a, b in zip(p, expected):
            assert np.allclose(a, b, atol=1e-12)


def test_adam_zero_gradient_is_noop_forever():
    p = [np.array([1.0, -2.0, 3.0])]
    state = AdamState.for_params(p)
    for _ in range(7):
        adam_step(state, p, [np.zeros(3)])
        assert np.array_equal(p[0], [1.0, -2.0, 3.0])


def test_adam_rejects_nonfinite_without_mutating():
    p = [np.ones(2)]
    state = AdamState.for_params(p)
    for bad in (np.nan, np.inf, -np.inf):
        with pytest.raises(NonFiniteGradientError):
            adam_step(state, p, [np.array([1.0, bad])])
        assert state.t == 0
        assert np.array_equal(p[0], [1.0, 1.0])


def test_adam_shape_mismatch():
    p = [np.ones(3)]
    state = AdamState.for_params(p)
    with pytest.raises(ShapeMismatchError):
        adam_step(state, p, [np.ones(4)])


def test_adam_clamps_huge_gradients():
    p = [np.zeros(2)]
    state = AdamState.for_params(p)
    adam_step(state, p, [np.array([1e9, GRAD_CLAMP])])
    # Clamp happens before the moment update, so both coordinates see the
    # same effective gradient and move identically.
    assert p[0][0] == p[0][1]
    assert np.allclose(state.m[0], 0.1 * GRAD_CLAMP)


def test_finite_diff_check_quadratic():
    rng = np.random.default_rng(17)
    params = [rng.normal(size=5), rng.normal(size=(2, 3))]

    def f(ps):
        return 0.5 * sum(float(np.sum(p**2)) for p in ps)

    grads = [p.copy() for p in params]
    assert finite_diff_check(f, params, grads, h=1e-5) < 1e-9


def test_finite_diff_check_flags_corruption():
    rng = np.random.default_rng(18)
    params = [rng.normal(size=4)]

    def f(ps):
        return 0.5 * float(np.sum(ps[0] ** 2))

    grads = [params[0] + 0.1]
    assert finite_diff_check(f, params, grads, h=1e-5) > 1e-2


def test_finite_diff_check_sampled_coordinates():
    rng = np.random.default_rng(19)
    big = np.zeros(500)
    hot = rng.choice(500, size=10, replace=False)
    big[hot] = rng.normal(size=10)

    def f(ps):
        return 0.5 * float(np.sum(ps[0] ** 2))

    params = [big]
    grads = [big.copy()]
    err = finite_diff_check(f, params, grads, h=1e-5, sample=20, rng=rng)
    assert err < 1e-9


def test_finite_diff_check_restores_params():
    params = [np.array([1.0, 2.0])]
    before = params[0].copy()

    def f(ps):
        return float(np.sum(ps[0]))

    finite_diff_check(f, params, [np.ones(2)], h=1e-4)
    assert np.array_equal(params[0], before)
