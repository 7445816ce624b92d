"""Self-contained verification suites for the load-bearing invariants.

Each suite re-derives its expected answers on the spot (scalar loop oracles,
Monte-Carlo integration, bit comparisons) rather than trusting stored
numbers, and reports pass/fail with the measured margins. The `verify` CLI
subcommand and the acceptance tests both run these.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .encoding import HashGridConfig, sh_basis
from .ingest import ColoredPointBatch
from .mana import ManaRuntime, RegionGridConfig, distribute
from .models import (
    HgConfig,
    NslfConfig,
    TrainBatch,
    create_model,
    loss_and_grad,
    train_steps,
)
from .numerics import AdamState, finite_diff_check

GRAD_TOL = 1e-4
GRAM_TOL = 0.02
ADDITION_TOL = 1e-6


@dataclass
class SuiteResult:
    name: str
    passed: bool
    elapsed_s: float
    details: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def summary(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {state} ({self.elapsed_s:.1f}s)"


def _small_grid() -> HashGridConfig:
    # every hash-grid code path (multi level, collisions, trilinear blend)
    # at a size where finite differences stay cheap
    return HashGridConfig(levels=4, table_size=2**10, base_resolution=4, max_resolution=32)


def _generic_position(model, rng, scale=0.3):
    # fresh inits sit at tiny scale with relu preactivations hugging the
    # kink, where central differences are invalid; move to a generic point
    for p in model.params():
        p[...] = rng.normal(scale=scale, size=p.shape)


def _grad_pipelines():
    grid = _small_grid()
    return (
        ("nslf", NslfConfig(grid=grid, head_width=16, hyper_hidden=8, dtype="float64")),
        (
            "nslf",
            NslfConfig(
                grid=grid,
                latent_channels=1,
                head_width=16,
                hyper_hidden=8,
                dtype="float64",
            ),
        ),
        ("hg", HgConfig(grid=grid, width=16, depth=4, dtype="float64")),
    )


def verify_grad(seeds: int = 60, base_seed: int = 0) -> SuiteResult:
    """Finite-difference check of every trainable pipeline's backward pass."""
    t0 = time.perf_counter()
    pipelines = _grad_pipelines()
    worst = 0.0
    worst_label = ""
    details = []
    for i in range(seeds):
        kind, config = pipelines[i % len(pipelines)]
        rng = np.random.default_rng((base_seed, i))
        model = create_model(kind, config, rng)
        _generic_position(model, rng)
        n = 8
        batch_points = rng.uniform(size=(n, 3))
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        colors = rng.uniform(size=(n, 3))
        batch = TrainBatch(batch_points, dirs, colors)
        _, grads = loss_and_grad(model, batch)

        def f(params):
            loss, _ = loss_and_grad(model, batch)
            return loss

        err = finite_diff_check(f, model.params(), grads, sample=12, rng=rng)
        label = f"{kind}/latent{getattr(config, 'latent_channels', '-')}, seed {i}"
        if err > worst:
            worst, worst_label = err, label
        if err >= GRAD_TOL:
            details.append(f"seed {i} ({label}): rel err {err:.3e} >= {GRAD_TOL}")
    elapsed = time.perf_counter() - t0
    passed = worst < GRAD_TOL
    details.insert(
        0,
        f"{seeds} seeds over {len(pipelines)} pipelines, worst rel err "
        f"{worst:.3e} ({worst_label})",
    )
    return SuiteResult(
        "grad",
        passed,
        elapsed,
        details,
        {"seeds": seeds, "worst_rel_err": worst, "tolerance": GRAD_TOL},
    )


def verify_sh(
    n_gram: int = 1_000_000, n_addition: int = 10_000, seed: int = 0
) -> SuiteResult:
    """Monte-Carlo orthonormality plus the exact addition-theorem identity."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_gram, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    y = sh_basis(dirs)
    gram = (y.T @ y) * (4.0 * math.pi / n_gram)
    gram_err = float(np.max(np.abs(gram - np.eye(y.shape[1]))))

    dirs2 = rng.standard_normal((n_addition, 3))
    dirs2 /= np.linalg.norm(dirs2, axis=1, keepdims=True)
    y2 = sh_basis(dirs2)
    add_err = 0.0
    for l in range(4):
        band = y2[:, l * l : (l + 1) * (l + 1)]
        total = np.sum(band * band, axis=1) * (4.0 * math.pi / (2 * l + 1))
        add_err = max(add_err, float(np.max(np.abs(total - 1.0))))
    elapsed = time.perf_counter() - t0
    passed = gram_err < GRAM_TOL and add_err < ADDITION_TOL
    details = [
        f"Gram deviation {gram_err:.4f} over {n_gram} samples (tol {GRAM_TOL})",
        f"addition-theorem error {add_err:.2e} over {n_addition} dirs "
        f"(tol {ADDITION_TOL})",
    ]
    return SuiteResult(
        "sh",
        passed,
        elapsed,
        details,
        {"gram_err": gram_err, "addition_err": add_err},
    )


def _tiny_model_config() -> NslfConfig:
    return NslfConfig(
        grid=HashGridConfig(
            levels=2, table_size=2**6, base_resolution=4, max_resolution=8
        ),
        head_width=8,
        hyper_hidden=4,
    )


def _route_oracle(p, b_min, b_max, cell_edge):
    idx = []
    for k in range(3):
        if p[k] < b_min[k] or p[k] > b_max[k]:
            return None
        n = math.ceil((b_max[k] - b_min[k]) / cell_edge - 1e-12)
        i = int(math.floor((p[k] - b_min[k]) / cell_edge))
        idx.append(min(max(i, 0), n - 1))
    return tuple(idx)


def _params_equal(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _random_batch(rng, n, lo, hi) -> ColoredPointBatch:
    p = rng.uniform(lo, hi, size=(n, 3))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return ColoredPointBatch(p, d, rng.uniform(size=(n, 3)))


def _cell_batch(rng, n, region, cfg) -> ColoredPointBatch:
    origin = cfg.region_origin(region)
    p = origin + rng.uniform(0.05, 0.95, size=(n, 3)) * cfg.cell_edge
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return ColoredPointBatch(p, d, rng.uniform(size=(n, 3)))


def verify_partition(n_points: int = 10_000, seed: int = 0) -> SuiteResult:
    """distribute vs a scalar per-point loop, then training isolation."""
    t0 = time.perf_counter()
    details = []
    ok = True

    cfg = RegionGridConfig(np.zeros(3), np.full(3, 12.0), 4.0)  # 3x3x3
    runtime = ManaRuntime(cfg, model_config=_tiny_model_config(), quota=0, seed=seed)
    rng = np.random.default_rng((seed, 1))
    batch = _random_batch(rng, n_points, -1.0, 13.0)
    by_region: dict[tuple, list[int]] = {}
    oob_rows = []
    for row in range(n_points):
        region = _route_oracle(batch.points[row], cfg.b_min, cfg.b_max, cfg.cell_edge)
        if region is None:
            oob_rows.append(row)
        else:
            by_region.setdefault(region, []).append(row)
    parts, oob = distribute(runtime, batch)
    exact = set(parts) == set(by_region) and np.array_equal(
        oob.points, batch.points[oob_rows]
    )
    if exact:
        for region, rows in by_region.items():
            part = parts[region]
            origin = cfg.b_min + np.asarray(region, dtype=np.float64) * cfg.cell_edge
            want_unit = (batch.points[rows] - origin) / cfg.cell_edge
            if not (
                np.array_equal(part.points, want_unit)
                and np.array_equal(part.dirs, batch.dirs[rows])
                and np.array_equal(part.colors, batch.colors[rows])
            ):
                exact = False
                break
    ok &= exact
    details.append(
        f"distribute == per-point loop on {n_points} points over "
        f"{len(by_region)} regions ({len(oob_rows)} out of bounds): "
        + ("exact" if exact else "MISMATCH")
    )

    # isolation: spawn A and B with a zero-quota feed, then stream A only;
    # B must stay bit-identical to its seeded initialization
    iso = ManaRuntime(cfg, model_config=_tiny_model_config(), quota=0, seed=seed)
    rng2 = np.random.default_rng((seed, 2))
    iso.feed_frame(
        ColoredPointBatch.concat(
            [
                _cell_batch(rng2, 30, (0, 0, 0), cfg),
                _cell_batch(rng2, 30, (1, 0, 0), cfg),
            ]
        )
    )
    iso.quota = 40
    for _ in range(4):
        iso.feed_frame(_cell_batch(rng2, 30, (0, 0, 0), cfg))
    iso.run_pending()
    init_rng = np.random.default_rng((iso.seed, 1, 0, 0, 0))
    reference = create_model(iso.model_kind, iso.model_config, init_rng)
    bystander = iso.agents[(1, 0, 0)]
    frozen = _params_equal(bystander.model.params(), reference.params())
    trained = iso.agents[(0, 0, 0)].trained_iters > 0
    ok &= frozen and trained
    details.append(
        "untouched agent bit-identical to init: "
        + ("yes" if frozen else "NO")
        + f"; fed agent trained {iso.agents[(0, 0, 0)].trained_iters} iters"
    )

    elapsed = time.perf_counter() - t0
    return SuiteResult(
        "partition",
        bool(ok),
        elapsed,
        details,
        {"n_points": n_points, "regions": len(by_region), "oob": len(oob_rows)},
    )


def verify_async(seed: int = 0, iters: int = 60) -> SuiteResult:
    """One agent, fixed seed: threaded run == serial run == plain loop."""
    t0 = time.perf_counter()
    cfg = RegionGridConfig(np.zeros(3), np.full(3, 12.0), 4.0)
    region = (1, 0, 2)
    model_cfg = _tiny_model_config()
    rng = np.random.default_rng((seed, 3))
    batch = _cell_batch(rng, 64, region, cfg)

    serial = ManaRuntime(cfg, model_config=model_cfg, quota=iters, seed=seed)
    serial.feed_frame(batch)
    serial.run_pending()
    serial_params = [p.copy() for p in serial.agents[region].model.params()]

    threaded = ManaRuntime(
        cfg,
        model_config=model_cfg,
        quota=iters,
        seed=seed,
        scheduler="threaded",
        executors=2,
    )
    threaded.feed_frame(batch)
    snap = threaded.quiesce_and_snapshot(drain=True, timeout=60.0)
    threaded.shutdown()
    async_ok = _params_equal(snap.models[region].params(), serial_params)

    sequential = create_model(
        "nslf", model_cfg, np.random.default_rng((seed, *region, 0))
    )
    optimizer = AdamState.for_params(sequential.params())
    twin = ManaRuntime(cfg, model_config=model_cfg, quota=0, seed=seed)
    parts, _ = distribute(twin, batch)
    train_steps(
        sequential,
        optimizer,
        [parts[region]],
        iters,
        serial.batch_size,
        np.random.default_rng((seed, *region, 1)),
    )
    loop_ok = _params_equal(sequential.params(), serial_params)

    elapsed = time.perf_counter() - t0
    details = [
        f"threaded drain vs serial scheduler over {iters} iterations: "
        + ("bit-identical" if async_ok else "MISMATCH"),
        "serial scheduler vs plain sequential loop: "
        + ("bit-identical" if loop_ok else "MISMATCH"),
    ]
    return SuiteResult(
        "async",
        bool(async_ok and loop_ok),
        elapsed,
        details,
        {"iters": iters},
    )


SUITES = {
    "grad": verify_grad,
    "sh": verify_sh,
    "partition": verify_partition,
    "async": verify_async,
}


def run_suites(names=None) -> list[SuiteResult]:
    picked = list(SUITES) if names is None else list(names)
    results = []
    for name in picked:
        if name not in SUITES:
            raise ValueError(f"unknown verification suite {name!r}")
        results.append(SUITES[name]())
    return results
