"""Region-partitioned asynchronous training (many agents, no waiting).

The reconstruction volume is cut into axis-aligned cubic regions. Each region
that ever receives surface samples gets an agent: its own model, optimizer,
memory stack of fed sample slices, and an iteration budget. Feeding a frame
routes its points to regions, appends per-region slices, tops up budgets
(favoring lagging agents), and returns immediately; executor threads burn the
budgets in the background. Quiescing parks the workers and snapshots frozen
model copies for rendering.

Only the agents that just received data compete for a feed's iteration
budget. A stream that never touches a region therefore never moves that
region's parameters: they stay bit-identical to their seeded initialization.

Agents share nothing: a region's parameters and rng are touched only by the
one executor that owns the agent, so the final parameters are independent of
thread interleaving, and a serial scheduler reproduces them bit for bit.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, RoutingError, StateError
from .ingest import ColoredPointBatch
from .models import (
    TrainBatch,
    create_model,
    load_model_blob,
    save_model_blob,
    training_iteration,
)
from .numerics import AdamState

RegionIndex = tuple[int, int, int]

UNCOVERED_COLOR = 0.5

CHECKPOINT_VERSION = 1
_MODEL_SEED_TAG = 0
_TRAIN_SEED_TAG = 1


@dataclass(frozen=True)
class RegionGridConfig:
    """Axis-aligned bounds split into cubic cells of cell_edge meters."""

    b_min: np.ndarray
    b_max: np.ndarray
    cell_edge: float = 4.0

    def __post_init__(self):
        lo = np.asarray(self.b_min, dtype=np.float64)
        hi = np.asarray(self.b_max, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise RoutingError("bounds must be 3-vectors")
        if not np.all(lo < hi):
            raise RoutingError("need b_min < b_max on every axis")
        if self.cell_edge <= 0:
            raise RoutingError("cell_edge must be positive")
        object.__setattr__(self, "b_min", lo)
        object.__setattr__(self, "b_max", hi)

    @property
    def n_cells(self) -> np.ndarray:
        return np.ceil((self.b_max - self.b_min) / self.cell_edge - 1e-12).astype(
            np.int64
        )

    def region_indices(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized routing: (N, 3) indices plus an in-bounds mask.

        Points exactly on the upper boundary clamp into the last cell;
        interior boundaries follow floor semantics (upper cell wins).
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        inside = np.all((p >= self.b_min) & (p <= self.b_max), axis=1)
        idx = np.floor((p - self.b_min) / self.cell_edge).astype(np.int64)
        np.minimum(idx, self.n_cells - 1, out=idx)
        np.maximum(idx, 0, out=idx)
        return idx, inside

    def region_origin(self, region: RegionIndex) -> np.ndarray:
        return self.b_min + np.asarray(region, dtype=np.float64) * self.cell_edge

    def to_unit(self, points: np.ndarray, region: RegionIndex) -> np.ndarray:
        """Map world points of one region into the model's unit cube."""
        return (np.asarray(points, dtype=np.float64) - self.region_origin(region)) / self.cell_edge


def region_of(p: np.ndarray, cfg: RegionGridConfig) -> RegionIndex:
    """Route one point; raises RoutingError outside the configured bounds."""
    idx, inside = cfg.region_indices(np.asarray(p, dtype=np.float64))
    if not inside[0]:
        raise RoutingError(
            f"point {np.asarray(p, dtype=float).tolist()} outside region bounds"
        )
    return tuple(int(v) for v in idx[0])


@dataclass
class AgentState:
    """Everything one region owns. The lock guards memory and counters; the
    parameters are only ever touched by the agent's executor."""

    region: RegionIndex
    model: object
    optimizer: AdamState
    rng: np.random.Generator
    memory: list[TrainBatch] = field(default_factory=list)
    budget: int = 0
    granted: int = 0
    trained_iters: int = 0
    skipped_iters: int = 0
    fed_points: int = 0
    losses: list[float] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class FeedReport:
    routed: dict[RegionIndex, int]
    out_of_bounds: int
    spawned: list[RegionIndex]
    budgets: dict[RegionIndex, int]
    elapsed_s: float


def assign_budgets(
    agents: dict[RegionIndex, AgentState], quota: int
) -> dict[RegionIndex, int]:
    """Split the per-feed iteration quota across agents, favoring laggards.

    `agents` are the candidates: the feed passes exactly the agents that
    received data from the frame, so idle regions never gain budget (that is
    what keeps untouched agents' parameters frozen).

    All candidates equally trained (including a single agent): the quota
    splits evenly, remainder going to the lowest region indices. Otherwise
    only agents strictly below the median trained-iteration count receive
    budget, weighted k, k-1, ..., 1 from most- to least-behind (ties by
    region index); floors are handed out first and the remainder goes
    one-by-one to the most-behind.
    """
    if quota < 0:
        raise ValueError("quota must be non-negative")
    if not agents:
        return {}
    regions = sorted(agents)
    counts = np.array([agents[r].trained_iters for r in regions], dtype=np.int64)
    out = {r: 0 for r in regions}
    if np.all(counts == counts[0]):
        base, rem = divmod(quota, len(regions))
        for i, r in enumerate(regions):
            out[r] = base + (1 if i < rem else 0)
        return out
    median = float(np.median(counts))
    lagging = [(int(c), r) for c, r in zip(counts, regions) if c < median]
    if not lagging:
        # counts like (5, 5, 10) put the median on the minimum: nobody is
        # strictly below it, and handing out nothing would starve the set
        # forever. Split over the least-trained agents instead.
        low = int(counts.min())
        low_regions = [r for c, r in zip(counts, regions) if c == low]
        base, rem = divmod(quota, len(low_regions))
        for i, r in enumerate(low_regions):
            out[r] = base + (1 if i < rem else 0)
        return out
    lagging.sort()  # ascending trained count, then region index
    k = len(lagging)
    weights = {r: k - i for i, (_, r) in enumerate(lagging)}
    total = sum(weights.values())
    assigned = 0
    for _, r in lagging:
        out[r] = quota * weights[r] // total
        assigned += out[r]
    leftover = quota - assigned
    i = 0
    while leftover > 0:
        out[lagging[i % k][1]] += 1
        leftover -= 1
        i += 1
    return out


def _burnable(agent: AgentState) -> bool:
    return agent.budget > 0 and bool(agent.memory)


def _run_one(agent: AgentState, batch_size: int) -> bool:
    """Consume one unit of budget; False when nothing is burnable.

    Budget with an empty memory is not burnable: a signal then is a no-op
    and the budget stays outstanding (cannot happen through feed_frame,
    which grants only to agents it just gave data).
    """
    with agent.lock:
        if agent.budget <= 0 or not agent.memory:
            return False
        agent.budget -= 1
        memory = list(agent.memory)
    loss = training_iteration(
        agent.model, agent.optimizer, memory, batch_size, agent.rng
    )
    with agent.lock:
        if np.isfinite(loss):
            agent.trained_iters += 1
            agent.losses.append(float(loss))
        else:
            agent.skipped_iters += 1
    return True


class SerialScheduler:
    """Deterministic reference: budgets are burned on run_pending, agents in
    sorted region order, each drained completely before the next."""

    def __init__(self, runtime: "ManaRuntime"):
        self.runtime = runtime

    def add_agent(self, agent: AgentState) -> None:
        pass

    def signal(self) -> None:
        pass

    def run_pending(self) -> int:
        done = 0
        for region in sorted(self.runtime.agents):
            agent = self.runtime.agents[region]
            while _run_one(agent, self.runtime.batch_size):
                done += 1
        return done

    def drain(self, timeout: float) -> None:
        self.run_pending()

    def pause(self, timeout: float) -> None:
        pass

    def resume(self) -> None:
        pass

    def shutdown(self) -> None:
        pass


class ThreadedScheduler:
    """Executor threads burn agent budgets concurrently.

    Each agent is pinned to one executor (round-robin at spawn), so no model
    is ever trained from two threads. Executors sweep their agents, one
    iteration each per pass, and park on a condition variable when out of
    work or paused.
    """

    def __init__(self, runtime: "ManaRuntime", n_executors: int):
        if n_executors < 1:
            raise ValueError("need at least one executor")
        self.runtime = runtime
        self.n = n_executors
        self.assignments: list[list[AgentState]] = [[] for _ in range(n_executors)]
        self.cond = threading.Condition()
        self.paused = False
        self.stopping = False
        self.active = [False] * n_executors
        self._spawned = 0
        self.threads = [
            threading.Thread(target=self._work, args=(i,), daemon=True)
            for i in range(n_executors)
        ]
        for t in self.threads:
            t.start()

    def add_agent(self, agent: AgentState) -> None:
        with self.cond:
            self.assignments[self._spawned % self.n].append(agent)
            self._spawned += 1
            self.cond.notify_all()

    def signal(self) -> None:
        with self.cond:
            self.cond.notify_all()

    def _has_work(self, tid: int) -> bool:
        return any(_burnable(a) for a in self.assignments[tid])

    def _work(self, tid: int) -> None:
        while True:
            with self.cond:
                while not self.stopping and (self.paused or not self._has_work(tid)):
                    self.active[tid] = False
                    self.cond.notify_all()
                    self.cond.wait()
                if self.stopping:
                    self.active[tid] = False
                    self.cond.notify_all()
                    return
                self.active[tid] = True
                agents = list(self.assignments[tid])
            for agent in agents:
                if self.paused or self.stopping:
                    break
                _run_one(agent, self.runtime.batch_size)

    def _quiet(self) -> bool:
        return not any(self.active)

    def drain(self, timeout: float) -> None:
        with self.cond:
            ok = self.cond.wait_for(
                lambda: self._quiet()
                and not any(_burnable(a) for a in self.runtime.agents.values()),
                timeout,
            )
        if not ok:
            backlog = {
                r: a.budget for r, a in sorted(self.runtime.agents.items()) if a.budget
            }
            raise StateError(f"drain timed out after {timeout}s; backlog {backlog}")

    def pause(self, timeout: float) -> None:
        with self.cond:
            self.paused = True
            self.cond.notify_all()
            ok = self.cond.wait_for(self._quiet, timeout)
        if not ok:
            raise StateError(f"pause timed out after {timeout}s")

    def resume(self) -> None:
        with self.cond:
            self.paused = False
            self.cond.notify_all()

    def shutdown(self) -> None:
        with self.cond:
            self.stopping = True
            self.cond.notify_all()
        for t in self.threads:
            t.join(timeout=5.0)


class ManaRuntime:
    """Owns the region grid, the agents, and a scheduler.

    mode is 'online' (feeding and training allowed) or 'evaluation' (frozen;
    feeding raises). quiesce_and_snapshot switches to evaluation and
    resume_training switches back.
    """

    def __init__(
        self,
        region_cfg: RegionGridConfig,
        model_kind: str = "nslf",
        model_config=None,
        quota: int = 200,
        batch_size: int = 256,
        seed: int = 0,
        lr: float = 1e-3,
        scheduler: str = "serial",
        executors: int = 2,
        memory_cap_slices: int | None = None,
    ):
        self.region_cfg = region_cfg
        self.model_kind = model_kind
        self.model_config = model_config
        self.quota = int(quota)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.lr = float(lr)
        self.memory_cap_slices = memory_cap_slices
        self.agents: dict[RegionIndex, AgentState] = {}
        self.mode = "online"
        self._registry_lock = threading.Lock()
        if scheduler == "serial":
            self.scheduler = SerialScheduler(self)
        elif scheduler == "threaded":
            self.scheduler = ThreadedScheduler(self, executors)
        else:
            raise ValueError(f"unknown scheduler {scheduler!r}")

    # -- agents ------------------------------------------------------------

    def _spawn_agent(self, region: RegionIndex) -> AgentState:
        ix, iy, iz = (int(v) for v in region)
        model_rng = np.random.default_rng((self.seed, ix, iy, iz, _MODEL_SEED_TAG))
        train_rng = np.random.default_rng((self.seed, ix, iy, iz, _TRAIN_SEED_TAG))
        model = create_model(self.model_kind, self.model_config, model_rng)
        agent = AgentState(
            region=(ix, iy, iz),
            model=model,
            optimizer=AdamState.for_params(model.params(), lr=self.lr),
            rng=train_rng,
        )
        self.agents[agent.region] = agent
        self.scheduler.add_agent(agent)
        return agent

    # -- feeding -----------------------------------------------------------

    def feed_frame(self, batch: ColoredPointBatch) -> FeedReport:
        """Route one frame's samples, top up budgets, return immediately.

        Feeds come from one thread (the stream reader); workers never call
        this. Budget candidates are exactly the agents fed here.
        """
        if self.mode != "online":
            raise StateError("runtime is in evaluation mode; resume_training first")
        t0 = time.perf_counter()
        known = set(self.agents)
        per_region, oob = distribute(self, batch)
        spawned = sorted(set(per_region) - known)
        routed: dict[RegionIndex, int] = {}
        with self._registry_lock:
            touched: dict[RegionIndex, AgentState] = {}
            for region, slice_ in per_region.items():
                agent = self.agents[region]
                with agent.lock:
                    agent.memory.append(slice_)
                    agent.fed_points += len(slice_)
                    cap = self.memory_cap_slices
                    if cap is not None and len(agent.memory) > cap:
                        # uniform thinning: drop every second slice
                        agent.memory = agent.memory[::2]
                routed[region] = len(slice_)
                touched[region] = agent
            budgets = assign_budgets(touched, self.quota)
            for region, extra in budgets.items():
                if extra:
                    agent = self.agents[region]
                    with agent.lock:
                        agent.budget += extra
                        agent.granted += extra
        self.scheduler.signal()
        return FeedReport(
            routed=routed,
            out_of_bounds=len(oob),
            spawned=spawned,
            budgets=budgets,
            elapsed_s=time.perf_counter() - t0,
        )

    def run_pending(self) -> int:
        """Serial scheduler only: burn all outstanding budgets now."""
        if not isinstance(self.scheduler, SerialScheduler):
            raise StateError("run_pending applies to the serial scheduler")
        return self.scheduler.run_pending()

    # -- quiesce / snapshot ------------------------------------------------

    def quiesce_and_snapshot(
        self, drain: bool = True, timeout: float = 60.0
    ) -> "Snapshot":
        """Stop training and freeze model copies for rendering.

        drain=True finishes every outstanding budget first (error with the
        backlog on timeout); drain=False pauses at the next iteration
        boundary, leaving budgets outstanding.
        """
        if drain:
            self.scheduler.drain(timeout)
        else:
            self.scheduler.pause(timeout)
        self.mode = "evaluation"
        with self._registry_lock:
            models = {r: a.model.clone() for r, a in self.agents.items()}
            trained = {r: a.trained_iters for r, a in self.agents.items()}
        return Snapshot(self.region_cfg, models, trained)

    def resume_training(self) -> None:
        self.mode = "online"
        self.scheduler.resume()
        self.scheduler.signal()

    def predict_batch(self, points: np.ndarray, dirs: np.ndarray):
        """Routed prediction on the live models; evaluation mode only."""
        if self.mode != "evaluation":
            raise StateError("predict_batch requires evaluation mode; quiesce first")
        return _routed_predict(
            self.region_cfg, self.agents, points, dirs, lambda a: a.model
        )

    # -- bookkeeping -------------------------------------------------------

    def budget_ledger(self) -> dict:
        """Per-agent grant accounting; granted = trained + skipped + outstanding."""
        rows = {}
        for region, a in sorted(self.agents.items()):
            with a.lock:
                rows[region] = {
                    "granted": a.granted,
                    "trained": a.trained_iters,
                    "skipped": a.skipped_iters,
                    "outstanding": a.budget,
                }
        return rows

    def shutdown(self) -> None:
        self.scheduler.shutdown()


def distribute(
    runtime: ManaRuntime, batch: ColoredPointBatch
) -> tuple[dict[RegionIndex, TrainBatch], ColoredPointBatch]:
    """Split a frame batch into per-region unit-cube slices.

    Regions that appear for the first time get an agent spawned on the
    runtime. Returns the region map and the collected out-of-bounds
    remainder (the report of points the grid cannot hold).
    """
    cfg = runtime.region_cfg
    n = len(batch)
    if n == 0:
        return {}, ColoredPointBatch.empty()
    idx, inside = cfg.region_indices(batch.points)
    oob = batch.take(np.flatnonzero(~inside))
    keep = np.flatnonzero(inside)
    if keep.size == 0:
        return {}, oob
    idx = idx[keep]
    nc = cfg.n_cells
    flat = (idx[:, 0] * nc[1] + idx[:, 1]) * nc[2] + idx[:, 2]
    order = np.argsort(flat, kind="stable")
    sorted_flat = flat[order]
    cuts = np.flatnonzero(np.diff(sorted_flat)) + 1
    groups = np.split(order, cuts)
    out: dict[RegionIndex, TrainBatch] = {}
    for grp in groups:
        rows = keep[grp]
        region = tuple(int(v) for v in idx[grp[0]])
        unit = cfg.to_unit(batch.points[rows], region)
        out[region] = TrainBatch(unit, batch.dirs[rows], batch.colors[rows])
    with runtime._registry_lock:
        for region in out:
            if region not in runtime.agents:
                runtime._spawn_agent(region)
    return out, oob


def _routed_predict(region_cfg, table, points, dirs, get_model):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = points.shape[0]
    colors = np.full((n, 3), UNCOVERED_COLOR, dtype=np.float32)
    covered = np.zeros(n, dtype=bool)
    if n == 0:
        return colors, covered
    idx, inside = region_cfg.region_indices(points)
    rows_inside = np.flatnonzero(inside)
    if rows_inside.size == 0:
        return colors, covered
    nc = region_cfg.n_cells
    sub = idx[rows_inside]
    flat = (sub[:, 0] * nc[1] + sub[:, 1]) * nc[2] + sub[:, 2]
    order = np.argsort(flat, kind="stable")
    cuts = np.flatnonzero(np.diff(flat[order])) + 1
    for grp in np.split(order, cuts):
        rows = rows_inside[grp]
        region = tuple(int(v) for v in sub[grp[0]])
        entry = table.get(region)
        if entry is None:
            continue
        model = get_model(entry)
        unit = region_cfg.to_unit(points[rows], region)
        rgb, _ = model.forward(unit, dirs[rows])
        colors[rows] = rgb.astype(np.float32)
        covered[rows] = True
    return colors, covered


@dataclass
class Snapshot:
    """Frozen per-region models; safe to render from while training resumes."""

    region_cfg: RegionGridConfig
    models: dict[RegionIndex, object]
    trained_iters: dict[RegionIndex, int]

    def predict(self, points: np.ndarray, dirs: np.ndarray):
        """(colors, covered): uncovered points get 0.5 gray and a False mask."""
        return _routed_predict(
            self.region_cfg, self.models, points, dirs, lambda m: m
        )


def save_runtime_checkpoint(snapshot: Snapshot, out_dir) -> Path:
    """Write a checkpoint directory: manifest.json plus one blob per agent.

    Output bytes are a pure function of the snapshot: regions are sorted and
    the manifest keys are ordered.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for region in sorted(snapshot.models):
        name = "agent_{:03d}_{:03d}_{:03d}.nslf".format(*region)
        blob = save_model_blob(snapshot.models[region])
        (out / name).write_bytes(blob)
        entries.append(
            {
                "region": list(region),
                "file": name,
                "trained_iters": int(snapshot.trained_iters.get(region, 0)),
            }
        )
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "region_grid": {
            "b_min": snapshot.region_cfg.b_min.tolist(),
            "b_max": snapshot.region_cfg.b_max.tolist(),
            "cell_edge": snapshot.region_cfg.cell_edge,
        },
        "agents": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return out


def load_runtime_checkpoint(path) -> Snapshot:
    root = Path(path)
    mf = root / "manifest.json"
    if not mf.exists():
        raise DataFormatError(f"missing {mf}")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{mf}: {exc}") from exc
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version!r}")
    rg = manifest["region_grid"]
    region_cfg = RegionGridConfig(
        np.array(rg["b_min"]), np.array(rg["b_max"]), rg["cell_edge"]
    )
    models, trained = {}, {}
    for entry in manifest["agents"]:
        region = tuple(int(v) for v in entry["region"])
        blob_path = root / entry["file"]
        if not blob_path.exists():
            raise DataFormatError(f"checkpoint blob {blob_path} missing")
        models[region] = load_model_blob(blob_path.read_bytes())
        trained[region] = int(entry.get("trained_iters", 0))
    return Snapshot(region_cfg, models, trained)
