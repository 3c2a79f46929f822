"""Adam over flat coefficient arrays and the coarse-to-fine training driver."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .field import TaylorGrid, upsample

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, lr: float = 0.003, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, dtype=np.float64) -> "AdamState":
        return cls(np.zeros(size, dtype), np.zeros(size, dtype), 0, lr, beta1, beta2, eps)

    def reset(self) -> None:
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.t = 0


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> None:
    """In-place bias-corrected Adam update."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    bad = ~np.isfinite(grads)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"non-finite gradient {grads[i]} at parameter index {i}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * (grads * grads)
    step = state.lr / (1.0 - b1 ** state.t)
    denom = np.sqrt(state.v / (1.0 - b2 ** state.t))
    denom += state.eps
    params -= step * state.m / denom


@dataclass(frozen=True)
class Stage:
    resolution: tuple[int, ...]
    steps: int


@dataclass
class Schedule:
    stages: list[Stage]

    def __post_init__(self):
        self.stages = [s if isinstance(s, Stage) else Stage(tuple(np.atleast_1d(s[0]).tolist()), int(s[1]))
                       for s in self.stages]
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        for a, b in zip(self.stages, self.stages[1:]):
            if len(a.resolution) == len(b.resolution) and any(y < x for x, y in zip(a.resolution, b.resolution)):
                raise ValueError(f"stage resolutions must be non-decreasing: {a.resolution} -> {b.resolution}")
        if any(s.steps < 0 for s in self.stages):
            raise ValueError("step counts must be non-negative")

    @property
    def total_steps(self) -> int:
        return sum(s.steps for s in self.stages)

    @classmethod
    def progressive(cls, target: int, steps: int, dim: int = 3, levels: int = 3) -> "Schedule":
        """``levels`` stages at target/2**k, ..., target with ``steps`` split evenly."""
        per = [steps // levels + (1 if i < steps % levels else 0) for i in range(levels)]
        res = [max(2, target // 2 ** (levels - 1 - i)) for i in range(levels)]
        return cls([Stage((r,) * dim, n) for r, n in zip(res, per)])

    @classmethod
    def single(cls, target: int, steps: int, dim: int = 3) -> "Schedule":
        return cls([Stage((target,) * dim, steps)])


TRACE_COLUMNS = ("step", "stage", "resolution", "total_loss", "recon", "eik", "tv", "photometric", "wall_ms")


@dataclass
class LossTrace:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append(row)

    @property
    def total(self) -> np.ndarray:
        return np.array([r["total_loss"] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path, deterministic: bool = False) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=TRACE_COLUMNS, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                r = {k: r.get(k, "") for k in TRACE_COLUMNS}
                r["resolution"] = "x".join(str(v) for v in r["resolution"])
                for k in ("total_loss", "recon", "eik", "tv", "photometric"):
                    if r[k] != "":
                        r[k] = repr(float(r[k]))
                if deterministic:
                    r["wall_ms"] = ""
                w.writerow(r)


@dataclass
class StepResult:
    loss: float
    grads: list[np.ndarray]
    terms: dict = field(default_factory=dict)


class Model:
    """A set of grids trained together.  The first grid drives the schedule.

    Grids with ``progressive[i]`` false keep their resolution across stages.
    """

    def __init__(self, grids: Sequence, lrs: Sequence[float], progressive: Optional[Sequence[bool]] = None):
        self.grids = list(grids)
        self.lrs = list(lrs)
        self.progressive = [True] * len(self.grids) if progressive is None else list(progressive)
        if not len(self.grids) == len(self.lrs) == len(self.progressive):
            raise ValueError("one learning rate and progressive flag per grid")

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.grids[0].spec.resolution

    def parameters(self) -> list[np.ndarray]:
        return [g.coeffs for g in self.grids]

    def upsample(self, resolution) -> None:
        self.grids = [_resample(g, resolution) if p else g for g, p in zip(self.grids, self.progressive)]


def _resample(g, resolution):
    if tuple(g.spec.resolution) == tuple(resolution):
        return g
    if isinstance(g, TaylorGrid):
        return upsample(g, resolution)
    return g.upsample(resolution)


def run_schedule(problem: Callable[[Model, int], StepResult], schedule: Schedule,
                 model: Model | TaylorGrid, lr: float = 0.003,
                 callback: Optional[Callable[[Model, int, int], None]] = None,
                 stage_hook: Optional[Callable[[Model], None]] = None):
    """Train ``model`` through each stage, resampling and resetting Adam in between.

    ``problem(model, step)`` returns a :class:`StepResult` with one gradient per
    grid.  Returns ``(model_or_grid, trace, stage_seconds)``; a bare grid
    in gives a bare grid out.  ``stage_hook(model)`` runs after each resample,
    before the optimizer state is created.
    """
    bare = isinstance(model, TaylorGrid)
    if bare:
        model = Model([model], [lr])
    trace = LossTrace()
    stage_seconds = []
    step = 0
    for si, stage in enumerate(schedule.stages):
        t_stage = time.perf_counter()
        if len(stage.resolution) == len(model.resolution) and stage.resolution != model.resolution:
            model.upsample(stage.resolution)
        if stage_hook is not None:
            stage_hook(model)
        states = [AdamState.fresh(p.size, lr=l, dtype=p.dtype) for p, l in zip(model.parameters(), model.lrs)]
        for _ in range(stage.steps):
            t0 = time.perf_counter()
            res = problem(model, step)
            if not np.isfinite(res.loss):
                raise NumericalError(f"non-finite loss {res.loss} at stage {si} step {step}")
            for p, g, s in zip(model.parameters(), res.grads, states):
                try:
                    adam_step(p, g, s)
                except NumericalError as e:
                    raise NumericalError(f"stage {si} step {step}: {e}") from None
            trace.append(step=step, stage=si, resolution=model.resolution, total_loss=res.loss,
                         wall_ms=1e3 * (time.perf_counter() - t0), **res.terms)
            if callback is not None:
                callback(model, si, step)
            step += 1
        stage_seconds.append(time.perf_counter() - t_stage)
        log.info("stage %d %s: %d steps in %.1fs, last loss %s", si, model.resolution, stage.steps,
                 stage_seconds[-1], trace.rows[-1]["total_loss"] if trace.rows else None)
    return (model.grids[0] if bare else model), trace, stage_seconds


def smooth(values: np.ndarray, window: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if len(values) < window:
        return values.copy()
    c = np.cumsum(np.insert(values, 0, 0.0))
    return (c[window:] - c[:-window]) / window
