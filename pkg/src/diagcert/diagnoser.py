"""Online fault diagnoser tracking the non-faulty states consistent with outputs.

``M(k)`` holds the states outside XF that some input sequence reaches while
matching every observation so far up to ``delta``.  An empty ``M(k)`` means a
fault has occurred, within the last ``K`` steps when the model is diagnosable.
The finite back end is exact; the continuous back end tracks a point cloud
that under-approximates ``M(k)``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .model import ContinuousModel, DomainError, FiniteModel, SystemModel, state_names, input_names

RUNNING, FAULT = "running", "fault_detected"
DIST_TOL = 1e-9


class DiagnoserError(RuntimeError):
    """Stepping a diagnoser that has already reported."""


@dataclass(frozen=True)
class GridConfig:
    per_dim: int = 41  # initial X0 grid
    input_grid: int = 5
    cell: float | None = None  # thinning cell, default delta / 20
    max_points: int = 20_000
    floor: int = 200  # re-densify below this many points
    resample: int = 16  # random inputs per point when re-densifying
    seed: int = 0


@dataclass(frozen=True)
class DiagnoserState:
    k: int
    M: tuple | np.ndarray  # exact: sorted state indices; grid: (N, n) cloud
    backend: str
    verdict: str = RUNNING
    window: tuple[int, int] | None = None
    inconsistent_at_start: bool = False
    model: SystemModel | None = field(default=None, repr=False, compare=False)
    delta: float = 0.0
    K: int = 0
    config: GridConfig = GridConfig()

    @property
    def size(self) -> int:
        return len(self.M)

    def states(self) -> list[tuple[float, ...]]:
        if self.backend == "exact":
            return [self.model.states[i] for i in self.M]
        return [tuple(map(float, p)) for p in self.M]


def _close(y: np.ndarray, obs: np.ndarray, delta: float) -> np.ndarray:
    d = np.sqrt(((np.atleast_2d(y) - obs) ** 2).sum(axis=1))
    return d <= delta + DIST_TOL * max(1.0, delta)


def _finish(state: DiagnoserState) -> DiagnoserState:
    if len(state.M):
        return state
    return replace(state, verdict=FAULT, window=(max(state.k - state.K, 0), state.k))


def diag_init(model: SystemModel, delta: float, y0, K: int = 0, config: GridConfig = GridConfig()) -> DiagnoserState:
    if not delta > 0:
        raise ValueError("delta must be positive")
    obs = np.atleast_1d(np.asarray(y0, float))
    if isinstance(model, FiniteModel):
        keep = [i for i in model.initial
                if not model.fault_mask[i] and _close(model.outputs[i], obs, delta)[0]]
        st = DiagnoserState(0, tuple(keep), "exact", model=model, delta=delta, K=K, config=config)
    else:
        axes = [np.linspace(a, b, config.per_dim) for a, b in zip(model.X0.lo, model.X0.hi)]
        cloud = np.array(list(itertools.product(*axes)))
        cloud = cloud[_close(model.output_batch(cloud), obs, delta) & ~model.faulty_batch(cloud)]
        st = DiagnoserState(0, cloud, "grid", model=model, delta=delta, K=K, config=config)
    st = _finish(st)
    if st.verdict == FAULT:
        st = replace(st, inconsistent_at_start=True)
    return st


def _input_grid(model: ContinuousModel, per_dim: int) -> np.ndarray:
    axes = [np.linspace(a, b, per_dim) for a, b in zip(model.U.lo, model.U.hi)]
    return np.array(list(itertools.product(*axes)))


def _thin(cloud: np.ndarray, cell: float, cap: int, rng: np.random.Generator) -> np.ndarray:
    if not len(cloud):
        return cloud
    _, idx = np.unique(np.floor(cloud / cell).astype(np.int64), axis=0, return_index=True)
    cloud = cloud[np.sort(idx)]
    if len(cloud) > cap:
        cloud = cloud[np.sort(rng.choice(len(cloud), size=cap, replace=False))]
    return cloud


def _filter(model: ContinuousModel, pts: np.ndarray, obs: np.ndarray, delta: float) -> np.ndarray:
    ok = model.in_states_batch(pts) & ~model.faulty_batch(pts) & _close(model.output_batch(pts), obs, delta)
    return pts[ok]


def diag_step(state: DiagnoserState, y) -> DiagnoserState:
    if state.verdict != RUNNING:
        raise DiagnoserError("the diagnoser has already reported a fault")
    model, delta = state.model, state.delta
    obs = np.atleast_1d(np.asarray(y, float))
    k = state.k + 1
    if state.backend == "exact":
        nxt = set(int(j) for j in model.table[list(state.M)].ravel()) if state.M else set()
        keep = tuple(sorted(j for j in nxt if not model.fault_mask[j] and _close(model.outputs[j], obs, delta)[0]))
        return _finish(replace(state, k=k, M=keep))
    cfg = state.config
    rng = np.random.default_rng([cfg.seed, k])
    grid = _input_grid(model, cfg.input_grid)
    cloud = state.M
    img = model.successor_batch(np.repeat(cloud, len(grid), axis=0), np.tile(grid, (len(cloud), 1)))
    new = _filter(model, img, obs, delta)
    cell = cfg.cell if cfg.cell is not None else delta / 20
    new = _thin(new, cell, cfg.max_points, rng)
    if 0 < len(new) < cfg.floor or (not len(new) and len(cloud)):
        # re-densify with random inputs; every point stays a genuine image
        lo, hi = np.array(model.U.lo), np.array(model.U.hi)
        us = lo + rng.random((len(cloud) * cfg.resample, len(lo))) * (hi - lo)
        extra = _filter(model, model.successor_batch(np.repeat(cloud, cfg.resample, axis=0), us), obs, delta)
        new = _thin(np.vstack([new, extra]), cell, cfg.max_points, rng)
    return _finish(replace(state, k=k, M=new))


@dataclass(frozen=True)
class DiagnosisTrace:
    states: tuple[DiagnoserState, ...]

    @property
    def verdict(self) -> int:
        """1 when a fault was reported, else 0."""
        return int(bool(self.states) and self.states[-1].verdict == FAULT)

    @property
    def final(self) -> DiagnoserState | None:
        return self.states[-1] if self.states else None

    @property
    def detection_step(self) -> int | None:
        f = self.final
        return f.k if f is not None and f.verdict == FAULT else None


def run_diagnoser(model: SystemModel, delta: float, K: int, observations: Iterable,
                  config: GridConfig = GridConfig()) -> DiagnosisTrace:
    """Fold the observations through the diagnoser, stopping at the first report."""
    out: list[DiagnoserState] = []
    for y in observations:
        if not out:
            st = diag_init(model, delta, y, K, config)
        else:
            st = diag_step(out[-1], y)
        out.append(st)
        if st.verdict == FAULT:
            break
    return DiagnosisTrace(tuple(out))


# simulation

@dataclass(frozen=True)
class Simulation:
    states: tuple[tuple[float, ...], ...]
    outputs: tuple[tuple[float, ...], ...]
    observations: tuple[tuple[float, ...], ...]
    inputs: tuple[tuple[float, ...], ...]

    def first_fault(self, model: SystemModel) -> int | None:
        f = model.faulty_batch(np.array(self.states))
        return int(np.argmax(f)) if f.any() else None


def _ball(rng: np.random.Generator, q: int, radius: float) -> np.ndarray:
    v = rng.normal(size=q)
    nv = np.linalg.norm(v)
    v = v / nv if nv > 0 else np.eye(q)[0]
    return v * radius * rng.random() ** (1.0 / q)


def simulate(model: SystemModel, x0, inputs: Sequence, delta: float, seed: int | None = 0,
             noise: bool = True) -> Simulation:
    """Run the model and perturb each output by a seeded point of the ``delta`` ball."""
    x = tuple(float(v) for v in np.atleast_1d(np.asarray(x0, float)))
    if isinstance(model, FiniteModel):
        i = model.index_of(x)
        if i not in model.initial:
            raise DomainError(f"{x} is not an initial state")
    elif not model.X0.contains(x, 1e-9):
        raise DomainError(f"{x} is not in X0")
    states = [x]
    us = [tuple(float(v) for v in np.atleast_1d(np.asarray(u, float))) for u in inputs]
    for t, u in enumerate(us):
        try:
            if isinstance(model, FiniteModel):
                x = model.states[model.table[model.index_of(x), model.input_index(u)]]
            else:
                if not model.U.contains(u, 1e-9):
                    raise DomainError(f"input {u} outside U")
                if not model.X.contains(x, 1e-9):
                    raise DomainError(f"state {x} outside X")
                x = tuple(float(v) for v in model.successor_batch(np.array([x]), np.array([u]))[0])
        except DomainError as e:
            raise DomainError(f"step {t}: {e}") from None
        states.append(x)
    ys = model.output_batch(np.array(states))
    rng = np.random.default_rng(seed)
    if noise and delta > 0:
        obs = np.array([y + _ball(rng, len(y), delta) for y in ys])
    else:
        obs = ys.copy()
    tup = lambda a: tuple(tuple(float(v) for v in r) for r in a)
    return Simulation(tuple(states), tup(ys), tup(obs), tuple(us))


def exact_fault_step(model: ContinuousModel, x0, inputs: Sequence) -> int | None:
    """First step at which the run is in XF, evaluated in rational arithmetic."""
    names = state_names(model.n) + input_names(model.m)
    x = [Fraction(v) for v in x0]
    lo = [Fraction(v) for v in model.XF.lo]
    hi = [Fraction(v) for v in model.XF.hi]

    def faulty(p):
        return all(a <= v <= b for v, a, b in zip(p, lo, hi))

    if faulty(x):
        return 0
    for t, u in enumerate(inputs, start=1):
        env = dict(zip(names, x + [Fraction(v) for v in np.atleast_1d(u)]))
        x = [_eval_exact(p, env) for p in model.f]
        if faulty(x):
            return t
    return None


def _eval_exact(p, env) -> Fraction:
    out = Fraction(0)
    for mono, c in p.terms.items():
        term = Fraction(c)
        for v, e in mono:
            term *= env[v] ** e
        out += term
    return out


# observation streams

def write_stream(observations: Iterable, fh: TextIO) -> None:
    for k, y in enumerate(observations):
        fh.write(json.dumps({"k": k, "y": [float(v) for v in np.atleast_1d(y)]}) + "\n")


def read_stream(source: str | Path | TextIO) -> Iterator[tuple[float, ...]]:
    fh = open(source) if isinstance(source, (str, Path)) else source
    try:
        expect = 0
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            doc = json.loads(line)
            if doc.get("k") != expect:
                raise ValueError(f"line {lineno}: expected k={expect}, got {doc.get('k')}")
            expect += 1
            yield tuple(float(v) for v in doc["y"])
    finally:
        if fh is not source:
            fh.close()
