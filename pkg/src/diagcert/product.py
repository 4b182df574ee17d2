"""Product of the augmented system with the DFA, and exact finite-model oracles."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .automaton import (ACCEPT, DeltaKDfa, LabelPartition, Symbol, build_dfa, label,
                        label_partition, guard, q_init)
from .model import ContinuousModel, FiniteModel, SystemModel, successor
from .sets import Box, SemiAlgebraicSet


class UnsupportedModelError(TypeError):
    pass


@dataclass(frozen=True)
class ProductState:
    x: tuple[float, ...]
    xh: tuple[float, ...]
    q: str


@dataclass(frozen=True)
class Witness:
    """Two runs violating diagnosability: ``x`` enters XF first at ``fault_step``."""

    x_run: tuple[tuple[float, ...], ...]
    xh_run: tuple[tuple[float, ...], ...]
    u_run: tuple[tuple[float, ...], ...]
    uh_run: tuple[tuple[float, ...], ...]
    fault_step: int

    def to_json(self) -> dict:
        return {"fault_step": self.fault_step, "x_run": [list(v) for v in self.x_run],
                "xh_run": [list(v) for v in self.xh_run], "u_run": [list(v) for v in self.u_run],
                "uh_run": [list(v) for v in self.uh_run]}


@dataclass(frozen=True)
class Verdict:
    diagnosable: bool
    witness: Witness | None = None
    explored: int = 0

    def __post_init__(self):
        if self.diagnosable == (self.witness is not None):
            raise ValueError("witness present iff not diagnosable")


def product_step(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition, s: ProductState, u, uh) -> ProductState:
    x1 = successor(model, s.x, u)
    xh1 = successor(model, s.xh, uh)
    return ProductState(x1, xh1, dfa.step(s.q, label(part, x1, xh1)))


def initial_product_states(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition):
    """Finite models: the set of initial product states.

    Continuous models: a map from each initial location to the union of
    semi-algebraic pieces of ``X0 x X0`` whose label leads there.
    """
    if isinstance(model, FiniteModel):
        out = set()
        for i in model.initial:
            for j in model.initial:
                x, xh = model.states[i], model.states[j]
                out.add(ProductState(x, xh, dfa.step(dfa.initial, label(part, x, xh))))
        return out
    return initial_domains(model, dfa, part)


def initial_domains(model: ContinuousModel, dfa: DeltaKDfa, part: LabelPartition) -> dict[str, tuple]:
    X0 = model.X0
    base = Box(part.names, X0.lo + X0.lo, X0.hi + X0.hi)
    out = {}
    for q in sorted(q_init(dfa), key=dfa.delta_index.get):
        out[q] = tuple(SemiAlgebraicSet(base, s.constraints) for s in guard(part, dfa, dfa.initial, q))
    return out


# exact oracle

def _label_table(model: FiniteModel, part: LabelPartition) -> np.ndarray:
    n = len(model.states)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    pts = model.points
    return part.labels(pts[ii.ravel()], pts[jj.ravel()]).reshape(n, n)


def verify_exact(model: SystemModel, delta: float, K: int) -> Verdict:
    """Breadth-first search for the accepting location in the finite product."""
    if not isinstance(model, FiniteModel):
        raise UnsupportedModelError("the exact oracle needs a finite model")
    dfa = build_dfa(delta, K)
    part = label_partition(model, delta)
    lab = _label_table(model, part)
    qidx = {q: i for i, q in enumerate(dfa.states)}
    step = np.array([[qidx[dfa.step(q, s)] for s in (1, 2, 3)] for q in dfa.states])
    acc = qidx[ACCEPT]
    table = model.table
    nu = len(model.inputs)
    parent: dict[tuple[int, int, int], tuple | None] = {}
    queue: deque = deque()
    for i in model.initial:
        for j in model.initial:
            s = (i, j, int(step[0, lab[i, j] - 1]))
            if s not in parent:
                parent[s] = None
                queue.append(s)
    hit = None
    while queue:
        s = queue.popleft()
        if s[2] == acc:
            hit = s
            break
        i, j, q = s
        for a in range(nu):
            for b in range(nu):
                i2, j2 = int(table[i, a]), int(table[j, b])
                t = (i2, j2, int(step[q, lab[i2, j2] - 1]))
                if t not in parent:
                    parent[t] = (s, a, b)
                    queue.append(t)
    if hit is None:
        return Verdict(True, None, len(parent))
    path, inputs = [hit], []
    while parent[path[-1]] is not None:
        prev, a, b = parent[path[-1]]
        path.append(prev)
        inputs.append((a, b))
    path.reverse()
    inputs.reverse()
    return Verdict(False, _witness(model, [p[0] for p in path], [p[1] for p in path], inputs), len(parent))


def _witness(model: FiniteModel, xs: Sequence[int], xhs: Sequence[int], inputs) -> Witness:
    k = next(t for t, i in enumerate(xs) if model.fault_mask[i])
    return Witness(
        tuple(model.states[i] for i in xs), tuple(model.states[j] for j in xhs),
        tuple(model.inputs[a] for a, _ in inputs), tuple(model.inputs[b] for _, b in inputs), k,
    )


def definitional_check(model: SystemModel, delta: float, K: int, horizon: int | None = None) -> Verdict:
    """Time-unrolled enumeration of run pairs checking the definition directly.

    Layer ``t`` holds every ``(x_t, xh_t, c)`` reachable by a pair of runs that
    stayed within ``delta`` with the second run fault-free so far; ``c`` counts
    steps since the first run's first fault (or -1).  The DFA is not used.
    """
    if not isinstance(model, FiniteModel):
        raise UnsupportedModelError("the definitional check needs a finite model")
    if K < 0 or not delta > 0:
        raise ValueError("need K >= 0 and delta > 0")
    ns = len(model.states)
    safe = ns * ns * (K + 3)
    if horizon is None:
        horizon = safe
    if horizon < safe:
        raise ValueError(f"horizon {horizon} below the safe bound {safe}")
    y = model.outputs
    close = ((y[:, None, :] - y[None, :, :]) ** 2).sum(axis=2) <= delta ** 2 * (1 + 1e-9) + 1e-9
    fault = model.fault_mask
    table = model.table
    nu = len(model.inputs)

    def admissible(i, j):
        return close[i, j] and not fault[j]

    layer: dict[tuple[int, int, int], tuple | None] = {}
    for i in model.initial:
        for j in model.initial:
            if admissible(i, j):
                layer[(i, j, 0 if fault[i] else -1)] = None
    history = [layer]
    seen_layers: dict[frozenset, int] = {}
    for t in range(horizon + 1):
        for s in layer:
            if s[2] == K:
                return Verdict(False, _unroll(model, history, s), sum(len(h) for h in history))
        if t == horizon:
            break
        key = frozenset(layer)
        if key in seen_layers:
            # layers repeat from here on; no new pair can appear
            break
        seen_layers[key] = t
        nxt_layer: dict = {}
        for (i, j, c) in layer:
            for a in range(nu):
                for b in range(nu):
                    i2, j2 = int(table[i, a]), int(table[j, b])
                    if not admissible(i2, j2):
                        continue
                    c2 = (0 if fault[i2] else -1) if c < 0 else c + 1
                    s2 = (i2, j2, c2)
                    if s2 not in nxt_layer:
                        nxt_layer[s2] = ((i, j, c), a, b)
        layer = nxt_layer
        history.append(layer)
    return Verdict(True, None, sum(len(h) for h in history))


def _unroll(model: FiniteModel, history, s) -> Witness:
    states, inputs = [s], []
    for t in range(len(history) - 1, 0, -1):
        prev, a, b = history[t][states[-1]]
        states.append(prev)
        inputs.append((a, b))
    states.reverse()
    inputs.reverse()
    return _witness(model, [p[0] for p in states], [p[1] for p in states], inputs)


def check_witness(model: SystemModel, delta: float, K: int, w: Witness, tol: float = 1e-9) -> bool:
    """Replay a witness and test the violation conditions of the definition."""
    k = w.fault_step
    T = len(w.x_run)
    if T != len(w.xh_run) or len(w.u_run) != T - 1 or len(w.uh_run) != T - 1 or T < k + K + 1:
        return False
    for t in range(T - 1):
        if not np.allclose(successor(model, w.x_run[t], w.u_run[t]), w.x_run[t + 1], atol=tol, rtol=0):
            return False
        if not np.allclose(successor(model, w.xh_run[t], w.uh_run[t]), w.xh_run[t + 1], atol=tol, rtol=0):
            return False
    xs, xhs = np.array(w.x_run, dtype=float), np.array(w.xh_run, dtype=float)
    if isinstance(model, FiniteModel):
        init = {model.index_of(w.x_run[0]), model.index_of(w.xh_run[0])}
        if not init <= set(model.initial):
            return False
    elif not (model.X0.contains(xs[0], tol) and model.X0.contains(xhs[0], tol)):
        return False
    fx, fxh = model.faulty_batch(xs), model.faulty_batch(xhs)
    if not fx[k] or fx[:k].any() or fxh[: k + K + 1].any():
        return False
    y, yh = model.output_batch(xs[: k + K + 1]), model.output_batch(xhs[: k + K + 1])
    return bool(np.all(np.sqrt(((y - yh) ** 2).sum(axis=1)) <= delta + tol))
