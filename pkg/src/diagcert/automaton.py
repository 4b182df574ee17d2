"""The (delta, K) fault-tracking DFA and the label partition over state pairs."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Sequence

import numpy as np

from .model import (MEMBER_TOL, ContinuousModel, DomainError, FiniteModel, SystemModel,
                    state_names)
from .polynomial import Polynomial
from .sets import Box, SemiAlgebraicSet


class Symbol(IntEnum):
    SIGMA1 = 1  # close, neither faulty
    SIGMA2 = 2  # far apart, or the fault-free copy is faulty
    SIGMA3 = 3  # close, only the first copy faulty


ALPHABET = (Symbol.SIGMA1, Symbol.SIGMA2, Symbol.SIGMA3)

# truth assignments (P1, P2, P3) covered by each symbol
_CELLS = {
    Symbol.SIGMA1: {(1, 0, 0)},
    Symbol.SIGMA2: {(0, a, b) for a in (0, 1) for b in (0, 1)} | {(1, a, 1) for a in (0, 1)},
    Symbol.SIGMA3: {(1, 1, 0)},
}

INITIAL = "q0"
ACCEPT = "F"
TRAP = "trap"


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class DeltaKDfa:
    K: int
    delta: float
    states: tuple[str, ...]
    trans: Mapping[tuple[str, Symbol], str] = field(compare=False)
    delta_index: Mapping[str, int] = field(compare=False)

    @property
    def accepting(self) -> frozenset[str]:
        return frozenset({ACCEPT})

    @property
    def initial(self) -> str:
        return INITIAL

    def step(self, q: str, sym: Symbol) -> str:
        return self.trans[(q, Symbol(sym))]

    def to_json(self) -> dict:
        return {
            "delta": self.delta, "K": self.K, "states": list(self.states),
            "transitions": [[q, int(s), self.trans[(q, s)]] for q in self.states for s in ALPHABET],
            "delta_index": {q: self.delta_index[q] for q in self.states},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def build_dfa(delta: float, K: int) -> DeltaKDfa:
    if not isinstance(K, (int, np.integer)) or isinstance(K, bool) or K < 0:
        raise ParameterError(f"K must be a non-negative integer, got {K!r}")
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta!r}")
    K = int(K)
    chain = [f"q{i}" for i in range(K + 1)]
    states = tuple(chain + [ACCEPT, TRAP])
    t: dict[tuple[str, Symbol], str] = {}
    s1, s2, s3 = ALPHABET
    t[(INITIAL, s1)] = INITIAL
    t[(INITIAL, s3)] = "q1" if K > 0 else ACCEPT
    for i in range(K + 1):
        t[(f"q{i}", s2)] = TRAP
    for i in range(1, K + 1):
        nxt_state = f"q{i + 1}" if i < K else ACCEPT
        t[(f"q{i}", s1)] = nxt_state
        t[(f"q{i}", s3)] = nxt_state
    for q in (ACCEPT, TRAP):
        for s in ALPHABET:
            t[(q, s)] = q
    index = {q: i for i, q in enumerate(states)}
    return DeltaKDfa(K=K, delta=float(delta), states=states, trans=t, delta_index=index)


def nxt(dfa: DeltaKDfa, q: str) -> frozenset[str]:
    if q not in dfa.states:
        raise ParameterError(f"unknown DFA state {q!r}")
    return frozenset(dfa.trans[(q, s)] for s in ALPHABET)


def symbols_between(dfa: DeltaKDfa, q: str, q_next: str) -> tuple[Symbol, ...]:
    return tuple(s for s in ALPHABET if dfa.trans[(q, s)] == q_next)


# labels

@dataclass(frozen=True)
class LabelPartition:
    """Label sets over pairs ``(x, xh)``.

    For continuous models the sets are semi-algebraic over ``X x X``; for finite
    models fault membership is by state lookup and the sets are enumerated.
    """

    model: SystemModel = field(compare=False)
    delta: float
    P1: SemiAlgebraicSet | None = None
    P2: SemiAlgebraicSet | None = None
    P3: SemiAlgebraicSet | None = None

    @property
    def names(self) -> tuple[str, ...]:
        n = self.model.n
        return state_names(n) + state_names(n, True)

    @property
    def base(self) -> Box | None:
        if isinstance(self.model, ContinuousModel):
            X = self.model.X
            return Box(self.names, X.lo + X.lo, X.hi + X.hi)
        return None

    # point labelling

    def predicates(self, xs: np.ndarray, xhs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xs, xhs = np.atleast_2d(xs), np.atleast_2d(xhs)
        y, yh = self.model.output_batch(xs), self.model.output_batch(xhs)
        d2 = ((y - yh) ** 2).sum(axis=1)
        p1 = d2 <= self.delta ** 2 * (1 + MEMBER_TOL) + MEMBER_TOL
        return p1, self.model.faulty_batch(xs), self.model.faulty_batch(xhs)

    def labels(self, xs: np.ndarray, xhs: np.ndarray) -> np.ndarray:
        p1, p2, p3 = self.predicates(xs, xhs)
        out = np.full(len(p1), int(Symbol.SIGMA2))
        out[p1 & ~p2 & ~p3] = int(Symbol.SIGMA1)
        out[p1 & p2 & ~p3] = int(Symbol.SIGMA3)
        return out

    def preimage(self, sym: Symbol) -> tuple[SemiAlgebraicSet, ...]:
        return cells_to_sets(self, _CELLS[Symbol(sym)])


def label_partition(model: SystemModel, delta: float) -> LabelPartition:
    if not delta > 0:
        raise ParameterError("delta must be positive")
    if isinstance(model, FiniteModel):
        return LabelPartition(model, float(delta))
    n = model.n
    xs, xh = state_names(n), state_names(n, True)
    base = Box(xs + xh, model.X.lo + model.X.lo, model.X.hi + model.X.hi)
    g1 = Polynomial.const(delta ** 2)
    for a, b in zip(model.h, model.h_hat()):
        g1 = g1 - (a - b) ** 2
    P1 = SemiAlgebraicSet(base, ((g1, ">="),))
    P2 = SemiAlgebraicSet(base, _box_constraints(model.XF, xs))
    P3 = SemiAlgebraicSet(base, _box_constraints(model.XF, xh))
    return LabelPartition(model, float(delta), P1, P2, P3)


def _box_constraints(b: Box, names: Sequence[str]) -> tuple:
    cons = []
    for v, lo, hi in zip(names, b.lo, b.hi):
        x = Polynomial.var(v)
        cons.append((x - lo, ">="))
        cons.append((hi - x, ">="))
    return tuple(cons)


def _negated_pieces(s: SemiAlgebraicSet) -> list[tuple]:
    """Complement of a conjunction as a list of single-constraint pieces."""
    from .sets import negate
    return [((g, negate(rel)),) for g, rel in s.constraints]


def label(part: LabelPartition, x, xh) -> Symbol:
    """Label of a single pair."""
    m = part.model
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    xhv = np.atleast_1d(np.asarray(xh, dtype=float))
    if isinstance(m, FiniteModel):
        m.index_of(xv)
        m.index_of(xhv)
    elif not (m.X.contains(xv, MEMBER_TOL) and m.X.contains(xhv, MEMBER_TOL)):
        raise DomainError("pair outside X x X")
    return Symbol(int(part.labels(xv[None], xhv[None])[0]))


# boolean cover of symbol sets

def _cubes(cells: set[tuple[int, int, int]]) -> list[tuple]:
    """Greedy cover of truth cells by maximal cubes (None = don't care)."""
    cands = []
    for cube in itertools.product((0, 1, None), repeat=3):
        members = {c for c in itertools.product((0, 1), repeat=3)
                   if all(v is None or v == b for v, b in zip(cube, c))}
        if members <= cells:
            cands.append((cube, members))
    cands.sort(key=lambda cm: (-len(cm[1]), cm[0].__repr__()))
    chosen, covered = [], set()
    for cube, members in cands:
        if not members <= covered:
            chosen.append(cube)
            covered |= members
        if covered == cells:
            break
    return chosen


def cells_to_sets(part: LabelPartition, cells: set) -> tuple[SemiAlgebraicSet, ...]:
    if part.P1 is None:
        raise ParameterError("semi-algebraic label sets exist only for continuous models")
    if not cells:
        return ()
    preds = (part.P1, part.P2, part.P3)
    out = []
    for cube in _cubes(set(cells)):
        factors: list[list[tuple]] = []
        for pred, v in zip(preds, cube):
            if v == 1:
                factors.append([pred.constraints])
            elif v == 0:
                factors.append(_negated_pieces(pred))
        for combo in itertools.product(*factors) if factors else [()]:
            cons = tuple(c for piece in combo for c in piece)
            out.append(SemiAlgebraicSet(part.P1.base, cons))
    return tuple(out)


def guard_cells(dfa: DeltaKDfa, q: str, q_next: str) -> set:
    cells: set = set()
    for s in symbols_between(dfa, q, q_next):
        cells |= _CELLS[s]
    return cells


def guard(part: LabelPartition, dfa: DeltaKDfa, q: str, q_next: str) -> tuple[SemiAlgebraicSet, ...]:
    """Pairs whose label drives ``q`` to ``q_next`` (a union; empty tuple if none)."""
    return cells_to_sets(part, guard_cells(dfa, q, q_next))


def q_init(dfa: DeltaKDfa) -> frozenset[str]:
    return nxt(dfa, dfa.initial)
