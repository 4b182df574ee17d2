"""Boxes, semi-algebraic sets and enumerated point domains."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .polynomial import Interval, Polynomial

RELATIONS = (">=", ">", "<=", "<")


def holds(value, rel: str, tol: float = 0.0):
    """Relation ``value rel 0``; non-strict relations accept ``tol`` slack."""
    if rel == ">=":
        return value >= -tol
    if rel == ">":
        return value > 0
    if rel == "<=":
        return value <= tol
    if rel == "<":
        return value < 0
    raise ValueError(f"unknown relation {rel!r}")


def negate(rel: str) -> str:
    return {">=": "<", ">": "<=", "<=": ">", "<": ">="}[rel]


@dataclass(frozen=True)
class Box:
    names: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if not (len(self.names) == len(self.lo) == len(self.hi)):
            raise ValueError("box names and bounds differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate dimension names")
        for n, a, b in zip(self.names, self.lo, self.hi):
            if not a <= b:
                raise ValueError(f"empty interval for {n}: [{a}, {b}]")

    @classmethod
    def from_bounds(cls, names: Sequence[str], bounds: Iterable[Sequence[float]]) -> "Box":
        bounds = [tuple(b) for b in bounds]
        if any(len(b) != 2 for b in bounds):
            raise ValueError("each bound must be a [lo, hi] pair")
        return cls(tuple(names), tuple(b[0] for b in bounds), tuple(b[1] for b in bounds))

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def lo_array(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def hi_array(self) -> np.ndarray:
        return np.array(self.hi)

    def interval(self, name: str) -> Interval:
        i = self.names.index(name)
        return Interval(self.lo[i], self.hi[i])

    def contains(self, point: Sequence[float], tol: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo_array - tol) and np.all(p <= self.hi_array + tol))

    def contains_batch(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return np.all((pts >= self.lo_array - tol) & (pts <= self.hi_array + tol), axis=1)

    def subset_of(self, other: "Box") -> bool:
        return all(a >= c and b <= d for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def intersects(self, other: "Box") -> bool:
        return all(a <= d and c <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def rename(self, names: Sequence[str]) -> "Box":
        return Box(tuple(names), self.lo, self.hi)

    def product(self, other: "Box") -> "Box":
        return Box(self.names + other.names, self.lo + other.lo, self.hi + other.hi)

    def center(self) -> np.ndarray:
        return 0.5 * (self.lo_array + self.hi_array)

    def to_json(self) -> list[list[float]]:
        return [[a, b] for a, b in zip(self.lo, self.hi)]


@dataclass(frozen=True)
class SemiAlgebraicSet:
    """``{p in base : g(p) rel 0 for every constraint}``."""

    base: Box
    constraints: tuple[tuple[Polynomial, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        cons = tuple((g, rel) for g, rel in self.constraints)
        for g, rel in cons:
            if rel not in RELATIONS:
                raise ValueError(f"unknown relation {rel!r}")
            missing = set(g.variables) - set(self.base.names)
            if missing:
                raise ValueError(f"constraint uses variables outside the base box: {sorted(missing)}")
        object.__setattr__(self, "constraints", cons)

    @property
    def names(self) -> tuple[str, ...]:
        return self.base.names

    def contains(self, point: Sequence[float] | Mapping[str, float], tol: float = 0.0) -> bool:
        if isinstance(point, Mapping):
            vec = [point[n] for n in self.names]
            env = dict(point)
        else:
            vec = list(point)
            env = dict(zip(self.names, vec))
        if not self.base.contains(vec, tol):
            return False
        return all(holds(g(env), rel, tol) for g, rel in self.constraints)

    def contains_batch(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        ok = self.base.contains_batch(pts, tol)
        for g, rel in self.constraints:
            ok &= holds(g.compile(self.names).values(pts), rel, tol)
        return ok

    def with_constraints(self, extra: Iterable[tuple[Polynomial, str]]) -> "SemiAlgebraicSet":
        return SemiAlgebraicSet(self.base, self.constraints + tuple(extra))

    def intersect(self, other: "SemiAlgebraicSet") -> "SemiAlgebraicSet":
        if self.base.names != other.base.names:
            raise ValueError("intersection needs identical dimension order")
        lo = tuple(max(a, b) for a, b in zip(self.base.lo, other.base.lo))
        hi = tuple(min(a, b) for a, b in zip(self.base.hi, other.base.hi))
        if any(a > b for a, b in zip(lo, hi)):
            return EMPTY_MARKER
        return SemiAlgebraicSet(Box(self.base.names, lo, hi), self.constraints + other.constraints)

    def compose(self, subst: Mapping[str, Polynomial], base: Box) -> "SemiAlgebraicSet":
        """Preimage under ``subst``: constraints are composed and the old base
        box becomes explicit bound constraints on the substituted values."""
        cons = []
        for n, a, b in zip(self.base.names, self.base.lo, self.base.hi):
            img = subst.get(n, Polynomial.var(n))
            cons.append((img - a, ">="))
            cons.append((b - img, ">="))
        for g, rel in self.constraints:
            cons.append((g.substitute(subst), rel))
        return SemiAlgebraicSet(base, tuple(cons))


EMPTY_MARKER = None

Domain = tuple  # union of SemiAlgebraicSet (empty tuple = empty set)


@dataclass(frozen=True)
class FiniteDomain:
    """Explicitly enumerated points; used for finite models."""

    names: tuple[str, ...]
    points: np.ndarray = field(compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, len(self.names))
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def union_contains(domain: Sequence[SemiAlgebraicSet], point, tol: float = 0.0) -> bool:
    return any(s.contains(point, tol) for s in domain)
