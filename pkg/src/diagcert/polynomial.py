"""Sparse multivariate polynomials over named variables.

A monomial is a sorted tuple of ``(variable, exponent)`` pairs; the empty
tuple is the constant monomial.  Polynomials are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

Monomial = tuple[tuple[str, int], ...]
Number = Union[int, float]


class UnboundVariableError(KeyError):
    """Raised when a point does not assign every variable of a polynomial."""


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    acc = dict(a)
    for v, e in b:
        acc[v] = acc.get(v, 0) + e
    return tuple(sorted(acc.items()))


class Polynomial:
    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, float] | None = None):
        clean: dict[Monomial, float] = {}
        for mono, c in (terms or {}).items():
            c = float(c)
            if c == 0.0:
                continue
            key = tuple(sorted((str(v), int(e)) for v, e in mono if int(e) != 0))
            if any(e < 0 for _, e in key):
                raise ValueError(f"negative exponent in {mono}")
            clean[key] = clean.get(key, 0.0) + c
        self._terms = {k: v for k, v in clean.items() if v != 0.0}
        self._hash = None

    # construction

    @classmethod
    def var(cls, name: str) -> "Polynomial":
        return cls({((name, 1),): 1.0})

    @classmethod
    def const(cls, c: Number) -> "Polynomial":
        return cls({(): c})

    @classmethod
    def from_json(cls, terms: Iterable[Mapping]) -> "Polynomial":
        out: dict[Monomial, float] = {}
        for t in terms:
            exps = t.get("exps", {})
            if not isinstance(exps, Mapping):
                raise ValueError("'exps' must be an object mapping variable to exponent")
            mono = tuple(sorted((str(v), int(e)) for v, e in exps.items() if int(e) != 0))
            out[mono] = out.get(mono, 0.0) + float(t["coeff"])
        return cls(out)

    def to_json(self) -> list[dict]:
        return [{"coeff": c, "exps": {v: e for v, e in m}} for m, c in sorted(self._terms.items())]

    # inspection

    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(sorted({v for m in self._terms for v, _ in m}))

    @property
    def degree(self) -> int:
        return max((sum(e for _, e in m) for m in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def constant_term(self) -> float:
        return self._terms.get((), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def __repr__(self) -> str:
        if not self._terms:
            return "Polynomial(0)"
        parts = []
        for m, c in sorted(self._terms.items(), key=lambda kv: (-sum(e for _, e in kv[0]), kv[0])):
            mono = "*".join(v if e == 1 else f"{v}^{e}" for v, e in m)
            parts.append(f"{c:+.6g}" + (f"*{mono}" if mono else ""))
        return "Polynomial(" + " ".join(parts) + ")"

    # arithmetic

    @staticmethod
    def _coerce(other) -> "Polynomial":
        if isinstance(other, Polynomial):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.const(float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        acc = dict(self._terms)
        for m, c in other._terms.items():
            acc[m] = acc.get(m, 0.0) + c
        return Polynomial(acc)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other - self

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        acc: dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = _mono_mul(m1, m2)
                acc[m] = acc.get(m, 0.0) + c1 * c2
        return Polynomial(acc)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.const(1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other) -> bool:
        other = self._coerce(other)
        if other is NotImplemented:
            return False
        return self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def scale(self, c: float) -> "Polynomial":
        return Polynomial({m: c * v for m, v in self._terms.items()})

    # evaluation

    def __call__(self, point: Mapping[str, float]) -> float:
        return evaluate(self, point)

    def substitute(self, mapping: Mapping[str, "Polynomial | Number"]) -> "Polynomial":
        """Replace variables by polynomials (or numbers); others are kept."""
        subs = {k: self._coerce(v) for k, v in mapping.items()}
        cache: dict[tuple[str, int], Polynomial] = {}

        def power(v: str, e: int) -> Polynomial:
            if (v, e) not in cache:
                cache[(v, e)] = subs[v] ** e
            return cache[(v, e)]

        out = Polynomial()
        acc: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            kept = tuple((v, e) for v, e in m if v not in subs)
            replaced = [(v, e) for v, e in m if v in subs]
            if not replaced:
                acc[kept] = acc.get(kept, 0.0) + c
                continue
            piece = Polynomial({kept: c})
            for v, e in replaced:
                piece = piece * power(v, e)
            out = out + piece
        return out + Polynomial(acc)

    def rename(self, mapping: Mapping[str, str]) -> "Polynomial":
        return Polynomial(
            {tuple(sorted((mapping.get(v, v), e) for v, e in m)): c for m, c in self._terms.items()}
        )

    def compile(self, names: Sequence[str]) -> "CompiledPolynomial":
        return CompiledPolynomial(self, tuple(names))


def evaluate(p: Polynomial, point: Mapping[str, float]) -> float:
    """Exact float evaluation of ``p`` at a named point."""
    total = 0.0
    for m, c in p._terms.items():
        val = c
        for v, e in m:
            try:
                x = point[v]
            except KeyError:
                raise UnboundVariableError(f"variable {v!r} is not bound by the point") from None
            val *= float(x) ** e
        total += val
    return total


# intervals

_TINY = 5e-324


def _down(x: float) -> float:
    return math.nextafter(x, -math.inf) if math.isfinite(x) else x


def _up(x: float) -> float:
    return math.nextafter(x, math.inf) if math.isfinite(x) else x


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def __add__(self, o: "Interval") -> "Interval":
        return Interval(_down(self.lo + o.lo), _up(self.hi + o.hi))

    def __mul__(self, o: "Interval") -> "Interval":
        p = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        return Interval(_down(min(p)), _up(max(p)))

    def scale(self, c: float) -> "Interval":
        a, b = c * self.lo, c * self.hi
        return Interval(_down(min(a, b)), _up(max(a, b)))

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def hull(self, o: "Interval") -> "Interval":
        return Interval(min(self.lo, o.lo), max(self.hi, o.hi))


def interval_eval(p: Polynomial, box) -> Interval:
    """Naive term-wise enclosure of ``p`` over ``box``.

    Each monomial is bounded by multiplying the variable intervals factor by
    factor (so ``x^2`` over ``[-1, 2]`` gives ``[-2, 4]``); every operation is
    rounded outward by one ulp.
    """
    total = Interval(0.0, 0.0)
    for m, c in p._terms.items():
        term = Interval(1.0, 1.0)
        for v, e in m:
            iv = box.interval(v)
            for _ in range(e):
                term = term * iv
        total = total + term.scale(c)
    return total


class CompiledPolynomial:
    """Vectorized evaluation and centered-form enclosures over a fixed variable order."""

    def __init__(self, p: Polynomial, names: tuple[str, ...]):
        idx = {n: i for i, n in enumerate(names)}
        for v in p.variables:
            if v not in idx:
                raise UnboundVariableError(f"variable {v!r} is not in {names}")
        self.names = names
        self.poly = p
        d = len(names)
        items = sorted(p._terms.items())
        self.exps = np.zeros((len(items), d), dtype=np.int64)
        self.coeffs = np.array([c for _, c in items], dtype=float)
        for t, (m, _) in enumerate(items):
            for v, e in m:
                self.exps[t, idx[v]] = e
        self.maxdeg = int(self.exps.max()) if self.exps.size else 0
        self._centered = None

    def values(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if not len(self.coeffs):
            return np.zeros(len(pts))
        pw = _powers(pts, self.maxdeg)
        mons = np.ones((len(pts), len(self.coeffs)))
        for j in range(pts.shape[1]):
            col = self.exps[:, j]
            if col.any():
                mons *= pw[:, j, :][:, col]
        return mons @ self.coeffs

    def _prepare_centered(self):
        # p(c + d) = sum_s d^s * sum_t a_t * binom(e_t, s) * c^(e_t - s)
        shifts: dict[tuple, int] = {}
        subs: dict[tuple, int] = {}
        entries = []
        for t in range(len(self.coeffs)):
            e = self.exps[t]
            ranges = [range(k + 1) for k in e]
            for s in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(len(e), -1).T if len(e) else [np.zeros(0, int)]:
                s = tuple(int(v) for v in s)
                rest = tuple(int(a - b) for a, b in zip(e, s))
                mult = 1.0
                for a, b in zip(e, s):
                    mult *= math.comb(int(a), b)
                i = shifts.setdefault(rest, len(shifts))
                j = subs.setdefault(s, len(subs))
                entries.append((i, j, self.coeffs[t] * mult))
        W = np.zeros((len(shifts), len(subs)))
        for i, j, v in entries:
            W[i, j] += v
        D = np.array(list(shifts), dtype=np.int64).reshape(len(shifts), len(self.names))
        S = np.array(list(subs), dtype=np.int64).reshape(len(subs), len(self.names))
        even = np.all(S % 2 == 0, axis=1)
        zero = ~S.any(axis=1)
        self._centered = (W, np.abs(W), D, S, even, zero)

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Outward-padded enclosure over each box row via the centered form."""
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        n = len(lo)
        if not len(self.coeffs):
            return np.zeros(n), np.zeros(n)
        if self._centered is None:
            self._prepare_centered()
        W, Wabs, D, S, even, zero = self._centered
        c = 0.5 * (lo + hi)
        r = 0.5 * (hi - lo)
        deg = self.maxdeg
        cp = _powers(c, deg)
        rp = _powers(r, deg)
        Cm = _monomials(cp, D)
        Rm = _monomials(rp, S)
        coef = Cm @ W
        mag = np.abs(Cm) @ Wabs
        cr = coef * Rm
        lo_t = np.where(even, np.minimum(cr, 0.0), -np.abs(cr))
        hi_t = np.where(even, np.maximum(cr, 0.0), np.abs(cr))
        lo_t[:, zero] = cr[:, zero]
        hi_t[:, zero] = cr[:, zero]
        pad = 8.0 * np.finfo(float).eps * (len(self.coeffs) + 4) * (mag * Rm).sum(axis=1) + _TINY
        return lo_t.sum(axis=1) - pad, hi_t.sum(axis=1) + pad


def _powers(pts: np.ndarray, deg: int) -> np.ndarray:
    pw = np.ones(pts.shape + (deg + 1,))
    for k in range(1, deg + 1):
        pw[..., k] = pw[..., k - 1] * pts
    return pw


def _monomials(pw: np.ndarray, exps: np.ndarray) -> np.ndarray:
    out = np.ones((pw.shape[0], len(exps)))
    for j in range(exps.shape[1]):
        col = exps[:, j]
        if col.any():
            out *= pw[:, j, :][:, col]
    return out


def variables(prefix: str, n: int) -> list[Polynomial]:
    return [Polynomial.var(f"{prefix}{i + 1}") for i in range(n)]
