"""Certificates over product locations and the conditions they must satisfy.

A certificate holds one polynomial in ``(x, xh)`` per DFA location, indexed by
the location's position in ``dfa.states``.  ``b_conditions`` and
``v_conditions`` turn the barrier and ranking requirements into
``Condition`` records that produce both falsifier constraints (for a concrete
certificate) and linear rows (for a template with unknown coefficients).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .automaton import ACCEPT, TRAP, DeltaKDfa, LabelPartition, guard, nxt, q_init
from .falsifier import (Counterexample, Edge, FalsifierConfig, FalsifyOutcome, ForallExistsConstraint,
                        NoneFound, Proved, UniversalConstraint, certify, falsify, falsify_forall_exists)
from .model import ContinuousModel, FiniteModel, SystemModel, input_names, next_names, state_names
from .polynomial import Monomial, Polynomial
from .sets import Box, FiniteDomain, SemiAlgebraicSet

KINDS = ("B", "V")
SEMANTICS = ("sound", "literal")


class CertificateError(ValueError):
    pass


# certificates and templates

@dataclass(frozen=True)
class Certificate:
    kind: str
    delta: float
    K: int
    locations: tuple[Polynomial, ...]
    n: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CertificateError(f"kind must be B or V, got {self.kind!r}")
        object.__setattr__(self, "locations", tuple(self.locations))
        if len(self.locations) != self.K + 3:
            raise CertificateError(f"expected {self.K + 3} location polynomials, got {len(self.locations)}")
        allowed = set(state_names(self.n)) | set(state_names(self.n, True))
        for p in self.locations:
            bad = set(p.variables) - allowed
            if bad:
                raise CertificateError(f"location polynomial uses undeclared variables {sorted(bad)}")

    @property
    def names(self) -> tuple[str, ...]:
        return state_names(self.n) + state_names(self.n, True)

    def at(self, dfa: DeltaKDfa, q: str) -> Polynomial:
        return self.locations[dfa.delta_index[q]]

    def value(self, dfa: DeltaKDfa, x, xh, q: str) -> float:
        pt = np.concatenate([np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(xh, float))])
        return float(self.at(dfa, q).compile(self.names).values(pt[None])[0])

    def to_json(self) -> dict:
        return {"kind": self.kind, "delta": self.delta, "K": self.K, "n": self.n,
                "locations": [{"delta_index": r, "terms": p.to_json()} for r, p in enumerate(self.locations)]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def from_json(cls, doc: Mapping[str, Any] | str | Path) -> "Certificate":
        if isinstance(doc, Path) or (isinstance(doc, str) and not doc.lstrip().startswith("{")):
            doc = json.loads(Path(doc).read_text())
        elif isinstance(doc, str):
            doc = json.loads(doc)
        try:
            K = int(doc["K"])
            locs: list[Polynomial | None] = [None] * (K + 3)
            for entry in doc["locations"]:
                r = int(entry["delta_index"])
                if not 0 <= r < K + 3 or locs[r] is not None:
                    raise CertificateError(f"bad or repeated delta_index {r}")
                locs[r] = Polynomial.from_json(entry["terms"])
            if any(p is None for p in locs):
                raise CertificateError("missing location polynomial")
            n = int(doc.get("n", _infer_n(locs)))
            return cls(str(doc["kind"]), float(doc["delta"]), K, tuple(locs), n)
        except KeyError as e:
            raise CertificateError(f"missing field {e.args[0]!r}") from None


def _infer_n(locs) -> int:
    n = 1
    for p in locs:
        for v in p.variables:
            digits = v.lstrip("xh")
            if digits.isdigit():
                n = max(n, int(digits))
    return n


def zero_certificate(kind: str, dfa: DeltaKDfa, n: int) -> Certificate:
    return Certificate(kind, dfa.delta, dfa.K, tuple(Polynomial() for _ in dfa.states), n)


def _monomials_upto(names: Sequence[str], degree: int) -> list[Monomial]:
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(len(names)), d):
            counts: dict[str, int] = {}
            for i in combo:
                counts[names[i]] = counts.get(names[i], 0) + 1
            out.append(tuple(sorted(counts.items())))
    return out


@dataclass(frozen=True)
class Template:
    """Per-location monomial lists in scaled variables ``(v - center) / scale``."""

    names: tuple[str, ...]
    monomials: tuple[tuple[Monomial, ...], ...]
    center: tuple[float, ...]
    scale: tuple[float, ...]

    def __post_init__(self):
        if any(not m for m in self.monomials):
            raise CertificateError("every location needs at least one monomial")
        if any(not s > 0 for s in self.scale):
            raise CertificateError("scales must be positive")

    @classmethod
    def full(cls, n: int, degree: int, locations: int, box: Box | None = None) -> "Template":
        names = state_names(n) + state_names(n, True)
        monos = tuple(_monomials_upto(names, degree))
        if box is None:
            center, scale = (0.0,) * (2 * n), (1.0,) * (2 * n)
        else:
            center = tuple(0.5 * (a + b) for a, b in zip(box.lo, box.hi))
            scale = tuple(max(0.5 * (b - a), 1e-12) for a, b in zip(box.lo, box.hi))
        return cls(names, (monos,) * locations, center, scale)

    @property
    def sizes(self) -> list[int]:
        return [len(m) for m in self.monomials]

    @property
    def offsets(self) -> list[int]:
        return list(np.concatenate([[0], np.cumsum(self.sizes)]).astype(int))

    @property
    def n_coeffs(self) -> int:
        return int(sum(self.sizes))

    def features(self, loc: int, pts: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(pts) - np.array(self.center)) / np.array(self.scale)
        out = np.ones((len(z), len(self.monomials[loc])))
        idx = {v: i for i, v in enumerate(self.names)}
        for k, mono in enumerate(self.monomials[loc]):
            for v, e in mono:
                out[:, k] *= z[:, idx[v]] ** e
        return out

    def polynomial(self, loc: int, coeffs: Sequence[float]) -> Polynomial:
        subst = {v: (Polynomial.var(v) - c) * (1.0 / s) for v, c, s in zip(self.names, self.center, self.scale)}
        out = Polynomial()
        for mono, a in zip(self.monomials[loc], coeffs):
            if a == 0:
                continue
            out = out + Polynomial({mono: 1.0}).substitute(subst).scale(float(a))
        return out

    def instantiate(self, kind: str, dfa: DeltaKDfa, coeffs: np.ndarray, n: int) -> Certificate:
        off = self.offsets
        locs = tuple(self.polynomial(r, coeffs[off[r]:off[r + 1]]) for r in range(len(self.monomials)))
        return Certificate(kind, dfa.delta, dfa.K, locs, n)


# conditions

@dataclass(frozen=True)
class Part:
    sign: float
    location: int  # delta index
    successor: bool


@dataclass(frozen=True)
class Condition:
    """``sum(sign * C_loc(args)) rel 0`` over ``domain``.

    ``args`` are the current pair or, for successor parts, the pair reached
    under the inputs carried by the domain point.
    """

    tag: str  # init | accept | decrease | pre
    q: str
    q_next: str | None
    domain: tuple[SemiAlgebraicSet, ...] | FiniteDomain
    relation: str
    parts: tuple[Part, ...]

    @property
    def name(self) -> str:
        return f"{self.tag}[{self.q}->{self.q_next}]" if self.q_next else f"{self.tag}[{self.q}]"

    @property
    def names(self) -> tuple[str, ...]:
        if isinstance(self.domain, FiniteDomain):
            return self.domain.names
        return self.domain[0].names if self.domain else ()

    def is_empty(self) -> bool:
        return len(self.domain) == 0

    def body(self, cert: Certificate, model: SystemModel) -> Polynomial:
        out = Polynomial()
        for p in self.parts:
            loc = cert.locations[p.location]
            if p.successor:
                loc = _successor_poly(loc, model)
            out = out + loc.scale(p.sign)
        return out

    def constraint(self, cert: Certificate, model: SystemModel, margin: float) -> UniversalConstraint:
        return UniversalConstraint(self.domain, self.body(cert, model), self.relation, margin, self.name)

    def args(self, model: SystemModel, pts: np.ndarray, successor: bool) -> np.ndarray:
        n = model.n
        pts = np.atleast_2d(pts)
        if not successor:
            return pts[:, : 2 * n]
        if isinstance(model, FiniteModel):
            names = self.names
            cols = [names.index(v) for v in next_names(n) + next_names(n, True)]
            return pts[:, cols]
        m = model.m
        xn = model.successor_batch(pts[:, :n], pts[:, 2 * n:2 * n + m])
        xhn = model.successor_batch(pts[:, n:2 * n], pts[:, 2 * n + m:2 * n + 2 * m])
        return np.hstack([xn, xhn])

    def rows(self, template: Template, model: SystemModel, pts: np.ndarray) -> np.ndarray:
        """Linear map from template coefficients to body values at ``pts``."""
        pts = np.atleast_2d(pts)
        off = template.offsets
        A = np.zeros((len(pts), template.n_coeffs))
        for p in self.parts:
            a = self.args(model, pts, p.successor)
            A[:, off[p.location]:off[p.location + 1]] += p.sign * template.features(p.location, a)
        return A

    def values(self, cert: Certificate, model: SystemModel, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        out = np.zeros(len(pts))
        for p in self.parts:
            a = self.args(model, pts, p.successor)
            out += p.sign * cert.locations[p.location].compile(cert.names).values(a)
        return out


def _successor_poly(p: Polynomial, model: SystemModel) -> Polynomial:
    n = model.n
    if isinstance(model, FiniteModel):
        mp = dict(zip(state_names(n) + state_names(n, True), next_names(n) + next_names(n, True)))
        return p.rename(mp)
    subst = dict(zip(state_names(n), model.f))
    subst.update(zip(state_names(n, True), model.f_hat()))
    return p.substitute(subst)


def _pair_box(model: ContinuousModel, box_a: Box, box_b: Box) -> Box:
    n = model.n
    return Box(state_names(n) + state_names(n, True), box_a.lo + box_b.lo, box_a.hi + box_b.hi)


def _full_box(model: ContinuousModel) -> Box:
    n, m = model.n, model.m
    X, U = model.X, model.U
    names = state_names(n) + state_names(n, True) + input_names(m) + input_names(m, True)
    return Box(names, X.lo + X.lo + U.lo + U.lo, X.hi + X.hi + U.hi + U.hi)


class _FiniteTables:
    """Enumerations for finite models: pairs, labels and successor tuples."""

    def __init__(self, model: FiniteModel, part: LabelPartition):
        from .product import _label_table
        self.model = model
        self.lab = _label_table(model, part)
        self.ns = len(model.states)
        self.nu = len(model.inputs)
        n = model.n
        self.pair_names = state_names(n) + state_names(n, True)
        self.step_names = (self.pair_names + input_names(model.m) + input_names(model.m, True)
                           + next_names(n) + next_names(n, True))

    def pair_points(self, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
        P = self.model.points
        if not pairs:
            return np.zeros((0, 2 * self.model.n))
        i, j = np.array(pairs).T
        return np.hstack([P[i], P[j]])

    def step_points(self, steps: Sequence[tuple[int, int, int, int]]) -> np.ndarray:
        m = self.model
        if not steps:
            return np.zeros((0, len(self.step_names)))
        i, j, a, b = np.array(steps).T
        P, Uu, T = m.points, np.array(m.inputs), m.table
        return np.hstack([P[i], P[j], Uu[a], Uu[b], P[T[i, a]], P[T[j, b]]])


def b_conditions(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition,
                 exclude_accepting_decrease: bool = False) -> list[Condition]:
    """Initial (<= 0), accepting (> 0) and non-increase (<= 0) conditions."""
    idx = dfa.delta_index
    conds: list[Condition] = []
    qinit = sorted(q_init(dfa), key=idx.get)
    sources = [q for q in dfa.states if q != TRAP and not (exclude_accepting_decrease and q == ACCEPT)]
    if isinstance(model, FiniteModel):
        ft = _FiniteTables(model, part)
        init_pairs = [(i, j) for i in model.initial for j in model.initial]
        for q in qinit:
            pairs = [(i, j) for i, j in init_pairs if dfa.step(dfa.initial, ft.lab[i, j]) == q]
            conds.append(Condition("init", q, None, FiniteDomain(ft.pair_names, ft.pair_points(pairs)), "<=",
                                   (Part(1.0, idx[q], False),)))
        allpairs = [(i, j) for i in range(ft.ns) for j in range(ft.ns)]
        conds.append(Condition("accept", ACCEPT, None, FiniteDomain(ft.pair_names, ft.pair_points(allpairs)), ">",
                               (Part(1.0, idx[ACCEPT], False),)))
        T = model.table
        for q in sources:
            for q2 in sorted(nxt(dfa, q), key=idx.get):
                steps = [(i, j, a, b) for i in range(ft.ns) for j in range(ft.ns)
                         for a in range(ft.nu) for b in range(ft.nu)
                         if dfa.step(q, ft.lab[T[i, a], T[j, b]]) == q2]
                conds.append(Condition("decrease", q, q2, FiniteDomain(ft.step_names, ft.step_points(steps)), "<=",
                                       (Part(1.0, idx[q2], True), Part(-1.0, idx[q], False))))
        return conds
    R = _pair_box(model, model.X, model.X)
    R0 = _pair_box(model, model.X0, model.X0)
    for q in qinit:
        dom = _restrict(guard(part, dfa, dfa.initial, q), R0)
        conds.append(Condition("init", q, None, dom, "<=", (Part(1.0, idx[q], False),)))
    conds.append(Condition("accept", ACCEPT, None, (SemiAlgebraicSet(R),), ">", (Part(1.0, idx[ACCEPT], False),)))
    for q in sources:
        for q2 in sorted(nxt(dfa, q), key=idx.get):
            conds.append(Condition("decrease", q, q2, step_domain(model, part, dfa, q, q2), "<=",
                                   (Part(1.0, idx[q2], True), Part(-1.0, idx[q], False))))
    return conds


def _restrict(pieces: Sequence[SemiAlgebraicSet], box: Box) -> tuple[SemiAlgebraicSet, ...]:
    out = []
    for s in pieces:
        r = s.intersect(SemiAlgebraicSet(box))
        if r is not None:
            out.append(r)
    return tuple(out)


def step_domain(model: ContinuousModel, part: LabelPartition, dfa: DeltaKDfa, q: str, q2: str):
    """``(x, xh, u, uh)`` whose successor pair lies in ``guard(q, q2)``."""
    n = model.n
    subst = dict(zip(state_names(n), model.f))
    subst.update(zip(state_names(n, True), model.f_hat()))
    full = _full_box(model)
    return tuple(s.compose(subst, full) for s in guard(part, dfa, q, q2))


# ranking (V) conditions

@dataclass(frozen=True)
class VDomainInfo:
    pre_complement: tuple[SemiAlgebraicSet, ...] | FiniteDomain
    provenance: str = "computed"


def compute_pre_complement(model: SystemModel, resolution: float = 0.25) -> VDomainInfo:
    """Outer cover of the pairs outside ``X x X`` that can step into it.

    The set is a product, so it suffices to find cells outside ``X`` whose
    interval image over all inputs meets ``X``.  The search box is ``X``
    inflated by the half-width of ``f``'s interval image over ``X x U``, and
    by at least one cell.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    if isinstance(model, FiniteModel):
        n = model.n
        return VDomainInfo(FiniteDomain(state_names(n) + state_names(n, True), np.zeros((0, 2 * n))))
    n = model.n
    X, U = model.X, model.U
    xs, us = state_names(n), input_names(model.m)
    fc = [p.compile(xs + us) for p in model.f]
    lo_all = np.array([X.lo + U.lo])
    hi_all = np.array([X.hi + U.hi])
    widths = []
    for f in fc:
        flo, fhi = f.enclose(lo_all, hi_all)
        widths.append(float(fhi[0] - flo[0]))
    # at least one cell wide, so a constant map still yields its shell
    radius = max(0.5 * max(widths), resolution)
    xlo, xhi = X.lo_array, X.hi_array
    cells: list[tuple[np.ndarray, np.ndarray, int, int]] = []
    axes = []
    for d in range(n):
        below = np.arange(xlo[d], xlo[d] - radius - 1e-12, -resolution)[::-1]
        above = np.arange(xhi[d], xhi[d] + radius + 1e-12, resolution)
        inner = np.linspace(xlo[d], xhi[d], max(2, int(np.ceil((xhi[d] - xlo[d]) / resolution)) + 1))
        edges = np.unique(np.concatenate([below, inner, above,
                                          [xlo[d] - radius, xhi[d] + radius]]))
        axes.append(edges)
    grids = [list(zip(a[:-1], a[1:])) for a in axes]
    candidates = []
    for combo in itertools.product(*grids):
        lo = np.array([c[0] for c in combo])
        hi = np.array([c[1] for c in combo])
        side = None
        for d in range(n):
            if hi[d] <= xlo[d]:
                side = (d, -1)
                break
            if lo[d] >= xhi[d]:
                side = (d, 1)
                break
        if side is not None:
            candidates.append((lo, hi, side))
    if not candidates:
        return VDomainInfo((), "computed")
    clo = np.array([c[0] for c in candidates])
    chi = np.array([c[1] for c in candidates])
    ulo = np.tile(U.lo_array, (len(clo), 1))
    uhi = np.tile(U.hi_array, (len(clo), 1))
    meets = np.ones(len(clo), dtype=bool)
    for d, f in enumerate(fc):
        a, b = f.enclose(np.hstack([clo, ulo]), np.hstack([chi, uhi]))
        meets &= (b >= xlo[d]) & (a <= xhi[d])
    groups: dict[tuple, list] = {}
    for k in np.where(meets)[0]:
        groups.setdefault(candidates[k][2], []).append((clo[k], chi[k]))
    outside: list[tuple[Box, tuple]] = []
    for (d, sgn), boxes in sorted(groups.items()):
        for lo, hi in _merge_boxes(boxes):
            v = Polynomial.var(xs[d])
            strict = ((v - xhi[d], ">"),) if sgn > 0 else ((xlo[d] - v, ">"),)
            outside.append((Box(xs, lo, hi), strict))
    hn = state_names(n, True)
    pieces = []
    Xh = X.rename(hn)
    for b, strict in outside:
        pieces.append(SemiAlgebraicSet(b.product(Xh), strict))
    for b, strict in outside:
        renamed = tuple((g.rename(dict(zip(xs, hn))), rel) for g, rel in strict)
        pieces.append(SemiAlgebraicSet(X.product(b.rename(hn)), renamed))
    for b1, s1 in outside:
        for b2, _ in outside:
            pieces.append(SemiAlgebraicSet(b1.product(b2.rename(hn)), s1))
    return VDomainInfo(tuple(pieces), "computed")


def _merge_boxes(boxes: list[tuple[np.ndarray, np.ndarray]]) -> list[tuple[np.ndarray, np.ndarray]]:
    cur = [(tuple(a), tuple(b)) for a, b in boxes]
    if not cur:
        return []
    dim = len(cur[0][0])
    changed = True
    while changed:
        changed = False
        for axis in reversed(range(dim)):
            others = [d for d in range(dim) if d != axis]
            buckets: dict[tuple, list] = {}
            for lo, hi in cur:
                key = tuple((lo[d], hi[d]) for d in others)
                buckets.setdefault(key, []).append((lo, hi))
            merged = []
            for key, items in buckets.items():
                items.sort(key=lambda t: t[0][axis])
                run_lo, run_hi = list(items[0][0]), list(items[0][1])
                for lo, hi in items[1:]:
                    if abs(lo[axis] - run_hi[axis]) <= 1e-12:
                        run_hi[axis] = hi[axis]
                        changed = True
                    else:
                        merged.append((tuple(run_lo), tuple(run_hi)))
                        run_lo, run_hi = list(lo), list(hi)
                merged.append((tuple(run_lo), tuple(run_hi)))
            cur = merged
    return [(np.array(a), np.array(b)) for a, b in sorted(cur)]


def default_vdom(model: SystemModel, resolution: float = 0.25) -> VDomainInfo:
    return compute_pre_complement(model, resolution)


@dataclass(frozen=True)
class VConditions:
    init: list[Condition]  # literal: all initial pairs; sound: at least one pair (exists)
    pre: list[Condition]
    decrease_sources: list[str]
    semantics: str


def v_conditions(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition, vdom: VDomainInfo | None = None,
                 semantics: str = "sound") -> VConditions:
    """Initial, pre-complement and existential-decrease requirements.

    ``literal`` asks for ``V <= 0`` on every initial pair and a decrease at every
    pair of ``X x X``.  ``sound`` (default) asks for one initial pair with
    ``V <= 0`` and a decrease (with the successor kept in ``X x X``) on the
    sublevel set ``V <= 0`` only; a run started at the witness pair then stays
    in the sublevel set and, since ``V`` is bounded below, must reach the
    accepting location.
    """
    if semantics not in SEMANTICS:
        raise ValueError(f"semantics must be one of {SEMANTICS}")
    if vdom is None:
        if isinstance(model, ContinuousModel):
            raise CertificateError("continuous models need a pre-complement description")
        vdom = compute_pre_complement(model)
    idx = dfa.delta_index
    b = b_conditions(model, dfa, part)
    init = [c for c in b if c.tag == "init"]
    sources = [q for q in dfa.states if q != ACCEPT]
    pre = []
    for q in sources:
        pre.append(Condition("pre", q, None, vdom.pre_complement, ">", (Part(1.0, idx[q], False),)))
    return VConditions(init, pre, sources, semantics)


def decrease_constraint(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition, cert: Certificate,
                        q: str, margin: float, semantics: str = "sound") -> ForallExistsConstraint:
    idx = dfa.delta_index
    Vq = cert.at(dfa, q)
    n = model.n
    pair = state_names(n) + state_names(n, True)
    if isinstance(model, FiniteModel):
        ft = _FiniteTables(model, part)
        pairs = [(i, j) for i in range(ft.ns) for j in range(ft.ns)]
        pts = ft.pair_points(pairs)
        if semantics == "sound":
            keep = Vq.compile(pair).values(pts) <= 0 if len(pts) else np.zeros(0, bool)
            pairs = [p for p, k in zip(pairs, keep) if k]
            pts = pts[keep]
        I = np.array([p[0] for p in pairs], dtype=int)
        J = np.array([p[1] for p in pairs], dtype=int)
        T = model.table
        cur = Vq.compile(pair).values(pts) if len(pts) else np.zeros(0)
        comp = [p.compile(pair) for p in cert.locations]
        step = np.array([[idx[dfa.step(qq, s)] for s in (1, 2, 3)] for qq in dfa.states])
        inputs = [(a, b) for a in range(ft.nu) for b in range(ft.nu)]

        def evaluate(rows: np.ndarray, k: int) -> np.ndarray:
            a, b = inputs[k]
            i2, j2 = T[I[rows], a], T[J[rows], b]
            tgt = step[idx[q], ft.lab[i2, j2] - 1]
            nxt_pts = np.hstack([model.points[i2], model.points[j2]])
            vals = np.empty(len(rows))
            for r in np.unique(tgt):
                sel = tgt == r
                vals[sel] = comp[r].values(nxt_pts[sel])
            return vals - cur[rows]

        return ForallExistsConstraint(q, FiniteDomain(pair, pts), (), margin, f"exists-decrease[{q}]",
                                      finite_eval=evaluate, finite_inputs=len(inputs))
    R = _pair_box(model, model.X, model.X)
    outer_cons = ((Vq, "<="),) if semantics == "sound" else ()
    outer = (SemiAlgebraicSet(R, outer_cons),)
    edges = []
    targets = sorted(nxt(dfa, q), key=idx.get)
    for q2 in targets:
        body = _successor_poly(cert.at(dfa, q2), model) - Vq
        edges.append(Edge(q2, guard(part, dfa, q, q2), body, cert.at(dfa, q2)))
    m = model.m
    U2 = Box(input_names(m) + input_names(m, True), model.U.lo + model.U.lo, model.U.hi + model.U.hi)
    edge_of = np.array([targets.index(dfa.step(q, s)) if dfa.step(q, s) in targets else -1 for s in (1, 2, 3)])

    def classify(succ: np.ndarray) -> np.ndarray:
        return edge_of[part.labels(succ[:, :n], succ[:, n:]) - 1]

    return ForallExistsConstraint(q, outer, tuple(edges), margin, f"exists-decrease[{q}]",
                                  state_box=R, f=model.f, f_hat=model.f_hat(), inputs=U2,
                                  current=Vq, classify=classify)


def initial_witness(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition, cert: Certificate,
                    samples: int = 4096, seed: int = 0) -> tuple[float, ...] | None:
    """An initial pair whose starting location has ``V <= 0``, if one is found."""
    n = model.n
    pair = state_names(n) + state_names(n, True)
    if isinstance(model, FiniteModel):
        ft = _FiniteTables(model, part)
        pairs = [(i, j) for i in model.initial for j in model.initial]
        pts = ft.pair_points(pairs)
        labs = np.array([ft.lab[i, j] for i, j in pairs])
    else:
        lo = np.array(model.X0.lo + model.X0.lo)
        hi = np.array(model.X0.hi + model.X0.hi)
        rng = np.random.default_rng(seed)
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        pts = np.vstack([0.5 * (lo + hi)[None], corners, lo + rng.random((samples, len(lo))) * (hi - lo)])
        labs = part.labels(pts[:, :n], pts[:, n:])
    vals = np.empty(len(pts))
    for s in (1, 2, 3):
        sel = labs == s
        if sel.any():
            q = dfa.step(dfa.initial, s)
            vals[sel] = cert.at(dfa, q).compile(pair).values(pts[sel])
    ok = np.where(vals <= 0)[0]
    if not len(ok):
        return None
    k = ok[np.argmin(vals[ok])]
    return tuple(float(v) for v in pts[k])


# checking

VALID, INVALID, UNKNOWN = "VALID", "INVALID", "UNKNOWN"


@dataclass(frozen=True)
class CheckReport:
    kind: str
    verdict: str
    margin: float
    outcomes: tuple[tuple[str, FalsifyOutcome], ...]
    mode: str
    notes: tuple[str, ...] = ()

    def failing(self) -> list[str]:
        return [n for n, o in self.outcomes if isinstance(o, Counterexample)]

    def to_json(self) -> dict:
        return {"kind": self.kind, "verdict": self.verdict, "margin": self.margin, "mode": self.mode,
                "notes": list(self.notes),
                "conditions": [{"name": n, **outcome_json(o)} for n, o in self.outcomes]}


def outcome_json(o: FalsifyOutcome) -> dict:
    if isinstance(o, Counterexample):
        return {"outcome": "counterexample", "point": dict(zip(o.names, o.point)), "value": o.value,
                "advisory": o.advisory}
    if isinstance(o, NoneFound):
        return {"outcome": "none_found", "resolution": o.resolution, "undecided": o.undecided,
                "budget_exhausted": o.budget_exhausted, "boxes": o.boxes}
    return {"outcome": "proved", "boxes": o.boxes, "grid_validated": o.grid_validated}


def _verdict(outcomes) -> str:
    # advisory counterexamples from the input-grid check of the existential also count
    if any(isinstance(o, Counterexample) for _, o in outcomes):
        return INVALID
    if all(isinstance(o, Proved) for _, o in outcomes):
        return VALID
    return UNKNOWN


def check_certificate(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition, cert: Certificate,
                      mode: str = "certify", cfg: FalsifierConfig = FalsifierConfig(),
                      vdom: VDomainInfo | None = None, semantics: str = "sound",
                      exclude_accepting_decrease: bool = False,
                      dec_margin: float | None = None) -> CheckReport:
    """Check every condition of the certificate's kind.

    Finite models are checked exhaustively in either mode.  ``dec_margin``
    (default ``cfg.margin``) is the decrease demanded by the ranking check.
    """
    if mode not in ("falsify", "certify"):
        raise ValueError("mode must be falsify or certify")
    if cert.K != dfa.K:
        raise CertificateError(f"certificate is for K={cert.K}, DFA has K={dfa.K}")
    margin = cfg.margin
    outcomes: list[tuple[str, FalsifyOutcome]] = []
    notes: list[str] = []

    def check(c: UniversalConstraint) -> FalsifyOutcome:
        if mode == "certify":
            return certify(c, None, cfg)
        return falsify(c, cfg)

    if cert.kind == "B":
        conds = b_conditions(model, dfa, part, exclude_accepting_decrease)
        for c in conds:
            outcomes.append((c.name, check(c.constraint(cert, model, margin))))
    else:
        if vdom is None:
            vdom = compute_pre_complement(model) if isinstance(model, FiniteModel) else compute_pre_complement(model, 0.25)
        vc = v_conditions(model, dfa, part, vdom, semantics)
        if semantics == "literal":
            for c in vc.init:
                outcomes.append((c.name, check(c.constraint(cert, model, margin))))
        else:
            w = initial_witness(model, dfa, part, cert, seed=cfg.seed)
            if w is None:
                outcomes.append(("exists-init", NoneFound(0.0, 1) if isinstance(model, ContinuousModel)
                                 else Counterexample((), (), float("nan"))))
            else:
                outcomes.append(("exists-init", Proved(1)))
                notes.append(f"initial witness {w}")
        for c in vc.pre:
            outcomes.append((c.name, check(c.constraint(cert, model, margin))))
        dm = margin if dec_margin is None else dec_margin
        for q in vc.decrease_sources:
            fe = decrease_constraint(model, dfa, part, cert, q, dm, semantics)
            out = falsify_forall_exists(fe, cfg)
            if isinstance(out, NoneFound) and out.undecided == 0 and not out.budget_exhausted:
                out = Proved(out.boxes, grid_validated=True)
            outcomes.append((fe.name, out))
    return CheckReport(cert.kind, _verdict(outcomes), margin, tuple(outcomes), mode, tuple(notes))
