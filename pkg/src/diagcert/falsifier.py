"""Interval branch-and-bound search for violations of polynomial constraints.

A ``UniversalConstraint`` says ``body rel 0`` on every point of its domain.
``falsify`` looks for a violating point, ``certify`` tries to discharge the
whole domain box by box.  Domains are unions of semi-algebraic sets (one
search per branch) or an explicit ``FiniteDomain`` (exhaustive check).

``ForallExistsConstraint`` asks, for every outer point, for some input pair
whose successor stays in the state set and takes an edge whose body drops
below ``-margin``.  Inputs are drawn from a finite grid.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .polynomial import CompiledPolynomial, Polynomial
from .sets import Box, FiniteDomain, SemiAlgebraicSet, holds

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class FalsifierConfig:
    eps_box: float = 0.05
    margin: float = 1e-6
    tol: float = DEFAULT_TOL
    max_boxes: int = 200_000
    input_grid: int = 9
    samples: int = 4096
    max_counterexamples: int = 8
    batch: int = 512
    candidates: int = 3
    seed: int = 0
    serial: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.eps_box > 0:
            raise ValueError("eps_box must be positive")
        if self.margin < 0 or self.tol < 0:
            raise ValueError("margin and tol must be non-negative")
        if self.input_grid < 1 or self.max_boxes < 1:
            raise ValueError("input_grid and max_boxes must be positive")


# outcomes

@dataclass(frozen=True)
class Counterexample:
    point: tuple[float, ...]
    names: tuple[str, ...]
    value: float
    points: tuple[tuple[float, ...], ...] = ()
    advisory: bool = False

    tag = "counterexample"

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.point))


@dataclass(frozen=True)
class NoneFound:
    resolution: float
    undecided: int = 0
    budget_exhausted: bool = False
    boxes: int = 0

    tag = "none_found"


@dataclass(frozen=True)
class Proved:
    boxes: int = 0
    grid_validated: bool = False

    tag = "proved"


FalsifyOutcome = Counterexample | NoneFound | Proved


# constraints

@dataclass(frozen=True)
class UniversalConstraint:
    domain: tuple[SemiAlgebraicSet, ...] | FiniteDomain
    body: Polynomial
    relation: str
    margin: float = 1e-6
    name: str = ""

    def __post_init__(self):
        if isinstance(self.domain, SemiAlgebraicSet):
            object.__setattr__(self, "domain", (self.domain,))
        elif not isinstance(self.domain, FiniteDomain):
            object.__setattr__(self, "domain", tuple(self.domain))
        if self.relation not in (">=", ">", "<=", "<"):
            raise ValueError(f"unknown relation {self.relation!r}")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

    @property
    def names(self) -> tuple[str, ...]:
        if isinstance(self.domain, FiniteDomain):
            return self.domain.names
        return self.domain[0].names if self.domain else tuple(sorted(self.body.variables))

    def violated(self, values: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
        return _violated(values, self.relation, tol)

    def in_domain(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if isinstance(self.domain, FiniteDomain):
            raise TypeError("membership of finite domains is by enumeration")
        ok = np.zeros(len(pts), dtype=bool)
        for s in self.domain:
            ok |= s.contains_batch(pts)
        return ok


@dataclass(frozen=True)
class Edge:
    """One DFA edge for the existential decrease check."""

    target: str
    guard: tuple[SemiAlgebraicSet, ...]  # over the successor pair, current-state names
    body: Polynomial | None  # over (x, xh, u, uh); None for finite models
    next_value: Polynomial | None = None  # target location value over the pair names


@dataclass(frozen=True)
class ForallExistsConstraint:
    q: str
    outer: tuple[SemiAlgebraicSet, ...] | FiniteDomain
    edges: tuple[Edge, ...]
    margin: float
    name: str = ""
    # continuous models
    state_box: Box | None = None
    f: tuple[Polynomial, ...] = ()
    f_hat: tuple[Polynomial, ...] = ()
    inputs: Box | None = None
    # optional fast path: current value over the pair names, and a map from
    # successor pairs to edge indices (-1 for none)
    current: Polynomial | None = None
    classify: Callable | None = field(default=None, compare=False)
    # finite models: exact value oracle (outer index rows, input-pair index) -> (body, target)
    finite_eval: Callable | None = field(default=None, compare=False)
    finite_inputs: int = 0


# relation helpers

def _violated(v: np.ndarray, rel: str, tol: float) -> np.ndarray:
    if rel == "<=":
        return v > tol
    if rel == ">=":
        return v < -tol
    if rel == "<":
        return v >= 0
    return v <= 0


def _proved(lo: np.ndarray, hi: np.ndarray, rel: str, margin: float, tol: float) -> np.ndarray:
    if rel == "<=":
        return hi <= tol
    if rel == ">=":
        return lo >= -tol
    if rel == "<":
        return hi <= -margin
    return lo >= margin


def _point_ok(v: np.ndarray, rel: str, margin: float, tol: float) -> np.ndarray:
    return _proved(v, v, rel, margin, tol)


def _excluded(lo: np.ndarray, hi: np.ndarray, rel: str) -> np.ndarray:
    """Interval proves the domain constraint ``g rel 0`` fails on the box."""
    if rel == ">=":
        return hi < 0
    if rel == ">":
        return hi <= 0
    if rel == "<=":
        return lo > 0
    return lo >= 0


def _inside(lo: np.ndarray, hi: np.ndarray, rel: str) -> np.ndarray:
    if rel == ">=":
        return lo >= 0
    if rel == ">":
        return lo > 0
    if rel == "<=":
        return hi <= 0
    return hi < 0


def _lhs(rng: np.random.Generator, lo: np.ndarray, hi: np.ndarray, n: int) -> np.ndarray:
    d = len(lo)
    u = (rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T + rng.random((n, d))) / n
    return lo + u * (hi - lo)


# universal constraints

def falsify(c: UniversalConstraint, cfg: FalsifierConfig = FalsifierConfig()) -> FalsifyOutcome:
    """Search for a violating point; a clean search yields ``NoneFound``."""
    return _run_universal(c, cfg, certify_mode=False)


def certify(c: UniversalConstraint, resolution: float | None = None,
            cfg: FalsifierConfig = FalsifierConfig()) -> FalsifyOutcome:
    """Discharge the whole domain, or report a violation, or unknown at resolution."""
    if resolution is not None:
        if not resolution > 0:
            raise ValueError("resolution must be positive")
        cfg = _replace(cfg, eps_box=resolution)
    return _run_universal(c, cfg, certify_mode=True)


def _replace(cfg: FalsifierConfig, **kw) -> FalsifierConfig:
    from dataclasses import replace
    return replace(cfg, **kw)


def _run_universal(c: UniversalConstraint, cfg: FalsifierConfig, certify_mode: bool) -> FalsifyOutcome:
    out = _search_universal(c, cfg, certify_mode)
    if isinstance(out, Proved) and not certify_mode:
        # only certify mode claims a proof
        res = 0.0 if isinstance(c.domain, FiniteDomain) else cfg.eps_box
        return NoneFound(res, 0, False, out.boxes)
    return out


def _search_universal(c: UniversalConstraint, cfg: FalsifierConfig, certify_mode: bool) -> FalsifyOutcome:
    margin = c.margin
    if isinstance(c.domain, FiniteDomain):
        return _finite_universal(c, margin, cfg)
    if not c.domain:
        return Proved(0)
    if not certify_mode and cfg.samples > 0:
        hit = _sample_search(c, cfg)
        if hit is not None:
            return hit
    total, undecided, budget = 0, 0, False
    for branch in c.domain:
        out = _branch_and_bound(c, branch, margin, cfg, cfg.max_boxes - total, certify_mode)
        if isinstance(out, Counterexample):
            return out
        total += out[0]
        undecided += out[1]
        budget |= out[2]
        if budget:
            break
    if undecided or budget:
        return NoneFound(cfg.eps_box, undecided, budget, total)
    return Proved(total)


def _finite_universal(c: UniversalConstraint, margin: float, cfg: FalsifierConfig) -> FalsifyOutcome:
    pts = c.domain.points
    if not len(pts):
        return Proved(0)
    vals = c.body.compile(c.domain.names).values(pts)
    bad = _violated(vals, c.relation, cfg.tol)
    if bad.any():
        return _make_cex(c.domain.names, pts[bad], vals[bad], c.relation, cfg)
    ok = _point_ok(vals, c.relation, margin, cfg.tol)
    if not ok.all():
        return NoneFound(0.0, int((~ok).sum()), False, len(pts))
    return Proved(len(pts))


def _make_cex(names, pts: np.ndarray, vals: np.ndarray, rel: str, cfg: FalsifierConfig,
              advisory: bool = False) -> Counterexample:
    # most severe first
    sev = vals if rel in ("<=", "<") else -vals
    order = np.argsort(-sev, kind="stable")[: cfg.max_counterexamples]
    chosen = [tuple(float(v) for v in pts[i]) for i in order]
    return Counterexample(chosen[0], tuple(names), float(vals[order[0]]), tuple(chosen), advisory)


def _sample_search(c: UniversalConstraint, cfg: FalsifierConfig) -> Counterexample | None:
    rng = np.random.default_rng(cfg.seed)
    body = c.body.compile(c.names)
    found_pts, found_vals = [], []
    for branch in c.domain:
        lo, hi = branch.base.lo_array, branch.base.hi_array
        pts = _lhs(rng, lo, hi, cfg.samples)
        pts = np.vstack([pts, 0.5 * (lo + hi)[None]])
        inside = branch.contains_batch(pts)
        if not inside.any():
            continue
        pts = pts[inside]
        vals = body.values(pts)
        bad = _violated(vals, c.relation, cfg.tol)
        if bad.any():
            found_pts.append(pts[bad])
            found_vals.append(vals[bad])
    if not found_pts:
        return None
    return _make_cex(c.names, np.vstack(found_pts), np.concatenate(found_vals), c.relation, cfg)


def _branch_and_bound(c: UniversalConstraint, branch: SemiAlgebraicSet, margin: float,
                      cfg: FalsifierConfig, budget: int, certify_mode: bool):
    names = branch.names
    body = c.body.compile(names)
    cons = [(g.compile(names), rel) for g, rel in branch.constraints]
    lo0, hi0 = branch.base.lo_array, branch.base.hi_array
    heap: list = []
    counter = itertools.count()
    _push(heap, counter, lo0, hi0)
    processed, undecided = 0, 0
    cex_pts, cex_vals = [], []
    while heap:
        if processed >= budget:
            return processed, undecided + len(heap), True
        take = min(cfg.batch, len(heap), budget - processed)
        items = [heapq.heappop(heap) for _ in range(take)]
        lo = np.array([it[2] for it in items])
        hi = np.array([it[3] for it in items])
        processed += take
        alive = np.ones(take, dtype=bool)
        contained = np.ones(take, dtype=bool)
        for g, rel in cons:
            glo, ghi = g.enclose(lo, hi)
            alive &= ~_excluded(glo, ghi, rel)
            contained &= _inside(glo, ghi, rel)
        blo, bhi = body.enclose(lo, hi)
        done = _proved(blo, bhi, c.relation, margin, cfg.tol)
        open_ = alive & ~done
        if not open_.any():
            continue
        idx = np.where(open_)[0]
        mid = 0.5 * (lo[idx] + hi[idx])
        inside = branch.contains_batch(mid)
        vals = body.values(mid)
        bad = inside & _violated(vals, c.relation, cfg.tol)
        if bad.any():
            cex_pts.append(mid[bad])
            cex_vals.append(vals[bad])
            break
        width = hi[idx] - lo[idx]
        leaf = width.max(axis=1) <= cfg.eps_box
        undecided += int(leaf.sum())
        for k in np.where(~leaf)[0]:
            i = idx[k]
            j = int(np.argmax(width[k]))  # first index on ties
            m = 0.5 * (lo[i, j] + hi[i, j])
            a_hi = hi[i].copy()
            a_hi[j] = m
            b_lo = lo[i].copy()
            b_lo[j] = m
            _push(heap, counter, lo[i], a_hi)
            _push(heap, counter, b_lo, hi[i])
    if cex_pts:
        pts, vals = np.vstack(cex_pts), np.concatenate(cex_vals)
        out = _make_cex(names, pts, vals, c.relation, cfg)
        _assert_cex(c, out)
        return out
    return processed, undecided, False


def _push(heap, counter, lo, hi):
    heapq.heappush(heap, (-float(np.max(hi - lo)), next(counter), lo, hi))


def _assert_cex(c: UniversalConstraint, out: Counterexample) -> None:
    p = np.array(out.point)[None]
    assert c.in_domain(p)[0], "counterexample outside the domain"
    assert c.violated(c.body.compile(c.names).values(p), DEFAULT_TOL)[0], "counterexample does not violate"


# forall-exists constraints

def input_grid(box: Box, per_dim: int) -> np.ndarray:
    axes = [np.linspace(a, b, per_dim) if per_dim > 1 else np.array([0.5 * (a + b)])
            for a, b in zip(box.lo, box.hi)]
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, box.dim)


def falsify_forall_exists(c: ForallExistsConstraint, cfg: FalsifierConfig = FalsifierConfig()) -> FalsifyOutcome:
    """Outer points with no grid input achieving a decrease below ``-margin``.

    Finite models are checked exhaustively and can return ``Proved``.  For
    continuous models a clean search returns ``NoneFound`` ("grid-validated").
    """
    if isinstance(c.outer, FiniteDomain):
        return _finite_forall_exists(c, cfg)
    if not c.outer:
        return Proved(0, grid_validated=True)
    ev = _ExistsEvaluator(c, cfg)
    pre = ev.sample(cfg.samples)
    if pre is not None:
        return pre
    total, undecided, budget = 0, 0, False
    for branch in c.outer:
        out = ev.run(branch, cfg.max_boxes - total)
        if isinstance(out, Counterexample):
            return out
        total += out[0]
        undecided += out[1]
        budget |= out[2]
        if budget:
            break
    return NoneFound(cfg.eps_box, undecided, budget, total)


def _finite_forall_exists(c: ForallExistsConstraint, cfg: FalsifierConfig) -> FalsifyOutcome:
    pts = c.outer.points
    if not len(pts):
        return Proved(0)
    best = np.full(len(pts), np.inf)
    rows = np.arange(len(pts))
    for k in range(c.finite_inputs):
        vals = c.finite_eval(rows, k)
        best = np.minimum(best, vals)
    bad = best >= 0
    if bad.any():
        return _make_cex(c.outer.names, pts[bad], best[bad], "<", cfg)
    gap = best > -c.margin
    if gap.any():
        return NoneFound(0.0, int(gap.sum()), False, len(pts))
    return Proved(len(pts))


def _coarse_split(dim: int, per_dim: int) -> tuple[np.ndarray, np.ndarray]:
    # grid rows whose every coordinate sits on the 3-point sub-grid (ends and middle)
    if per_dim < 3 or per_dim % 2 == 0:
        return np.arange(per_dim ** dim), np.zeros(0, dtype=int)
    keep = np.array([0, per_dim // 2, per_dim - 1])
    idx = np.indices((per_dim,) * dim).reshape(dim, -1).T
    on = np.isin(idx, keep).all(axis=1)
    return np.where(on)[0], np.where(~on)[0]


class _ExistsEvaluator:
    def __init__(self, c: ForallExistsConstraint, cfg: FalsifierConfig):
        self.c = c
        self.cfg = cfg
        n = len(c.f)
        self.n = n
        self.m = c.inputs.dim // 2
        self.grid = input_grid(c.inputs, cfg.input_grid)
        self.coarse, self.fine = _coarse_split(c.inputs.dim, cfg.input_grid)
        xs = c.state_box.names
        self.x_names = xs  # (x, xh)
        us = c.inputs.names
        self.all_names = xs + us
        fx_names = xs[:n] + us[: self.m]
        fh_names = xs[n:] + us[self.m:]
        self.fx = [p.compile(fx_names) for p in c.f]
        self.fh = [p.compile(fh_names) for p in c.f_hat]
        self.s_lo = c.state_box.lo_array
        self.s_hi = c.state_box.hi_array
        self.edges = []
        for e in c.edges:
            guards = [[(g.compile(xs), rel) for g, rel in s.constraints] for s in e.guard]
            self.edges.append((e.target, guards, e.guard, e.body.compile(self.all_names)))
        self.fast = (c.classify is not None and c.current is not None
                     and all(e.next_value is not None for e in c.edges))
        if self.fast:
            self.current = c.current.compile(xs)
            self.next_values = [e.next_value.compile(xs) for e in c.edges]

    # exact evaluation at points with every grid input: slack (>0 means covered)
    def point_slack(self, pts: np.ndarray) -> np.ndarray:
        """Slack per grid input; inputs off the coarse sub-grid are only
        evaluated where the coarse inputs leave the point uncovered."""
        out = np.full((len(pts), len(self.grid)), -np.inf)
        if not len(pts):
            return out
        out[:, self.coarse] = self._slack(pts, self.coarse)
        need = np.where(out[:, self.coarse].max(axis=1) <= 0)[0]
        step = max(1, len(self.coarse) * 8)
        for start in range(0, len(self.fine), step):
            if not len(need):
                break
            cols = self.fine[start:start + step]
            out[np.ix_(need, cols)] = self._slack(pts[need], cols)
            need = need[out[need][:, cols].max(axis=1) <= 0]
        return out

    def _slack(self, pts: np.ndarray, cols: np.ndarray) -> np.ndarray:
        n, G = self.n, len(cols)
        grid = self.grid[cols]
        P = len(pts)
        X = np.repeat(pts, G, axis=0)
        Ug = np.tile(grid, (P, 1))
        full = np.hstack([X, Ug])
        nx = np.column_stack([f.values(np.hstack([X[:, :n], Ug[:, : self.m]])) for f in self.fx])
        nh = np.column_stack([f.values(np.hstack([X[:, n:], Ug[:, self.m:]])) for f in self.fh])
        succ = np.hstack([nx, nh])
        in_r = np.all((succ >= self.s_lo) & (succ <= self.s_hi), axis=1)
        slack = np.full(P * G, -np.inf)
        if self.fast:
            cur = np.repeat(self.current.values(pts), G)
            which = np.full(P * G, -1)
            if in_r.any():
                which[in_r] = self.c.classify(succ[in_r])
            for e, nv in enumerate(self.next_values):
                sel = which == e
                if sel.any():
                    slack[sel] = -(nv.values(succ[sel]) - cur[sel]) - self.c.margin
            return slack.reshape(P, G)
        for _, _, guard_sets, body in self.edges:
            member = in_r.copy()
            if not member.any():
                break
            inside = np.zeros(P * G, dtype=bool)
            for s in guard_sets:
                inside |= s.contains_batch(succ)
            member &= inside
            if member.any():
                v = body.values(full[member])
                slack[member] = np.maximum(slack[member], -v - self.c.margin)
        return slack.reshape(P, G)

    def sample(self, count: int) -> Counterexample | None:
        """Latin-hypercube pre-pass over the outer set."""
        rng = np.random.default_rng(self.cfg.seed)
        for branch in self.c.outer:
            pts = _lhs(rng, branch.base.lo_array, branch.base.hi_array, count)
            pts = pts[branch.contains_batch(pts)]
            for start in range(0, len(pts), self.cfg.batch):
                chunk = pts[start:start + self.cfg.batch]
                best = self.point_slack(chunk).max(axis=1)
                bad = best <= 0
                if bad.any():
                    return self._grow(branch, chunk[bad], best[bad], rng)
        return None

    def _grow(self, branch: SemiAlgebraicSet, pts: np.ndarray, best: np.ndarray,
              rng: np.random.Generator) -> Counterexample:
        """Add violating neighbours of the found points (each one checked exactly)."""
        want = self.cfg.max_counterexamples
        if len(pts) < want:
            lo, hi = branch.base.lo_array, branch.base.hi_array
            scale = 4 * self.cfg.eps_box * np.maximum(hi - lo, 1e-12) / np.max(hi - lo)
            near = np.repeat(pts, 16, axis=0) + rng.normal(size=(16 * len(pts), len(lo))) * scale
            near = np.clip(near, lo, hi)
            near = near[branch.contains_batch(near)]
            if len(near):
                nb = self.point_slack(near).max(axis=1)
                keep = nb <= 0
                pts = np.vstack([pts, near[keep]])
                best = np.concatenate([best, nb[keep]])
        # spread the returned points instead of clustering them at the worst one
        order = np.argsort(best, kind="stable")
        chosen = [order[0]]
        for i in order[1:]:
            if len(chosen) >= want:
                break
            if np.min(np.abs(pts[chosen] - pts[i]).max(axis=1)) > 0.5 * self.cfg.eps_box:
                chosen.append(i)
        chosen = np.array(chosen)
        return _make_cex(branch.names, pts[chosen], -best[chosen] - self.c.margin, "<", self.cfg, advisory=True)

    def covered(self, lo: np.ndarray, hi: np.ndarray, cand: np.ndarray) -> np.ndarray:
        """Interval coverage of box rows by the paired candidate input rows."""
        n, m = self.n, self.m
        ulo = self.grid[cand]
        flo_x = np.hstack([lo[:, :n], ulo[:, :m]])
        fhi_x = np.hstack([hi[:, :n], ulo[:, :m]])
        flo_h = np.hstack([lo[:, n:], ulo[:, m:]])
        fhi_h = np.hstack([hi[:, n:], ulo[:, m:]])
        s_lo, s_hi = [], []
        for f in self.fx:
            a, b = f.enclose(flo_x, fhi_x)
            s_lo.append(a)
            s_hi.append(b)
        for f in self.fh:
            a, b = f.enclose(flo_h, fhi_h)
            s_lo.append(a)
            s_hi.append(b)
        s_lo, s_hi = np.column_stack(s_lo), np.column_stack(s_hi)
        ok = np.all((s_lo >= self.s_lo) & (s_hi <= self.s_hi), axis=1)
        s_lo = np.maximum(s_lo, self.s_lo)
        s_hi = np.minimum(s_hi, self.s_hi)
        blo = np.hstack([lo, ulo])
        bhi = np.hstack([hi, ulo])
        for _, guards, _, body in self.edges:
            excluded = np.ones(len(lo), dtype=bool)
            for cons in guards:
                piece_out = np.zeros(len(lo), dtype=bool)
                for g, rel in cons:
                    glo, ghi = g.enclose(s_lo, s_hi)
                    piece_out |= _excluded(glo, ghi, rel)
                excluded &= piece_out
            if excluded.all():
                continue
            _, bh = body.enclose(blo, bhi)
            ok &= excluded | (bh <= -self.c.margin)
        return ok

    def run(self, branch: SemiAlgebraicSet, budget: int):
        cfg = self.cfg
        cons = [(g.compile(branch.names), rel) for g, rel in branch.constraints]
        heap: list = []
        counter = itertools.count()
        heapq.heappush(heap, (-float(np.max(branch.base.hi_array - branch.base.lo_array)), next(counter),
                              branch.base.lo_array, branch.base.hi_array, -1))
        processed, undecided = 0, 0
        while heap:
            if processed >= budget:
                return processed, undecided + len(heap), True
            take = min(cfg.batch, len(heap), budget - processed)
            items = [heapq.heappop(heap) for _ in range(take)]
            processed += take
            lo = np.array([it[2] for it in items])
            hi = np.array([it[3] for it in items])
            parent = np.array([it[4] for it in items])
            alive = np.ones(take, dtype=bool)
            for g, rel in cons:
                glo, ghi = g.enclose(lo, hi)
                alive &= ~_excluded(glo, ghi, rel)
            idx = np.where(alive)[0]
            if not len(idx):
                continue
            lo, hi, parent = lo[idx], hi[idx], parent[idx]
            mid = 0.5 * (lo + hi)
            slack = self.point_slack(mid)
            k = min(cfg.candidates, slack.shape[1])
            top = np.argsort(-slack, axis=1, kind="stable")[:, :k]
            cands = np.column_stack([np.where(parent >= 0, parent, top[:, 0]), top])
            cov = np.zeros(len(idx), dtype=bool)
            cover_input = np.full(len(idx), -1)
            for col in range(cands.shape[1]):
                todo = ~cov
                if not todo.any():
                    break
                sub = np.where(todo)[0]
                hit = self.covered(lo[sub], hi[sub], cands[sub, col])
                cov[sub[hit]] = True
                cover_input[sub[hit]] = cands[sub[hit], col]
            open_ = np.where(~cov)[0]
            if not len(open_):
                continue
            mid_open = mid[open_]
            inside = branch.contains_batch(mid_open)
            best = slack[open_].max(axis=1)
            # a centre where no grid input reaches a decrease below -margin
            bad = inside & (best <= 0)
            if bad.any():
                return self._grow(branch, mid_open[bad], best[bad], np.random.default_rng(cfg.seed))
            width = hi[open_] - lo[open_]
            leaf = width.max(axis=1) <= cfg.eps_box
            undecided += int(leaf.sum())
            for kk in np.where(~leaf)[0]:
                i = open_[kk]
                j = int(np.argmax(width[kk]))
                m = 0.5 * (lo[i, j] + hi[i, j])
                a_hi = hi[i].copy()
                a_hi[j] = m
                b_lo = lo[i].copy()
                b_lo[j] = m
                pinp = int(top[i, 0]) if slack[i, top[i, 0]] > 0 else -1
                heapq.heappush(heap, (-float(np.max(a_hi - lo[i])), next(counter), lo[i], a_hi, pinp))
                heapq.heappush(heap, (-float(np.max(hi[i] - b_lo)), next(counter), b_lo, hi[i], pinp))
        return processed, undecided, False
