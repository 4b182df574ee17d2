"""Counterexample-guided synthesis of barrier (B) and ranking (V) certificates.

Each round fits template coefficients by a margin-maximising LP over the
sampled points, then searches for counterexamples; these are added to the
sample bank and the round repeats.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .automaton import ACCEPT, TRAP, DeltaKDfa, LabelPartition
from .certificate import (Certificate, CheckReport, Condition, Template, VDomainInfo, b_conditions,
                          check_certificate, compute_pre_complement, decrease_constraint, initial_witness,
                          v_conditions)
from .falsifier import (Counterexample, FalsifierConfig, NoneFound, Proved, falsify, falsify_forall_exists,
                        input_grid)
from .lp import max_margin
from .model import ContinuousModel, FiniteModel, SystemModel, input_names, state_names
from .sets import Box, FiniteDomain

log_ = logging.getLogger(__name__)


@dataclass(frozen=True)
class CegisConfig:
    degree: int = 2
    n_samples: int | None = None  # D_x, default 50 per pair dimension
    p_samples: int | None = None  # D_u, default 20 per input-pair dimension
    j_samples: int | None = None  # D'_x, default 50 per pair dimension
    eps: float = 1e-3
    eps_dec: float = 1e-3
    c_max: float = 1e3
    i_max: int = 50
    input_grid: int = 5
    falsifier: FalsifierConfig = FalsifierConfig()
    seed: int = 0
    max_active: int = 1500
    semantics: str = "sound"
    exclude_accepting_decrease: bool = False
    pre_resolution: float = 0.25
    beam_width: int = 64
    beam_depth: int = 60
    max_alternations: int = 40
    time_limit: float | None = None

    def __post_init__(self):
        if not (self.eps > 0 and self.eps_dec > 0):
            raise ValueError("eps and eps_dec must be positive")
        if not self.c_max > 0:
            raise ValueError("c_max must be positive")
        if self.i_max < 1:
            raise ValueError("i_max must be at least 1")
        if self.degree < 0:
            raise ValueError("degree must be non-negative")


# outcomes

@dataclass(frozen=True)
class IterationLog:
    iteration: int
    bank: dict
    margin: float
    counterexamples: tuple[tuple[str, tuple[float, ...]], ...]
    seconds: float

    def to_json(self) -> dict:
        return {"iteration": self.iteration, "bank": self.bank, "margin": self.margin,
                "counterexamples": [{"condition": n, "point": list(p)} for n, p in self.counterexamples],
                "seconds": round(self.seconds, 3)}


@dataclass(frozen=True)
class Certified:
    certificate: Certificate
    at_resolution: bool
    log: tuple[IterationLog, ...]
    report: CheckReport | None = None

    status = "certified"


@dataclass(frozen=True)
class TemplateInfeasible:
    log: tuple[IterationLog, ...]
    reason: str = ""

    status = "template_infeasible"


@dataclass(frozen=True)
class Budget:
    log: tuple[IterationLog, ...]
    reason: str = ""

    status = "budget"


SynthesisOutcome = Certified | TemplateInfeasible | Budget


# samples

def _lhs(rng: np.random.Generator, lo, hi, n: int) -> np.ndarray:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    d = len(lo)
    if n <= 0:
        return np.zeros((0, d))
    u = (rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T + rng.random((n, d))) / n
    return lo + u * (hi - lo)


def _unique_rows(a: np.ndarray) -> np.ndarray:
    if not len(a):
        return a
    _, idx = np.unique(np.round(a, 12), axis=0, return_index=True)
    return a[np.sort(idx)]


@dataclass
class SampleBank:
    """``pairs`` (D_x), ``inputs`` (D_u), ``vpairs`` (D'_x) plus the initial,
    joint step and pre-complement samples generated along the way."""

    pairs: np.ndarray
    inputs: np.ndarray
    init_pairs: np.ndarray
    joint: np.ndarray
    vpairs: np.ndarray
    pre: np.ndarray

    def size(self) -> int:
        return sum(len(a) for a in (self.pairs, self.inputs, self.init_pairs, self.joint, self.vpairs, self.pre))

    def sizes(self) -> dict:
        return {"D_x": len(self.pairs) + len(self.init_pairs), "D_u": len(self.inputs),
                "joint": len(self.joint), "D'_x": len(self.vpairs), "pre": len(self.pre)}

    def add(self, field_name: str, pts: np.ndarray) -> int:
        cur = getattr(self, field_name)
        pts = np.atleast_2d(np.asarray(pts, float)).reshape(-1, cur.shape[1])
        merged = _unique_rows(np.vstack([cur, pts]))
        setattr(self, field_name, merged)
        return len(merged) - len(cur)


def _dims(model: SystemModel) -> tuple[int, int]:
    return 2 * model.n, 2 * model.m


def initial_bank(model: SystemModel, cfg: CegisConfig, rng: np.random.Generator) -> SampleBank:
    d, du = _dims(model)
    N = cfg.n_samples if cfg.n_samples is not None else 50 * d
    P = cfg.p_samples if cfg.p_samples is not None else 20 * du
    J = cfg.j_samples if cfg.j_samples is not None else 50 * d
    if isinstance(model, FiniteModel):
        P_ = model.points
        allpairs = np.array([np.concatenate([P_[i], P_[j]]) for i in range(len(P_)) for j in range(len(P_))])
        Uu = np.array(model.inputs)
        allin = np.array([np.concatenate([Uu[a], Uu[b]]) for a in range(len(Uu)) for b in range(len(Uu))])
        init = np.array([np.concatenate([P_[i], P_[j]]) for i in model.initial for j in model.initial])
        pick = lambda a, k: a[np.sort(rng.choice(len(a), size=min(k, len(a)), replace=False))]
        return SampleBank(pick(allpairs, N), pick(allin, P), init, np.zeros((0, 2 * d)), pick(allpairs, J),
                          np.zeros((0, d)))
    X, X0, U = model.X, model.X0, model.U
    pairs = _lhs(rng, X.lo + X.lo, X.hi + X.hi, N)
    init = np.vstack([0.5 * (np.array(X0.lo + X0.lo) + np.array(X0.hi + X0.hi))[None],
                      np.array(list(itertools.product(*zip(X0.lo + X0.lo, X0.hi + X0.hi)))),
                      _lhs(rng, X0.lo + X0.lo, X0.hi + X0.hi, max(N // 4, 1))])
    inputs = np.vstack([np.array(list(itertools.product(*zip(U.lo + U.lo, U.hi + U.hi)))),
                        _lhs(rng, U.lo + U.lo, U.hi + U.hi, P)])
    vpairs = _lhs(rng, X.lo + X.lo, X.hi + X.hi, J)
    return SampleBank(pairs, inputs, init, np.zeros((0, d + du)), vpairs, np.zeros((0, d)))


# linear fitting

@dataclass(frozen=True)
class Fit:
    feasible: bool
    coefficients: np.ndarray | None
    margin: float
    rows: int


@dataclass(frozen=True)
class Infeasible:
    margin: float
    rows: int
    reason: str = ""


def solve_rows(A: np.ndarray, b: np.ndarray, c_max: float, max_active: int = 1500,
               rng: np.random.Generator | None = None) -> Fit:
    """Margin-maximising fit of ``A c <= b`` with lazily added rows."""
    A = np.atleast_2d(np.asarray(A, float))
    b = np.asarray(b, float)
    k = A.shape[1]
    if not len(b):
        res = max_margin(np.zeros((0, k)), np.zeros(0), c_max)
        return Fit(True, res.coefficients, res.margin, 0)
    norm = np.abs(A).max(axis=1)
    zero = norm <= 1e-13
    if (b[zero] < 0).any():
        return Fit(False, None, -np.inf, len(b))
    A, b, norm = A[~zero], b[~zero], norm[~zero]
    if not len(b):
        res = max_margin(np.zeros((0, k)), np.zeros(0), c_max)
        return Fit(True, res.coefficients, res.margin, 0)
    rng = rng or np.random.default_rng(0)
    if len(b) <= max_active:
        active = np.arange(len(b))
    else:
        # strict rows first, then a random subset
        strict = np.where(b < 0)[0]
        rest = np.setdiff1d(np.arange(len(b)), strict)
        take = max(max_active - len(strict), max_active // 2)
        active = np.union1d(strict[:max_active], rng.choice(rest, size=min(take, len(rest)), replace=False))
    chunk = max(200, max_active // 3)
    for _ in range(200):
        res = max_margin(A[active], b[active], c_max)
        if res.coefficients is None:
            return Fit(False, None, -np.inf, len(active))
        c = res.coefficients
        slack = (b - A @ c) / norm
        t = res.margin
        thresh = 0.5 * t if t > 0 else t - 1e-9
        out = np.setdiff1d(np.where(slack < thresh)[0], active)
        if not len(out):
            m = float(slack.min())
            return Fit(m >= -1e-9, c, m, len(active))
        worst = out[np.argsort(slack[out])[:chunk]]
        active = np.union1d(active, worst)
    m = float(((b - A @ c) / norm).min())
    return Fit(m >= -1e-9, c, m, len(active))


# barrier synthesis

class _BRows:
    """Sample points per condition and their linear rows."""

    def __init__(self, model, dfa, part, conds, template, cfg):
        self.model, self.dfa, self.part = model, dfa, part
        self.conds, self.template, self.cfg = conds, template, cfg
        self._product = None

    def points(self, cond: Condition, bank: SampleBank) -> np.ndarray:
        model = self.model
        d, du = _dims(model)
        if isinstance(model, FiniteModel):
            dom = cond.domain.points
            if not len(dom):
                return dom
            if cond.tag == "init":
                keys = _keyset(np.vstack([bank.init_pairs, bank.pairs]))
                return dom[[_key(p[:d]) in keys for p in dom]]
            if cond.tag == "accept":
                keys = _keyset(bank.pairs)
                return dom[[_key(p[:d]) in keys for p in dom]]
            pk, ik = _keyset(bank.pairs), _keyset(bank.inputs)
            jk = _keyset(bank.joint) if len(bank.joint) else set()
            sel = [(_key(p[:d]) in pk and _key(p[d:d + du]) in ik) or _key(p[:d + du]) in jk for p in dom]
            return dom[sel]
        if cond.tag == "init":
            return bank.init_pairs[_member(cond, bank.init_pairs)]
        if cond.tag == "accept":
            return bank.pairs
        prod = self.product(bank)
        cand = prod if not len(bank.joint) else np.vstack([prod, bank.joint])
        return cand[self._step_member(cond, cand)]

    def product(self, bank: SampleBank) -> np.ndarray:
        key = (len(bank.pairs), len(bank.inputs))
        if self._product is None or self._product[0] != key:
            P, I = bank.pairs, bank.inputs
            prod = np.hstack([np.repeat(P, len(I), axis=0), np.tile(I, (len(P), 1))])
            self._product = (key, prod, {})
        return self._product[1]

    def _step_member(self, cond: Condition, pts: np.ndarray) -> np.ndarray:
        model, n, m = self.model, self.model.n, self.model.m
        xn = model.successor_batch(pts[:, :n], pts[:, 2 * n:2 * n + m])
        xhn = model.successor_batch(pts[:, n:2 * n], pts[:, 2 * n + m:])
        inr = model.in_states_batch(xn, 0.0) & model.in_states_batch(xhn, 0.0)
        ok = np.zeros(len(pts), dtype=bool)
        if inr.any():
            lab = self.part.labels(xn[inr], xhn[inr])
            tgt = np.array([self.dfa.step(cond.q, s) for s in lab])
            ok[np.where(inr)[0]] = tgt == cond.q_next
        return ok

    def system(self, bank: SampleBank):
        blocks, rhs, index = [], [], []
        for ci, cond in enumerate(self.conds):
            pts = self.points(cond, bank)
            if not len(pts):
                continue
            A = cond.rows(self.template, self.model, pts)
            if cond.relation == "<=":
                b = np.zeros(len(pts))
            else:
                A, b = -A, np.full(len(pts), -self.cfg.eps)
            blocks.append(A)
            rhs.append(b)
            index.append((ci, pts))
        if not blocks:
            return np.zeros((0, self.template.n_coeffs)), np.zeros(0), index
        return np.vstack(blocks), np.concatenate(rhs), index


def _key(p) -> tuple:
    return tuple(np.round(np.asarray(p, float), 9))


def _keyset(a: np.ndarray) -> set:
    return {_key(r) for r in a}


def _member(cond: Condition, pts: np.ndarray) -> np.ndarray:
    ok = np.zeros(len(pts), dtype=bool)
    for s in cond.domain:
        ok |= s.contains_batch(pts)
    return ok


def default_template(model: SystemModel, dfa: DeltaKDfa, degree: int) -> Template:
    n = model.n
    if isinstance(model, FiniteModel):
        lo, hi = model.points.min(axis=0), model.points.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        box = Box(state_names(n) + state_names(n, True), tuple(lo) * 2, tuple(hi) * 2)
    else:
        box = Box(state_names(n) + state_names(n, True), model.X.lo * 2, model.X.hi * 2)
    return Template.full(n, degree, len(dfa.states), box)


def fit_b_coefficients(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition, template: Template,
                       bank: SampleBank, cfg: CegisConfig = CegisConfig(),
                       conditions: Sequence[Condition] | None = None) -> Certificate | Infeasible:
    """Certificate fitting every sampled condition row, or ``Infeasible``."""
    return _fit_b(model, dfa, part, template, bank, cfg, conditions)[0]


def _fit_b(model, dfa, part, template, bank, cfg, conditions=None):
    conds = list(conditions) if conditions is not None else b_conditions(
        model, dfa, part, cfg.exclude_accepting_decrease)
    rows = _BRows(model, dfa, part, conds, template, cfg)
    A, b, index = rows.system(bank)
    fit = solve_rows(A, b, cfg.c_max, cfg.max_active, np.random.default_rng(cfg.seed))
    if not fit.feasible:
        return Infeasible(fit.margin, fit.rows, "no coefficients satisfy the sampled conditions"), fit.margin
    cert = template.instantiate("B", dfa, fit.coefficients, model.n)
    _assert_rows(cert, model, conds, index, cfg.eps)
    return cert, fit.margin


def _assert_rows(cert: Certificate, model, conds, index, eps: float) -> None:
    # post-fit check by exact evaluation of the expanded polynomials
    for ci, pts in index:
        c = conds[ci]
        v = c.values(cert, model, pts)
        scale = 1e-7 * (1 + np.abs(v).max(initial=0.0))
        if c.relation == "<=":
            assert (v <= scale).all(), f"fitted certificate violates sampled {c.name}"
        else:
            assert (v >= eps - scale).all(), f"fitted certificate violates sampled {c.name}"


def _finite_failures(cond: Condition, cert: Certificate, model, margin: float, tol: float) -> np.ndarray:
    pts = cond.domain.points
    if not len(pts):
        return pts
    v = cond.values(cert, model, pts)
    if cond.relation == "<=":
        bad = v > tol
    else:
        bad = v < margin
    order = np.argsort(-np.where(cond.relation == "<=", v, -v)[bad], kind="stable")
    return pts[bad][order]


def _timed_out(cfg: CegisConfig, start: float) -> bool:
    return cfg.time_limit is not None and time.perf_counter() - start > cfg.time_limit


def synthesize_b(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition, template: Template | None = None,
                 cfg: CegisConfig = CegisConfig()) -> SynthesisOutcome:
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    template = template or default_template(model, dfa, cfg.degree)
    conds = b_conditions(model, dfa, part, cfg.exclude_accepting_decrease)
    bank = initial_bank(model, cfg, rng)
    log: list[IterationLog] = []
    finite = isinstance(model, FiniteModel)
    d, du = _dims(model)
    fcfg = cfg.falsifier
    for it in range(cfg.i_max):
        t0 = time.perf_counter()
        fitted, margin = _fit_b(model, dfa, part, template, bank, cfg, conds)
        if isinstance(fitted, Infeasible):
            log.append(IterationLog(it, bank.sizes(), fitted.margin, (), time.perf_counter() - t0))
            return TemplateInfeasible(tuple(log), fitted.reason)
        cert = fitted
        cexs: list[tuple[str, tuple]] = []
        grew = 0
        for c in conds:
            if finite:
                bad = _finite_failures(c, cert, model, fcfg.margin, fcfg.tol)[: fcfg.max_counterexamples]
                pts = [tuple(p) for p in bad]
            else:
                out = falsify(c.constraint(cert, model, fcfg.margin), replace(fcfg, seed=fcfg.seed + it))
                pts = list(out.points) if isinstance(out, Counterexample) else []
            for p in pts:
                cexs.append((c.name, p))
                p = np.array(p)
                if c.tag == "init":
                    grew += bank.add("init_pairs", p[:d])
                elif c.tag == "accept":
                    grew += bank.add("pairs", p[:d])
                elif finite:
                    grew += bank.add("pairs", p[:d]) + bank.add("inputs", p[d:d + du])
                else:
                    grew += bank.add("joint", p[:d + du])
        log.append(IterationLog(it, bank.sizes(), margin, tuple(cexs), time.perf_counter() - t0))
        log_.info("B iteration %d: margin %.3g, %d counterexamples, bank %s", it, margin, len(cexs), bank.sizes())
        if not cexs:
            report = check_certificate(model, dfa, part, cert, "certify" if finite else "falsify", fcfg,
                                       exclude_accepting_decrease=cfg.exclude_accepting_decrease)
            return Certified(cert, not finite, tuple(log), report)
        if not grew:
            return Budget(tuple(log), "counterexamples already in the bank")
        if _timed_out(cfg, start):
            return Budget(tuple(log), "time limit")
    return Budget(tuple(log), "iteration limit")


# ranking synthesis

def seed_run(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition, grid: np.ndarray,
             width: int = 64, depth: int = 60, seed: int = 0):
    """Beam search for a run pair reaching the accepting location.

    Returns ``[(pair, q, input_index)]`` ending at the accepting location (the
    last input index is -1), or ``None``.
    """
    n, m = model.n, model.m
    idx = dfa.delta_index
    if isinstance(model, FiniteModel):
        P = model.points
        starts = np.array([np.concatenate([P[i], P[j]]) for i in model.initial for j in model.initial])
        fault_pts = P[model.fault_mask]
    else:
        rng = np.random.default_rng(seed)
        lo, hi = np.array(model.X0.lo * 2), np.array(model.X0.hi * 2)
        starts = np.vstack([0.5 * (lo + hi)[None], np.array(list(itertools.product(*zip(lo, hi)))),
                            _lhs(rng, lo, hi, 4 * width)])
        fault_pts = None
    labs = part.labels(starts[:, :n], starts[:, n:])
    qs = [dfa.step(dfa.initial, s) for s in labs]
    beam = [(starts[i], qs[i], None) for i in range(len(starts)) if qs[i] != TRAP]
    if not beam:
        return None
    acc = [b for b in beam if b[1] == ACCEPT]
    if acc:
        return [(tuple(acc[0][0]), ACCEPT, -1)]

    def fault_dist(xs: np.ndarray) -> np.ndarray:
        if fault_pts is not None:
            if not len(fault_pts):
                return np.full(len(xs), np.inf)
            return np.sqrt(((xs[:, None, :] - fault_pts[None]) ** 2).sum(axis=2)).min(axis=1)
        XF = model.XF
        below = np.maximum(np.array(XF.lo) - xs, 0)
        above = np.maximum(xs - np.array(XF.hi), 0)
        return np.sqrt((below ** 2 + above ** 2).sum(axis=1))

    G = len(grid)
    for _ in range(depth):
        pairs = np.array([b[0] for b in beam])
        B = len(beam)
        cur = np.repeat(pairs, G, axis=0)
        inp = np.tile(grid, (B, 1))
        parent = np.repeat(np.arange(B), G)
        kk = np.tile(np.arange(G), B)
        if isinstance(model, FiniteModel):
            xi = np.array([model.index_of(p[:n]) for p in pairs])
            xj = np.array([model.index_of(p[n:]) for p in pairs])
            ai = np.array([model.input_index(u[:m]) for u in grid])
            bi = np.array([model.input_index(u[m:]) for u in grid])
            xn = model.points[model.table[np.repeat(xi, G), np.tile(ai, B)]]
            xhn = model.points[model.table[np.repeat(xj, G), np.tile(bi, B)]]
            inr = np.ones(len(cur), dtype=bool)
        else:
            xn = model.successor_batch(cur[:, :n], inp[:, :m])
            xhn = model.successor_batch(cur[:, n:], inp[:, m:])
            inr = model.in_states_batch(xn, 0.0) & model.in_states_batch(xhn, 0.0)
        if not inr.any():
            return None
        sel = np.where(inr)[0]
        xn, xhn, parent, kk = xn[sel], xhn[sel], parent[sel], kk[sel]
        lab = part.labels(xn, xhn)
        qn = np.array([idx[dfa.step(beam[p][1], s)] for p, s in zip(parent, lab)])
        hit = np.where(qn == idx[ACCEPT])[0]
        if len(hit):
            h = hit[0]
            return _unwind(beam, parent[h], int(kk[h])) + [(tuple(np.concatenate([xn[h], xhn[h]])), ACCEPT, -1)]
        keep = qn != idx[TRAP]
        if not keep.any():
            return None
        xn, xhn, parent, kk, qn = xn[keep], xhn[keep], parent[keep], kk[keep], qn[keep]
        yd = np.sqrt(((model.output_batch(xn) - model.output_batch(xhn)) ** 2).sum(axis=1))
        at_start = qn == idx[dfa.initial]
        score = np.where(at_start, -fault_dist(xn) + 0.1 * np.minimum(fault_dist(xhn), 1.0),
                         100.0 * qn - yd / part.delta)
        order = np.argsort(-score, kind="stable")
        seen, nbeam = set(), []
        for o in order:
            key = (qn[o],) + tuple(np.round(np.concatenate([xn[o], xhn[o]]), 6))
            if key in seen:
                continue
            seen.add(key)
            nbeam.append((np.concatenate([xn[o], xhn[o]]), dfa.states[qn[o]], (beam[parent[o]], int(kk[o]))))
            if len(nbeam) >= width:
                break
        beam = nbeam
    return None


def _unwind(beam, p: int, k: int):
    node = beam[p]
    out = [(tuple(node[0]), node[1], k)]
    while node[2] is not None:
        prev, kk = node[2]
        out.append((tuple(prev[0]), prev[1], kk))
        node = prev
    out.reverse()
    return out


class _VRows:
    """Disjunctive decrease rows for sampled pairs over a finite input set."""

    def __init__(self, model, dfa, part, template: Template, cfg: CegisConfig):
        self.model, self.dfa, self.part, self.template, self.cfg = model, dfa, part, template, cfg
        idx = dfa.delta_index
        self.sources = [q for q in dfa.states if q != ACCEPT]
        if isinstance(model, FiniteModel):
            U = np.array(model.inputs)
            self.grid = np.array([np.concatenate([U[a], U[b]]) for a in range(len(U)) for b in range(len(U))])
        else:
            m = model.m
            U2 = Box(input_names(m) + input_names(m, True), model.U.lo * 2, model.U.hi * 2)
            self.grid = input_grid(U2, cfg.input_grid)
        self.step = np.array([[idx[dfa.step(q, s)] for s in (1, 2, 3)] for q in dfa.states])
        self.pairs = np.zeros((0, 2 * model.n))
        self.cache = None

    def successors(self, pairs: np.ndarray):
        model, n, m = self.model, self.model.n, self.model.m
        G = len(self.grid)
        cur = np.repeat(pairs, G, axis=0)
        inp = np.tile(self.grid, (len(pairs), 1))
        if isinstance(model, FiniteModel):
            xi = np.array([model.index_of(p[:n]) for p in cur])
            xj = np.array([model.index_of(p[n:]) for p in cur])
            ai = np.array([model.input_index(u[:m]) for u in inp])
            bi = np.array([model.input_index(u[m:]) for u in inp])
            xn, xhn = model.points[model.table[xi, ai]], model.points[model.table[xj, bi]]
            inr = np.ones(len(cur), dtype=bool)
        else:
            xn = model.successor_batch(cur[:, :n], inp[:, :m])
            xhn = model.successor_batch(cur[:, n:], inp[:, m:])
            inr = model.in_states_batch(xn, 0.0) & model.in_states_batch(xhn, 0.0)
        succ = np.hstack([xn, xhn])
        lab = np.ones(len(cur), dtype=int)
        if inr.any():
            lab[inr] = self.part.labels(xn[inr], xhn[inr])
        return succ.reshape(len(pairs), G, -1), inr.reshape(len(pairs), G), lab.reshape(len(pairs), G)

    def update(self, pairs: np.ndarray):
        if self.cache is not None and len(pairs) == len(self.pairs) and np.array_equal(pairs, self.pairs):
            return
        t = self.template
        succ, inr, lab = self.successors(pairs)
        S, G = inr.shape
        cur_feat = [t.features(r, pairs) for r in range(len(t.monomials))]
        flat = succ.reshape(S * G, -1)
        succ_feat = [t.features(r, flat).reshape(S, G, -1) for r in range(len(t.monomials))]
        self.pairs = pairs
        self.cache = (succ, inr, lab, cur_feat, succ_feat)

    def targets(self, q: str) -> np.ndarray:
        _, _, lab, _, _ = self.cache
        return self.step[self.dfa.delta_index[q]][lab - 1]

    def slacks(self, coeffs: np.ndarray, semantics: str):
        """Per (sample, source): slack of 'outside sublevel' and of each input choice."""
        succ, inr, lab, cur_feat, succ_feat = self.cache
        off = self.template.offsets
        idx = self.dfa.delta_index
        S, G = inr.shape
        vals_next = np.stack([succ_feat[r] @ coeffs[off[r]:off[r + 1]] for r in range(len(off) - 1)])
        out_pos, out_dec = [], []
        for q in self.sources:
            r = idx[q]
            vq = cur_feat[r] @ coeffs[off[r]:off[r + 1]]
            tgt = self.targets(q)
            vn = np.take_along_axis(vals_next.transpose(1, 2, 0), tgt[..., None], axis=2)[..., 0]
            dec = -(vn - vq[:, None]) - self.cfg.eps_dec
            dec[~inr] = -np.inf
            pos = vq - self.cfg.eps if semantics == "sound" else np.full(S, -np.inf)
            out_pos.append(pos)
            out_dec.append(dec)
        return np.stack(out_pos, axis=1), np.stack(out_dec, axis=1)  # (S, Q), (S, Q, G)

    def rows(self, assign: np.ndarray):
        """Rows for the chosen disjunct per (sample, source); -1 = outside sublevel."""
        succ, inr, lab, cur_feat, succ_feat = self.cache
        t = self.template
        off = t.offsets
        idx = self.dfa.delta_index
        A_all, b_all = [], []
        for qi, q in enumerate(self.sources):
            r = idx[q]
            ch = assign[:, qi]
            pos = np.where(ch < 0)[0]
            if len(pos):
                A = np.zeros((len(pos), t.n_coeffs))
                A[:, off[r]:off[r + 1]] = -cur_feat[r][pos]
                A_all.append(A)
                b_all.append(np.full(len(pos), -self.cfg.eps))
            dec = np.where(ch >= 0)[0]
            if len(dec):
                k = ch[dec]
                tgt = self.targets(q)[dec, k]
                A = np.zeros((len(dec), t.n_coeffs))
                A[:, off[r]:off[r + 1]] -= cur_feat[r][dec]
                for r2 in np.unique(tgt):
                    sel = tgt == r2
                    A[sel, off[r2]:off[r2 + 1]] += succ_feat[r2][dec[sel], k[sel]]
                A_all.append(A)
                b_all.append(np.full(len(dec), -self.cfg.eps_dec))
        if not A_all:
            return np.zeros((0, t.n_coeffs)), np.zeros(0)
        return np.vstack(A_all), np.concatenate(b_all)


def fit_v_coefficients(vr: _VRows, assign: np.ndarray, fixed_A: np.ndarray, fixed_b: np.ndarray,
                       cfg: CegisConfig, rng) -> Fit:
    A, b = vr.rows(assign)
    A = np.vstack([fixed_A, A]) if len(fixed_b) else A
    b = np.concatenate([fixed_b, b]) if len(fixed_b) else b
    return solve_rows(A, b, cfg.c_max, cfg.max_active, rng)


def synthesize_v(model: SystemModel, dfa: DeltaKDfa, part: LabelPartition, template: Template | None = None,
                 vdom: VDomainInfo | None = None, cfg: CegisConfig = CegisConfig()) -> SynthesisOutcome:
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    template = template or default_template(model, dfa, cfg.degree)
    finite = isinstance(model, FiniteModel)
    if vdom is None:
        vdom = compute_pre_complement(model, cfg.pre_resolution)
    vc = v_conditions(model, dfa, part, vdom, cfg.semantics)
    bank = initial_bank(model, cfg, rng)
    vr = _VRows(model, dfa, part, template, cfg)
    idx = dfa.delta_index
    d = 2 * model.n
    fcfg = cfg.falsifier
    log: list[IterationLog] = []

    # witness run seeds the sublevel set
    path = seed_run(model, dfa, part, vr.grid, cfg.beam_width, cfg.beam_depth, cfg.seed) \
        if cfg.semantics == "sound" else None
    if cfg.semantics == "sound" and path is None:
        return TemplateInfeasible((), "no run reaching the accepting location was found to seed the search")
    if path:
        bank.add("vpairs", np.array([p for p, _, _ in path[:-1]]) if len(path) > 1 else np.zeros((0, d)))
        anchor = np.array(path[0][0])[None]
    else:
        anchor = np.zeros((0, d))
    if not finite and len(vdom.pre_complement):
        bank.pre = _sample_pieces(vdom.pre_complement, max(20 * d, 1), rng)
    prev_assign: dict[tuple, int] = {}
    if path:
        for p, q, k in path[:-1]:
            prev_assign[(_key(p), q)] = k

    for it in range(cfg.i_max):
        t0 = time.perf_counter()
        pairs = bank.vpairs
        vr.update(pairs)
        fixed_A, fixed_b = _v_fixed_rows(model, dfa, part, template, vc, bank, anchor, cfg)
        Q = len(vr.sources)
        assign = np.full((len(pairs), Q), -1 if cfg.semantics == "sound" else 0)
        for si, p in enumerate(pairs):
            kp = _key(p)
            for qi, q in enumerate(vr.sources):
                if (kp, q) in prev_assign:
                    assign[si, qi] = prev_assign[(kp, q)]
        fit = None
        seen = set()
        for _ in range(cfg.max_alternations):
            fit = fit_v_coefficients(vr, assign, fixed_A, fixed_b, cfg, rng)
            if fit.coefficients is None:
                break
            pos, dec = vr.slacks(fit.coefficients, cfg.semantics)
            best_dec = dec.max(axis=2)
            choice = np.where(pos >= best_dec, -1, dec.argmax(axis=2))
            # keep the current disjunct unless another is strictly better
            cur_sl = np.where(assign < 0, pos, np.take_along_axis(dec, np.maximum(assign, 0)[..., None], 2)[..., 0])
            new_sl = np.maximum(pos, best_dec)
            new_assign = np.where(new_sl > cur_sl + 1e-12, choice, assign)
            if np.array_equal(new_assign, assign):
                break
            h = new_assign.tobytes()
            if h in seen:
                break
            seen.add(h)
            assign = new_assign
        log_.debug("V alternation done: %d rows, margin %s", len(pairs), fit and fit.margin)
        if fit is None or not fit.feasible:
            log.append(IterationLog(it, bank.sizes(), fit.margin if fit else -np.inf, (), time.perf_counter() - t0))
            return TemplateInfeasible(tuple(log), "no disjunct assignment admits a fit")
        for si, p in enumerate(pairs):
            kp = _key(p)
            for qi, q in enumerate(vr.sources):
                prev_assign[(kp, q)] = int(assign[si, qi])
        cert = template.instantiate("V", dfa, fit.coefficients, model.n)
        cexs = _v_counterexamples(model, dfa, part, cert, vc, vdom, cfg, it)
        grew = 0
        for name, p in cexs:
            if name.startswith("pre"):
                grew += bank.add("pre", np.array(p)[:d])
            elif name.startswith("init"):
                grew += bank.add("init_pairs", np.array(p)[:d])
            else:
                grew += bank.add("vpairs", np.array(p)[:d])
        log.append(IterationLog(it, bank.sizes(), fit.margin, tuple(cexs), time.perf_counter() - t0))
        log_.info("V iteration %d: margin %.3g, %d counterexamples, bank %s", it, fit.margin, len(cexs), bank.sizes())
        if not cexs:
            report = check_certificate(model, dfa, part, cert, "certify" if finite else "falsify", fcfg,
                                       vdom=vdom, semantics=cfg.semantics)
            return Certified(cert, not finite, tuple(log), report)
        if not grew:
            return Budget(tuple(log), "counterexamples already in the bank")
        if _timed_out(cfg, start):
            return Budget(tuple(log), "time limit")
    return Budget(tuple(log), "iteration limit")


def _sample_pieces(pieces, count: int, rng) -> np.ndarray:
    out = []
    per = max(1, count // max(len(pieces), 1))
    for s in pieces:
        pts = _lhs(rng, s.base.lo, s.base.hi, per + 2)
        pts = pts[s.contains_batch(pts)]
        out.append(pts)
    out = [o for o in out if len(o)]
    return np.vstack(out) if out else np.zeros((0, pieces[0].base.dim))


def _v_fixed_rows(model, dfa, part, template, vc, bank, anchor, cfg):
    A_all, b_all = [], []
    idx = dfa.delta_index
    n = model.n
    if cfg.semantics == "sound":
        if len(anchor):
            lab = part.labels(anchor[:, :n], anchor[:, n:])
            for p, s in zip(anchor, lab):
                r = idx[dfa.step(dfa.initial, s)]
                A = np.zeros((1, template.n_coeffs))
                A[:, template.offsets[r]:template.offsets[r + 1]] = template.features(r, p[None])
                A_all.append(A)
                b_all.append(np.zeros(1))
    else:
        for c in vc.init:
            if isinstance(model, FiniteModel):
                pts = c.domain.points
            else:
                pts = bank.init_pairs[_member(c, bank.init_pairs)]
            if len(pts):
                A_all.append(c.rows(template, model, pts))
                b_all.append(np.zeros(len(pts)))
    if len(bank.pre):
        for c in vc.pre:
            pts = bank.pre
            A_all.append(-c.rows(template, model, pts))
            b_all.append(np.full(len(pts), -cfg.eps))
    if not A_all:
        return np.zeros((0, template.n_coeffs)), np.zeros(0)
    return np.vstack(A_all), np.concatenate(b_all)


def _v_counterexamples(model, dfa, part, cert, vc, vdom, cfg, it) -> list[tuple[str, tuple]]:
    fcfg = replace(cfg.falsifier, seed=cfg.falsifier.seed + it)
    out: list[tuple[str, tuple]] = []
    finite = isinstance(model, FiniteModel)
    if cfg.semantics == "literal":
        for c in vc.init:
            if finite:
                pts = _finite_failures(c, cert, model, fcfg.margin, fcfg.tol)
                out += [(c.name, tuple(p)) for p in pts[: fcfg.max_counterexamples]]
            else:
                r = falsify(c.constraint(cert, model, fcfg.margin), fcfg)
                if isinstance(r, Counterexample):
                    out += [(c.name, p) for p in r.points]
    elif initial_witness(model, dfa, part, cert, seed=fcfg.seed) is None:
        out.append(("init-exists", tuple(np.zeros(2 * model.n))))
    if not finite:
        for c in vc.pre:
            r = falsify(c.constraint(cert, model, fcfg.margin), fcfg)
            if isinstance(r, Counterexample):
                out += [(c.name, p) for p in r.points]
    for q in vc.decrease_sources:
        fe = decrease_constraint(model, dfa, part, cert, q, fcfg.margin, cfg.semantics)
        t0 = time.perf_counter()
        r = falsify_forall_exists(fe, fcfg)
        log_.debug("%s: %s in %.1fs", fe.name, r.tag, time.perf_counter() - t0)
        if isinstance(r, Counterexample):
            out += [(fe.name, p) for p in r.points]
        elif isinstance(r, NoneFound) and finite and r.undecided:
            # gap points are pushed back into the bank as well
            out += _finite_gap_points(fe, r)
    return out


def _finite_gap_points(fe, r) -> list[tuple[str, tuple]]:
    pts = fe.outer.points
    best = np.full(len(pts), np.inf)
    rows = np.arange(len(pts))
    for k in range(fe.finite_inputs):
        best = np.minimum(best, fe.finite_eval(rows, k))
    gap = np.where(best > -fe.margin)[0]
    return [(fe.name, tuple(pts[i])) for i in gap]
