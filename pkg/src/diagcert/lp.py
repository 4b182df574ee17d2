"""Dense tableau simplex for small linear programs.

``linprog_max`` solves ``max c.z s.t. G z <= h`` with ``z`` free by running a
two-phase primal simplex on the dual ``min h.y s.t. G^T y = c, y >= 0``.  The
dual has one row per primal variable, so the tableau stays narrow when there
are many more constraints than unknowns, which is the shape of certificate
fitting.  The primal optimum is read off the final simplex multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-9


@dataclass(frozen=True)
class LPResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray | None
    objective: float
    iterations: int


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run(T: np.ndarray, basis: list[int], allowed: np.ndarray, max_iter: int) -> tuple[str, int]:
    """Minimise with the objective in the last row (reduced costs, -value)."""
    m = T.shape[0] - 1
    it, stall = 0, 0
    last = T[-1, -1]
    while it < max_iter:
        red = T[-1, :-1]
        cand = np.where(allowed & (red < -TOL))[0]
        if not len(cand):
            return "optimal", it
        bland = stall > 50
        j = int(cand[0]) if bland else int(cand[np.argmin(red[cand])])
        col = T[:m, j]
        pos = col > TOL
        if not pos.any():
            return "unbounded", it
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.where(ratios <= best + TOL * (1 + abs(best)))[0]
        if bland:
            r = int(min(ties, key=lambda i: basis[i]))
        else:
            r = int(ties[np.argmax(col[ties])])
        _pivot(T, r, j)
        basis[r] = j
        it += 1
        if T[-1, -1] == last or abs(T[-1, -1] - last) <= TOL * (1 + abs(last)):
            stall += 1
        else:
            stall = 0
        last = T[-1, -1]
    return "iteration_limit", it


def linprog_max(c: np.ndarray, G: np.ndarray, h: np.ndarray, max_iter: int = 50_000,
                basis: list[int] | None = None) -> LPResult:
    """Maximise ``c.z`` subject to ``G z <= h`` (``z`` free).

    ``G`` should have full column rank (add bound rows for every variable).
    ``basis`` optionally names constraint rows whose columns of the dual form a
    signed identity with a feasible right-hand side; phase one is then skipped.
    """
    c = np.asarray(c, dtype=float)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    nvar, ncon = len(c), len(h)
    if G.shape != (ncon, nvar):
        raise ValueError("G must be (len(h), len(c))")
    sign = np.where(c < 0, -1.0, 1.0)
    A = G.T * sign[:, None]
    b = c * sign
    m, n = nvar, ncon
    it1 = 0
    if basis is not None:
        basis = list(basis)
        if not np.allclose(A[:, basis], np.eye(m)):
            raise ValueError("start basis is not an identity in the dual")
        T = np.zeros((m + 1, n + 1))
        T[:m, :n] = A
        T[:m, -1] = b
        unit = list(basis)
        width = n
    else:
        T = np.zeros((m + 1, n + m + 1))
        T[:m, :n] = A
        T[:m, n:n + m] = np.eye(m)
        T[:m, -1] = b
        T[-1, :n] = -A.sum(axis=0)
        T[-1, -1] = -b.sum()
        basis = list(range(n, n + m))
        status, it1 = _run(T, basis, np.ones(n + m, dtype=bool), max_iter)
        if status != "optimal":
            return LPResult(status if status == "iteration_limit" else "infeasible", None, np.nan, it1)
        if -T[-1, -1] > 1e-7 * (1 + np.abs(b).sum()):
            # dual infeasible: the primal is unbounded (or infeasible)
            return LPResult("unbounded", None, np.inf, it1)
        for r in range(m):
            if basis[r] >= n:
                row = np.abs(T[r, :n])
                j = int(np.argmax(row))
                if row[j] > TOL:
                    _pivot(T, r, j)
                    basis[r] = j
        unit = list(range(n, n + m))
        width = n + m
    allowed = np.zeros(width, dtype=bool)
    allowed[:n] = True
    cost = np.zeros(width)
    cost[:n] = h
    cb = cost[basis]
    T[-1, :-1] = cost - cb @ T[:m, :-1]
    T[-1, -1] = -cb @ T[:m, -1]
    status, it2 = _run(T, basis, allowed, max_iter)
    if status == "unbounded":
        return LPResult("infeasible", None, -np.inf, it1 + it2)
    if status != "optimal":
        return LPResult(status, None, np.nan, it1 + it2)
    pi = cost[unit] - T[-1, unit]
    z = sign * pi
    return LPResult("optimal", z, float(c @ z), it1 + it2)


@dataclass(frozen=True)
class MarginResult:
    feasible: bool
    coefficients: np.ndarray | None
    margin: float
    status: str


def max_margin(A: np.ndarray, b: np.ndarray, bound: float, margin_cap: float = 1.0,
               weights: np.ndarray | None = None, margin_floor: float = 1e6,
               perturb: float = 1e-7, max_iter: int = 50_000) -> MarginResult:
    """Find ``c`` with ``A c <= b``, ``|c| <= bound`` maximising a common slack.

    Solves ``max t s.t. A c + w t <= b``; the system is feasible iff the
    optimal ``t`` is non-negative.  Rows are rescaled for conditioning.  A tiny
    fixed random objective term on ``c`` breaks dual degeneracy; near-zero
    optima are re-solved without it so the feasibility call is exact.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    k = A.shape[1]
    w = np.ones(len(b)) if weights is None else np.asarray(weights, dtype=float)
    scale = np.maximum(np.abs(A).max(axis=1, initial=0.0), 1e-12) if len(b) else np.ones(0)
    rows = [np.column_stack([A / scale[:, None], w / scale]) if len(b) else np.zeros((0, k + 1))]
    rhs = [b / scale if len(b) else np.zeros(0)]
    eye = np.eye(k + 1)
    rows += [eye[:k], -eye[:k], eye[k:], -eye[k:]]
    rhs += [np.full(k, bound), np.full(k, bound), [margin_cap], [margin_floor]]
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    nb = len(b)
    start = [nb + i for i in range(k)] + [nb + 2 * k]
    jitter = np.random.default_rng(20240611).uniform(1.0, 2.0, k)

    def solve(eps: float) -> LPResult:
        obj = np.zeros(k + 1)
        obj[:k] = eps * jitter
        obj[-1] = 1.0
        return linprog_max(obj, G, h, max_iter=max_iter, basis=start)

    res = solve(perturb)
    if res.status == "optimal" and perturb > 0 and -1e-3 < res.x[-1] < 1e-9:
        exact = solve(0.0)
        if exact.status == "optimal":
            res = exact
    if res.status != "optimal":
        return MarginResult(False, None, -np.inf, res.status)
    c, t = res.x[:k], float(res.x[-1])
    return MarginResult(t >= -1e-9, c, t, res.status)
