"""System models: continuous (boxes + polynomial maps) and finite (tables)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

import numpy as np

from .polynomial import CompiledPolynomial, Polynomial, UnboundVariableError
from .sets import Box

MEMBER_TOL = 1e-9


class SpecError(ValueError):
    """Malformed or inconsistent system document."""


class DomainError(ValueError):
    """State or input outside the declared sets."""


def state_names(n: int, hat: bool = False) -> tuple[str, ...]:
    return tuple(f"{'xh' if hat else 'x'}{i + 1}" for i in range(n))


def input_names(m: int, hat: bool = False) -> tuple[str, ...]:
    return tuple(f"{'uh' if hat else 'u'}{i + 1}" for i in range(m))


def next_names(n: int, hat: bool = False) -> tuple[str, ...]:
    return tuple(f"{'xhn' if hat else 'xn'}{i + 1}" for i in range(n))


def hat_map(n: int, m: int) -> dict[str, str]:
    mp = dict(zip(state_names(n), state_names(n, True)))
    mp.update(zip(input_names(m), input_names(m, True)))
    return mp


@dataclass(frozen=True)
class ContinuousModel:
    n: int
    m: int
    q_out: int
    X: Box
    X0: Box
    XF: Box
    U: Box
    f: tuple[Polynomial, ...]
    h: tuple[Polynomial, ...]
    name: str = "continuous"
    kind: str = field(default="continuous", init=False)

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "h", tuple(self.h))
        xs, us = state_names(self.n), input_names(self.m)
        if len(self.f) != self.n:
            raise SpecError(f"f has {len(self.f)} components, expected n={self.n}")
        if len(self.h) != self.q_out:
            raise SpecError(f"h has {len(self.h)} components, expected {self.q_out}")
        for name, box, dim, names in (("X", self.X, self.n, xs), ("X0", self.X0, self.n, xs),
                                      ("XF", self.XF, self.n, xs), ("U", self.U, self.m, us)):
            if box.dim != dim or box.names != names:
                raise SpecError(f"{name} must be a box over {names}")
        if not self.X0.subset_of(self.X):
            raise SpecError("initial set not contained in state set")
        if not self.XF.subset_of(self.X):
            raise SpecError("faulty set not contained in state set")
        allowed = set(xs) | set(us)
        for i, p in enumerate(self.f):
            bad = set(p.variables) - allowed
            if bad:
                raise SpecError(f"f[{i}] references undeclared variables {sorted(bad)}")
        for i, p in enumerate(self.h):
            bad = set(p.variables) - set(xs)
            if bad:
                raise SpecError(f"h[{i}] references undeclared variables {sorted(bad)}")
        names = xs + us
        object.__setattr__(self, "_fc", tuple(p.compile(names) for p in self.f))
        object.__setattr__(self, "_hc", tuple(p.compile(xs) for p in self.h))

    # dynamics

    def f_hat(self) -> tuple[Polynomial, ...]:
        mp = hat_map(self.n, self.m)
        return tuple(p.rename(mp) for p in self.f)

    def h_hat(self) -> tuple[Polynomial, ...]:
        mp = hat_map(self.n, self.m)
        return tuple(p.rename(mp) for p in self.h)

    def successor_batch(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        pts = np.hstack([np.atleast_2d(xs), np.atleast_2d(us)])
        return np.column_stack([c.values(pts) for c in self._fc])

    def output_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.column_stack([c.values(np.atleast_2d(xs)) for c in self._hc])

    def faulty_batch(self, xs: np.ndarray) -> np.ndarray:
        return self.XF.contains_batch(np.atleast_2d(xs))

    def in_states_batch(self, xs: np.ndarray, tol: float = MEMBER_TOL) -> np.ndarray:
        return self.X.contains_batch(np.atleast_2d(xs), tol)


@dataclass(frozen=True)
class FiniteModel:
    states: tuple[tuple[float, ...], ...]
    initial: tuple[int, ...]
    faulty: tuple[int, ...]
    inputs: tuple[tuple[float, ...], ...]
    trans: Mapping[tuple[int, int], int]
    output: tuple[tuple[float, ...], ...]
    name: str = "finite"
    kind: str = field(default="finite", init=False)

    def __post_init__(self):
        states = tuple(tuple(float(v) for v in s) for s in self.states)
        inputs = tuple(tuple(float(v) for v in u) for u in self.inputs)
        output = tuple(tuple(float(v) for v in y) for y in self.output)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "output", output)
        object.__setattr__(self, "initial", tuple(sorted(set(int(i) for i in self.initial))))
        object.__setattr__(self, "faulty", tuple(sorted(set(int(i) for i in self.faulty))))
        if not states:
            raise SpecError("finite model needs at least one state")
        if not inputs:
            raise SpecError("finite model needs at least one input")
        if len({len(s) for s in states}) != 1:
            raise SpecError("states have inconsistent dimension")
        if len(output) != len(states):
            raise SpecError("output must list one point per state")
        ns, nu = len(states), len(inputs)
        for i in self.initial + self.faulty:
            if not 0 <= i < ns:
                raise SpecError(f"state index {i} out of range")
        if not self.initial:
            raise SpecError("finite model needs at least one initial state")
        table = np.full((ns, nu), -1, dtype=np.int64)
        for (s, u), t in dict(self.trans).items():
            if not (0 <= s < ns and 0 <= u < nu and 0 <= t < ns):
                raise SpecError(f"transition ({s},{u})->{t} out of range")
            if table[s, u] != -1 and table[s, u] != t:
                raise SpecError(f"transition ({s},{u}) defined twice")
            table[s, u] = t
        if (table < 0).any():
            s, u = map(int, np.argwhere(table < 0)[0])
            raise SpecError(f"transition map is not total: missing (state {s}, input {u})")
        object.__setattr__(self, "trans", {(s, u): int(table[s, u]) for s in range(ns) for u in range(nu)})
        object.__setattr__(self, "table", table)
        pts = np.array(states, dtype=float)
        object.__setattr__(self, "points", pts)
        fmask = np.zeros(ns, dtype=bool)
        fmask[list(self.faulty)] = True
        object.__setattr__(self, "fault_mask", fmask)
        object.__setattr__(self, "outputs", np.array(output, dtype=float))

    @property
    def n(self) -> int:
        return len(self.states[0])

    @property
    def m(self) -> int:
        return len(self.inputs[0])

    @property
    def q_out(self) -> int:
        return len(self.output[0])

    def index_of(self, x: Sequence[float] | float, tol: float = MEMBER_TOL) -> int:
        p = np.atleast_1d(np.asarray(x, dtype=float))
        d = np.abs(self.points - p).max(axis=1)
        i = int(np.argmin(d))
        if d[i] > tol * max(1.0, float(np.abs(p).max(initial=0.0))):
            raise DomainError(f"{tuple(p)} is not a state of the model")
        return i

    def input_index(self, u: Sequence[float] | float, tol: float = MEMBER_TOL) -> int:
        p = np.atleast_1d(np.asarray(u, dtype=float))
        for j, v in enumerate(self.inputs):
            if np.allclose(v, p, rtol=0, atol=tol * max(1.0, float(np.abs(p).max(initial=0.0)))):
                return j
        raise DomainError(f"{tuple(p)} is not an input of the model")

    def faulty_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        return np.array([self.fault_mask[self.index_of(x)] for x in xs], dtype=bool)

    def output_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        return np.array([self.outputs[self.index_of(x)] for x in xs])


SystemModel = Union[ContinuousModel, FiniteModel]


def successor(m: SystemModel, x, u) -> tuple[float, ...]:
    """One step of the dynamics from state ``x`` under input ``u``."""
    if isinstance(m, FiniteModel):
        i = m.index_of(x)
        j = m.input_index(u)
        return m.states[m.table[i, j]]
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    uv = np.atleast_1d(np.asarray(u, dtype=float))
    if xv.shape != (m.n,) or uv.shape != (m.m,):
        raise DomainError(f"expected x in R^{m.n} and u in R^{m.m}")
    if not m.X.contains(xv, MEMBER_TOL):
        raise DomainError(f"state {tuple(xv)} outside X")
    if not m.U.contains(uv, MEMBER_TOL):
        raise DomainError(f"input {tuple(uv)} outside U")
    return tuple(float(v) for v in m.successor_batch(xv[None], uv[None])[0])


# documents

def _box(doc: Mapping, key: str, names: tuple[str, ...]) -> Box:
    try:
        b = Box.from_bounds(names, doc[key])
    except KeyError:
        raise SpecError(f"missing field {key!r}") from None
    except (TypeError, ValueError) as e:
        raise SpecError(f"bad box {key!r}: {e}") from None
    return b


def load_system(doc: Mapping[str, Any] | str | Path) -> SystemModel:
    """Validate a system document (dict, JSON text or file path)."""
    if isinstance(doc, Path) or (isinstance(doc, str) and not doc.lstrip().startswith("{")):
        try:
            doc = json.loads(Path(doc).read_text())
        except json.JSONDecodeError as e:
            raise SpecError(f"invalid JSON: {e}") from None
    elif isinstance(doc, str):
        doc = json.loads(doc)
    if not isinstance(doc, Mapping):
        raise SpecError("system document must be a JSON object")
    kind = doc.get("kind", "finite" if "states" in doc else "continuous")
    name = str(doc.get("name", kind))
    try:
        if kind == "finite":
            return FiniteModel(
                states=[_as_point(s) for s in doc["states"]],
                initial=doc["initial"],
                faulty=doc.get("faulty", []),
                inputs=[_as_point(u) for u in doc["inputs"]],
                trans={(int(a), int(b)): int(c) for a, b, c in doc["trans"]},
                output=[_as_point(y) for y in doc.get("output", doc["states"])],
                name=name,
            )
        if kind != "continuous":
            raise SpecError(f"unknown model kind {kind!r}")
        n, m = int(doc["n"]), int(doc["m"])
        xs, us = state_names(n), input_names(m)
        f = tuple(Polynomial.from_json(t) for t in doc["f"])
        h = tuple(Polynomial.from_json(t) for t in doc["h"]) if "h" in doc else tuple(
            Polynomial.var(v) for v in xs)
        return ContinuousModel(
            n=n, m=m, q_out=len(h),
            X=_box(doc, "X", xs), X0=_box(doc, "X0", xs), XF=_box(doc, "XF", xs), U=_box(doc, "U", us),
            f=f, h=h, name=name,
        )
    except KeyError as e:
        raise SpecError(f"missing field {e.args[0]!r}") from None
    except (TypeError, UnboundVariableError) as e:
        raise SpecError(str(e)) from None


def _as_point(v) -> tuple[float, ...]:
    if isinstance(v, (int, float)):
        return (float(v),)
    return tuple(float(a) for a in v)


def dump_system(m: SystemModel) -> dict:
    if isinstance(m, FiniteModel):
        return {
            "kind": "finite", "name": m.name,
            "states": [list(s) for s in m.states], "initial": list(m.initial),
            "faulty": list(m.faulty), "inputs": [list(u) for u in m.inputs],
            "trans": [[s, u, t] for (s, u), t in sorted(m.trans.items())],
            "output": [list(y) for y in m.output],
        }
    return {
        "kind": "continuous", "name": m.name, "n": m.n, "m": m.m,
        "X": m.X.to_json(), "X0": m.X0.to_json(), "XF": m.XF.to_json(), "U": m.U.to_json(),
        "f": [p.to_json() for p in m.f], "h": [p.to_json() for p in m.h],
    }


def two_room_model(alpha=0.01, alpha_e=0.04, alpha_h=0.145, t_e=10.0, t_h=50.0) -> ContinuousModel:
    """Two-room temperature model with heater inputs."""
    x1, x2 = Polynomial.var("x1"), Polynomial.var("x2")
    u1, u2 = Polynomial.var("u1"), Polynomial.var("u2")
    a = 1 - 2 * alpha - alpha_e
    f1 = a * x1 - alpha_h * u1 * x1 + alpha * x2 + alpha_h * t_h * u1 + alpha_e * t_e
    f2 = a * x2 - alpha_h * u2 * x2 + alpha * x1 + alpha_h * t_h * u2 + alpha_e * t_e
    xs, us = state_names(2), input_names(2)
    return ContinuousModel(
        n=2, m=2, q_out=2,
        X=Box(xs, (15, 15), (30, 30)), X0=Box(xs, (19.5, 19.5), (20.5, 20.5)),
        XF=Box(xs, (24, 24), (26, 26)), U=Box(us, (0, 0), (1, 1)),
        f=(f1, f2), h=(x1, x2), name="two-room",
    )
