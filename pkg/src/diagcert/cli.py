"""``diagcert`` command line.

Exit status: 0 for a definitive verdict, 2 for UNKNOWN or an exhausted budget,
1 for usage and input errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, data_path
from .automaton import ParameterError, build_dfa, label_partition
from .certificate import (INVALID, UNKNOWN, VALID, Certificate, CertificateError, check_certificate,
                          compute_pre_complement)
from .falsifier import FalsifierConfig
from .model import DomainError, FiniteModel, SpecError, load_system
from .product import UnsupportedModelError, check_witness, definitional_check, verify_exact

EXIT_OK, EXIT_ERROR, EXIT_UNKNOWN = 0, 1, 2

BUNDLED = {
    "running": "running.json", "running.json": "running.json",
    "two-room": "two_room.json", "two_room": "two_room.json", "two_room.json": "two_room.json",
    "b_running_k3.json": "b_running_k3.json", "v_running_k2.json": "v_running_k2.json",
    "b_smt_two_room.json": "b_smt_two_room.json",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunReport:
    subcommand: str
    inputs_digest: str
    verdict: str
    details: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"subcommand": self.subcommand, "inputs_digest": self.inputs_digest, "verdict": self.verdict,
                "details": self.details, "log": self.log, "artifacts": self.artifacts, "timing": self.timing}

    def text(self) -> str:
        lines = [f"== diagcert {self.subcommand} ==", f"verdict: {self.verdict}"]
        for k, v in self.details.items():
            lines.append(f"{k}: {_fmt(v)}")
        if self.log:
            lines.append("== log ==")
            for e in self.log:
                lines.append(json.dumps(e, sort_keys=True, default=_jsonable))
        if self.artifacts:
            lines.append("== artifacts ==")
            for k, v in self.artifacts.items():
                lines.append(f"{k}: {v}")
        lines.append("== end ==")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True, default=_jsonable)
    return str(v)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    if path in BUNDLED:
        return Path(data_path(BUNDLED[path]))
    raise UsageError(f"no such file: {path}")


def _digest(argv: Sequence[str], files: Sequence[Path]) -> str:
    h = hashlib.sha256()
    h.update("\0".join(argv).encode())
    for f in files:
        h.update(b"\0")
        h.update(Path(f).read_bytes())
    return h.hexdigest()[:16]


# argument groups

def _falsifier_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("falsifier")
    g.add_argument("--eps-box", type=float, default=None, help="box resolution (default 0.05)")
    g.add_argument("--margin", type=float, default=None, help="strictness margin (default 1e-6)")
    g.add_argument("--input-grid", type=int, default=None, help="input grid points per dimension")
    g.add_argument("--max-boxes", type=int, default=None, help="box budget per condition")
    g.add_argument("--samples", type=int, default=None, help="sampling pre-pass size")


def _common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("--report", metavar="DIR", default=None, help="write figures to DIR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--serial", action="store_true", help="single worker (the default)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")


def _spec_args(p: argparse.ArgumentParser, delta_k: bool = True) -> None:
    p.add_argument("--spec", required=True, help="system document (or a bundled name)")
    if delta_k:
        p.add_argument("--delta", type=float, required=True)
        p.add_argument("--K", type=int, required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="diagcert", description="Approximate diagnosability checks via certificates.")
    ap.add_argument("--version", action="version", version=f"diagcert {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("dfa", help="build the (delta, K) automaton")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--dump", metavar="PATH", default=None, help="write the automaton JSON")
    _common_args(p)

    p = sub.add_parser("oracle", help="exact diagnosability verdict for finite models")
    _spec_args(p)
    p.add_argument("--method", choices=("product", "definition"), default="product")
    p.add_argument("--witness", metavar="PATH", default="witness.json")
    _common_args(p)

    for name, helptext in (("verify", "synthesize a barrier certificate (diagnosable)"),
                           ("refute", "synthesize a ranking certificate (not diagnosable)")):
        p = sub.add_parser(name, help=helptext)
        _spec_args(p)
        p.add_argument("--degree", type=int, default=2)
        p.add_argument("--config", metavar="PATH", default=None, help="JSON synthesis settings")
        p.add_argument("--out", metavar="PATH", default=None, help="certificate output")
        p.add_argument("--i-max", type=int, default=None)
        p.add_argument("--time-limit", type=float, default=None, help="seconds")
        if name == "verify":
            p.add_argument("--exclude-accepting-decrease", action="store_true")
        else:
            p.add_argument("--semantics", choices=("sound", "literal"), default="sound")
            p.add_argument("--pre-resolution", type=float, default=0.25)
        _falsifier_args(p)
        _common_args(p)

    p = sub.add_parser("check-certificate", help="check a certificate document")
    _spec_args(p, delta_k=False)
    p.add_argument("--cert", required=True)
    p.add_argument("--mode", choices=("certify", "falsify"), default="certify")
    p.add_argument("--semantics", choices=("sound", "literal"), default="sound")
    p.add_argument("--exclude-accepting-decrease", action="store_true")
    p.add_argument("--dec-margin", type=float, default=None)
    p.add_argument("--pre-resolution", type=float, default=0.25)
    _falsifier_args(p)
    _common_args(p)

    p = sub.add_parser("diagnose", help="run the diagnoser on an observation stream")
    _spec_args(p)
    p.add_argument("--stream", required=True, help="JSON-lines observations")
    p.add_argument("--grid-points", type=int, default=41, help="initial grid per state dimension")
    p.add_argument("--input-grid", type=int, default=5)
    _common_args(p)

    p = sub.add_parser("simulate", help="simulate a run and write its observation stream")
    _spec_args(p, delta_k=False)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--inputs", default=None, help="semicolon-separated inputs, e.g. '1;2;1;2'")
    p.add_argument("--input", default=None, help="constant input (with --steps)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--out", metavar="PATH", default="observations.jsonl")
    _common_args(p)
    return ap


def _vec(s: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in s.split(",") if v.strip())
    except ValueError as e:
        raise UsageError(f"not a vector: {s!r}") from e


def _falsifier_cfg(a, base: FalsifierConfig | None = None) -> FalsifierConfig:
    cfg = base or FalsifierConfig()
    kw: dict[str, Any] = {"seed": a.seed, "serial": True, "workers": max(1, a.workers)}
    for flag, key in (("eps_box", "eps_box"), ("margin", "margin"), ("input_grid", "input_grid"),
                      ("max_boxes", "max_boxes"), ("samples", "samples")):
        v = getattr(a, flag, None)
        if v is not None:
            kw[key] = v
    return dataclasses.replace(cfg, **kw)


# subcommands

def cmd_dfa(a, argv) -> tuple[RunReport, int]:
    dfa = build_dfa(a.delta, a.K)
    rep = RunReport("dfa", _digest(argv, []), "OK", {"states": list(dfa.states), "K": dfa.K, "delta": dfa.delta,
                                                   "transitions": dfa.to_json()["transitions"]})
    if a.dump:
        Path(a.dump).write_text(dfa.dumps() + "\n")
        rep.artifacts["dfa"] = a.dump
    return rep, EXIT_OK


def cmd_oracle(a, argv) -> tuple[RunReport, int]:
    spec = resolve(a.spec)
    model = load_system(spec)
    if a.method == "product":
        v = verify_exact(model, a.delta, a.K)
    else:
        v = definitional_check(model, a.delta, a.K)
    verdict = "DIAGNOSABLE" if v.diagnosable else "NOT DIAGNOSABLE"
    rep = RunReport("oracle", _digest(argv, [spec]), verdict, {"explored": v.explored, "method": a.method})
    if v.witness is not None:
        rep.details["witness_replays"] = check_witness(model, a.delta, a.K, v.witness)
        rep.details["fault_step"] = v.witness.fault_step
        Path(a.witness).write_text(json.dumps(v.witness.to_json(), indent=2) + "\n")
        rep.artifacts["witness"] = a.witness
        if a.report:
            from .report import plot_runs
            w = v.witness
            rep.artifacts["witness_plot"] = plot_runs(
                Path(a.report) / "witness.png", "witness run pair",
                [("y", model.output_batch(np.array(w.x_run))), ("y_hat", model.output_batch(np.array(w.xh_run)))],
                mark=w.fault_step, band=a.delta, band_of=0)
    return rep, EXIT_OK


def _cegis_cfg(a):
    from .cegis import CegisConfig
    kw: dict[str, Any] = {}
    base_f = FalsifierConfig()
    if a.config:
        doc = json.loads(resolve(a.config).read_text())
        if "falsifier" in doc:
            base_f = FalsifierConfig(**doc.pop("falsifier"))
        known = {f.name for f in dataclasses.fields(CegisConfig)}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        kw.update(doc)
    kw["degree"] = a.degree
    kw["seed"] = a.seed
    if a.i_max is not None:
        kw["i_max"] = a.i_max
    if a.time_limit is not None:
        kw["time_limit"] = a.time_limit
    if a.input_grid is not None:
        kw["input_grid"] = a.input_grid
    if getattr(a, "semantics", None):
        kw["semantics"] = a.semantics
    if getattr(a, "pre_resolution", None):
        kw["pre_resolution"] = a.pre_resolution
    if getattr(a, "exclude_accepting_decrease", False):
        kw["exclude_accepting_decrease"] = True
    kw["falsifier"] = _falsifier_cfg(a, base_f)
    return CegisConfig(**kw)


def cmd_synthesize(a, argv) -> tuple[RunReport, int]:
    from .cegis import Certified, synthesize_b, synthesize_v
    spec = resolve(a.spec)
    files = [spec] + ([resolve(a.config)] if a.config else [])
    model = load_system(spec)
    dfa = build_dfa(a.delta, a.K)
    part = label_partition(model, a.delta)
    cfg = _cegis_cfg(a)
    if a.cmd == "verify":
        out = synthesize_b(model, dfa, part, cfg=cfg)
        yes = "DIAGNOSABLE"
    else:
        out = synthesize_v(model, dfa, part, cfg=cfg)
        yes = "NOT DIAGNOSABLE"
    log = [e.to_json() for e in out.log]
    details: dict[str, Any] = {"outcome": out.status, "iterations": len(out.log)}
    if isinstance(out, Certified):
        verdict = f"{yes} (certified{' at resolution' if out.at_resolution else ''})"
        if out.report is not None:
            details["check"] = out.report.verdict
    else:
        verdict = out.status.upper()
        details["reason"] = out.reason
    rep = RunReport(a.cmd, _digest(argv, files), verdict, details, log)
    if isinstance(out, Certified):
        path = a.out or f"certificate_{'B' if a.cmd == 'verify' else 'V'}.json"
        Path(path).write_text(out.certificate.dumps() + "\n")
        rep.artifacts["certificate"] = path
    if a.report and log:
        from .report import plot_certificate_1d, plot_iterations
        rep.artifacts["iterations_plot"] = plot_iterations(Path(a.report) / f"{a.cmd}_iterations.png", log)
        if isinstance(out, Certified) and isinstance(model, FiniteModel) and model.n == 1:
            rep.artifacts["certificate_plot"] = plot_certificate_1d(
                Path(a.report) / f"{a.cmd}_certificate.png", out.certificate, dfa, model.points[:, 0])
    return rep, EXIT_OK if isinstance(out, Certified) else EXIT_UNKNOWN


def cmd_check(a, argv) -> tuple[RunReport, int]:
    from .certificate import outcome_json
    spec, certp = resolve(a.spec), resolve(a.cert)
    model = load_system(spec)
    cert = Certificate.from_json(certp)
    dfa = build_dfa(cert.delta, cert.K)
    part = label_partition(model, cert.delta)
    cfg = _falsifier_cfg(a)
    vdom = None
    if cert.kind == "V" and not isinstance(model, FiniteModel):
        vdom = compute_pre_complement(model, a.pre_resolution)
    r = check_certificate(model, dfa, part, cert, a.mode, cfg, vdom=vdom, semantics=a.semantics,
                          exclude_accepting_decrease=a.exclude_accepting_decrease, dec_margin=a.dec_margin)
    rows = [{"name": n, **outcome_json(o)} for n, o in r.outcomes]
    details = {"kind": cert.kind, "delta": cert.delta, "K": cert.K, "mode": r.mode, "margin": r.margin,
               "failing": r.failing(), "notes": list(r.notes)}
    rep = RunReport("check-certificate", _digest(argv, [spec, certp]), r.verdict, details, rows)
    if a.report:
        from .report import plot_conditions
        rep.artifacts["conditions_plot"] = plot_conditions(Path(a.report) / "conditions.png", rows)
    return rep, EXIT_UNKNOWN if r.verdict == UNKNOWN else EXIT_OK


def cmd_diagnose(a, argv) -> tuple[RunReport, int]:
    from .diagnoser import FAULT, GridConfig, read_stream, run_diagnoser
    spec, stream = resolve(a.spec), resolve(a.stream)
    model = load_system(spec)
    cfg = GridConfig(per_dim=a.grid_points, input_grid=a.input_grid, seed=a.seed)
    tr = run_diagnoser(model, a.delta, a.K, read_stream(stream), cfg)
    log = [{"k": s.k, "size": s.size} for s in tr.states]
    if isinstance(model, FiniteModel):
        for e, s in zip(log, tr.states):
            e["M"] = [list(x) for x in s.states()]
    fin = tr.final
    if fin is None:
        verdict, details = "NO FAULT", {"D": 0, "steps": 0}
    elif fin.verdict == FAULT:
        verdict = "FAULT DETECTED"
        details = {"D": 1, "detected_at": fin.k, "window": list(fin.window)}
        if fin.inconsistent_at_start:
            details["inconsistent_at_start"] = True
    else:
        verdict, details = "NO FAULT", {"D": 0, "steps": fin.k + 1}
    details["backend"] = fin.backend if fin else ("exact" if isinstance(model, FiniteModel) else "grid")
    rep = RunReport("diagnose", _digest(argv, [spec, stream]), verdict, details, log)
    if a.report:
        from .report import plot_diagnosis
        rep.artifacts["diagnosis_plot"] = plot_diagnosis(
            Path(a.report) / "diagnosis.png", [e["size"] for e in log], fin.window if fin else None)
    return rep, EXIT_OK


def cmd_simulate(a, argv) -> tuple[RunReport, int]:
    from .diagnoser import simulate, write_stream
    spec = resolve(a.spec)
    model = load_system(spec)
    if a.inputs is not None:
        us = [_vec(s) for s in a.inputs.split(";") if s.strip()]
    elif a.input is not None and a.steps is not None:
        us = [_vec(a.input)] * a.steps
    else:
        raise UsageError("give --inputs or --input with --steps")
    sim = simulate(model, _vec(a.x0), us, a.delta, seed=a.seed, noise=not a.no_noise)
    with open(a.out, "w") as fh:
        write_stream(sim.observations, fh)
    ff = sim.first_fault(model)
    details = {"steps": len(us), "first_fault": ff, "states": [list(s) for s in sim.states]}
    if not isinstance(model, FiniteModel):
        from .diagnoser import exact_fault_step
        details["first_fault_exact"] = exact_fault_step(model, _vec(a.x0), us)
    rep = RunReport("simulate", _digest(argv, [spec]), "OK", details, artifacts={"stream": a.out})
    if a.report:
        from .report import plot_runs
        rep.artifacts["simulation_plot"] = plot_runs(
            Path(a.report) / "simulation.png", "outputs and observations",
            [("y", np.array(sim.outputs)), ("y_obs", np.array(sim.observations))], mark=ff, band=a.delta)
    return rep, EXIT_OK


COMMANDS = {"dfa": cmd_dfa, "oracle": cmd_oracle, "verify": cmd_synthesize, "refute": cmd_synthesize,
            "check-certificate": cmd_check, "diagnose": cmd_diagnose, "simulate": cmd_simulate}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        a = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    if getattr(a, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        rep, code = COMMANDS[a.cmd](a, argv)
    except (UsageError, SpecError, DomainError, CertificateError, ParameterError, UnsupportedModelError,
            FileNotFoundError, json.JSONDecodeError, ValueError) as e:
        print(f"diagcert {a.cmd}: {e}", file=sys.stderr)
        return EXIT_ERROR
    rep.timing = {"seconds": round(time.perf_counter() - t0, 3)}
    if a.json:
        print(json.dumps(rep.to_json(), indent=2, sort_keys=True, default=_jsonable))
    else:
        print(rep.text())
    return code


if __name__ == "__main__":
    sys.exit(main())
