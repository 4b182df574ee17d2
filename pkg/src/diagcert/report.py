"""Figures written next to the command-line reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return str(path)


def plot_runs(out: Path, title: str, series: Sequence[tuple[str, np.ndarray]], mark: int | None = None,
              band: float | None = None, band_of: int = 0) -> str:
    """Trajectories over time, one line per component per series."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, arr in series:
            arr = np.atleast_2d(np.asarray(arr, float))
            if arr.shape[0] == 1 and arr.shape[1] > 1:
                arr = arr.T
            for j in range(arr.shape[1]):
                name = label if arr.shape[1] == 1 else f"{label}[{j + 1}]"
                ax.plot(np.arange(len(arr)), arr[:, j], marker=".", label=name)
        if band is not None and series:
            ref = np.atleast_2d(np.asarray(series[band_of][1], float))
            if ref.shape[0] == 1 and ref.shape[1] > 1:
                ref = ref.T
            for j in range(ref.shape[1]):
                ax.fill_between(np.arange(len(ref)), ref[:, j] - band, ref[:, j] + band, alpha=0.12)
        if mark is not None:
            ax.axvline(mark, color="k", ls="--", lw=0.8)
        ax.set_xlabel("step k")
        ax.set_title(title)
        ax.legend(fontsize=7)
        return _save(fig, out)


def plot_diagnosis(out: Path, sizes: Sequence[int], window: tuple[int, int] | None, fault_step: int | None = None) -> str:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.step(np.arange(len(sizes)), sizes, where="mid", marker="o")
        if window is not None:
            ax.axvspan(window[0] - 0.5, window[1] + 0.5, color="tab:red", alpha=0.15, label="fault window")
        if fault_step is not None:
            ax.axvline(fault_step, color="k", ls="--", lw=0.8, label="first fault")
        ax.set_xlabel("step k")
        ax.set_ylabel("|M(k)|")
        ax.set_title("consistent non-faulty states")
        if window is not None or fault_step is not None:
            ax.legend()
        return _save(fig, out)


def plot_iterations(out: Path, log: Sequence[dict]) -> str:
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        it = [e["iteration"] for e in log]
        for key in sorted({k for e in log for k in e["bank"]}):
            a1.plot(it, [e["bank"].get(key, 0) for e in log], marker=".", label=key)
        a1.set_xlabel("iteration")
        a1.set_ylabel("samples")
        a1.legend(fontsize=7)
        a2.plot(it, [len(e["counterexamples"]) for e in log], marker="o", label="counterexamples")
        a2.plot(it, [e["margin"] if np.isfinite(e["margin"]) else np.nan for e in log], marker="s", label="LP margin")
        a2.set_xlabel("iteration")
        a2.legend(fontsize=7)
        fig.suptitle("synthesis progress")
        return _save(fig, out)


def plot_conditions(out: Path, rows: Sequence[dict]) -> str:
    """One bar per condition, coloured by outcome."""
    colours = {"proved": "tab:green", "none_found": "tab:orange", "counterexample": "tab:red"}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(6.0, 0.3 * len(rows)), 3.6))
        names = [r["name"] for r in rows]
        vals = [abs(r["value"]) if r.get("value") is not None and np.isfinite(r["value"]) else 0.0 for r in rows]
        ax.bar(range(len(rows)), [max(v, 1e-12) for v in vals] if any(vals) else [1] * len(rows),
               color=[colours.get(r["outcome"], "grey") for r in rows])
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(names, rotation=70, ha="right", fontsize=6)
        ax.set_ylabel("|violation|" if any(vals) else "condition")
        if any(vals):
            ax.set_yscale("log")
        ax.set_title("condition outcomes (green proved, orange none found, red counterexample)", fontsize=8)
        return _save(fig, out)


def plot_certificate_1d(out: Path, cert, dfa, xs: np.ndarray) -> str:
    """Values on the diagonal-free grid of a one-dimensional finite model."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        X, Xh = np.meshgrid(xs, xs, indexing="ij")
        pts = np.column_stack([X.ravel(), Xh.ravel()])
        for q in dfa.states:
            v = cert.at(dfa, q).compile(cert.names).values(pts)
            ax.plot(np.arange(len(v)), v, marker=".", lw=0.6, label=q)
        ax.axhline(0, color="k", lw=0.6)
        ax.set_xlabel("pair index (x major)")
        ax.set_ylabel(f"{cert.kind}(x, xh, q)")
        ax.legend(fontsize=7, ncol=3)
        return _save(fig, out)
