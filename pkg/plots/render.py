#!/usr/bin/env python3
"""Static figures from memslab artifact directories.

Usage:  render.py <kind> <run_dir> <out.png>
Kinds:  energy | gap | snapshot | smoothing | branch

This is a pure consumer: it parses the documented CSV/JSON artifacts of a
completed run directory and never recomputes (or imports) any solver code.
Inputs are validated against the documented headers; a mismatch aborts with
the offending header on stderr and exit code 1.  Figures use a fixed size
and the default font so identical inputs give identical images.
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

KINDS = ("energy", "gap", "snapshot", "smoothing", "branch")

RUN_HEADER = "t,dt,E_m,E_e,E,l2,h2proxy,min_gap,g_l1,dissipation"
BRANCH_HEADER = "lambda,sup_defl,min_gap,iters"
SMOOTHING_HEADER = "t,norm"

FIGSIZE = (6.4, 4.2)
DPI = 130


class SchemaError(RuntimeError):
    """An input file does not match its documented header."""


@dataclass
class FigureJob:
    kind: str
    run_dir: str
    out_path: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r} (want one of {KINDS})")


def read_csv_columns(path, expected_header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or ",".join(header) != expected_header:
            raise SchemaError(
                f"{path}: header {','.join(header) if header else '<empty>'!r} "
                f"does not match {expected_header!r}"
            )
        cols = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                cols[name].append(float(value))
    return cols


def read_snapshot_csv(path):
    """Deflection snapshot: `# grid nx=.. [ny=..] h=..` then x[,y],value rows."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# grid "):
            raise SchemaError(f"{path}: header {header!r} does not match '# grid ...'")
        meta = dict(tok.split("=") for tok in header[len("# grid "):].split())
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    return meta, rows


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# figure builders
# ---------------------------------------------------------------------------

def fig_energy(job: FigureJob):
    cols = read_csv_columns(os.path.join(job.run_dir, "run.csv"), RUN_HEADER)
    fig, (ax, ax2) = plt.subplots(2, 1, figsize=FIGSIZE, sharex=True,
                                  height_ratios=[2, 1])
    ax.plot(cols["t"], cols["E"], "k-", lw=1.5, label="E")
    ax.plot(cols["t"], cols["E_m"], "b--", lw=1.0, label="E_m")
    ax.plot(cols["t"], cols["E_e"], "r:", lw=1.0, label="E_e")
    ax.set_ylabel("energy")
    ax.legend(loc="best", fontsize=8)
    ax2.plot(cols["t"], cols["dissipation"], "g-", lw=1.2)
    ax2.set_xlabel("t")
    ax2.set_ylabel("cumulative dissipation")
    return fig


def fig_gap(job: FigureJob):
    cols = read_csv_columns(os.path.join(job.run_dir, "run.csv"), RUN_HEADER)
    summary = read_json(os.path.join(job.run_dir, "summary.json"))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(cols["t"], cols["min_gap"], "b-", lw=1.5)
    ax.axhline(0.0, color="k", lw=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel("min gap 1 + u")
    ax.set_ylim(0.0, max(cols["min_gap"]) * 1.05)
    ax.set_title(f"terminal: {summary.get('terminal', '?')}")
    return fig


def fig_snapshot(job: FigureJob):
    snap_dir = os.path.join(job.run_dir, "snapshots")
    if not os.path.isdir(snap_dir):
        raise SchemaError(f"{snap_dir}: no snapshots directory in the run")
    names = sorted(
        (f for f in os.listdir(snap_dir) if f.startswith("step_") and f.endswith(".csv")),
        key=lambda f: int(f[5:-4]),
    )
    if not names:
        raise SchemaError(f"{snap_dir}: no step_<n>.csv snapshots found")
    meta, rows = read_snapshot_csv(os.path.join(snap_dir, names[-1]))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    if "ny" in meta:
        # cross-section along the y closest to the domain midline
        ny = int(meta["ny"])
        ys = sorted({r[1] for r in rows})
        y_mid = min(ys, key=lambda y: abs(y))
        sec = [(r[0], r[2]) for r in rows if r[1] == y_mid]
        xs = [p[0] for p in sec]
        us = [p[1] for p in sec]
        label = f"u(x, y={y_mid:g})"
    else:
        xs = [r[0] for r in rows]
        us = [r[1] for r in rows]
        label = "u(x)"
    ax.plot(xs, us, "b-", lw=2.0, label=label)
    ax.axhline(0.0, color="gray", lw=0.8, ls="--", label="rest position")
    ax.axhline(-1.0, color="k", lw=2.5, label="ground plate")
    ax.set_xlabel("x")
    ax.set_ylabel("deflection")
    ax.set_ylim(-1.1, max(0.2, max(us) + 0.1))
    ax.legend(loc="best", fontsize=8)
    ax.set_title(names[-1])
    return fig


def fig_smoothing(job: FigureJob):
    cols = read_csv_columns(os.path.join(job.run_dir, "smoothing.csv"), SMOOTHING_HEADER)
    fit = read_json(os.path.join(job.run_dir, "smoothing.json"))
    theta = fit["theta_fit"]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.loglog(cols["t"], cols["norm"], "ko", ms=5, label="measured")
    t0, n0 = cols["t"][0], cols["norm"][0]
    line = [n0 * (t / t0) ** theta for t in cols["t"]]
    ax.loglog(cols["t"], line, "r-", lw=1.2, label=f"fit t^{theta:.3f}")
    ax.set_xlabel("t")
    ax.set_ylabel(f"{fit.get('target_norm', 'L2')} norm of smoothed point source")
    ax.legend(loc="best", fontsize=8)
    return fig


def fig_branch(job: FigureJob):
    cols = read_csv_columns(os.path.join(job.run_dir, "branch.csv"), BRANCH_HEADER)
    star = None
    star_path = os.path.join(job.run_dir, "lambda_star.json")
    if os.path.exists(star_path):
        star = read_json(star_path)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(cols["lambda"], cols["sup_defl"], "bo-", ms=4, lw=1.0)
    if star is not None:
        ax.axvline(star["bracket_mid"], color="r", ls="--", lw=1.0,
                   label=f"lambda* ~ {star['bracket_mid']:.4g}")
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("lambda")
    ax.set_ylabel("sup |u|")
    return fig


BUILDERS = {
    "energy": fig_energy,
    "gap": fig_gap,
    "snapshot": fig_snapshot,
    "smoothing": fig_smoothing,
    "branch": fig_branch,
}


def render(job: FigureJob) -> str:
    fig = BUILDERS[job.kind](job)
    fig.tight_layout()
    out_dir = os.path.dirname(os.path.abspath(job.out_path))
    os.makedirs(out_dir, exist_ok=True)
    fig.savefig(job.out_path, dpi=DPI)
    plt.close(fig)
    return job.out_path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    try:
        job = FigureJob(kind=argv[0], run_dir=argv[1], out_path=argv[2])
        render(job)
    except (SchemaError, OSError, KeyError, ValueError) as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
