"""Render round-log CSVs into figures.

The CSV stays the machine-readable contract; this module draws the standard
diagnostic charts next to it: server metric against cumulative transmitted
data, metric against epoch, and mean uplink sparsity per epoch. Multiple
CSVs overlay so protocol variants can be compared in one chart.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _load(csv_path: Path) -> dict:
    server = []
    sparsity = defaultdict(list)
    with open(csv_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec["row_type"] == "server":
                server.append((int(rec["epoch"]), float(rec["metric"]),
                               int(rec["cumulative_bytes"])))
            elif rec["direction"] == "up":
                sparsity[int(rec["epoch"])].append(float(rec["sparsity"]))
    server.sort()
    return {
        "epochs": [e for e, _m, _b in server],
        "metric": [m for _e, m, _b in server],
        "megabytes": [b / 1e6 for _e, _m, b in server],
        "sparsity": {e: sum(v) / len(v) for e, v in sparsity.items()},
    }


def render_report(csv_paths, out_dir=None, prefix: str = "report") -> list[Path]:
    """Write the three standard figures; returns the created file paths."""
    csv_paths = [Path(p) for p in csv_paths]
    if not csv_paths:
        raise ValueError("no CSV files given")
    out = Path(out_dir) if out_dir is not None else csv_paths[0].parent
    out.mkdir(parents=True, exist_ok=True)
    curves = {p.stem: _load(p) for p in csv_paths}
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, c in curves.items():
        ax.plot(c["megabytes"], c["metric"], marker="o", ms=3, label=label)
    ax.set_xlabel("cumulative transmitted data [MB]")
    ax.set_ylabel("server top-1 accuracy")
    ax.set_xscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    path = out / f"{prefix}_metric_vs_bytes.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, c in curves.items():
        ax.plot(c["epochs"], c["metric"], marker="o", ms=3, label=label)
    ax.set_xlabel("communication epoch")
    ax.set_ylabel("server top-1 accuracy")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    path = out / f"{prefix}_metric_vs_epoch.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, c in curves.items():
        epochs = sorted(c["sparsity"])
        ax.plot(epochs, [c["sparsity"][e] for e in epochs],
                marker="o", ms=3, label=label)
    ax.set_xlabel("communication epoch")
    ax.set_ylabel("mean uplink sparsity")
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    path = out / f"{prefix}_sparsity.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    return written
