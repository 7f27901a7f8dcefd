"""Experiment driver: seeds, round-log CSV output, and summary scans.

A run is fully determined by (seed, config): the master seed spawns
independent streams for data generation and for the federated runner, the
CSV is written incrementally (one block per round) so a diverged run still
leaves a partial log, and the final server state lands in a checkpoint next
to the CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .data import build_dataset
from .models import build_preset, save_params
from .protocol import FederatedRunner, RoundLog, TrainingDiverged

CSV_COLUMNS = (
    "epoch", "row_type", "client_id", "direction", "bytes_raw",
    "bytes_compressed", "sparsity", "scaling_accepted", "best_subepoch",
    "metric", "cumulative_bytes",
)


@dataclass
class ExperimentResult:
    csv_path: Path
    checkpoint_path: Path
    logs: list


def _round_rows(log: RoundLog) -> list[list]:
    rows = []
    for r in log.client_rows:
        rows.append([
            log.epoch, "client", r.client_id, r.direction, r.bytes_raw,
            r.bytes_compressed, f"{r.sparsity:.6f}", int(r.scaling_accepted),
            r.best_subepoch, "", "",
        ])
    s = log.server_row
    rows.append([log.epoch, "server", "", "", "", "", "", "", "",
                 f"{s.metric:.6f}", s.cumulative_bytes])
    return rows


def run_experiment(cfg: ExperimentConfig,
                   csv_path: Optional[str] = None) -> ExperimentResult:
    out_path = Path(csv_path if csv_path is not None else cfg.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(cfg.checkpoint) if cfg.checkpoint else out_path.with_suffix(".server.fsps")

    master = np.random.SeedSequence(cfg.seed)
    data_seed, proto_seed = master.spawn(2)
    dataset = build_dataset(cfg.dataset, np.random.default_rng(data_seed))

    def factory(rng):
        return build_preset(cfg.model_preset, rng,
                            scaling_policy=cfg.scaling_policy,
                            listed_layers=cfg.listed_layers)

    runner = FederatedRunner(cfg.protocol, dataset, factory, seed=proto_seed)

    logs: list[RoundLog] = []
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        try:
            for t in range(1, cfg.protocol.rounds + 1):
                log = runner.run_round(t)
                logs.append(log)
                writer.writerows(_round_rows(log))
                fh.flush()
        except TrainingDiverged:
            fh.flush()  # keep the partial log
            raise
    save_params(runner.server_state, ckpt_path)
    return ExperimentResult(out_path, ckpt_path, logs)


def read_server_rows(csv_path) -> list[dict]:
    rows = []
    with open(csv_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec["row_type"] == "server":
                rows.append({
                    "epoch": int(rec["epoch"]),
                    "metric": float(rec["metric"]),
                    "cumulative_bytes": int(rec["cumulative_bytes"]),
                })
    return rows


def summarize(csv_path, target: float) -> Optional[tuple[int, int]]:
    """First epoch whose server metric reaches ``target`` and the cumulative
    bytes transmitted by then; None if the target is never reached."""
    for row in read_server_rows(csv_path):
        if row["metric"] >= target:
            return row["epoch"], row["cumulative_bytes"]
    return None
