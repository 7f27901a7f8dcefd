"""Command-line interface.

Subcommands:
  run        execute an experiment config, writing the round-log CSV
  summarize  scan a round log for the first epoch reaching a target metric
  encode     quantize + entropy-code the diff of two checkpoints
  decode     expand a bitstream back into a checkpoint (optionally onto a base)
  inspect    per-tensor byte accounting of a bitstream
  report     render a round-log CSV into figures
"""

from __future__ import annotations

import argparse
import sys

from . import codec
from .codec import BitstreamError
from .config import load_config
from .experiment import run_experiment, summarize
from .models import load_params, param_add, param_diff, save_params
from .protocol import TrainingDiverged
from .report import render_report


def _step_for_name(name: str, weight_step: float, fine_step: float) -> float:
    fine_suffixes = (".scale", ".bias", ".gamma", ".beta",
                     ".running_mean", ".running_var")
    return fine_step if name.endswith(fine_suffixes) else weight_step


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    try:
        result = run_experiment(cfg, csv_path=args.output)
    except TrainingDiverged as exc:
        print(f"run aborted: {exc} (partial log flushed)", file=sys.stderr)
        return 2
    last = result.logs[-1].server_row
    print(f"wrote {result.csv_path} and {result.checkpoint_path}")
    print(f"final epoch {last.epoch}: metric={last.metric:.4f} "
          f"cumulative_bytes={last.cumulative_bytes}")
    return 0


def _cmd_summarize(args) -> int:
    hit = summarize(args.csv, args.target)
    if hit is None:
        print(f"target {args.target} not reached")
        return 1
    epoch, cum = hit
    print(f"target {args.target} reached at epoch {epoch} "
          f"with cumulative_bytes={cum}")
    return 0


def _print_accounting(rows):
    name_w = max([len(r["name"]) for r in rows] + [6])
    print(f"{'tensor':<{name_w}} {'shape':>18} {'elements':>10} "
          f"{'step':>12} {'payload B':>10}")
    total_payload = 0
    total_elems = 0
    for r in rows:
        shape = "x".join(map(str, r["shape"]))
        print(f"{r['name']:<{name_w}} {shape:>18} {r['elements']:>10} "
              f"{r['step_size']:>12.3e} {r['payload_bytes']:>10}")
        total_payload += r["payload_bytes"]
        total_elems += r["elements"]
    print(f"{'total':<{name_w}} {'':>18} {total_elems:>10} {'':>12} "
          f"{total_payload:>10}")


def _cmd_encode(args) -> int:
    old = load_params(args.old)
    new = load_params(args.new)
    delta = param_diff(new, old)
    qts = codec.quantize_delta(
        delta, lambda n: _step_for_name(n, args.weight_step, args.fine_step))
    blob = codec.encode(qts)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    _print_accounting(codec.inspect(blob))
    raw = 4 * sum(a.size for a in delta.values())
    print(f"container: {len(blob)} bytes ({len(blob) / raw:.2%} of 4-byte raw)")
    return 0


def _cmd_decode(args) -> int:
    with open(args.stream, "rb") as fh:
        blob = fh.read()
    try:
        tensors = codec.decode(blob)
    except BitstreamError as exc:
        print(f"decode failed: {exc}", file=sys.stderr)
        return 2
    delta = codec.dequantize_tensors(tensors)
    if args.base:
        base = load_params(args.base)
        save_params(param_add(base, delta), args.out)
    else:
        save_params(delta, args.out)
    print(f"wrote {args.out} ({len(delta)} tensors)")
    return 0


def _cmd_inspect(args) -> int:
    with open(args.stream, "rb") as fh:
        blob = fh.read()
    try:
        rows = codec.inspect(blob)
    except BitstreamError as exc:
        print(f"inspect failed: {exc}", file=sys.stderr)
        return 2
    _print_accounting(rows)
    print(f"container: {len(blob)} bytes, {len(rows)} tensors")
    return 0


def _cmd_report(args) -> int:
    written = render_report(args.csv, out_dir=args.out_dir, prefix=args.prefix)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsfl",
        description="Communication-efficient federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a config file")
    p.add_argument("config")
    p.add_argument("-o", "--output", default=None, help="round-log CSV path")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("summarize", help="first epoch reaching a target metric")
    p.add_argument("csv")
    p.add_argument("--target", type=float, required=True)
    p.set_defaults(fn=_cmd_summarize)

    p = sub.add_parser("encode", help="encode the diff of two checkpoints")
    p.add_argument("old")
    p.add_argument("new")
    p.add_argument("out")
    p.add_argument("--weight-step", type=float,
                   default=codec.WEIGHT_STEP_UNIDIRECTIONAL)
    p.add_argument("--fine-step", type=float, default=codec.FINE_STEP)
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream into a checkpoint")
    p.add_argument("stream")
    p.add_argument("out")
    p.add_argument("--base", default=None,
                   help="checkpoint to add the decoded delta onto")
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("inspect", help="per-tensor byte accounting")
    p.add_argument("stream")
    p.set_defaults(fn=_cmd_inspect)

    p = sub.add_parser("report", help="render figures from round-log CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("-o", "--out-dir", default=None)
    p.add_argument("--prefix", default="report")
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
