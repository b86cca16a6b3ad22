"""Command-line entry point: ``pmse-sim simulate`` and ``pmse-sim design``."""

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pmse
from .errors import PrecodingError, SweepError
from .harness import (figure_recipes, load_config, read_complex_csv, run_sweep,
                      system_from_config, write_complex_csv)
from .model import ChannelSet


def _snr_list(text):
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad SNR list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty SNR list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmse-sim", description="Multiuser MIMO precoder design and simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a figure sweep and write CSV")
    sim.add_argument("--figure", required=True, choices=("fig2", "fig3", "fig4"))
    sim.add_argument("--trials", type=int, default=500)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default=None,
                     help="trial CSV path (default: <figure>.csv); a _summary.csv is added")
    sim.add_argument("--snr-list", type=_snr_list, default=None, help="comma list in dB")
    sim.add_argument("--symbols", type=int, default=None, help="symbols per trial")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--no-timing", action="store_true",
                     help="write wall_ms as 0 for byte-reproducible output")

    des = sub.add_parser("design", help="design filters and powers for one channel")
    des.add_argument("--config", required=True, help="key = value system description")
    des.add_argument("--channel", required=True,
                     help="CSV, M rows of interleaved re,im for the N columns of H")
    des.add_argument("--out", default=".", help="output directory")
    des.add_argument("--snr-list", type=_snr_list, default=None,
                     help="single SNR in dB overriding the config noise power")
    return parser


def _simulate(args) -> int:
    spec = figure_recipes(args.figure, trials=args.trials, master_seed=args.seed)
    changes = {"output": args.out or f"{args.figure}.csv", "workers": args.workers,
               "record_wall_time": not args.no_timing}
    if args.snr_list:
        changes["snr_db"] = args.snr_list
    if args.symbols is not None:
        changes["n_symbols"] = args.symbols
    spec = replace(spec, **changes)
    try:
        result = run_sweep(spec)
    except SweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for (si, method), reason in sorted(result.infeasible.items()):
        print(f"system {si}: {method} infeasible ({reason})", file=sys.stderr)
    if result.failures:
        print(f"{len(result.failures)} trial runs failed and were skipped", file=sys.stderr)
    print(Path(spec.output).with_name(Path(spec.output).stem + "_summary.csv"))
    return 0


def _design(args) -> int:
    conf = load_config(args.config)
    if args.snr_list:
        if len(args.snr_list) != 1:
            print("error: design takes a single SNR", file=sys.stderr)
            return 2
        conf = dict(conf, snr_db=str(args.snr_list[0]))
        conf.pop("noise_power", None)
    cfg = system_from_config(conf)
    H = read_complex_csv(args.channel, n_cols=cfg.total_rx)
    ch = ChannelSet.from_matrix(H, cfg.n_rx)
    sol = pmse.solve(cfg, ch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_complex_csv(out / "U.csv", sol.filters.U)
    for k, v in enumerate(sol.filters.V):
        write_complex_csv(out / f"V_{k + 1}.csv", v)
    m = sol.metrics
    with open(out / "powers.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stream", "user", "q", "p", "sinr_uplink", "sinr_downlink", "mse",
                    "rate_bits"])
        for i in range(cfg.total_streams):
            w.writerow([i + 1, int(cfg.stream_user[i]) + 1]
                       + [repr(float(x[i])) for x in (sol.powers.q, sol.powers.p, m.gamma_ul,
                                                      m.gamma_dl, m.mse, m.rate)])
    print(f"sum rate {m.sum_rate:.6f} bits/channel use after {sol.trace.iterations} "
          f"iterations ({sol.trace.reason})")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _simulate(args) if args.command == "simulate" else _design(args)
    except (PrecodingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
