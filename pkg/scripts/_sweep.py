"""Shared driver for the figure sweep scripts."""
import argparse
import logging
import os
import time
from pathlib import Path

from pilothop.harness import preset, run_sweep, write_csv


def main(name: str, swept: str, description: str) -> None:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--snr-list", default=None, help="comma-separated SNR points in dB")
    ap.add_argument("--out", default=f"results/{name}.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    over = {"n_trials": args.trials}
    if args.snr_list:
        over["snr_db_list"] = tuple(float(s) for s in args.snr_list.split(","))
    records = []
    t0 = time.perf_counter()
    for cfg in preset(name, **over):
        recs = run_sweep(cfg, workers=args.workers)
        records.extend(recs)
        value = getattr(cfg, swept)
        for est in cfg.estimators:
            row = "  ".join(f"{r.nmse_db:7.2f}" for r in recs if r.estimator == est)
            print(f"{swept}={value:<6g} {est}: {row}", flush=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(records, out)
    print(f"wrote {out} ({len(records)} records, {time.perf_counter() - t0:.0f} s)")
