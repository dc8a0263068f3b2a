#!/usr/bin/env python3
"""Timed full phase-1 run per task at a given scale; prints gate outcomes."""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from traceweights.config import load_run_config, shipped_config_path
from traceweights.pipeline import run_phase1


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scale", default="desk")
    ap.add_argument("--config")
    ap.add_argument("--task", action="append")
    args = ap.parse_args()
    run_cfg = load_run_config(args.config or shipped_config_path(args.scale))
    for pipe in run_cfg.pipelines:
        if args.task and pipe.task.name not in args.task:
            continue
        t0 = time.time()
        res = run_phase1(pipe, log=lambda line: print(f"  {line}", flush=True))
        print(
            f"task={pipe.task.name} reached_theta={res.reached_theta} "
            f"iterations={res.iterations} val={res.final_val_accuracy:.4f} "
            f"test={res.test_accuracy:.4f} wall={time.time() - t0:.1f}s",
            flush=True,
        )


if __name__ == "__main__":
    main()
