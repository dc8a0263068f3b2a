"""Transfer evaluation protocol over seeded repetitions.

For every task: run phase 1 once, then for each seed train a fresh
victim model on the large pool, extract its weights matrix from one
trace, and compare four variants on one shared held-out test set:

  small_only  fresh random init, trained on the small set only
  init_only   the extracted matrix decoded, no training at all
  p2w         the extracted matrix decoded, then fine-tuned
  target      the victim itself

Both a balanced and a skewed small-set draw are evaluated per seed.
Everything is derived from the master seed; a rerun writes byte-identical
reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .codec import matrix_to_coefficients
from .datasets import Dataset, gen_synthetic, sample_dsmall, stratified_split
from .metrics import confusion_matrix, accuracy_from_cm, f1_score, overfit_epoch
from .mlp import MlpModel, TrainConfig, init_mlp, predict_labels, train_mlp
from .pipeline import (
    PipelineConfig,
    Phase1Result,
    persist_phase1,
    run_phase1,
    run_phase2,
    run_phase3,
)
from .seeding import derive_seed

__all__ = [
    "TargetTrainConfig",
    "ExperimentConfig",
    "evaluate_model",
    "run_experiment",
    "write_report",
]


@dataclass(frozen=True)
class TargetTrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.003
    dropout: float = 0.3


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: int = 20
    modes: tuple[str, ...] = ("balanced", "imbalanced2x")
    eval_pool_size: int = 3000
    test_frac: float = 0.2
    target: TargetTrainConfig = TargetTrainConfig()

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if not self.modes:
            raise ValueError("need at least one sampling mode")
        if not 0.0 < self.test_frac < 1.0:
            raise ValueError("test_frac must be in (0, 1)")


def evaluate_model(model: MlpModel, test: Dataset) -> dict:
    """Accuracy plus F1 (binary for 2 classes, macro otherwise)."""
    cm = confusion_matrix(test.y, predict_labels(model, test.x), test.n_classes)
    avg = "binary" if test.n_classes == 2 else "macro"
    return {"accuracy": accuracy_from_cm(cm), "f1": f1_score(cm, avg)}


def _mean_std(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def _run_task(
    cfg: PipelineConfig,
    exp: ExperimentConfig,
    out_dir: Optional[Path],
    config_digest: str,
    log: Optional[Callable[[str], None]],
    curves: list[dict],
) -> dict:
    phase1 = run_phase1(cfg, log=log)
    if out_dir is not None:
        persist_phase1(out_dir, phase1, config_digest)

    pool = gen_synthetic(
        cfg.task,
        exp.eval_pool_size,
        seed=derive_seed(cfg.master_seed, "eval-pool", cfg.task.name),
    )
    train_pool, test_set = stratified_split(
        pool, exp.test_frac, derive_seed(cfg.master_seed, "test-split", cfg.task.name)
    )

    per_mode: dict = {mode: [] for mode in exp.modes}
    for seed_i in range(1, exp.seeds + 1):
        sm = derive_seed(cfg.master_seed, "exp", cfg.task.name, seed_i)
        target = init_mlp(cfg.topology, derive_seed(sm, "target-init"))
        train_mlp(
            target,
            train_pool.x,
            train_pool.y,
            TrainConfig(
                epochs=exp.target.epochs,
                batch_size=exp.target.batch_size,
                lr=exp.target.lr,
                dropout=exp.target.dropout,
                seed=derive_seed(sm, "target-train"),
            ),
        )
        target_m = evaluate_model(target, test_set)
        matrix = run_phase2(target, phase1, cfg, seed=derive_seed(sm, "phase2-trace"))

        for mode in exp.modes:
            d_small = sample_dsmall(
                train_pool,
                cfg.task.dsmall_size,
                mode,
                seed=derive_seed(sm, "dsmall", mode),
            )

            fresh = init_mlp(cfg.topology, derive_seed(sm, "smallonly-init", mode))
            _, hist_small = run_phase3(
                matrix, d_small, cfg, seed=derive_seed(sm, "ft-small", mode), model=fresh
            )
            small_m = evaluate_model(fresh, test_set)

            init_model = matrix_to_coefficients(matrix, cfg.topology)
            init_m = evaluate_model(init_model, test_set)

            tuned, hist_p2w = run_phase3(
                matrix, d_small, cfg, seed=derive_seed(sm, "ft-p2w", mode)
            )
            p2w_m = evaluate_model(tuned, test_set)

            record = {
                "seed": seed_i,
                "acc_small_only": small_m["accuracy"],
                "f1_small_only": small_m["f1"],
                "overfit_epoch_small_only": overfit_epoch(hist_small.val_acc),
                "acc_init_only": init_m["accuracy"],
                "f1_init_only": init_m["f1"],
                "acc_p2w": p2w_m["accuracy"],
                "f1_p2w": p2w_m["f1"],
                "overfit_epoch_p2w": overfit_epoch(hist_p2w.val_acc),
                "acc_target": target_m["accuracy"],
                "f1_target": target_m["f1"],
                "skew_class": (d_small.imbalance or {}).get("skew_class"),
            }
            per_mode[mode].append(record)

            for variant, hist in (("small_only", hist_small), ("p2w", hist_p2w)):
                for epoch, (ta, va) in enumerate(
                    zip(hist.train_acc, hist.val_acc), start=1
                ):
                    curves.append(
                        {
                            "task": cfg.task.name,
                            "seed": seed_i,
                            "mode": mode,
                            "variant": variant,
                            "epoch": epoch,
                            "train": ta,
                            "val": va,
                        }
                    )
        if log is not None:
            last = per_mode[exp.modes[0]][-1]
            log(
                f"task={cfg.task.name} seed={seed_i} target={last['acc_target']:.3f} "
                f"small={last['acc_small_only']:.3f} init={last['acc_init_only']:.3f} "
                f"p2w={last['acc_p2w']:.3f}"
            )

    modes_out = {}
    for mode, records in per_mode.items():
        agg = {}
        for key in (
            "acc_small_only",
            "f1_small_only",
            "acc_init_only",
            "f1_init_only",
            "acc_p2w",
            "f1_p2w",
            "acc_target",
            "f1_target",
        ):
            agg[key] = _mean_std([r[key] for r in records])
        agg["overfit_rate_small_only"] = float(
            np.mean([r["overfit_epoch_small_only"] is not None for r in records])
        )
        agg["overfit_rate_p2w"] = float(
            np.mean([r["overfit_epoch_p2w"] is not None for r in records])
        )
        modes_out[mode] = {"per_seed": records, "aggregate": agg}

    return {
        "topology": list(cfg.topology),
        "phase1": {
            "reached_theta": phase1.reached_theta,
            "final_val_accuracy": phase1.final_val_accuracy,
            "test_accuracy": phase1.test_accuracy,
            "iterations": phase1.iterations,
        },
        "modes": modes_out,
    }


def run_experiment(
    pipelines: list[PipelineConfig],
    exp: ExperimentConfig,
    out_dir=None,
    config_digest: str = "",
    log: Optional[Callable[[str], None]] = None,
) -> dict:
    """Full protocol over every configured task; returns the report dict."""
    out = Path(out_dir) if out_dir is not None else None
    curves: list[dict] = []
    tasks = {}
    for cfg in pipelines:
        task_out = out / cfg.task.name if out is not None else None
        tasks[cfg.task.name] = _run_task(cfg, exp, task_out, config_digest, log, curves)
    report = {
        "config_digest": config_digest,
        "seeds": exp.seeds,
        "modes": list(exp.modes),
        "tasks": tasks,
    }
    if out is not None:
        write_report(out, report, curves)
    return report


def write_report(out_dir, report: dict, curves: list[dict]) -> None:
    """report.json, summary.csv (task x mode aggregates) and curves.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

    lines = ["task,seed,mode,variant,epoch,split,accuracy"]
    for row in curves:
        for split in ("train", "val"):
            lines.append(
                f"{row['task']},{row['seed']},{row['mode']},{row['variant']},"
                f"{row['epoch']},{split},{row[split]!r}"
            )
    (out / "curves.csv").write_text("\n".join(lines) + "\n")

    agg_keys = [
        "acc_small_only",
        "f1_small_only",
        "acc_init_only",
        "f1_init_only",
        "acc_p2w",
        "f1_p2w",
        "acc_target",
        "f1_target",
    ]
    header = ["task", "mode"]
    for key in agg_keys:
        header += [f"{key}_mean", f"{key}_std"]
    header += ["overfit_rate_small_only", "overfit_rate_p2w"]
    lines = [",".join(header)]
    for task, tdata in report["tasks"].items():
        for mode, mdata in tdata["modes"].items():
            agg = mdata["aggregate"]
            cells = [task, mode]
            for key in agg_keys:
                cells += [repr(agg[key]["mean"]), repr(agg[key]["std"])]
            cells += [repr(agg["overfit_rate_small_only"]), repr(agg["overfit_rate_p2w"])]
            lines.append(",".join(cells))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
