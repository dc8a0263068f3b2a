"""Command-line entry point.

One subcommand per phase plus the end-to-end experiment.  Everything
heavier than argument parsing imports lazily so --threads can pin the
BLAS pool before numpy loads.

Exit codes: 0 success, 1 usage, 2 validation or data error, 3 numerical
failure.  Logs go to stderr as key=value lines; stdout carries only
machine-readable results.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the contract reserves 2 for data errors
    def error(self, message):
        raise _UsageError(message)


def _log(stage: str, line: str) -> None:
    sys.stderr.write(f"stage={stage} {line}\n")
    sys.stderr.flush()


def _fail(stage: str, code: int, err: Exception) -> int:
    kind = type(err).__name__
    _log(stage, f"error={kind} detail={err}")
    return code


def _pin_threads(n: int) -> None:
    for var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n)


def _load_config(args):
    from .config import load_run_config, shipped_config_path

    path = args.config if args.config else shipped_config_path(args.scale)
    return load_run_config(path, seed_override=args.seed)


def _pick_pipeline(run_cfg, name):
    from .config import ValidationError

    if name is None:
        return run_cfg.pipelines[0]
    for p in run_cfg.pipelines:
        if p.task.name == name:
            return p
    have = [p.task.name for p in run_cfg.pipelines]
    raise ValidationError(f"no task named {name!r} in config; tasks: {have}")


def _write_config_copy(out: Path, run_cfg) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(run_cfg.raw)
    doc["config_digest"] = run_cfg.digest
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _write_curves(path: Path, history) -> None:
    lines = ["epoch,split,accuracy"]
    for e, acc in enumerate(history.train_acc, start=1):
        lines.append(f"{e},train,{acc!r}")
    for e, acc in enumerate(history.val_acc, start=1):
        lines.append(f"{e},val,{acc!r}")
    path.write_text("\n".join(lines) + "\n")


def _cmd_validate_config(args) -> int:
    run_cfg = _load_config(args)
    _log("validate-config", f"ok=true digest={run_cfg.digest} scale={run_cfg.scale}")
    print(json.dumps({"valid": True, "digest": run_cfg.digest}))
    return 0


def _cmd_gen_data(args) -> int:
    from .datasets import gen_synthetic, load_csv, write_dataset
    from .config import ValidationError
    from .seeding import derive_seed

    run_cfg = _load_config(args)
    out = Path(args.out)
    if args.csv is not None:
        if args.label_column is None:
            raise ValidationError("--csv needs --label-column")
        ds = load_csv(args.csv, args.label_column)
    else:
        pipe = _pick_pipeline(run_cfg, args.task)
        n = args.n if args.n is not None else pipe.pool_size
        ds = gen_synthetic(
            pipe.task, n, seed=derive_seed(run_cfg.master_seed, "gen-data", pipe.task.name)
        )
    write_dataset(out, ds, meta={"config_digest": run_cfg.digest})
    _log("gen-data", f"name={ds.name} n={ds.n} d={ds.d} classes={ds.n_classes} out={out}")
    return 0


def _cmd_prepare_pairs(args) -> int:
    from .datasets import chunk, gen_synthetic
    from .pipeline import make_fixed_input, prepare_pairs, write_fixed_input, write_pairs
    from .seeding import derive_seed

    run_cfg = _load_config(args)
    pipe = _pick_pipeline(run_cfg, args.task)
    out = Path(args.out)
    k = min(max(args.iteration, 1), pipe.chunks)
    pool = gen_synthetic(
        pipe.task,
        pipe.pool_size,
        seed=derive_seed(pipe.master_seed, "chunk-pool", pipe.task.name),
    )
    chunks = chunk(pool, pipe.chunks)
    fixed = make_fixed_input(pipe.topology[0], pipe.master_seed)
    pairs = prepare_pairs(
        chunks[:k], pipe, fixed, iteration=k, log=lambda s: _log("prepare-pairs", s)
    )
    write_fixed_input(out, fixed, run_cfg.digest)
    write_pairs(out / "pairs", pairs, run_cfg.digest)
    _log("prepare-pairs", f"task={pipe.task.name} pairs={pairs.n} out={out}")
    return 0


def _cmd_train_ednn(args) -> int:
    from .pipeline import persist_phase1, run_phase1

    run_cfg = _load_config(args)
    pipe = _pick_pipeline(run_cfg, args.task)
    out = Path(args.out)
    result = run_phase1(pipe, log=lambda s: _log("train-ednn", s))
    _write_config_copy(out, run_cfg)
    persist_phase1(out, result, run_cfg.digest)
    _log(
        "train-ednn",
        f"task={pipe.task.name} reached_theta={result.reached_theta} "
        f"val_accuracy={result.final_val_accuracy:.4f} "
        f"test_accuracy={result.test_accuracy:.4f} out={out}",
    )
    return 0


def _cmd_extract(args) -> int:
    from .config import ValidationError
    from .device import read_trace_container
    from .mlp import model_from_dict
    from .pipeline import load_phase1, run_phase2, translate_trace

    run_cfg = _load_config(args)
    pipe = _pick_pipeline(run_cfg, args.task)
    out = Path(args.out)
    phase1 = load_phase1(args.run)
    if (args.model is None) == (args.trace is None):
        raise ValidationError("need exactly one of --model or --trace")
    if args.model is not None:
        target = model_from_dict(json.loads(Path(args.model).read_text()))
        matrix = run_phase2(target, phase1, pipe)
    else:
        traces, _ = read_trace_container(args.trace)
        matrix = translate_trace(
            traces[args.trace_index].astype("float64"), phase1, pipe.topology
        )
    out.mkdir(parents=True, exist_ok=True)
    doc = matrix.to_json_dict()
    doc["config_digest"] = run_cfg.digest
    doc["fixed_digest"] = phase1.fixed.digest
    (out / "extracted_matrix.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    _log("extract", f"rows={matrix.rows} cols={matrix.cols} out={out}")
    return 0


def _cmd_finetune(args) -> int:
    from dataclasses import replace

    from .codec import WeightsMatrix
    from .datasets import read_dataset
    from .mlp import model_to_dict
    from .pipeline import run_phase3
    from .seeding import derive_seed

    run_cfg = _load_config(args)
    pipe = _pick_pipeline(run_cfg, args.task)
    out = Path(args.out)
    matrix = WeightsMatrix.from_json_dict(json.loads(Path(args.matrix).read_text()))
    d_small = read_dataset(args.data)
    if args.epochs_max is not None:
        pipe = replace(pipe, finetune=replace(pipe.finetune, epochs_max=args.epochs_max))
    model, hist = run_phase3(
        matrix, d_small, pipe, seed=derive_seed(pipe.master_seed, "cli", "finetune")
    )
    out.mkdir(parents=True, exist_ok=True)
    doc = model_to_dict(model)
    doc["config_digest"] = run_cfg.digest
    (out / "final_model.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    _write_curves(out / "curves.csv", hist)
    last_val = hist.val_acc[-1] if hist.val_acc else None
    _log(
        "finetune",
        f"epochs_run={len(hist.train_acc)} best_epoch={hist.best_epoch} "
        f"val_accuracy={last_val} out={out}",
    )
    return 0


def _cmd_evaluate(args) -> int:
    from .datasets import read_dataset
    from .experiment import evaluate_model
    from .mlp import model_from_dict

    run_cfg = _load_config(args)
    model = model_from_dict(json.loads(Path(args.model).read_text()))
    ds = read_dataset(args.data)
    metrics = evaluate_model(model, ds)
    metrics["config_digest"] = run_cfg.digest
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    _log("evaluate", f"accuracy={metrics['accuracy']!r} f1={metrics['f1']!r}")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _cmd_experiment(args) -> int:
    from .experiment import run_experiment

    run_cfg = _load_config(args)
    out = Path(args.out)
    _write_config_copy(out, run_cfg)
    run_experiment(
        run_cfg.pipelines,
        run_cfg.experiment,
        out_dir=out,
        config_digest=run_cfg.digest,
        log=lambda s: _log("experiment", s),
    )
    _log("experiment", f"report={out / 'report.json'}")
    return 0


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run config JSON; defaults to the shipped --scale config")
    common.add_argument(
        "--scale",
        choices=("desk", "paper"),
        default="desk",
        help="which shipped config to use when --config is absent",
    )
    common.add_argument("--seed", type=int, help="override the config master seed")
    common.add_argument(
        "--threads", type=int, default=1, help="BLAS thread cap (default 1, deterministic)"
    )

    parser = _Parser(prog="traceweights", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_text, out_required=True, out_flag=True):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if out_flag:
            p.add_argument("--out", required=out_required, help="output directory")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", _cmd_gen_data, "write a dataset container (synthetic task or CSV)")
    p.add_argument("--task", help="task name from the config (default: first)")
    p.add_argument("--n", type=int, help="sample count (default: task pool size)")
    p.add_argument("--csv", help="convert a CSV file instead of generating")
    p.add_argument("--label-column", help="label column name for --csv")

    p = add("prepare-pairs", _cmd_prepare_pairs, "train surrogates and capture trace/matrix pairs")
    p.add_argument("--task", help="task name from the config (default: first)")
    p.add_argument(
        "--iteration", type=int, default=1, help="outer iteration: how many chunks to use"
    )

    p = add("train-ednn", _cmd_train_ednn, "run phase 1 and persist the run directory")
    p.add_argument("--task", help="task name from the config (default: first)")

    p = add("extract", _cmd_extract, "translate a victim model or captured trace into a matrix")
    p.add_argument("--task", help="task name from the config (default: first)")
    p.add_argument("--run", required=True, help="phase-1 run directory")
    p.add_argument("--model", help="victim model JSON to trace and translate")
    p.add_argument("--trace", help="trace container to translate instead of --model")
    p.add_argument("--trace-index", type=int, default=0, help="row of --trace to use")

    p = add("finetune", _cmd_finetune, "decode a matrix and fine-tune on a small dataset")
    p.add_argument("--task", help="task name from the config (default: first)")
    p.add_argument("--matrix", required=True, help="extracted_matrix.json path")
    p.add_argument("--data", required=True, help="small dataset container directory")
    p.add_argument("--epochs-max", type=int, help="override fine-tune epoch budget (0 = none)")

    p = add("evaluate", _cmd_evaluate, "accuracy and F1 of a model on a dataset", out_required=False)
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--data", required=True, help="dataset container directory")

    add("experiment", _cmd_experiment, "full multi-seed comparison; writes report.json")

    add("validate-config", _cmd_validate_config, "check a config and print its digest",
        out_flag=False)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        _log("usage", f"error={e}")
        return 1
    _pin_threads(max(args.threads, 1))

    from .config import ValidationError
    from .errors import NumericalError

    stage = args.command
    try:
        return args.func(args)
    except NumericalError as e:
        return _fail(stage, 3, e)
    except ValidationError as e:
        return _fail(stage, 2, e)
    except (ValueError, OSError, KeyError, IndexError) as e:
        return _fail(stage, 2, e)


if __name__ == "__main__":
    sys.exit(main())
