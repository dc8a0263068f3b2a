"""Three-phase weight recovery pipeline.

Phase 1 builds the trace-to-matrix translator: surrogate models are
trained on growing subsets of a chunked attacker dataset, each deployed
to the simulated device to capture one trace, and the resulting pairs
train the encoder-decoder until its validation recovery accuracy clears
theta or the chunks run out.  Phase 2 captures one trace of the victim
model and translates it into a weights matrix.  Phase 3 decodes the
matrix into a model and fine-tunes it on the small target dataset.

Pair generation is restarted from scratch with fresh derived seeds on
every outer iteration; nothing is cached between iterations except the
encoder-decoder parameters, which warm-start each retraining (optimizer
moments start fresh).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .codec import (
    WeightsMatrix,
    coefficients_to_matrix,
    matrix_shape,
    matrix_to_coefficients,
    nonpad_mask,
    topology_digest,
)
from .datasets import Dataset, TaskSpec, chunk, gen_synthetic, stratified_split
from .device import DeviceConfig, simulate_trace, write_trace_container
from .ednn import (
    EdnnModel,
    EdnnTrainConfig,
    build_ednn,
    ednn_accuracy,
    predict_weights,
    train_ednn,
    write_ednn,
)
from .mlp import MlpModel, TrainConfig, TrainHistory, init_mlp, train_mlp, validate_topology
from .reduction import PcaModel, Standardizer, pca_fit, pca_transform, write_reduction
from .seeding import derive_seed, digest_of

__all__ = [
    "SurrogateTrainConfig",
    "FinetuneConfig",
    "PipelineConfig",
    "FixedInput",
    "TracePairs",
    "Phase1Result",
    "make_fixed_input",
    "prepare_pairs",
    "split_counts",
    "chunks_for_pairs",
    "run_phase1",
    "run_phase2",
    "run_phase3",
    "translate_trace",
    "persist_phase1",
    "load_phase1",
    "write_fixed_input",
    "write_pairs",
]


@dataclass(frozen=True)
class SurrogateTrainConfig:
    epochs: int = 150
    batch_size: int = 16
    lr: float = 0.003
    dropout: float = 0.3


@dataclass(frozen=True)
class FinetuneConfig:
    epochs_max: int = 80
    batch_size: int = 16
    lr: float = 0.005
    dropout: float = 0.3
    early_stop_patience: int = 10
    lr_halve_after: int = 5
    val_frac: float = 0.2
    restore_best: bool = True


@dataclass
class PipelineConfig:
    task: TaskSpec
    topology: tuple[int, ...]
    device: DeviceConfig
    master_seed: int
    scale: str = "desk"
    chunks: int = 2
    reps: int = 300
    pool_size: int = 600
    pca_k: int = 256
    theta: float = 0.85
    splits: tuple[float, float, float] = (0.75, 0.20, 0.05)
    surrogate: SurrogateTrainConfig = field(default_factory=SurrogateTrainConfig)
    ednn: EdnnTrainConfig = field(default_factory=EdnnTrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def __post_init__(self):
        self.topology = validate_topology(self.topology)
        if self.topology[0] != self.task.n_features:
            raise ValueError(
                f"topology input {self.topology[0]} != task features {self.task.n_features}"
            )
        out = self.topology[-1]
        expected = 1 if self.task.n_classes == 2 else self.task.n_classes
        if out != expected:
            raise ValueError(
                f"topology output {out} does not fit {self.task.n_classes} classes"
            )
        if self.chunks < 1 or self.reps < 1:
            raise ValueError("chunks and reps must be >= 1")
        if self.theta < 0.0:
            raise ValueError("theta must be >= 0")
        if abs(sum(self.splits) - 1.0) > 1e-9 or any(s <= 0 for s in self.splits):
            raise ValueError(f"splits must be positive and sum to 1, got {self.splits}")


@dataclass
class FixedInput:
    values: np.ndarray
    digest: str


def make_fixed_input(n_features: int, master_seed: int) -> FixedInput:
    """The one input vector every captured inference runs on."""
    rng = np.random.default_rng(derive_seed(master_seed, "fixed-input"))
    values = rng.random(n_features)
    return FixedInput(values=values, digest=digest_of(values.tolist()))


@dataclass
class TracePairs:
    traces: np.ndarray        # (n, trace_len)
    matrices: np.ndarray      # (n, rows, cols)
    chunk_of: np.ndarray      # (n,) chunk index per pair
    surrogate_train_acc: np.ndarray  # (n,)
    fixed_digest: str

    @property
    def n(self) -> int:
        return int(self.traces.shape[0])


def _f32_exact(a: np.ndarray) -> np.ndarray:
    # keep in-memory values identical to the float32 the containers store
    return a.astype(np.float32).astype(np.float64)


def prepare_pairs(
    sub_chunks: list[Dataset],
    cfg: PipelineConfig,
    fixed: FixedInput,
    iteration: int,
    log: Optional[Callable[[str], None]] = None,
) -> TracePairs:
    """One (trace, matrix) pair per chunk x repetition.

    Pair i uses device seed ``base XOR i`` where base is derived from the
    master seed and the iteration, so pairs are independent of the order
    they are simulated in.  Surrogate training quality is recorded, not
    gated.
    """
    rows, cols = matrix_shape(cfg.topology)
    device_base = derive_seed(cfg.master_seed, "phase1", iteration, "device")
    traces, matrices, chunk_of, accs = [], [], [], []
    pair_index = 0
    for ci, chunk_ds in enumerate(sub_chunks):
        if chunk_ds.d != cfg.topology[0] or chunk_ds.n_classes != cfg.task.n_classes:
            raise ValueError(
                f"chunk {ci} ({chunk_ds.d} features, {chunk_ds.n_classes} classes) "
                f"does not fit topology {cfg.topology} / {cfg.task.n_classes} classes"
            )
        for rep in range(cfg.reps):
            init_seed = derive_seed(cfg.master_seed, "phase1", iteration, "sur-init", ci, rep)
            train_seed = derive_seed(cfg.master_seed, "phase1", iteration, "sur-train", ci, rep)
            sur = init_mlp(cfg.topology, init_seed)
            hist = train_mlp(
                sur,
                chunk_ds.x,
                chunk_ds.y,
                TrainConfig(
                    epochs=cfg.surrogate.epochs,
                    batch_size=cfg.surrogate.batch_size,
                    lr=cfg.surrogate.lr,
                    dropout=cfg.surrogate.dropout,
                    seed=train_seed,
                ),
            )
            trace = simulate_trace(
                sur, fixed.values, cfg.device, seed=device_base ^ pair_index
            )
            traces.append(trace.samples)
            matrices.append(coefficients_to_matrix(sur).data)
            chunk_of.append(ci)
            accs.append(hist.train_acc[-1])
            pair_index += 1
        if log is not None:
            log(
                f"iteration={iteration} chunk={ci} pairs={pair_index} "
                f"mean_surrogate_acc={float(np.mean(accs)):.3f}"
            )
    return TracePairs(
        traces=_f32_exact(np.asarray(traces)),
        matrices=_f32_exact(np.asarray(matrices)),
        chunk_of=np.asarray(chunk_of, dtype=np.int64),
        surrogate_train_acc=np.asarray(accs, dtype=np.float64),
        fixed_digest=fixed.digest,
    )


def split_counts(n: int, splits: tuple[float, float, float]) -> tuple[int, int, int]:
    """Train/test/validation sizes; floors for train and test, remainder val."""
    n_train = int(math.floor(splits[0] * n))
    n_test = int(math.floor(splits[1] * n))
    n_val = n - n_train - n_test
    if min(n_train, n_test, n_val) < 1:
        raise ValueError(f"{n} pairs cannot honor splits {splits}")
    return n_train, n_test, n_val


def chunks_for_pairs(total_pairs: int, reps: int) -> tuple[int, bool]:
    """Chunk count needed for a pair budget, and whether it divides evenly."""
    if total_pairs < 1 or reps < 1:
        raise ValueError("need positive pair and rep counts")
    count = math.ceil(total_pairs / reps)
    return count, total_pairs % reps == 0


@dataclass
class Phase1Result:
    pca: PcaModel
    scaler: Standardizer
    ednn: EdnnModel
    fixed: FixedInput
    reached_theta: bool
    iterations: list[dict]
    final_val_accuracy: float
    test_accuracy: float
    pairs: Optional[TracePairs]
    split_idx: dict


def run_phase1(
    cfg: PipelineConfig, log: Optional[Callable[[str], None]] = None
) -> Phase1Result:
    """Grow the pair dataset chunk by chunk until the translator clears theta.

    Returns with reached_theta=False (not an error) when every chunk is
    used and validation accuracy still falls short.
    """
    pool = gen_synthetic(
        cfg.task, cfg.pool_size, seed=derive_seed(cfg.master_seed, "chunk-pool", cfg.task.name)
    )
    chunks = chunk(pool, cfg.chunks)
    fixed = make_fixed_input(cfg.topology[0], cfg.master_seed)
    rows, cols = matrix_shape(cfg.topology)
    mask = nonpad_mask(cfg.topology)

    ednn = build_ednn(
        cfg.pca_k, (rows, cols), cfg.scale, seed=derive_seed(cfg.master_seed, "ednn-init")
    )
    iterations: list[dict] = []
    pca = scaler = pairs = None
    split_idx: dict = {}
    reached = False
    val_acc = 0.0
    test_acc = 0.0

    for k in range(1, cfg.chunks + 1):
        pairs = prepare_pairs(chunks[:k], cfg, fixed, iteration=k, log=log)
        n_train, n_test, n_val = split_counts(pairs.n, cfg.splits)
        order = np.random.default_rng(
            derive_seed(cfg.master_seed, "phase1", k, "split")
        ).permutation(pairs.n)
        split_idx = {
            "train": order[:n_train],
            "test": order[n_train : n_train + n_test],
            "val": order[n_train + n_test :],
        }
        # reducer statistics come from the whole current pair set, not a split
        pca = pca_fit(pairs.traces, cfg.pca_k)
        scaler = Standardizer.fit(pca_transform(pca, pairs.traces))
        x_all = scaler.apply(pca_transform(pca, pairs.traces))
        hist = train_ednn(
            ednn,
            x_all[split_idx["train"]],
            pairs.matrices[split_idx["train"]],
            EdnnTrainConfig(
                epochs=cfg.ednn.epochs,
                batch_size=cfg.ednn.batch_size,
                lr=cfg.ednn.lr,
                tau=cfg.ednn.tau,
                seed=derive_seed(cfg.master_seed, "ednn-train", k),
            ),
            theta=cfg.theta,
            val=(x_all[split_idx["val"]], pairs.matrices[split_idx["val"]]),
            mask=mask,
            log=log,
        )
        val_acc = hist.val_accuracy[-1] if hist.val_accuracy else 0.0
        test_acc = ednn_accuracy(
            ednn.forward(x_all[split_idx["test"]], train=False),
            pairs.matrices[split_idx["test"]],
            cfg.ednn.tau,
            mask,
        )
        iterations.append(
            {
                "iteration": k,
                "pairs": pairs.n,
                "mean_surrogate_train_acc": float(pairs.surrogate_train_acc.mean()),
                "ednn_epochs": hist.epochs_run,
                "val_accuracy": val_acc,
                "test_accuracy": test_acc,
                "reached_theta": hist.reached_theta,
            }
        )
        if log is not None:
            log(
                f"iteration={k} done val_acc={val_acc:.4f} "
                f"test_acc={test_acc:.4f} reached={hist.reached_theta}"
            )
        if hist.reached_theta:
            reached = True
            break

    return Phase1Result(
        pca=pca,
        scaler=scaler,
        ednn=ednn,
        fixed=fixed,
        reached_theta=reached,
        iterations=iterations,
        final_val_accuracy=val_acc,
        test_accuracy=test_acc,
        pairs=pairs,
        split_idx={k2: v.tolist() for k2, v in split_idx.items()},
    )


def run_phase2(
    target: MlpModel,
    phase1: Phase1Result,
    cfg: PipelineConfig,
    seed: Optional[int] = None,
) -> WeightsMatrix:
    """Capture one trace of the victim model and translate it.

    The victim must share the pipeline topology; its trace must match
    the fitted PCA length.  The same fixed input is replayed, asserted
    by digest.
    """
    if tuple(target.topology) != tuple(cfg.topology):
        raise ValueError(
            f"victim topology {target.topology} does not match pipeline {cfg.topology}"
        )
    if phase1.fixed.digest != digest_of(phase1.fixed.values.tolist()):
        raise ValueError("fixed input digest mismatch; phase-1 artifacts are corrupt")
    trace_seed = derive_seed(cfg.master_seed, "phase2", "device") if seed is None else seed
    trace = simulate_trace(target, phase1.fixed.values, cfg.device, seed=trace_seed)
    return translate_trace(trace.samples, phase1, cfg.topology)


def translate_trace(
    samples: np.ndarray, phase1: Phase1Result, topology: tuple[int, ...]
) -> WeightsMatrix:
    """One raw trace through the fitted reducer and translator."""
    samples = _f32_exact(np.asarray(samples, dtype=np.float64)[None, :])
    if samples.shape[1] != phase1.pca.length:
        raise ValueError(
            f"trace length {samples.shape[1]} violates topology "
            f"{tuple(topology)}: the fitted reducer expects "
            f"{phase1.pca.length} samples"
        )
    reduced = phase1.scaler.apply(pca_transform(phase1.pca, samples))
    pred = predict_weights(phase1.ednn, reduced)[0]
    rows, cols = matrix_shape(topology)
    return WeightsMatrix(rows=rows, cols=cols, topology=tuple(topology), data=pred)


def run_phase3(
    matrix: WeightsMatrix,
    d_small: Dataset,
    cfg: PipelineConfig,
    seed: int,
    model: Optional[MlpModel] = None,
) -> tuple[MlpModel, TrainHistory]:
    """Decode the matrix into a model and fine-tune it on d_small.

    epochs_max == 0 returns the decoded model untouched (no randomness
    is consumed).  ``model`` overrides the starting point, which is how
    the small-data-only baseline reuses the same training path from a
    random initialization.
    """
    if d_small.n == 0 or np.unique(d_small.y).size < 2:
        raise ValueError(
            f"d_small needs at least two classes to fine-tune, got "
            f"{np.unique(d_small.y).size} in {d_small.n} samples"
        )
    start = model if model is not None else matrix_to_coefficients(matrix, cfg.topology)
    ft = cfg.finetune
    if ft.epochs_max == 0:
        return start, TrainHistory()
    train_ds, val_ds = stratified_split(
        d_small, ft.val_frac, derive_seed(seed, "finetune-split")
    )
    hist = train_mlp(
        start,
        train_ds.x,
        train_ds.y,
        TrainConfig(
            epochs=ft.epochs_max,
            batch_size=ft.batch_size,
            lr=ft.lr,
            dropout=ft.dropout,
            seed=derive_seed(seed, "finetune-train"),
            early_stop_patience=ft.early_stop_patience,
            lr_halve_after=ft.lr_halve_after,
            restore_best=ft.restore_best,
        ),
        val=(val_ds.x, val_ds.y),
    )
    return start, hist


def load_phase1(run_dir) -> Phase1Result:
    """Rehydrate persisted phase-1 artifacts for extraction.

    Pair traces are not reloaded; the result carries everything phase 2
    needs (pca, scaler, ednn, fixed input) plus the recorded history.
    """
    from .ednn import read_ednn
    from .reduction import read_reduction

    run = Path(run_dir)
    fixed_raw = json.loads((run / "fixed_input.json").read_text())
    fixed = FixedInput(
        values=np.asarray(fixed_raw["values"], dtype=np.float64),
        digest=fixed_raw["digest"],
    )
    pca, scaler, _ = read_reduction(run)
    if scaler is None:
        raise ValueError(f"{run}: pca_scaler.json is missing")
    ednn, header = read_ednn(run)
    return Phase1Result(
        pca=pca,
        scaler=scaler,
        ednn=ednn,
        fixed=fixed,
        reached_theta=bool(header.get("reached_theta", False)),
        iterations=header.get("iterations", []),
        final_val_accuracy=float(header.get("final_val_accuracy", 0.0)),
        test_accuracy=float(header.get("test_accuracy", 0.0)),
        pairs=None,
        split_idx={},
    )


def write_fixed_input(out_dir, fixed: FixedInput, config_digest: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fixed_input.json").write_text(
        json.dumps(
            {
                "values": fixed.values.tolist(),
                "digest": fixed.digest,
                "config_digest": config_digest,
            },
            indent=2,
            sort_keys=True,
        )
    )


def write_pairs(out_dir, pairs: TracePairs, config_digest: str, splits=None) -> None:
    """Pair container: trace container plus matrices.f32/matrices.json."""
    out = Path(out_dir)
    meta = {
        "fixed_digest": pairs.fixed_digest,
        "config_digest": config_digest,
        "chunk_of": pairs.chunk_of.tolist(),
        "surrogate_train_acc": pairs.surrogate_train_acc.tolist(),
    }
    if splits is not None:
        meta["splits"] = splits
    write_trace_container(out, pairs.traces, meta)
    mats = np.ascontiguousarray(pairs.matrices, dtype="<f4")
    (out / "matrices.f32").write_bytes(mats.tobytes())
    (out / "matrices.json").write_text(
        json.dumps(
            {
                "count": int(mats.shape[0]),
                "rows": int(mats.shape[1]),
                "cols": int(mats.shape[2]),
                "dtype": "<f4",
                "config_digest": config_digest,
            },
            indent=2,
            sort_keys=True,
        )
    )


def persist_phase1(out_dir, result: Phase1Result, config_digest: str) -> None:
    """Write the run-dir artifacts: fixed_input.json, pairs/, pca.*, ednn.*."""
    out = Path(out_dir)
    write_fixed_input(out, result.fixed, config_digest)
    write_pairs(out / "pairs", result.pairs, config_digest, splits=result.split_idx)
    write_reduction(
        out, result.pca, result.scaler, meta={"config_digest": config_digest}
    )
    write_ednn(
        out,
        result.ednn,
        meta={
            "config_digest": config_digest,
            "reached_theta": result.reached_theta,
            "final_val_accuracy": result.final_val_accuracy,
            "test_accuracy": result.test_accuracy,
            "iterations": result.iterations,
        },
    )
