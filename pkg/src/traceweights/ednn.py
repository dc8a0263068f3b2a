"""Encoder-decoder network that maps reduced traces to weight matrices.

Architecture: a dense encoder feeds a 1-channel signal through three
valid convolutions, two transposed convolutions widen it back (each
followed by dropout 0.5 during training), and a final dense layer emits
the flattened matrix image.  All activations are relu; the output is
linear.  The "paper" scale uses 256 dense units and 256/128/64 + 256/128
channels; the "desk" scale halves every width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import json
import numpy as np

from .errors import NumericalError
from .nn import (
    Adam,
    Conv1D,
    ConvTranspose1D,
    Dense,
    Dropout,
    Flatten,
    ReLU,
    ReshapeToMatrix,
    ReshapeToSignal,
)

__all__ = [
    "EdnnModel",
    "EdnnTrainConfig",
    "EdnnHistory",
    "EdnnDivergence",
    "build_ednn",
    "ednn_accuracy",
    "train_ednn",
    "predict_weights",
    "write_ednn",
    "read_ednn",
]

_SCALES = {
    "paper": {"dense": 256, "conv": (256, 128, 64), "deconv": (256, 128)},
    "desk": {"dense": 128, "conv": (128, 64, 32), "deconv": (128, 64)},
}
_CONV_KERNELS = (4, 4, 4)
_DECONV_KERNELS = (5, 4)
_DROPOUT = 0.5


class EdnnDivergence(NumericalError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}: loss is not finite")
        self.epoch = epoch


@dataclass
class EdnnModel:
    layers: list
    input_len: int
    rows: int
    cols: int
    scale: str

    def forward(self, x, train=False, rng=None):
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for layer in self.layers:
            a = layer.forward(a, train=train, rng=rng)
        return a

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    def grads(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.grad_params)
        return out

    def param_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def load_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        total = sum(p.size for p in self.params())
        if vec.size != total:
            raise ValueError(f"checkpoint holds {vec.size} params, model has {total}")
        at = 0
        for p in self.params():
            p[...] = vec[at : at + p.size].reshape(p.shape)
            at += p.size


def build_ednn(input_len: int, output_shape: tuple[int, int], scale: str, seed: int) -> EdnnModel:
    """Fresh model for ``input_len`` features and a (rows, cols) output."""
    if scale not in _SCALES:
        raise ValueError(f"unknown scale {scale!r}, expected one of {sorted(_SCALES)}")
    if input_len < 16:
        raise ValueError(f"input_len must be >= 16, got {input_len}")
    rows, cols = int(output_shape[0]), int(output_shape[1])
    if rows < 1 or cols < 1:
        raise ValueError(f"bad output shape {(rows, cols)}")
    widths = _SCALES[scale]
    rng = np.random.default_rng(seed)

    layers: list = [Dense(input_len, widths["dense"], rng), ReLU(), ReshapeToSignal(1)]
    length = widths["dense"]
    c_prev = 1
    for c_out, k in zip(widths["conv"], _CONV_KERNELS):
        layers += [Conv1D(c_prev, c_out, k, rng), ReLU()]
        length = Conv1D.out_len(length, k)
        c_prev = c_out
    for c_out, k in zip(widths["deconv"], _DECONV_KERNELS):
        layers += [ConvTranspose1D(c_prev, c_out, k, rng), ReLU(), Dropout(_DROPOUT)]
        length = ConvTranspose1D.out_len(length, k)
        c_prev = c_out
    layers += [Flatten(), Dense(c_prev * length, rows * cols, rng), ReshapeToMatrix(rows, cols)]
    return EdnnModel(layers=layers, input_len=input_len, rows=rows, cols=cols, scale=scale)


def ednn_accuracy(pred, truth, tau: float = 0.05, mask: Optional[np.ndarray] = None) -> float:
    """Fraction of counted entries recovered within absolute tolerance tau.

    ``mask`` marks the entries that carry coefficients; without it every
    entry counts.  Batched inputs average over the whole batch.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    hit = np.abs(p - t) <= tau
    if mask is None:
        return float(hit.mean())
    m = np.broadcast_to(mask, hit.shape)
    return float(hit[m].mean())


@dataclass
class EdnnTrainConfig:
    epochs: int = 100
    batch_size: int = 100
    lr: float = 0.001
    tau: float = 0.05
    seed: int = 0


@dataclass
class EdnnHistory:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    reached_theta: bool = False
    epochs_run: int = 0


def train_ednn(
    model: EdnnModel,
    x_train: np.ndarray,
    y_train: np.ndarray,
    cfg: EdnnTrainConfig,
    theta: float,
    val: Optional[tuple[np.ndarray, np.ndarray]] = None,
    mask: Optional[np.ndarray] = None,
    opt: Optional[Adam] = None,
    log=None,
) -> EdnnHistory:
    """MSE training with Adam; stops once validation accuracy reaches theta.

    Passing ``opt`` keeps optimizer moments across calls (warm restarts).
    Raises EdnnDivergence with the epoch index if the loss goes non-finite.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    if x_train.shape[0] != y_train.shape[0] or x_train.shape[0] == 0:
        raise ValueError("training pairs are empty or misaligned")
    rng = np.random.default_rng(cfg.seed)
    if opt is None:
        opt = Adam(model.params(), lr=cfg.lr)
    hist = EdnnHistory()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(x_train.shape[0])
        epoch_loss = 0.0
        for start in range(0, x_train.shape[0], cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred = model.forward(x_train[idx], train=True, rng=rng)
            diff = pred - y_train[idx]
            loss = float(np.sum(diff * diff) / len(idx))
            if not np.isfinite(loss):
                raise EdnnDivergence(epoch)
            model.backward((2.0 / len(idx)) * diff)
            opt.step(model.params(), model.grads())
            epoch_loss += loss * len(idx)
        hist.train_loss.append(epoch_loss / x_train.shape[0])
        hist.epochs_run = epoch

        if val is not None:
            acc = ednn_accuracy(
                model.forward(val[0], train=False), val[1], cfg.tau, mask
            )
            hist.val_accuracy.append(acc)
            if log is not None:
                log(f"epoch={epoch} loss={hist.train_loss[-1]:.5f} val_acc={acc:.4f}")
            if acc >= theta:
                hist.reached_theta = True
                break
        elif log is not None:
            log(f"epoch={epoch} loss={hist.train_loss[-1]:.5f}")
    return hist


def predict_weights(model: EdnnModel, reduced: np.ndarray) -> np.ndarray:
    """Matrix predictions with dropout off; finite by construction check."""
    single = np.ndim(reduced) == 1
    out = model.forward(np.atleast_2d(reduced), train=False)
    if not np.all(np.isfinite(out)):
        raise NumericalError("prediction produced non-finite values")
    return out[0] if single else out


def write_ednn(path, model: EdnnModel, meta: Optional[dict] = None) -> None:
    """ednn.json (architecture + bookkeeping) and ednn.f64 (flat params).

    Parameter order is layer by layer, weights before bias, C order.
    """
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    header = dict(meta or {})
    header.update(
        {
            "scale": model.scale,
            "input_len": model.input_len,
            "rows": model.rows,
            "cols": model.cols,
            "param_count": int(sum(p.size for p in model.params())),
        }
    )
    (d / "ednn.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    (d / "ednn.f64").write_bytes(
        np.ascontiguousarray(model.param_vector(), dtype="<f8").tobytes()
    )


def read_ednn(path) -> tuple[EdnnModel, dict]:
    d = Path(path)
    header = json.loads((d / "ednn.json").read_text())
    model = build_ednn(
        int(header["input_len"]),
        (int(header["rows"]), int(header["cols"])),
        header["scale"],
        seed=0,
    )
    vec = np.frombuffer((d / "ednn.f64").read_bytes(), dtype="<f8")
    model.load_param_vector(vec)
    return model, header
