"""PCA dimensionality reduction for traces, plus per-dimension scaling.

The PCA is the covariance eigendecomposition.  When there are fewer
traces than samples per trace (the usual case here) the eigenvectors are
obtained through the Gram matrix of the centered data, which is
algebraically the same decomposition at a fraction of the cost.  Each
component's sign is normalized so its largest-magnitude entry is
positive, making fits reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NumericalError

__all__ = [
    "PcaModel",
    "RankDeficiencyError",
    "Standardizer",
    "pca_fit",
    "pca_transform",
    "pca_inverse",
    "write_reduction",
    "read_reduction",
]

_RANK_TOL = 1e-10


class RankDeficiencyError(NumericalError):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray          # (length,)
    components: np.ndarray    # (k, length), orthonormal rows
    eigenvalues: np.ndarray   # (k,), descending

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def length(self) -> int:
        return self.components.shape[1]


def _fix_signs(components: np.ndarray) -> np.ndarray:
    for row in components:
        idx = int(np.argmax(np.abs(row)))
        if row[idx] < 0:
            row *= -1.0
    return components


def pca_fit(x, k: int) -> PcaModel:
    """Top-k principal components of the rows of ``x``.

    Requires 2 <= n and 1 <= k <= min(n, length).  Raises if the data
    rank cannot support k components, rather than returning degenerate
    directions.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected 2-d data, got shape {x.shape}")
    n, length = x.shape
    if n < 2:
        raise ValueError("pca_fit needs at least 2 rows")
    if not 1 <= k <= min(n, length):
        raise ValueError(f"k={k} must be in 1..min(n={n}, length={length})")
    mean = x.mean(axis=0)
    xc = x - mean

    if n >= length:
        cov = (xc.T @ xc) / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        evals = evals[::-1][:k]
        comps = evecs[:, ::-1][:, :k].T.copy()
        if evals[-1] < _RANK_TOL * max(float(evals[0]), 1.0):
            raise RankDeficiencyError(
                f"data rank is below k={k}; smallest kept eigenvalue {evals[-1]:.3e}"
            )
    else:
        gram = (xc @ xc.T) / (n - 1)
        evals_all, u = np.linalg.eigh(gram)
        evals = evals_all[::-1][:k]
        if evals[-1] < _RANK_TOL * max(float(evals[0]), 1.0):
            raise RankDeficiencyError(
                f"data rank is below k={k}; smallest kept eigenvalue {evals[-1]:.3e}"
            )
        lifted = xc.T @ u[:, ::-1][:, :k]
        comps = (lifted / np.linalg.norm(lifted, axis=0)).T.copy()

    evals = np.maximum(evals, 0.0)
    return PcaModel(mean=mean, components=_fix_signs(comps), eigenvalues=evals)


def pca_transform(model: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.length:
        raise ValueError(
            f"trace length {x.shape[-1]} does not match fitted length {model.length}"
        )
    return (x - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y @ model.components + model.mean


@dataclass
class Standardizer:
    """Per-dimension shift to zero mean and unit population std."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=0)
        std = x.std(axis=0)  # population convention, ddof=0
        return cls(mean=mean, std=np.maximum(std, 1e-12))

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, y) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.std + self.mean


def write_reduction(
    path, model: PcaModel, scaler: Optional[Standardizer] = None, meta: Optional[dict] = None
) -> None:
    """pca.json + pca.f64 (mean then components, little-endian float64).

    The standardizer, when given, lands in pca_scaler.json next to them.
    """
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    header = dict(meta or {})
    header.update(
        {
            "k": int(model.k),
            "length": int(model.length),
            "eigenvalues": model.eigenvalues.tolist(),
        }
    )
    payload = np.concatenate([model.mean[None, :], model.components], axis=0)
    (d / "pca.f64").write_bytes(np.ascontiguousarray(payload, dtype="<f8").tobytes())
    (d / "pca.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    if scaler is not None:
        (d / "pca_scaler.json").write_text(
            json.dumps(
                {"mean": scaler.mean.tolist(), "std": scaler.std.tolist()},
                indent=2,
                sort_keys=True,
            )
        )


def read_reduction(path) -> tuple[PcaModel, Optional[Standardizer], dict]:
    d = Path(path)
    header = json.loads((d / "pca.json").read_text())
    k, length = int(header["k"]), int(header["length"])
    raw = np.frombuffer((d / "pca.f64").read_bytes(), dtype="<f8")
    if raw.size != (k + 1) * length:
        raise ValueError(
            f"pca.f64 holds {raw.size} values, pca.json says {(k + 1) * length}"
        )
    block = raw.reshape(k + 1, length)
    model = PcaModel(
        mean=block[0].copy(),
        components=block[1:].copy(),
        eigenvalues=np.asarray(header.get("eigenvalues", [0.0] * k), dtype=np.float64),
    )
    scaler = None
    sp = d / "pca_scaler.json"
    if sp.exists():
        sd = json.loads(sp.read_text())
        scaler = Standardizer(
            mean=np.asarray(sd["mean"], dtype=np.float64),
            std=np.asarray(sd["std"], dtype=np.float64),
        )
    return model, scaler, header
