"""Calibration metrics, reliability-diagram data and dispersion diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .objective import ClassTextSet, atfd, mtas


@dataclass(frozen=True)
class PredictionRecord:
    predicted_label: int
    true_label: int
    confidence: float

    def __post_init__(self):
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise InvalidArgumentError(f"confidence {self.confidence} outside [0, 1]")
        if self.predicted_label < 0 or self.true_label < 0:
            raise InvalidArgumentError("labels must be nonnegative")

    @property
    def correct(self) -> bool:
        return self.predicted_label == self.true_label


@dataclass(frozen=True)
class BinStats:
    bin_index: int
    lower: float
    upper: float
    count: int
    accuracy: float
    confidence: float

    @property
    def center(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass
class CalibrationReport:
    ece: float
    accuracy: float
    n_samples: int
    bins: list[BinStats]
    atfd_final: float = float("nan")
    mean_mtas_final: float = float("nan")


def bin_edges(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1) / n_bins


def assign_bins(confidences, n_bins: int) -> np.ndarray:
    """0-based bin of each confidence for right-closed bins ((k-1)/n, k/n]; 0 joins the first bin."""
    c = np.asarray(confidences, dtype=np.float64)
    idx = np.searchsorted(bin_edges(n_bins)[1:], c, side="left")
    return np.clip(idx, 0, n_bins - 1)


def ece_arrays(confidences, correct, n_bins: int = 15) -> tuple[float, list[BinStats]]:
    conf = np.asarray(confidences, dtype=np.float64)
    hit = np.asarray(correct, dtype=np.float64)
    if conf.size == 0:
        raise InvalidArgumentError("ECE of an empty record set")
    if n_bins < 1:
        raise InvalidArgumentError("n_bins must be >= 1")
    m = conf.size
    # sum in sorted-confidence order so the result is exactly order-free
    order = np.lexsort((hit, conf))
    conf, hit = conf[order], hit[order]
    idx = assign_bins(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=hit, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    edges = bin_edges(n_bins)
    bins, total = [], 0.0
    for k in range(n_bins):
        if counts[k]:
            acc_k, conf_k = acc_sum[k] / counts[k], conf_sum[k] / counts[k]
            total += counts[k] / m * abs(acc_k - conf_k)
        else:
            acc_k = conf_k = 0.0
        bins.append(BinStats(k + 1, float(edges[k]), float(edges[k + 1]), int(counts[k]), float(acc_k), float(conf_k)))
    return float(total), bins


def ece(records: Sequence[PredictionRecord], n_bins: int = 15) -> tuple[float, list[BinStats]]:
    """Expected calibration error over equal-width confidence bins."""
    if not records:
        raise InvalidArgumentError("ECE of an empty record set")
    return ece_arrays([r.confidence for r in records], [r.correct for r in records], n_bins)


def accuracy(records: Sequence[PredictionRecord]) -> float:
    if not records:
        raise InvalidArgumentError("accuracy of an empty record set")
    return sum(r.correct for r in records) / len(records)


def report(records: Sequence[PredictionRecord], n_bins: int = 15, atfd_final=float("nan"), mean_mtas_final=float("nan")) -> CalibrationReport:
    value, bins = ece(records, n_bins)
    return CalibrationReport(value, accuracy(records), len(records), bins, atfd_final, mean_mtas_final)


def dispersion_summary(class_set: ClassTextSet) -> tuple[float, float]:
    """(ATFD, mean over classes of MTAS) of one set of prompt embeddings."""
    mean_mtas = float(np.mean([mtas(class_set, i) for i in range(class_set.n_classes)]))
    return atfd(class_set), mean_mtas


def pca_projection(embeddings, out_dim: int = 2, seed: int = 0, max_iter: int = 2000, tol: float = 1e-13) -> np.ndarray:
    """Project onto the top principal directions found by deflated power iteration.

    Returns shape (n, out_dim). Directions with (numerically) zero variance
    give zero coordinates. Each direction's sign is fixed so that its largest
    absolute component is positive.
    """
    x = np.stack([np.asarray(e, dtype=np.float64) for e in embeddings])
    n, d = x.shape
    if n < 2:
        raise InvalidArgumentError("PCA needs at least two points")
    if out_dim >= d or out_dim < 1:
        raise InvalidArgumentError("out_dim must be in [1, d)")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n
    scale = np.trace(cov)
    rng = np.random.default_rng(seed)
    coords = np.zeros((n, out_dim))
    if scale <= 0:
        return coords
    for k in range(out_dim):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = cov @ v
            nw = np.linalg.norm(w)
            if nw <= 1e-12 * scale:
                lam = 0.0
                break
            w /= nw
            done = np.linalg.norm(w - v) < tol
            v, lam = w, nw
            if done:
                break
        if lam <= 1e-12 * scale:
            # remaining variance is numerically zero
            break
        v *= np.sign(v[np.argmax(np.abs(v))])
        coords[:, k] = centered @ v
        cov = cov - lam * np.outer(v, v)
    return coords
