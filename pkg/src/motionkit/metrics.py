"""Reconstruction and generation metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .curation import jerk_series

log = logging.getLogger(__name__)

PSD_WARN = -1e-6
PSD_TOL = -1e-8
ZERO_JERK = 1e-6  # m/s^3


class MetricError(ValueError):
    pass


def mpjpe(reference: np.ndarray, candidate: np.ndarray) -> float:
    """Mean per-joint position error in millimeters (inputs in meters)."""
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(candidate, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b, axis=-1).mean() * 1000.0)


def acceleration_series(positions: np.ndarray, fps: float) -> np.ndarray:
    """Per-frame mean joint acceleration magnitude (central second differences)."""
    P = np.asarray(positions, dtype=np.float64)
    if P.ndim == 2:
        P = P[:, None, :]
    if P.shape[0] < 3:
        raise MetricError("acceleration needs at least 3 frames")
    acc = (P[2:] - 2 * P[1:-1] + P[:-2]) * fps ** 2
    return np.linalg.norm(acc, axis=-1).mean(axis=-1)


def acceleration_stats(positions: np.ndarray, fps: float) -> dict[str, float]:
    a = acceleration_series(positions, fps)
    return {"mean": float(a.mean()), "max": float(a.max())}


def jerk_stats(corpus: Sequence[tuple[np.ndarray, float]], bins: int = 50,
               range_: Optional[tuple[float, float]] = None) -> dict:
    """Pool per-frame jerk over a corpus of ``(positions, fps)`` pairs.

    Returns mean, standard percentiles and a histogram (``counts`` over
    ``edges``).  With an explicit ``range_`` the outer bins absorb values
    beyond it.
    """
    if not corpus:
        raise MetricError("empty corpus")
    values = np.concatenate([jerk_series(p, fps) for p, fps in corpus])
    # below ZERO_JERK the values are float noise; keep them in the first bin
    top = float(values.max())
    lo, hi = range_ if range_ is not None else (0.0, top if top > ZERO_JERK else 1.0)
    # out-of-range values land in the end bins so the counts always total the sample count
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    return {
        "count": int(values.size),
        "mean": float(values.mean()),
        "percentiles": {str(q): float(np.percentile(values, q)) for q in (5, 25, 50, 75, 95, 99)},
        "histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
    }


def histogram_csv(hist: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "count"])
    edges, counts = hist["edges"], hist["counts"]
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        w.writerow([f"{lo:.6g}", f"{hi:.6g}", c])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Frechet distance


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise MetricError(f"covariance {self.cov.shape} does not match mean ({d},)")
        if np.abs(self.cov - self.cov.T).max(initial=0.0) > 1e-9 * max(1.0, np.abs(self.cov).max(initial=0.0)):
            raise MetricError("covariance is not symmetric")

    @classmethod
    def from_samples(cls, X: np.ndarray) -> "FeatureStats":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise MetricError("need a non-empty (samples, dim) array")
        mu = X.mean(axis=0)
        Xc = X - mu
        # maximum-likelihood (1/n) so a corpus and its duplicate fit the same Gaussian
        cov = Xc.T @ Xc / X.shape[0]
        return cls(mu, 0.5 * (cov + cov.T))


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < PSD_WARN * scale:
        log.warning("matrix has eigenvalue %.3g below zero; clamping", w.min())
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The cross term uses ``tr((S_a S_b)^(1/2)) = tr((A S_b A)^(1/2))`` with
    ``A = S_a^(1/2)``, so only symmetric eigendecompositions are needed.
    """
    if a.mean.shape != b.mean.shape:
        raise MetricError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    for s in (a, b):
        w = np.linalg.eigvalsh(s.cov)
        if w.min(initial=0.0) < PSD_TOL * max(1.0, float(np.abs(w).max(initial=0.0))) and w.min() < PSD_WARN:
            raise MetricError(f"covariance not positive semidefinite (min eigenvalue {w.min():.3g})")
    A = _psd_sqrt(a.cov)
    cross = _psd_sqrt(A @ b.cov @ A)
    diff = a.mean - b.mean
    val = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross)
    return float(max(val, 0.0))


# --------------------------------------------------------------------------
# retrieval


def r_precision(scores: np.ndarray, k: int) -> float:
    """Fraction of rows whose diagonal entry ranks within the row's top ``k``.

    Ties rank the lower column index first.
    """
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise MetricError(f"similarity matrix must be square, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise MetricError("similarity matrix has non-finite entries")
    B = S.shape[0]
    if not 1 <= k <= B:
        raise MetricError(f"k={k} outside [1, {B}]")
    diag = np.diag(S)[:, None]
    cols = np.arange(B)
    ahead = (S > diag) | ((S == diag) & (cols[None, :] < cols[:, None]))
    rank = ahead.sum(axis=1)
    return float((rank < k).mean())


def batched_r_precision(scores_fn: Callable[[np.ndarray], np.ndarray], n: int, ks=(1, 2, 3),
                        batch: int = 32, seed: int = 0) -> dict[int, float]:
    """Average R@k over random batches of ``batch`` matched pairs.

    ``scores_fn(indices)`` returns the ``batch x batch`` similarity matrix for
    those pair indices.  Incomplete trailing batches are dropped.
    """
    order = np.random.default_rng(seed).permutation(n)
    res = {k: [] for k in ks}
    for s in range(0, n - batch + 1, batch):
        S = scores_fn(order[s:s + batch])
        for k in ks:
            res[k].append(r_precision(S, k))
    if not res[ks[0]]:
        raise MetricError(f"need at least {batch} pairs")
    return {k: float(np.mean(v)) for k, v in res.items()}


# --------------------------------------------------------------------------
# feature extraction


def handcrafted_features(positions: np.ndarray, fps: float) -> np.ndarray:
    """Per-clip vector: mean/std of joint velocities and accelerations (root-relative)."""
    P = np.asarray(positions, dtype=np.float64)
    if P.shape[0] < 3:
        raise MetricError("need at least 3 frames")
    rel = P - P[:, :1, :]
    vel = np.diff(rel, axis=0) * fps
    acc = np.diff(rel, n=2, axis=0) * fps ** 2
    root_v = np.linalg.norm(np.diff(P[:, 0, :], axis=0), axis=-1) * fps
    parts = [vel.mean(0).ravel(), vel.std(0).ravel(), acc.mean(0).ravel(), acc.std(0).ravel(),
             [root_v.mean(), root_v.std()]]
    return np.concatenate([np.ravel(p) for p in parts])


def motion_feature_stats(corpus: Sequence, extractor: str = "handcrafted", tokenizer=None,
                         skeleton=None) -> FeatureStats:
    """Gaussian fit of per-clip features.

    ``handcrafted``: ``corpus`` holds ``(positions, fps)`` pairs.
    ``tokenizer-latent``: ``corpus`` holds raw feature arrays and ``tokenizer``
    is a trained tokenizer model; its pre-quantization latents are mean pooled.
    """
    if not corpus:
        raise MetricError("empty corpus")
    if extractor == "handcrafted":
        X = np.stack([handcrafted_features(p, fps) for p, fps in corpus])
    elif extractor == "tokenizer-latent":
        if tokenizer is None:
            raise MetricError("tokenizer-latent extractor needs a tokenizer")
        X = np.stack([tokenizer.latent(np.asarray(f)).mean(axis=0) for f in corpus])
    else:
        raise MetricError(f"unknown extractor {extractor!r}")
    return FeatureStats.from_samples(X)


def format_report(report: dict) -> str:
    """Two-column human-readable table of a flat-ish report dict."""
    lines = []

    def walk(prefix, v):
        if isinstance(v, dict):
            for k, x in v.items():
                walk(f"{prefix}.{k}" if prefix else str(k), x)
        elif isinstance(v, float):
            lines.append((prefix, f"{v:.6g}"))
        elif isinstance(v, list) and len(v) > 8:
            lines.append((prefix, f"[{len(v)} values]"))
        else:
            lines.append((prefix, json.dumps(v)))

    walk("", report)
    width = max((len(k) for k, _ in lines), default=0)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in lines) + "\n"
