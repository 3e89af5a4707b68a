"""PSNR, SSIM, sliced Wasserstein distance and ROC/AUC."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

# reported for MSE == 0; float("inf") does not survive every summary format
PSNR_INF = math.inf


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8, peak: float = 1.0, c1=None, c2=None) -> float:
    """Mean SSIM over all ``window`` x ``window`` patches (uniform weights), averaged over channels."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"ssim: image {a.shape[:2]} smaller than window {window}")
    c1 = (0.01 * peak) ** 2 if c1 is None else c1
    c2 = (0.03 * peak) ** 2 if c2 is None else c2
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    vals = []
    for ch in range(a.shape[2]):
        wa = sliding_window_view(a[..., ch], (window, window))
        wb = sliding_window_view(b[..., ch], (window, window))
        mu_a = wa.mean(axis=(-1, -2))
        mu_b = wb.mean(axis=(-1, -2))
        var_a = wa.var(axis=(-1, -2))
        var_b = wb.var(axis=(-1, -2))
        cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def sliced_wasserstein(set_a: np.ndarray, set_b: np.ndarray, projections: int = 64, seed: int = 0) -> float:
    """Mean over random unit directions of the 1-d W1 distance between projections.

    Sets of different sizes are compared through their quantile functions
    on a common grid.
    """
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sliced_wasserstein: empty set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"sliced_wasserstein: dimension {a.shape[1]} vs {b.shape[1]}")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((a.shape[1], projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa = np.sort(a @ dirs, axis=0)
    pb = np.sort(b @ dirs, axis=0)
    if pa.shape[0] != pb.shape[0]:
        n = max(pa.shape[0], pb.shape[0])
        q = (np.arange(n) + 0.5) / n
        pa = np.quantile(pa, q, axis=0, method="inverted_cdf")
        pb = np.quantile(pb, q, axis=0, method="inverted_cdf")
    return float(np.mean(np.abs(pa - pb)))


@dataclass
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """Sweep thresholds over the sorted unique scores; trapezoid AUC.

    Tied scores move together, which is what averages ties.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("roc_auc: scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("roc_auc: labels must be 0/1")
    pos, neg = int(y.sum()), int(y.size - y.sum())
    if pos == 0 or neg == 0:
        raise ValueError("roc_auc: both classes must be present")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_run = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last_of_run]
    fp = (last_of_run + 1) - tp
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    thresholds = np.r_[np.inf, s[last_of_run]]
    auc = float(_trapezoid(tpr, fpr))
    return RocCurve(thresholds, tpr, fpr, auc)


def latent_vectors(mu: np.ndarray) -> np.ndarray:
    """N x C x h x w latent means -> (N*h*w) x C per-position vectors."""
    mu = np.asarray(mu)
    n, c, h, w = mu.shape
    return mu.transpose(0, 2, 3, 1).reshape(n * h * w, c)


def format_summary(values: Mapping[str, float]) -> str:
    """``name=value`` lines, sorted by name; infinities print as ``inf``."""
    lines = []
    for k in sorted(values):
        v = values[k]
        lines.append(f"{k}={'inf' if math.isinf(v) else repr(float(v))}")
    return "\n".join(lines) + "\n"


def parse_summary(text: str) -> Dict[str, float]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k.strip()] = float(v)
    return out
