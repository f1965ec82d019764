"""Two-component PCA of embeddings and how well a property lines up with it."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConstantInput, DegenerateData, LengthMismatch, MissingProperty, RankDeficient
from .molgraph import MolGraph, descriptors

log = logging.getLogger(__name__)

INTERNAL_PROPERTIES = ("MW", "#HBA", "#HBD", "#R-Bonds", "#C-Centers")
EXTERNAL_PROPERTIES = ("LogP", "PSA", "QED")
REPORT_ORDER = ("MW", "#HBA", "#HBD", "LogP", "PSA", "#R-Bonds", "#C-Centers", "QED")


@dataclass
class Pca2:
    mean: np.ndarray
    axes: np.ndarray  # (2, d), rows orthonormal
    variances: np.ndarray  # (2,), descending

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.axes.T


def fit_pca2(X) -> Pca2:
    """Top two eigenpairs of the sample covariance (divisor n - 1).

    Each axis is signed so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3 or X.shape[1] < 2:
        raise ValueError(f"need at least 3 rows and 2 columns, got {X.shape}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    if not np.any(cov):
        raise DegenerateData("covariance is zero")
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1][:2]
    lam = np.clip(w[order], 0.0, None)
    axes = v[:, order].T.copy()
    for a in axes:
        if a[np.argmax(np.abs(a))] < 0:
            a *= -1
    return Pca2(mean, axes, lam)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"shapes {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least two points")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = xc @ xc, yc @ yc
    if sxx == 0 or syy == 0:
        raise ConstantInput("pearson correlation of a constant vector")
    # one square root of the product keeps exact cases exact
    return float(np.clip(xc @ yc / np.sqrt(sxx * syy), -1.0, 1.0))


def max_pcc(Z, y, rcond: float = 1e-10):
    """Best correlation of y with any linear combination of the two columns of Z.

    Returns (r_max, w1, w2), the weights being least-squares coefficients.
    Collinear columns fall back to the better single column.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != 2 or Z.shape[0] != y.shape[0]:
        raise LengthMismatch(f"Z {Z.shape} vs y {y.shape}")
    if Z.shape[0] < 3:
        raise ValueError("need at least three points")
    yc = y - y.mean()
    if not np.any(yc):
        raise ConstantInput("property is constant")
    Zc = Z - Z.mean(axis=0)
    try:
        sv = np.linalg.svd(Zc, compute_uv=False)
        if sv[0] == 0 or sv[1] <= rcond * sv[0]:
            raise RankDeficient("score columns are collinear")
        w, *_ = np.linalg.lstsq(Zc, yc, rcond=None)
        fit = Zc @ w
        r = np.sqrt(max(fit @ fit, 0.0) / (yc @ yc))
        return float(min(r, 1.0)), float(w[0]), float(w[1])
    except RankDeficient:
        best = (0.0, 0.0, 0.0)
        for j in range(2):
            if np.any(Zc[:, j]):
                r = pearson(Zc[:, j], y)
                if abs(r) > best[0]:
                    w = [0.0, 0.0]
                    w[j] = float(np.sign(r))
                    best = (abs(r), w[0], w[1])
        log.warning("collinear PCA scores; using a single component (r=%.4f)", best[0])
        return best


def property_table(graphs: list[MolGraph], external: dict | None = None) -> dict[str, np.ndarray]:
    """Per-property value arrays aligned with ``graphs``.

    ``external`` maps property name to a per-molecule sequence (None = missing).
    """
    table = {k: [] for k in INTERNAL_PROPERTIES}
    for g in graphs:
        for k, v in descriptors(g).as_dict().items():
            table[k].append(v)
    out = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
    for name, vals in (external or {}).items():
        vals = [np.nan if v is None else float(v) for v in vals]
        if len(vals) != len(graphs):
            raise LengthMismatch(f"{name}: {len(vals)} values for {len(graphs)} molecules")
        out[name] = np.asarray(vals, dtype=np.float64)
    return out


def property_report(embeddings, graphs, external: dict | None = None, out_dir=None):
    """r_max of every available property against the 2-D PCA scores.

    Returns (rows, notes): rows are (property, r_max, w1, w2); properties
    that are missing or constant are skipped and noted. With ``out_dir``
    the table goes to ``pcc.csv`` and the projected points to ``points.csv``.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.shape[0] != len(graphs):
        raise LengthMismatch(f"{X.shape[0]} embeddings for {len(graphs)} molecules")
    pca = fit_pca2(X)
    Z = pca.transform(X)
    props = property_table(graphs, external)
    rows, notes = [], []
    for name in REPORT_ORDER:
        try:
            if name not in props:
                raise MissingProperty(name)
            y = props[name]
            keep = ~np.isnan(y)
            if keep.sum() < 3:
                raise MissingProperty(name)
            r, w1, w2 = max_pcc(Z[keep], y[keep])
            rows.append((name, r, w1, w2))
        except MissingProperty:
            notes.append(f"{name}: not available, skipped")
        except ConstantInput:
            notes.append(f"{name}: constant over this set, skipped")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "pcc.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["property", "r_max", "w1", "w2"])
            for name, r, w1, w2 in rows:
                w.writerow([name, f"{r:.6f}", f"{w1:.6g}", f"{w2:.6g}"])
        names = [n for n in REPORT_ORDER if n in props]
        with open(out_dir / "points.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "z1", "z2"] + names)
            for i, g in enumerate(graphs):
                w.writerow([g.id, f"{Z[i, 0]:.6g}", f"{Z[i, 1]:.6g}"] + [f"{props[n][i]:.6g}" for n in names])
    return rows, notes
