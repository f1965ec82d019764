"""Independent reference computations shared by unit and acceptance tests."""

import numpy as np


def angle_grid_max_pcc(Z, y, n_grid=3600):
    """Max over a grid of unit directions of the correlation of Z @ u with y.

    Columns are standardized first; the spanned set of combinations is the
    same, and for uncorrelated columns the correlation is a pure cosine in
    the angle, so the grid error is below 1e-6.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Zs = (Z - Z.mean(0)) / Z.std(0)
    yc = y - y.mean()
    t = np.arange(n_grid) * (2 * np.pi / n_grid)
    S = Zs @ np.vstack([np.cos(t), np.sin(t)])
    r = (yc @ S) / np.sqrt((S * S).sum(0) * (yc @ yc))
    return float(r.max())


def power_iteration_top2(X, iters=5000, seed=0):
    """Top two covariance eigenvectors via power iteration with deflation."""
    Xc = X - X.mean(0)
    C = Xc.T @ Xc / (len(X) - 1)
    g = np.random.default_rng(seed)
    vecs, vals = [], []
    for _ in range(2):
        v = g.normal(size=C.shape[0])
        for _ in range(iters):
            for u in vecs:
                v -= (u @ v) * u
            v = C @ v
            v /= np.linalg.norm(v)
        vecs.append(v)
        vals.append(v @ C @ v)
    return np.array(vecs), np.array(vals)


def brute_force_auc(scores, labels):
    """Pair counting: a positive above a negative scores 1, a tie scores 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))
