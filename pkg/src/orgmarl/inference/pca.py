"""Principal components of history vectors via the sample covariance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateInput(ValueError):
    pass


@dataclass(frozen=True)
class PcaProjection:
    components: np.ndarray  # (d, n_features), rows orthonormal
    coordinates: np.ndarray  # (n_samples, d)
    eigenvalues: np.ndarray  # (d,), descending
    explained_variance_ratio: np.ndarray  # (d,)
    mean: np.ndarray
    degenerate: bool = False

    def reconstruct(self) -> np.ndarray:
        return self.coordinates @ self.components + self.mean


def pca(x: np.ndarray, d: int, allow_degenerate: bool = False) -> PcaProjection:
    """Top-`d` principal directions of the rows of `x`.

    Eigenvalues are those of the unbiased sample covariance (n - 1
    denominator).  When every row is identical the variance is zero and
    the directions are arbitrary; that raises DegenerateInput unless
    `allow_degenerate` is set, in which case the identity basis is used.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("pca needs at least two vectors")
    if d < 1:
        raise ValueError("d must be >= 1")
    n, f = x.shape
    d = min(d, f)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    total = float(np.trace(cov))
    if total <= 0.0:
        if not allow_degenerate:
            raise DegenerateInput("all vectors are identical; explained variance is undefined")
        comps = np.eye(f)[:d]
        return PcaProjection(comps, centered @ comps.T, np.zeros(d), np.zeros(d), mean, degenerate=True)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:d]
    vals = np.clip(vals[order], 0.0, None)
    comps = vecs[:, order].T
    # fix signs so the largest-magnitude loading of each component is positive
    for i in range(d):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaProjection(comps, centered @ comps.T, vals, vals / total, mean)
