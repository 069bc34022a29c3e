"""PCA built on numpy's SVD with a deterministic sign convention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UsageError


@dataclass
class PCAModel:
    mean: np.ndarray                 # (d,)
    components: np.ndarray           # (k, d) rows are principal directions
    explained_variance: np.ndarray   # (k,) descending
    rank_deficient: bool = False


def fit_pca(x, k) -> PCAModel:
    """Top-k principal components of the rows of x.

    Requires more rows than components. If the data rank is below k the
    trailing components are zero rows and the model is flagged
    rank_deficient; projections into those coordinates are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise UsageError("fit_pca expects a 2-d matrix")
    n, d = x.shape
    if k < 1 or k > d:
        raise UsageError("k must be in [1, n_features]")
    if n <= k:
        raise UsageError(f"need more rows ({n}) than components ({k})")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = s[0] * max(n, d) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    comp = np.zeros((k, d))
    var = np.zeros(k)
    take = min(k, rank)
    comp[:take] = vt[:take]
    var[:take] = (s[:take] ** 2) / (n - 1)
    # sign convention: largest-magnitude coordinate of each component positive
    for i in range(take):
        j = int(np.argmax(np.abs(comp[i])))
        if comp[i, j] < 0:
            comp[i] = -comp[i]
    return PCAModel(mean=mean, components=comp, explained_variance=var,
                    rank_deficient=rank < k)


def apply_pca(model: PCAModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise UsageError("feature dimension does not match the fitted model")
    return (x - model.mean) @ model.components.T
