"""Exact t-SNE, 2-d PCA, and silhouette-based cluster separation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from ..worldgen.pca import apply_pca, fit_pca

ENTROPY_TOL = 1e-5


@dataclass
class ProjectionResult:
    coords: np.ndarray              # (N, 2)
    method: str                     # "tsne" | "pca"
    kl_trace: list = field(default_factory=list)
    entropies: np.ndarray = None    # per-point conditional entropy (nats)
    meta: dict = field(default_factory=dict)


def _pairwise_sq_dists(x) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _conditional_probs(d2_row, beta, i):
    logits = -beta * d2_row
    logits[i] = -np.inf
    logits -= logits.max()
    p = np.exp(logits)
    s = p.sum()
    if s <= 0.0:
        p = np.zeros_like(p)
        p[np.arange(len(p)) != i] = 1.0 / (len(p) - 1)
        return p
    return p / s


def _entropy(p) -> float:
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def _search_beta(d2_row, i, target_entropy, max_iter=100):
    """Per-point precision so the conditional entropy matches the target."""
    beta, lo, hi = 1.0, 0.0, np.inf
    p = _conditional_probs(d2_row, beta, i)
    for _ in range(max_iter):
        h = _entropy(p)
        if abs(h - target_entropy) < ENTROPY_TOL:
            break
        if h > target_entropy:
            lo = beta
            beta = beta * 2.0 if not np.isfinite(hi) else (beta + hi) / 2.0
        else:
            hi = beta
            beta = (lo + beta) / 2.0
        p = _conditional_probs(d2_row, beta, i)
    return beta, p


def tsne_project(x, perplexity=20.0, rng=None, n_iter=500, learning_rate=100.0,
                 early_exaggeration=4.0, exaggeration_end=100,
                 momentum=0.5, late_momentum=0.8, momentum_switch=250) -> ProjectionResult:
    """Exact O(n^2) t-SNE with per-point bandwidth matched by binary search.

    Gradient descent with momentum and early exaggeration; the recorded
    kl_trace holds the true (unexaggerated) KL divergence per iteration.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if n > 5000:
        raise UsageError("exact t-SNE is limited to 5000 points")
    if rng is None:
        raise UsageError("tsne_project requires an rng stream")
    if not 5 <= perplexity < n / 3:
        raise UsageError(f"perplexity must satisfy 5 <= perplexity < n/3 = {n / 3:.1f}")

    d2 = _pairwise_sq_dists(x)
    target = float(np.log(perplexity))
    cond = np.zeros((n, n))
    entropies = np.empty(n)
    for i in range(n):
        _, p = _search_beta(d2[i], i, target)
        cond[i] = p
        entropies[i] = _entropy(p)

    p_joint = (cond + cond.T) / (2.0 * n)
    p_joint = np.maximum(p_joint, 1e-12)

    y = rng.normal(0.0, 1e-4, size=(n, 2))
    vel = np.zeros_like(y)
    kl_trace = []
    for it in range(n_iter):
        p_eff = p_joint * early_exaggeration if it < exaggeration_end else p_joint
        yd2 = _pairwise_sq_dists(y)
        w = 1.0 / (1.0 + yd2)
        np.fill_diagonal(w, 0.0)
        q = np.maximum(w / w.sum(), 1e-12)

        kl_trace.append(float((p_joint * (np.log(p_joint) - np.log(q))).sum()))

        pq = (p_eff - q) * w
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
        m = momentum if it < momentum_switch else late_momentum
        vel = m * vel - learning_rate * grad
        y = y + vel
        y = y - y.mean(axis=0)

    return ProjectionResult(coords=y, method="tsne", kl_trace=kl_trace,
                            entropies=entropies,
                            meta={"perplexity": perplexity, "n_iter": n_iter,
                                  "exaggeration_end": exaggeration_end})


def pca_project_2d(x) -> ProjectionResult:
    """Deterministic 2-d companion projection: top-2 principal components."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] < 3:
        raise UsageError("need at least 3 points")
    model = fit_pca(x, 2)
    return ProjectionResult(coords=apply_pca(model, x), method="pca",
                            meta={"explained_variance": model.explained_variance.tolist()})


def cluster_separation(x, labels) -> float:
    """Mean silhouette score with the Euclidean metric.

    Points whose within- and nearest-other-cluster distances are both zero
    contribute 0. Requires >= 2 distinct labels, each with >= 2 members.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise UsageError("silhouette needs at least 2 distinct labels")
    counts = {u: int((labels == u).sum()) for u in uniq}
    small = [str(u) for u, n in counts.items() if n < 2]
    if small:
        raise UsageError(f"labels with fewer than 2 members: {', '.join(small)}")

    d = np.sqrt(_pairwise_sq_dists(x))
    n = x.shape[0]
    s = np.zeros(n)
    for i in range(n):
        same = labels == labels[i]
        a = d[i, same].sum() / (counts[labels[i]] - 1)
        b = min(d[i, labels == u].mean() for u in uniq if u != labels[i])
        denom = max(a, b)
        s[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(s.mean())


def permutation_null(x, labels, rng, n_draws=200) -> np.ndarray:
    """Silhouette scores of label permutations; the comparison null."""
    labels = np.asarray(labels)
    out = np.empty(n_draws)
    for i in range(n_draws):
        out[i] = cluster_separation(x, labels[rng.permutation(len(labels))])
    return out
