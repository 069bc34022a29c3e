"""Within-class and cross-agent message similarity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError


def cosine_similarity(u, v) -> float:
    """Cosine of the angle; any all-zero vector contributes 0 by convention."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    out = np.zeros_like(x)
    nz = norms > 0
    out[nz] = x[nz] / norms[nz, None]
    return out, nz


@dataclass
class SimilarityMatrix:
    matrix: np.ndarray       # (C, C) mean pairwise cosine per class pair
    class_names: tuple
    role: str = "sender"
    flagged: list = field(default_factory=list)   # classes with <2 messages

    def within_mean(self) -> float:
        d = np.diag(self.matrix)
        return float(np.nanmean(d))

    def between_mean(self) -> float:
        c = self.matrix.shape[0]
        off = self.matrix[~np.eye(c, dtype=bool)]
        return float(np.nanmean(off))


def class_consistency(bits, class_ids, class_names, role="sender") -> SimilarityMatrix:
    """Mean pairwise cosine similarity for every class pair.

    Off-diagonal (a, b): mean over all cross pairs. Diagonal (a, a): mean
    over distinct within-class pairs (self-pairs excluded); classes with
    fewer than 2 messages get a NaN diagonal and are flagged.
    """
    bits = np.atleast_2d(np.asarray(bits, dtype=np.float64))
    class_ids = np.asarray(class_ids)
    c = len(class_names)
    unit, nz = _unit_rows(bits)

    sums = np.zeros((c, bits.shape[1]))
    counts = np.zeros(c)
    unit_norms = np.zeros(c)   # per class: number of nonzero rows (sum of ||u||^2)
    for k in range(c):
        rows = unit[class_ids == k]
        sums[k] = rows.sum(axis=0)
        counts[k] = rows.shape[0]
        unit_norms[k] = float(nz[class_ids == k].sum())

    matrix = np.empty((c, c))
    flagged = []
    for a in range(c):
        for b in range(c):
            if a == b:
                n = counts[a]
                if n < 2:
                    matrix[a, a] = np.nan
                    flagged.append(a)
                    continue
                gram = float(np.dot(sums[a], sums[a])) - unit_norms[a]
                matrix[a, a] = gram / (n * (n - 1))
            else:
                if counts[a] == 0 or counts[b] == 0:
                    matrix[a, b] = np.nan
                    continue
                matrix[a, b] = float(np.dot(sums[a], sums[b])) / (counts[a] * counts[b])
    return SimilarityMatrix(matrix=matrix, class_names=tuple(class_names),
                            role=role, flagged=sorted(set(flagged)))


def within_between_gap(sim: SimilarityMatrix) -> float:
    """Mean within-class similarity minus mean between-class similarity."""
    return sim.within_mean() - sim.between_mean()


@dataclass
class CrossConsistency:
    class_names: tuple
    mean_cosine: np.ndarray      # (C,) sender message vs paired reply
    freq_correlation: np.ndarray  # (C,) Pearson r of per-bit activation freqs

    def rows(self):
        for k, name in enumerate(self.class_names):
            yield {"class": name, "mean_cosine": float(self.mean_cosine[k]),
                   "freq_correlation": float(self.freq_correlation[k])}


def _pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return float("nan")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def cross_consistency(sender_bits, reply_bits, class_ids, class_names) -> CrossConsistency:
    """Per class: paired sender/reply cosine and per-bit frequency correlation."""
    sender_bits = np.atleast_2d(np.asarray(sender_bits, dtype=np.float64))
    reply_bits = np.atleast_2d(np.asarray(reply_bits, dtype=np.float64))
    if sender_bits.shape != reply_bits.shape:
        raise UsageError("sender and reply message arrays must have the same shape")
    class_ids = np.asarray(class_ids)
    c = len(class_names)
    mean_cos = np.full(c, np.nan)
    freq_corr = np.full(c, np.nan)
    for k in range(c):
        sel = class_ids == k
        if not sel.any():
            continue
        s, r = sender_bits[sel], reply_bits[sel]
        mean_cos[k] = np.mean([cosine_similarity(a, b) for a, b in zip(s, r)])
        freq_corr[k] = _pearson(s.mean(axis=0), r.mean(axis=0))
    return CrossConsistency(class_names=tuple(class_names),
                            mean_cosine=mean_cos, freq_correlation=freq_corr)
