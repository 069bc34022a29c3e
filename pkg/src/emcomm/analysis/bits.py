"""Per-bit message structure and targeted bit-flip perturbation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from ..game import EpisodeSource, run_conversation_batch, sample_episode_batch
from ..rng import derive

CONSTANT1 = "constant1"
CONSTANT0 = "constant0"
VARIABLE = "variable"

FLIP_SPECS = ("constant0", "constant1", "constant", "variable")


@dataclass
class BitProfile:
    freq: np.ndarray        # (C, D) per-class activation frequency
    labels: np.ndarray      # (C, D) object array of CONSTANT1/CONSTANT0/VARIABLE
    class_names: tuple
    n_messages: np.ndarray  # (C,)

    def rows(self):
        for k, name in enumerate(self.class_names):
            for j in range(self.freq.shape[1]):
                yield {"class": name, "bit": j,
                       "frequency": float(self.freq[k, j]),
                       "label": str(self.labels[k, j])}


def classify_bits(bits, class_ids, class_names, min_count=20) -> BitProfile:
    """Label each (class, bit) as constant-1 (>0.9), constant-0 (<0.1), or variable.

    Thresholds are strict inequalities; a class with fewer than min_count
    messages is a statistics error naming that class.
    """
    bits = np.atleast_2d(np.asarray(bits, dtype=np.float64))
    class_ids = np.asarray(class_ids)
    c, d = len(class_names), bits.shape[1]
    freq = np.zeros((c, d))
    n = np.zeros(c, dtype=np.int64)
    for k in range(c):
        sel = class_ids == k
        n[k] = int(sel.sum())
        if n[k] < min_count:
            raise UsageError(
                f"class {class_names[k]!r} has {n[k]} messages; need >= {min_count}")
        freq[k] = bits[sel].mean(axis=0)
    labels = np.empty((c, d), dtype=object)
    labels[:] = VARIABLE
    labels[freq > 0.9] = CONSTANT1
    labels[freq < 0.1] = CONSTANT0
    return BitProfile(freq=freq, labels=labels, class_names=tuple(class_names),
                      n_messages=n)


def flip_pool(profile: BitProfile, class_id, flip_spec) -> np.ndarray:
    """Bit positions a flip_spec draws from for one class."""
    if flip_spec not in FLIP_SPECS:
        raise UsageError(f"unknown flip_spec {flip_spec!r}; choose from {FLIP_SPECS}")
    labels = profile.labels[class_id]
    if flip_spec == "constant0":
        mask = labels == CONSTANT0
    elif flip_spec == "constant1":
        mask = labels == CONSTANT1
    elif flip_spec == "constant":
        mask = (labels == CONSTANT0) | (labels == CONSTANT1)
    else:
        mask = labels == VARIABLE
    return np.nonzero(mask)[0]


@dataclass
class PerturbationResult:
    flip_spec: str
    n_trials: int
    rows: list = field(default_factory=list)
    # row keys: class, k, mean_accuracy, accuracy_variance, skipped, pool_size

    def row(self, class_name, k):
        for r in self.rows:
            if r["class"] == class_name and r["k"] == k:
                return r
        raise UsageError(f"no perturbation row for ({class_name!r}, k={k})")


def _flip_tamper(positions):
    idx = np.asarray(positions, dtype=np.int64)

    def tamper(bits, t):
        out = np.array(bits)
        if t == 0 and idx.size:
            out[:, idx] = 1.0 - out[:, idx]
        return out

    return tamper


def perturb_and_eval(system, source: EpisodeSource, profile: BitProfile,
                     flip_spec, k_range, seed, n_trials=30,
                     episodes_per_trial=64, split="test") -> PerturbationResult:
    """Accuracy under k random bit flips of one structural kind, single exchange.

    For each class and k, n_trials random k-subsets of the spec'd bit pool
    are flipped in the delivered message of a conversation forced to one
    exchange. k larger than the pool is recorded as skipped. Every trial
    stream is derived from (seed, class, k, trial), so results are
    independent of iteration order.
    """
    result = PerturbationResult(flip_spec=flip_spec, n_trials=n_trials)
    for class_id, class_name in enumerate(profile.class_names):
        pool = flip_pool(profile, class_id, flip_spec)
        for k in k_range:
            if k < 0:
                raise UsageError("k must be >= 0")
            row = {"class": class_name, "k": int(k), "pool_size": int(pool.size),
                   "skipped": False, "mean_accuracy": float("nan"),
                   "accuracy_variance": float("nan")}
            if k > pool.size:
                row["skipped"] = True
                result.rows.append(row)
                continue
            accs = np.empty(n_trials)
            for trial in range(n_trials):
                rng = derive(seed, "perturb", flip_spec, class_id, int(k), trial)
                subset = rng.gen.choice(pool, size=int(k), replace=False) if k else []
                batch = sample_episode_batch(
                    source, episodes_per_trial, rng, split,
                    target_classes=np.full(episodes_per_trial, class_id))
                conv = run_conversation_batch(system, batch, "test", None,
                                              t_max=1, stop_override=1,
                                              message_tamper=_flip_tamper(subset))
                accs[trial] = float(conv.rewards.mean())
            row["mean_accuracy"] = float(accs.mean())
            row["accuracy_variance"] = float(accs.var())
            result.rows.append(row)
    return result
