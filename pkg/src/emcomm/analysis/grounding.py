"""Perceptual grounding: does message structure track audio factors?

Clips are generated with one factor varied and everything else held
fixed (single class, fixed amplitude while frequency bands vary; fixed
frequency while amplitude bins vary), embedded through the dataset's
audio pipeline, and described by the sender's deterministic messages.
Cluster separation of those messages by factor value, compared against
a label-permutation null, quantifies grounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from ..rng import derive
from ..worldgen.audio import generate_shape_audio
from .messages import sender_messages
from .projection import cluster_separation, pca_project_2d, permutation_null

FREQ_BANDS = ((200.0, 300.0), (400.0, 500.0), (600.0, 800.0))
AMP_BINS = ((0.3, 0.5), (0.5, 0.7), (0.7, 0.9))
FIXED_AMPLITUDE = 0.6
FIXED_FREQUENCY = 440.0
GROUNDING_CLASS = 0   # one class so the varied factor is the only signal


def constrained_audio_messages(system, pipeline, factor, seed, n_per_bin=60,
                               class_id=GROUNDING_CLASS):
    """Sender messages for clips where only one factor varies.

    factor "frequency": fundamental drawn per band, amplitude fixed.
    factor "amplitude": amplitude drawn per bin, fundamental fixed.
    Returns (bits, probs, labels, values): labels are bin indices, values
    the drawn factor value per clip.
    """
    if factor == "frequency":
        bins = FREQ_BANDS
    elif factor == "amplitude":
        bins = AMP_BINS
    else:
        raise UsageError(f"unknown grounding factor {factor!r}")
    emb, labels, values = [], [], []
    for b, (lo, hi) in enumerate(bins):
        for j in range(n_per_bin):
            rng = derive(seed, "grounding", factor, b, j)
            if factor == "frequency":
                clip = generate_shape_audio(
                    class_id, rng, sample_rate=pipeline.sample_rate,
                    duration=pipeline.clip_seconds, noise_sigma=pipeline.noise_sigma,
                    freq_range=(lo, hi),
                    amp_range=(FIXED_AMPLITUDE, FIXED_AMPLITUDE))
            else:
                clip = generate_shape_audio(
                    class_id, rng, sample_rate=pipeline.sample_rate,
                    duration=pipeline.clip_seconds, noise_sigma=pipeline.noise_sigma,
                    freq_range=(FIXED_FREQUENCY, FIXED_FREQUENCY),
                    amp_range=(lo, hi))
            emb.append(pipeline.embed_clip(clip))
            labels.append(b)
            values.append(clip.attributes["frequency"] if factor == "frequency"
                          else clip.attributes["amplitude"])
    bits, probs = sender_messages(system, np.stack(emb))
    return bits, probs, np.array(labels), np.array(values)


@dataclass
class GroundingFactor:
    system_name: str
    factor: str
    labels: np.ndarray
    values: np.ndarray
    bits: np.ndarray
    probs: np.ndarray
    silhouette: float          # NaN when degenerate
    null_scores: np.ndarray
    degenerate: bool           # all messages identical; separation undefined
    pca_coords: np.ndarray

    @property
    def null_95(self) -> float:
        return float(np.percentile(self.null_scores, 95)) if self.null_scores.size else float("nan")

    @property
    def exceeds_null(self) -> bool:
        return (not self.degenerate) and self.silhouette > self.null_95

    def summary(self) -> dict:
        return {"system": self.system_name, "factor": self.factor,
                "silhouette": float(self.silhouette), "null_95": self.null_95,
                "exceeds_null": self.exceeds_null, "degenerate": self.degenerate,
                "n_messages": int(self.bits.shape[0])}


@dataclass
class GroundingReport:
    factors: list = field(default_factory=list)

    def get(self, system_name, factor) -> GroundingFactor:
        for f in self.factors:
            if f.system_name == system_name and f.factor == factor:
                return f
        raise UsageError(f"no grounding factor ({system_name!r}, {factor!r})")

    def summaries(self):
        return [f.summary() for f in self.factors]


def _analyze(system_name, system, pipeline, factor, seed, n_per_bin, n_permutations):
    bits, probs, labels, values = constrained_audio_messages(
        system, pipeline, factor, seed, n_per_bin)
    degenerate = bool((bits == bits[0]).all())
    if degenerate:
        sil = float("nan")
        null = np.zeros(0)
    else:
        sil = cluster_separation(bits, labels)
        null = permutation_null(bits, labels, derive(seed, "grounding-null", factor),
                                n_draws=n_permutations)
    coords = pca_project_2d(bits).coords if not degenerate else np.zeros((len(labels), 2))
    return GroundingFactor(system_name=system_name, factor=factor, labels=labels,
                           values=values, bits=bits, probs=probs, silhouette=sil,
                           null_scores=null, degenerate=degenerate, pca_coords=coords)


def grounding_experiment(systems, pipeline, seed=0, n_per_bin=60,
                         n_permutations=200) -> GroundingReport:
    """Frequency-band and amplitude-bin analyses for each named system.

    systems maps a display name (e.g. "unimodal") to a trained AgentSystem
    whose sender consumes audio embeddings from the given pipeline.
    """
    report = GroundingReport()
    for name, system in systems.items():
        for factor in ("frequency", "amplitude"):
            report.factors.append(_analyze(name, system, pipeline, factor, seed,
                                           n_per_bin, n_permutations))
    return report
