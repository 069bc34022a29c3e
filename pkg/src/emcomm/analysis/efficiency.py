"""Message-length efficiency: per-system evaluation rows and the D sweep."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import UsageError
from ..fsio import write_csv
from ..game import EpisodeSource
from ..rng import derive
from ..training import TrainConfig, evaluate, train

EFFICIENCY_COLUMNS = ["msg_len", "modality", "seed", "accuracy_pct", "test_loss",
                      "receiver_entropy", "sender_entropy", "mean_steps", "n_episodes"]

MODALITY_PAIRS = {"unimodal": ("audio", "audio"), "multimodal": ("audio", "image")}


@dataclass
class EfficiencyRow:
    msg_len: int
    modality: str
    seed: int
    accuracy_pct: float        # [0, 100]
    test_loss: float           # mean classification NLL (nats)
    receiver_entropy: float    # mean final class_dist entropy (nats)
    sender_entropy: float      # mean per-conversation summed bit entropy (nats)
    mean_steps: float
    n_episodes: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in EFFICIENCY_COLUMNS}


def evaluate_system(system, source: EpisodeSource, n_episodes, rng,
                    t_max=10, modality="", seed=-1) -> EfficiencyRow:
    """Test-mode evaluation summarized as one efficiency table row."""
    ev = evaluate(system, source, n_episodes, rng, t_max)
    return EfficiencyRow(msg_len=system.msg_len, modality=modality, seed=seed,
                         accuracy_pct=100.0 * ev.accuracy, test_loss=ev.loss,
                         receiver_entropy=ev.receiver_entropy,
                         sender_entropy=ev.sender_entropy,
                         mean_steps=ev.mean_steps, n_episodes=ev.n_episodes)


def pair_source(audio_ds, image_ds, modality) -> EpisodeSource:
    if modality not in MODALITY_PAIRS:
        raise UsageError(f"unknown modality {modality!r}; choose from "
                         f"{tuple(MODALITY_PAIRS)}")
    by_kind = {"audio": audio_ds, "image": image_ds}
    s_kind, r_kind = MODALITY_PAIRS[modality]
    return EpisodeSource(by_kind[s_kind], by_kind[r_kind])


def length_sweep(audio_ds, image_ds, base_config: TrainConfig,
                 lengths=(1, 5, 10, 30, 50), seeds=(1,),
                 modalities=("unimodal", "multimodal"),
                 n_eval=1000, log=None, trained=None) -> list:
    """Train one system per (length, modality, seed) and evaluate each.

    trained, when given, is a dict keyed by (msg_len, modality, seed) whose
    systems are reused instead of retrained (and extended in place with any
    newly trained ones).
    """
    if any(d < 1 for d in lengths):
        raise UsageError("message lengths must be positive")
    rows = []
    for modality in modalities:
        source = pair_source(audio_ds, image_ds, modality)
        for d in lengths:
            for seed in seeds:
                key = (int(d), modality, int(seed))
                system = trained.get(key) if trained is not None else None
                if system is None:
                    cfg = replace(base_config, msg_len=int(d), seed=int(seed))
                    result = train(cfg, source, log=log)
                    system = result.system
                    if trained is not None:
                        trained[key] = system
                row = evaluate_system(system, source, n_eval,
                                      derive(int(seed), "sweep-eval", modality, int(d)),
                                      t_max=base_config.t_max, modality=modality,
                                      seed=int(seed))
                rows.append(row)
    return rows


def sweep_means(rows, msg_len, modality):
    """Seed-mean (accuracy_pct, receiver_entropy) for one sweep cell."""
    acc = [r.accuracy_pct for r in rows if r.msg_len == msg_len and r.modality == modality]
    ent = [r.receiver_entropy for r in rows if r.msg_len == msg_len and r.modality == modality]
    if not acc:
        raise UsageError(f"no sweep rows for D={msg_len}, {modality}")
    return float(np.mean(acc)), float(np.mean(ent))


def write_efficiency_csv(path, rows, meta=None) -> None:
    write_csv(path, EFFICIENCY_COLUMNS, [r.as_dict() for r in rows], meta=meta)
