"""Cross-system interoperability: zero-shot pairing, fine-tuning, timestep curves.

A hybrid takes the Sender (and its baseline) from system A and the
Receiver (and its baseline) from system B. Fine-tuning continues the
ordinary joint objective on the new pairing; system A's original
Receiver is kept frozen, so any degradation of the original pairing is
attributable to Sender drift alone.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .agents import AgentSystem
from .errors import UsageError
from .fsio import write_csv
from .game import EpisodeSource, run_conversation_batch, sample_episode_batch
from .rng import derive
from .training import TrainConfig, evaluate, make_optimizer, train_step

INTEROP_COLUMNS = ["epochs", "new_accuracy_pct", "original_accuracy_pct"]
TIMESTEP_COLUMNS = ["t", "pairing", "accuracy_pct"]


@dataclass
class HybridSystem:
    new_system: AgentSystem        # A's sender + B's receiver (live, fine-tunable)
    original_system: AgentSystem   # A's sender + A's frozen receiver
    sender_origin: str = "A"

    @property
    def msg_len(self) -> int:
        return self.new_system.msg_len


def pair_systems(system_a: AgentSystem, system_b: AgentSystem) -> HybridSystem:
    """Hybrid of A's Sender with B's Receiver; A's Receiver kept for regression.

    The Sender parameters are shared between the new and original views,
    so fine-tuning the new pairing moves both; the original Receiver and
    its baseline are deep copies and never receive updates.
    """
    if system_a.msg_len != system_b.msg_len:
        raise UsageError(f"message length mismatch: {system_a.msg_len} vs "
                         f"{system_b.msg_len}")
    if system_a.emb_dim != system_b.emb_dim:
        raise UsageError("embedding dimension mismatch between systems")
    if system_a.n_classes != system_b.n_classes:
        raise UsageError("class count mismatch between systems")

    new_system = AgentSystem(
        sender=system_a.sender, receiver=system_b.receiver,
        baseline_s=system_a.baseline_s, baseline_r=system_b.baseline_r,
        msg_len=system_a.msg_len, hidden=system_a.hidden,
        mlp_hidden=system_b.mlp_hidden, baseline_hidden=system_a.baseline_hidden,
        emb_dim=system_a.emb_dim, n_classes=system_a.n_classes,
        sender_modality=system_a.sender_modality,
        receiver_modality=system_b.receiver_modality)
    original_system = AgentSystem(
        sender=system_a.sender, receiver=copy.deepcopy(system_a.receiver),
        baseline_s=copy.deepcopy(system_a.baseline_s),
        baseline_r=copy.deepcopy(system_a.baseline_r),
        msg_len=system_a.msg_len, hidden=system_a.hidden,
        mlp_hidden=system_a.mlp_hidden, baseline_hidden=system_a.baseline_hidden,
        emb_dim=system_a.emb_dim, n_classes=system_a.n_classes,
        sender_modality=system_a.sender_modality,
        receiver_modality=system_a.receiver_modality)
    return HybridSystem(new_system=new_system, original_system=original_system)


@dataclass
class InteropReport:
    rows: list = field(default_factory=list)
    # row keys: epochs, new_accuracy_pct, original_accuracy_pct
    timestep_curves: dict = field(default_factory=dict)  # pairing -> list of pct

    def row(self, epochs) -> dict:
        for r in self.rows:
            if r["epochs"] == epochs:
                return r
        raise UsageError(f"no interop row for epoch count {epochs}")

    def write_csv(self, path, meta=None) -> None:
        write_csv(path, INTEROP_COLUMNS, self.rows, meta=meta)

    def write_timestep_csv(self, path, meta=None) -> None:
        rows = []
        for pairing in sorted(self.timestep_curves):
            for t, pct in enumerate(self.timestep_curves[pairing], start=1):
                rows.append({"t": t, "pairing": pairing, "accuracy_pct": pct})
        write_csv(path, TIMESTEP_COLUMNS, rows, meta=meta)


def _eval_pct(system, source, n_eval, rng, t_max) -> float:
    return 100.0 * evaluate(system, source, n_eval, rng, t_max).accuracy


def finetune(hybrid: HybridSystem, new_source: EpisodeSource,
             original_source: EpisodeSource, cfg: TrainConfig,
             epoch_checkpoints=(2, 15, 20, 100), n_eval=500,
             log=None) -> InteropReport:
    """Fine-tune the new pairing; measure both pairings at each checkpoint.

    The report always includes an epoch-0 (zero-shot) row. Epochs derive
    their rng streams from (seed, "finetune", epoch), so a report is
    reproducible independently of the systems' original training.
    """
    checkpoints = [int(e) for e in epoch_checkpoints]
    if any(e < 0 for e in checkpoints):
        raise UsageError("epoch checkpoints must be non-negative")
    if sorted(set(checkpoints)) != checkpoints:
        raise UsageError("epoch checkpoints must be strictly increasing")
    if 0 not in checkpoints:
        checkpoints = [0] + checkpoints

    frozen_before = {k: np.array(v.data) for k, v in
                     hybrid.original_system.receiver.named().items()}

    report = InteropReport()
    optimizer = make_optimizer(hybrid.new_system, cfg)
    n_batches = max(1, (cfg.episodes_per_epoch or len(new_source.sender_ds.train_idx))
                    // cfg.batch_size)
    epoch = 0
    for target in checkpoints:
        while epoch < target:
            rng = derive(cfg.seed, "finetune", epoch)
            for _ in range(n_batches):
                batch = sample_episode_batch(new_source, cfg.batch_size, rng, "train")
                train_step(hybrid.new_system, optimizer, batch, cfg, rng)
            epoch += 1
            if log is not None:
                log({"finetune_epoch": epoch})
        row = {
            "epochs": target,
            "new_accuracy_pct": _eval_pct(hybrid.new_system, new_source, n_eval,
                                          derive(cfg.seed, "finetune-eval", "new", target),
                                          cfg.t_max),
            "original_accuracy_pct": _eval_pct(hybrid.original_system, original_source,
                                               n_eval,
                                               derive(cfg.seed, "finetune-eval", "orig", target),
                                               cfg.t_max),
        }
        report.rows.append(row)
        if log is not None:
            log(row)

    frozen_after = {k: np.array(v.data) for k, v in
                    hybrid.original_system.receiver.named().items()}
    for k in frozen_before:
        if not np.array_equal(frozen_before[k], frozen_after[k]):
            raise UsageError(f"frozen receiver parameter {k} changed during fine-tuning")
    return report


def per_timestep_accuracy(system: AgentSystem, source: EpisodeSource, n_episodes,
                          rng, t_max=10, split="test", chunk=256) -> np.ndarray:
    """Accuracy of the step-t class distribution for every t in 1..t_max.

    Conversations are forced to run the full t_max exchanges; the stop
    policy is overridden, not retrained.
    """
    if n_episodes < 1:
        raise UsageError("n_episodes must be >= 1")
    correct = np.zeros(t_max)
    done = 0
    while done < n_episodes:
        n = min(chunk, n_episodes - done)
        batch = sample_episode_batch(source, n, rng, split)
        conv = run_conversation_batch(system, batch, "test", None, t_max,
                                      stop_override="never")
        for t, step in enumerate(conv.steps):
            pred = np.argmax(step.rstep.class_dist.data, axis=1)
            correct[t] += (pred == batch.target_index).sum()
        done += n
    return 100.0 * correct / n_episodes
