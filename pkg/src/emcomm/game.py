"""Multi-step referential game between one Sender and one Receiver.

An episode fixes a target class, a Sender-side observation of that class,
and one Receiver-side candidate per class in shuffled slot order. The
conversation alternates Sender message and Receiver reply for up to t_max
exchanges; the Receiver's sampled (train) or thresholded (test) stop bit
ends it early. The Receiver's prediction is the argmax of its candidate
distribution at the step the conversation ended, and the reward is 1 for
a correct prediction, else 0.

Conversations run batched. Steps after an episode's stop are masked out
of every loss term, so the loop may break as soon as every episode in
the batch has stopped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .agents import (
    AgentSystem,
    Message,
    ReceiverStep,
    baseline_receiver_value,
    baseline_sender_value,
    receiver_decide,
    receiver_step,
    sender_forward,
)
from .errors import UsageError
from .tensor import Tensor, add, const, mul

DEFAULT_T_MAX = 10


@dataclass
class EpisodeSpec:
    """One game instance (single episode view)."""

    target_class: int
    target_index: int
    sender_embedding: np.ndarray      # (E,)
    candidates: np.ndarray            # (C, E) slot-ordered
    candidate_classes: np.ndarray     # (C,) class id per slot
    episode_id: str = ""
    attributes: dict = field(default_factory=dict)


@dataclass
class EpisodeBatch:
    sender_emb: np.ndarray            # (B, E)
    candidates: np.ndarray            # (B, C, E)
    candidate_classes: np.ndarray     # (B, C)
    target_class: np.ndarray          # (B,)
    target_index: np.ndarray          # (B,)
    episode_ids: list = field(default_factory=list)

    @property
    def size(self):
        return self.sender_emb.shape[0]


class EpisodeSource:
    """Pairs a sender-side and a receiver-side dataset for episode sampling."""

    def __init__(self, sender_ds, receiver_ds):
        if tuple(sender_ds.class_names) != tuple(receiver_ds.class_names):
            raise UsageError("sender and receiver datasets must share the class vocabulary")
        self.sender_ds = sender_ds
        self.receiver_ds = receiver_ds
        self.n_classes = len(sender_ds.class_names)

    def sample_batch(self, n, rng, split="train", target_classes=None) -> EpisodeBatch:
        return sample_episode_batch(self, n, rng, split, target_classes)


def sample_episode(sender_ds, receiver_ds, rng, split="train") -> EpisodeSpec:
    """Uniform target class, sender item of that class, one candidate per class."""
    batch = sample_episode_batch(EpisodeSource(sender_ds, receiver_ds), 1, rng, split)
    return EpisodeSpec(
        target_class=int(batch.target_class[0]),
        target_index=int(batch.target_index[0]),
        sender_embedding=batch.sender_emb[0],
        candidates=batch.candidates[0],
        candidate_classes=batch.candidate_classes[0],
        episode_id=batch.episode_ids[0],
    )


def sample_episode_batch(source: EpisodeSource, n, rng, split="train",
                         target_classes=None) -> EpisodeBatch:
    s_ds, r_ds = source.sender_ds, source.receiver_ds
    c = source.n_classes
    s_pools = [s_ds.class_indices(k, split) for k in range(c)]
    r_pools = [r_ds.class_indices(k, split) for k in range(c)]
    for k in range(c):
        if len(s_pools[k]) == 0 or len(r_pools[k]) == 0:
            raise UsageError(f"class {k} has no items in split {split!r}")
    s_emb, r_emb = s_ds.embeddings(), r_ds.embeddings()

    if target_classes is None:
        targets = rng.integers(0, c, size=n)
    else:
        targets = np.asarray(target_classes, dtype=np.int64)
        if targets.shape != (n,):
            raise UsageError("target_classes must have length n")

    e_dim = s_emb.shape[1]
    sender_emb = np.empty((n, e_dim))
    candidates = np.empty((n, c, r_emb.shape[1]))
    candidate_classes = np.empty((n, c), dtype=np.int64)
    target_index = np.empty(n, dtype=np.int64)
    ids = []
    for b in range(n):
        t = int(targets[b])
        pool = s_pools[t]
        s_item = pool[int(rng.integers(0, len(pool)))]
        sender_emb[b] = s_emb[s_item]
        order = rng.permutation(c)
        for slot, k in enumerate(order):
            rp = r_pools[k]
            r_item = rp[int(rng.integers(0, len(rp)))]
            candidates[b, slot] = r_emb[r_item]
            candidate_classes[b, slot] = k
        target_index[b] = int(np.where(order == t)[0][0])
        ids.append(f"{split}-{b}")
    return EpisodeBatch(sender_emb, candidates, candidate_classes,
                        targets.astype(np.int64), target_index, ids)


@dataclass
class StepRecord:
    sender_msg: Message
    rstep: ReceiverStep
    b_sender: Tensor        # (B, 1) on-tape baseline output
    b_receiver: Tensor      # (B, 1)
    delivered_bits: np.ndarray


@dataclass
class ConversationBatch:
    """Everything the losses and the logs need from one batched rollout."""

    episode: EpisodeBatch
    steps: list               # list[StepRecord], length = executed steps
    mask: np.ndarray          # (B, T_exec) 1.0 while the episode is live
    steps_taken: np.ndarray   # (B,)
    final_class_dist: Tensor  # (B, C) taken at each episode's final step
    predictions: np.ndarray   # (B,)
    rewards: np.ndarray       # (B,)
    t_max: int


def run_conversation_batch(system: AgentSystem, episodes: EpisodeBatch, mode="train",
                           rng=None, t_max=DEFAULT_T_MAX, stop_override=None,
                           message_tamper=None) -> ConversationBatch:
    """Roll out the conversation for a whole batch.

    stop_override: None for sampled/thresholded stops, "never" to force the
    full t_max exchanges, or a positive int to force exactly that many.
    message_tamper(bits, t) may return a modified copy of the Sender's bits
    before delivery (perturbation experiments); the recorded Message keeps
    the original emission.
    """
    if system.msg_len < 1:
        raise UsageError("message length must be at least 1")
    if t_max < 1:
        raise UsageError("t_max must be at least 1")
    b = episodes.size
    q, d, c = system.hidden, system.msg_len, system.n_classes

    h = const(np.zeros((b, q)))
    m_prev = np.zeros((b, d))
    stopped = np.zeros(b, dtype=bool)
    steps_taken = np.full(b, t_max, dtype=np.int64)
    mask_cols = []
    steps = []
    final_dist = None

    for t in range(t_max):
        live = (~stopped).astype(np.float64)
        mask_cols.append(live)

        msg = sender_forward(episodes.sender_emb, m_prev, system.sender, mode, rng)
        delivered = msg.bits
        if message_tamper is not None:
            delivered = message_tamper(np.array(msg.bits), t)
        rstep = receiver_step(delivered, h, episodes.candidates, system.receiver, mode, rng)

        b_s = baseline_sender_value(episodes.sender_emb, m_prev, system.sender, system.baseline_s)
        b_r = baseline_receiver_value(rstep.h, system.baseline_r)
        steps.append(StepRecord(msg, rstep, b_s, b_r, delivered))

        if stop_override is None:
            stop_now = rstep.stop_bits.astype(bool)
        elif stop_override == "never":
            stop_now = np.zeros(b, dtype=bool)
        elif isinstance(stop_override, (int, np.integer)) and int(stop_override) >= 1:
            stop_now = np.full(b, t + 1 >= int(stop_override))
        else:
            raise UsageError("stop_override must be None, 'never', or a positive int")

        finalize = (~stopped) & (stop_now | (t == t_max - 1))
        if finalize.any():
            sel = const(finalize.astype(np.float64)[:, None])
            picked = mul(rstep.class_dist, sel)
            final_dist = picked if final_dist is None else add(final_dist, picked)
            steps_taken[finalize] = t + 1
        stopped |= stop_now
        h = rstep.h
        m_prev = rstep.reply.bits
        if stopped.all():
            break

    mask = np.stack(mask_cols, axis=1)
    predictions = receiver_decide(final_dist)
    rewards = (predictions == episodes.target_index).astype(np.float64)
    return ConversationBatch(episode=episodes, steps=steps, mask=mask,
                             steps_taken=steps_taken, final_class_dist=final_dist,
                             predictions=predictions, rewards=rewards, t_max=t_max)


# ------------------------------------------------------------- transcripts

@dataclass
class Transcript:
    """Single-episode record of a full conversation."""

    episode_id: str
    target_class: int
    target_index: int
    steps_taken: int
    sender_bits: np.ndarray      # (T, D)
    sender_probs: np.ndarray     # (T, D)
    stop_probs: np.ndarray       # (T,)
    stop_bits: np.ndarray        # (T,)
    class_dists: np.ndarray      # (T, C)
    reply_bits: np.ndarray       # (T, D)
    reply_probs: np.ndarray      # (T, D)
    prediction: int
    reward: float

    @property
    def correct(self) -> bool:
        return bool(self.reward > 0.5)

    def to_json_dict(self) -> dict:
        t = self.steps_taken
        return {
            "episode_id": self.episode_id,
            "target_class": int(self.target_class),
            "target_index": int(self.target_index),
            "steps": [
                {
                    "sender_bits": [int(v) for v in self.sender_bits[i]],
                    "sender_probs": list(map(float, self.sender_probs[i])),
                    "stop_prob": float(self.stop_probs[i]),
                    "stop_bit": int(self.stop_bits[i]),
                    "class_dist": list(map(float, self.class_dists[i])),
                    "reply_bits": [int(v) for v in self.reply_bits[i]],
                }
                for i in range(t)
            ],
            "prediction": int(self.prediction),
            "correct": self.correct,
            "reward": float(self.reward),
        }


def split_transcripts(conv: ConversationBatch) -> list:
    """Per-episode Transcript objects from a batched rollout."""
    b = conv.episode.size
    t_exec = len(conv.steps)
    d = conv.steps[0].sender_msg.bits.shape[1]
    c = conv.steps[0].rstep.class_dist.data.shape[1]
    sender_bits = np.stack([s.sender_msg.bits for s in conv.steps], axis=1)
    sender_probs = np.stack([s.sender_msg.probs.data for s in conv.steps], axis=1)
    stop_probs = np.stack([s.rstep.stop_prob.data[:, 0] for s in conv.steps], axis=1)
    stop_bits = np.stack([s.rstep.stop_bits for s in conv.steps], axis=1)
    dists = np.stack([s.rstep.class_dist.data for s in conv.steps], axis=1)
    reply_bits = np.stack([s.rstep.reply.bits for s in conv.steps], axis=1)
    reply_probs = np.stack([s.rstep.reply.probs.data for s in conv.steps], axis=1)
    out = []
    for i in range(b):
        t = min(int(conv.steps_taken[i]), t_exec)
        out.append(Transcript(
            episode_id=conv.episode.episode_ids[i] if conv.episode.episode_ids else str(i),
            target_class=int(conv.episode.target_class[i]),
            target_index=int(conv.episode.target_index[i]),
            steps_taken=t,
            sender_bits=sender_bits[i, :t].reshape(t, d),
            sender_probs=sender_probs[i, :t].reshape(t, d),
            stop_probs=stop_probs[i, :t],
            stop_bits=stop_bits[i, :t],
            class_dists=dists[i, :t].reshape(t, c),
            reply_bits=reply_bits[i, :t].reshape(t, d),
            reply_probs=reply_probs[i, :t].reshape(t, d),
            prediction=int(conv.predictions[i]),
            reward=float(conv.rewards[i]),
        ))
    return out


def run_conversation(system: AgentSystem, episode: EpisodeSpec, mode="test",
                     rng=None, t_max=DEFAULT_T_MAX, stop_override=None) -> Transcript:
    """Single-episode convenience wrapper around the batched rollout."""
    batch = EpisodeBatch(
        sender_emb=episode.sender_embedding[None, :],
        candidates=episode.candidates[None, :, :],
        candidate_classes=np.asarray(episode.candidate_classes)[None, :],
        target_class=np.array([episode.target_class]),
        target_index=np.array([episode.target_index]),
        episode_ids=[episode.episode_id or "0"],
    )
    conv = run_conversation_batch(system, batch, mode, rng, t_max, stop_override)
    return split_transcripts(conv)[0]


def run_batch(system: AgentSystem, episodes, mode="test", rng=None,
              t_max=DEFAULT_T_MAX) -> tuple:
    """Run a list of EpisodeSpec (or an EpisodeBatch); returns (transcripts, summary)."""
    if isinstance(episodes, EpisodeBatch):
        batch = episodes
    else:
        episodes = list(episodes)
        if not episodes:
            raise UsageError("run_batch requires at least one episode")
        batch = EpisodeBatch(
            sender_emb=np.stack([e.sender_embedding for e in episodes]),
            candidates=np.stack([e.candidates for e in episodes]),
            candidate_classes=np.stack([np.asarray(e.candidate_classes) for e in episodes]),
            target_class=np.array([e.target_class for e in episodes]),
            target_index=np.array([e.target_index for e in episodes]),
            episode_ids=[e.episode_id or str(i) for i, e in enumerate(episodes)],
        )
    conv = run_conversation_batch(system, batch, mode, rng, t_max)
    transcripts = split_transcripts(conv)
    summary = {
        "accuracy": float(conv.rewards.mean()),
        "mean_steps": float(conv.steps_taken.mean()),
        "n_episodes": int(batch.size),
    }
    return transcripts, summary


def write_transcripts_jsonl(path, transcripts) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(json.dumps(t.to_json_dict(), sort_keys=True) + "\n")
