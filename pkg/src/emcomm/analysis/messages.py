"""Message collection for protocol analyses.

All similarity, bit-structure, and projection analyses operate on the
deterministic test-mode bits of the first exchange; the Bernoulli
parameters are kept alongside for comparison. Replies come from a
single forced exchange so sender and receiver messages stay paired
per episode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..agents import sender_forward
from ..errors import UsageError
from ..game import EpisodeSource, run_conversation_batch, sample_episode_batch


@dataclass
class MessageSet:
    bits: np.ndarray         # (N, D) sender first-exchange bits
    probs: np.ndarray        # (N, D) generating Bernoulli parameters
    reply_bits: np.ndarray   # (N, D) receiver reply from the same exchange
    class_ids: np.ndarray    # (N,) target class per message

    @property
    def size(self) -> int:
        return self.bits.shape[0]


def sender_messages(system, embeddings, mode="test", rng=None):
    """First-step messages for raw observation vectors; no receiver involved.

    Returns (bits, probs) as (N, D) arrays.
    """
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    m_prev = np.zeros((emb.shape[0], system.msg_len))
    msg = sender_forward(emb, m_prev, system.sender, mode, rng)
    return np.array(msg.bits), np.array(msg.probs.data)


def collect_messages(system, source: EpisodeSource, n_per_class, rng,
                     split="test", chunk=256) -> MessageSet:
    """Balanced single-exchange message collection over all classes."""
    if n_per_class < 1:
        raise UsageError("n_per_class must be >= 1")
    c = source.n_classes
    targets = np.repeat(np.arange(c), n_per_class)
    bits, probs, replies = [], [], []
    for start in range(0, len(targets), chunk):
        part = targets[start:start + chunk]
        batch = sample_episode_batch(source, len(part), rng, split, target_classes=part)
        conv = run_conversation_batch(system, batch, "test", None, t_max=1,
                                      stop_override=1)
        step = conv.steps[0]
        bits.append(np.array(step.sender_msg.bits))
        probs.append(np.array(step.sender_msg.probs.data))
        replies.append(np.array(step.rstep.reply.bits))
    return MessageSet(bits=np.concatenate(bits), probs=np.concatenate(probs),
                      reply_bits=np.concatenate(replies), class_ids=targets)
