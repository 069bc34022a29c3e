"""Losses and the training loop.

The combined objective is

    total = L_c + L_r - entropy_bonus

where L_c is the final-step classification NLL, L_r is the REINFORCE
surrogate with per-step reward baselines (minimizing it performs ascent
on expected reward), and the entropy bonus rewards exploratory message
and stop distributions. Baselines regress the reward with MSE through a
separate term whose gradient reaches only baseline parameters, because
their inputs are detached. The advantage (R - B) is a constant during
backprop.

Randomness is organized so that epoch k always consumes the stream
derived from (seed, "train", k) and evaluation the stream
(seed, "eval", k); resuming from a checkpoint therefore reproduces an
uninterrupted run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .agents import AgentSystem, init_system
from .errors import ConfigError, DivergenceError, UsageError
from .fsio import write_csv
from .game import ConversationBatch, EpisodeSource, run_conversation_batch, sample_episode_batch
from .optim import RmsProp
from .rng import derive
from .tensor import (
    PROB_EPS,
    Tape,
    Tensor,
    add,
    bernoulli_entropy,
    const,
    mean,
    mul,
    nll_gather,
    reshape,
    square,
    sub,
)

METRIC_COLUMNS = ["epoch", "train_loss", "L_c", "L_r", "entropy_bonus", "baseline_mse",
                  "test_accuracy", "mean_steps", "receiver_entropy", "sender_entropy"]


@dataclass
class TrainConfig:
    msg_len: int = 10
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-4
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    clip_norm: float = 10.0
    t_max: int = 10
    eps_s: float = 0.05
    eps_m: float = 0.01
    hidden: int = 128
    mlp_hidden: int = 256
    baseline_hidden: int = 64
    seed: int = 1
    episodes_per_epoch: int = 4096   # 0 means one pass worth of the sender train split
    eval_episodes: int = 300
    eval_every: int = 1
    stop_accuracy: float = 0.0       # end training once test accuracy reaches this

    def validate(self):
        if self.msg_len < 1:
            raise ConfigError("msg_len must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if not (0 <= self.rmsprop_decay < 1):
            raise ConfigError("rmsprop_decay must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.eps_s < 0 or self.eps_m < 0:
            raise ConfigError("entropy coefficients must be non-negative")
        return self


@dataclass
class LossBreakdown:
    total: Tensor
    l_c: Tensor
    l_r: Tensor
    entropy_bonus: Tensor
    mse_sender: Tensor
    mse_receiver: Tensor

    @property
    def optimized(self) -> Tensor:
        return add(self.total, add(self.mse_sender, self.mse_receiver))


def classification_loss(conv: ConversationBatch) -> Tensor:
    """Mean final-step NLL of the target slot."""
    return mean(nll_gather(conv.final_class_dist, conv.episode.target_index))


def reinforce_loss(conv: ConversationBatch) -> Tensor:
    """Policy-gradient surrogate; minimizing it maximizes expected reward.

    Per episode: -sum_t mask_t [ (R - B_S,t) log p(m_s)
                                 + (R - B_R,t) (log p(stop) + log p(m_r)) ].
    """
    r = conv.rewards
    acc = None
    for t, step in enumerate(conv.steps):
        m = conv.mask[:, t]
        adv_s = (r - step.b_sender.data[:, 0]) * m
        adv_r = (r - step.b_receiver.data[:, 0]) * m
        term_s = mul(step.sender_msg.log_prob, const(-adv_s))
        lp_r = add(step.rstep.stop_log_prob, step.rstep.reply.log_prob)
        term_r = mul(lp_r, const(-adv_r))
        part = add(term_s, term_r)
        acc = part if acc is None else add(acc, part)
    return mean(acc)


def entropy_bonus(conv: ConversationBatch, eps_s: float, eps_m: float) -> Tensor:
    """Masked exploration bonus in nats; subtracted from the total loss."""
    acc = None
    for t, step in enumerate(conv.steps):
        m = const(conv.mask[:, t])
        h_stop = bernoulli_entropy(step.rstep.stop_prob)
        h_msgs = add(bernoulli_entropy(step.sender_msg.probs),
                     bernoulli_entropy(step.rstep.reply.probs))
        part = mul(add(mul(h_stop, eps_s), mul(h_msgs, eps_m)), m)
        acc = part if acc is None else add(acc, part)
    return mean(acc)


def baseline_loss(conv: ConversationBatch) -> tuple:
    """Per-baseline MSE against the reward, averaged over active steps."""
    r = const(conv.rewards)
    inv_t = const(1.0 / conv.mask.sum(axis=1))
    acc_s, acc_r = None, None
    for t, step in enumerate(conv.steps):
        m = const(conv.mask[:, t])
        es = mul(square(sub(reshape(step.b_sender, (-1,)), r)), m)
        er = mul(square(sub(reshape(step.b_receiver, (-1,)), r)), m)
        acc_s = es if acc_s is None else add(acc_s, es)
        acc_r = er if acc_r is None else add(acc_r, er)
    return mean(mul(acc_s, inv_t)), mean(mul(acc_r, inv_t))


def combined_loss(conv: ConversationBatch, eps_s: float, eps_m: float) -> LossBreakdown:
    l_c = classification_loss(conv)
    l_r = reinforce_loss(conv)
    bonus = entropy_bonus(conv, eps_s, eps_m)
    mse_s, mse_r = baseline_loss(conv)
    total = sub(add(l_c, l_r), bonus)
    return LossBreakdown(total, l_c, l_r, bonus, mse_s, mse_r)


# -------------------------------------------------------------- evaluation

@dataclass
class EvalStats:
    accuracy: float
    mean_steps: float
    loss: float                # mean classification NLL
    receiver_entropy: float    # mean entropy of the final candidate distribution
    sender_entropy: float      # mean per-conversation summed bit entropy
    n_episodes: int


def _dist_entropy(dist: np.ndarray) -> np.ndarray:
    p = np.clip(dist, PROB_EPS, 1.0)
    return -(p * np.log(p)).sum(axis=-1)


def _bit_entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    return -(p * np.log(p) + (1 - p) * np.log1p(-p)).sum(axis=-1)


def evaluate(system: AgentSystem, source: EpisodeSource, n_episodes, rng,
             t_max=10, split="test", chunk=512) -> EvalStats:
    """Test-mode evaluation over freshly sampled episodes (no tape)."""
    if n_episodes < 1:
        raise UsageError("n_episodes must be >= 1")
    correct = steps = 0.0
    nll = r_ent = s_ent = 0.0
    done = 0
    while done < n_episodes:
        n = min(chunk, n_episodes - done)
        batch = sample_episode_batch(source, n, rng, split)
        conv = run_conversation_batch(system, batch, "test", None, t_max)
        correct += conv.rewards.sum()
        steps += conv.steps_taken.sum()
        picked = conv.final_class_dist.data[np.arange(n), batch.target_index]
        nll += -np.log(np.clip(picked, PROB_EPS, 1.0)).sum()
        r_ent += _dist_entropy(conv.final_class_dist.data).sum()
        per_ep = np.zeros(n)
        for t, step in enumerate(conv.steps):
            per_ep += conv.mask[:, t] * _bit_entropy(step.sender_msg.probs.data)
        s_ent += per_ep.sum()
        done += n
    inv = 1.0 / n_episodes
    return EvalStats(accuracy=correct * inv, mean_steps=steps * inv, loss=nll * inv,
                     receiver_entropy=r_ent * inv, sender_entropy=s_ent * inv,
                     n_episodes=n_episodes)


# ------------------------------------------------------------ training loop

@dataclass
class TrainResult:
    system: AgentSystem
    metrics: list = field(default_factory=list)
    optimizer: RmsProp = None


def train_step(system, optimizer, batch, cfg: TrainConfig, rng) -> dict:
    tape = Tape()
    with tape:
        conv = run_conversation_batch(system, batch, "train", rng, cfg.t_max)
        losses = combined_loss(conv, cfg.eps_s, cfg.eps_m)
        target = losses.optimized
    if not np.isfinite(target.data):
        raise DivergenceError("non-finite training loss")
    grads = tape.backward(target)
    optimizer.step(grads)
    return {
        "total": float(losses.total.data),
        "l_c": float(losses.l_c.data),
        "l_r": float(losses.l_r.data),
        "entropy_bonus": float(losses.entropy_bonus.data),
        "baseline_mse": float(losses.mse_sender.data) + float(losses.mse_receiver.data),
        "reward": float(conv.rewards.mean()),
    }


def make_optimizer(system: AgentSystem, cfg: TrainConfig) -> RmsProp:
    return RmsProp(system.parameters(), lr=cfg.learning_rate, decay=cfg.rmsprop_decay,
                   eps=cfg.rmsprop_eps, clip_norm=cfg.clip_norm)


def train(cfg: TrainConfig, source: EpisodeSource, system=None, optimizer=None,
          start_epoch=0, metrics_path=None, meta=None, log=None) -> TrainResult:
    """Run epochs [start_epoch, cfg.epochs) and evaluate after each.

    Pass system/optimizer/start_epoch from a loaded checkpoint to resume;
    the per-epoch derived rng streams make the continuation identical to
    an uninterrupted run.
    """
    cfg.validate()
    if system is None:
        system = init_system(cfg.msg_len, derive(cfg.seed, "init"), hidden=cfg.hidden,
                             mlp_hidden=cfg.mlp_hidden, baseline_hidden=cfg.baseline_hidden,
                             sender_modality=source.sender_ds.kind,
                             receiver_modality=source.receiver_ds.kind)
    if optimizer is None:
        optimizer = make_optimizer(system, cfg)

    per_epoch = cfg.episodes_per_epoch or len(source.sender_ds.train_idx)
    n_batches = max(1, math.ceil(per_epoch / cfg.batch_size))
    metrics = []
    for epoch in range(start_epoch, cfg.epochs):
        rng = derive(cfg.seed, "train", epoch)
        sums = {}
        for _ in range(n_batches):
            batch = sample_episode_batch(source, cfg.batch_size, rng, "train")
            stats = train_step(system, optimizer, batch, cfg, rng)
            for k, v in stats.items():
                sums[k] = sums.get(k, 0.0) + v
        avg = {k: v / n_batches for k, v in sums.items()}

        if cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            ev = evaluate(system, source, cfg.eval_episodes,
                          derive(cfg.seed, "eval", epoch), cfg.t_max)
        else:
            ev = EvalStats(float("nan"), float("nan"), float("nan"),
                           float("nan"), float("nan"), 0)
        row = {
            "epoch": epoch,
            "train_loss": avg["total"],
            "L_c": avg["l_c"],
            "L_r": avg["l_r"],
            "entropy_bonus": avg["entropy_bonus"],
            "baseline_mse": avg["baseline_mse"],
            "test_accuracy": ev.accuracy,
            "mean_steps": ev.mean_steps,
            "receiver_entropy": ev.receiver_entropy,
            "sender_entropy": ev.sender_entropy,
        }
        metrics.append(row)
        if log is not None:
            log(row)
        if metrics_path is not None:
            write_csv(metrics_path, METRIC_COLUMNS, metrics, meta=meta)
        if cfg.stop_accuracy and ev.accuracy >= cfg.stop_accuracy:
            break
    return TrainResult(system=system, metrics=metrics, optimizer=optimizer)


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
