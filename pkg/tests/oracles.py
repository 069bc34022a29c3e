"""Hand-built agents implementing a known-perfect 6-codeword protocol.

The Sender transmits a fixed 3-bit class code over one-hot embeddings
and the Receiver decodes it with an L1 nearest-codeword match wired
directly into the MLP weights, so the channel is lossless by
construction. Lets channel-correctness tests run without any learning.
"""

import numpy as np

from emcomm.agents import (
    AgentSystem,
    BaselineReceiverParams,
    BaselineSenderParams,
    ReceiverParams,
    SenderParams,
)
from emcomm.game import EpisodeBatch
from emcomm.tensor import param

N_CLASSES = 6
MSG_LEN = 3
# class k's codeword is the binary expansion of k, most significant bit first
CODES = np.array(
    [[(k >> (MSG_LEN - 1 - j)) & 1 for j in range(MSG_LEN)] for k in range(N_CLASSES)],
    dtype=np.float64,
)

BIG = 30.0   # saturates tanh/sigmoid to within ~1e-13 of the hard value
GAIN = 50.0  # logit gap separating the matching codeword in the softmax


def build_codeword_system() -> AgentSystem:
    c, d = N_CLASSES, MSG_LEN
    e = c  # one-hot embeddings
    q = d  # one GRU unit per message bit

    # hidden = tanh(BIG * onehot) ~ onehot; logits = +-BIG per code bit
    w_out = BIG * (2.0 * CODES.T - 1.0)
    sender = SenderParams(
        w_in=param(BIG * np.eye(e)), b_in=param(np.zeros(e)),
        w_msg=param(np.zeros((e, d))), b_msg=param(np.zeros(e)),
        w_out=param(w_out), b_out=param(np.zeros(d)),
    )

    # update gate forced shut (z ~ 0) so h' ~ tanh(BIG * bits) copies the
    # delivered bits into the hidden state at every step
    w_x = np.zeros((3 * q, d))
    w_x[2 * q:] = BIG * np.eye(d)
    b_x = np.zeros(3 * q)
    b_x[q:2 * q] = -BIG

    # hidden unit (slot s, bit j, sign): relu(sign * (h_j - code_j(slot s)))
    # so the pair sums to |h_j - code_j|; slot logits are -GAIN * L1 distance
    n_hidden = c * d * 2
    mlp_in = q + c * e
    w_mlp1 = np.zeros((n_hidden, mlp_in))
    w_mlp2 = np.zeros((c, n_hidden))
    for s in range(c):
        for j in range(d):
            for si, sign in enumerate((1.0, -1.0)):
                u = (s * d + j) * 2 + si
                w_mlp1[u, j] = sign
                for k in range(c):
                    w_mlp1[u, q + s * e + k] = -sign * CODES[k, j]
                w_mlp2[s, u] = -GAIN

    receiver = ReceiverParams(
        w_x=param(w_x), w_h=param(np.zeros((3 * q, q))),
        b_x=param(b_x), b_h=param(np.zeros(3 * q)),
        w_stop=param(np.zeros((1, q))), b_stop=param(np.zeros(1)),
        w_mlp1=param(w_mlp1), b_mlp1=param(np.zeros(n_hidden)),
        w_mlp2=param(w_mlp2), b_mlp2=param(np.zeros(c)),
        w_reply_h=param(np.zeros((d, q))), w_reply_d=param(np.zeros((d, e))),
    )

    hb = 2
    baseline_s = BaselineSenderParams(
        w1=param(np.zeros((hb, e + d))), b1=param(np.zeros(hb)),
        w2=param(np.zeros((1, hb))), b2=param(np.zeros(1)),
    )
    baseline_r = BaselineReceiverParams(w=param(np.zeros((1, q))), b=param(np.zeros(1)))
    return AgentSystem(sender, receiver, baseline_s, baseline_r, msg_len=d,
                       hidden=q, mlp_hidden=n_hidden, baseline_hidden=hb,
                       emb_dim=e, n_classes=c, sender_modality="audio",
                       receiver_modality="audio")


def onehot_episode_batch(rng, n, targets=None) -> EpisodeBatch:
    """Episodes over the one-hot world: permuted one-hot candidate blocks."""
    c = N_CLASSES
    eye = np.eye(c)
    if targets is None:
        targets = np.asarray(rng.integers(0, c, size=n), dtype=np.int64)
    else:
        targets = np.asarray(targets, dtype=np.int64)
    sender = np.empty((n, c))
    cand = np.empty((n, c, c))
    cand_cls = np.empty((n, c), dtype=np.int64)
    t_idx = np.empty(n, dtype=np.int64)
    for b in range(n):
        order = np.asarray(rng.permutation(c))
        cand[b] = eye[order]
        cand_cls[b] = order
        sender[b] = eye[targets[b]]
        t_idx[b] = int(np.where(order == targets[b])[0][0])
    return EpisodeBatch(sender, cand, cand_cls, targets, t_idx,
                        [str(b) for b in range(n)])


def all_class_batch(rng, reps=4) -> EpisodeBatch:
    targets = np.repeat(np.arange(N_CLASSES), reps)
    return onehot_episode_batch(rng, len(targets), targets=targets)
