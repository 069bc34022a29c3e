"""Reverse-mode automatic differentiation on an explicit tape.

All values are 64-bit float numpy arrays. Operations executed inside a
``with Tape():`` block append one record each, in execution order, so the
record list is already topologically sorted. ``Tape.backward(loss)``
walks the records in reverse and returns a dict mapping each reachable
Tensor that requires grad to its gradient array. Outside a tape, the same
operations run as plain numpy (used for test-mode evaluation).

Gradients are accumulated with out-of-place addition because a record's
backward may hand back the upstream gradient array unchanged; the tape
never mutates an array it does not own.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import UsageError

PROB_EPS = 1e-7  # probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before logs

_ACTIVE = None  # innermost recording tape


class Tensor:
    """Array value tracked by the tape. Hash/equality are identity-based."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def const(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else const(x)


class _Record:
    __slots__ = ("out", "inputs", "fwd", "bwd")

    def __init__(self, out, inputs, fwd, bwd):
        self.out = out
        self.inputs = inputs
        self.fwd = fwd
        self.bwd = bwd


class Tape:
    """Ordered record of primitive operations."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise UsageError("a tape is already recording")
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor) -> dict:
        """Gradients of a scalar loss w.r.t. every reachable grad-tensor."""
        if loss.data.size != 1:
            raise UsageError("backward requires a scalar loss node")
        grads = {loss: np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.get(rec.out)
            if g is None:
                continue
            for t, contrib in rec.bwd(g):
                if not t.requires_grad:
                    continue
                prev = grads.get(t)
                grads[t] = contrib if prev is None else prev + contrib
        return grads

    def replay(self) -> None:
        """Re-execute every recorded forward in order (bit-exact by construction)."""
        for rec in self.records:
            rec.out.data = rec.fwd()


def _emit(out, inputs, fwd, bwd):
    if _ACTIVE is not None and out.requires_grad:
        _ACTIVE.records.append(_Record(out, inputs, fwd, bwd))
    return out


def _needs(*tensors):
    return any(t.requires_grad for t in tensors)


def _unbroadcast(g, shape):
    """Sum gradient g down to the given input shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- basic ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _needs(a, b))

    def bwd(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _emit(out, (a, b), lambda: a.data + b.data, bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, _needs(a, b))

    def bwd(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _emit(out, (a, b), lambda: a.data - b.data, bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _needs(a, b))

    def bwd(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _emit(out, (a, b), lambda: a.data * b.data, bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data, _needs(a, b))

    def bwd(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 2:
            ga, gb = g @ bd.T, np.outer(ad, g)
        elif ad.ndim == 2 and bd.ndim == 1:
            ga, gb = np.outer(g, bd), ad.T @ g
        else:
            ga, gb = g @ bd.T, ad.T @ g
        return ((a, ga), (b, gb))

    return _emit(out, (a, b), lambda: a.data @ b.data, bwd)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.data.shape)),)

    return _emit(out, (a,), lambda: a.data.sum(axis=axis, keepdims=keepdims), bwd)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), a.requires_grad)
    denom = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.data.shape) / denom),)

    return _emit(out, (a,), lambda: a.data.mean(axis=axis, keepdims=keepdims), bwd)


def concat(tensors, axis=1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _needs(*tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, pieces))

    return _emit(out, tuple(tensors), lambda: np.concatenate([t.data for t in tensors], axis=axis), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def bwd(g):
        return ((a, g.reshape(a.data.shape)),)

    return _emit(out, (a,), lambda: a.data.reshape(shape), bwd)


def clip(a, lo, hi) -> Tensor:
    """Clamp values; gradient passes through only where the input was kept."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi), a.requires_grad)
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        return ((a, g * mask),)

    return _emit(out, (a,), lambda: np.clip(a.data, lo, hi), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), a.requires_grad)

    def bwd(g):
        return ((a, g / a.data),)

    return _emit(out, (a,), lambda: np.log(a.data), bwd)


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * a.data, a.requires_grad)

    def bwd(g):
        return ((a, 2.0 * g * a.data),)

    return _emit(out, (a,), lambda: a.data * a.data, bwd)


# ------------------------------------------------------------- activations

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data), a.requires_grad)

    def bwd(g):
        return ((a, g * (1.0 - out.data * out.data)),)

    return _emit(out, (a,), lambda: np.tanh(a.data), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # numerically symmetric form, avoids overflow for large |x|
    d = a.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(s, a.requires_grad)

    def fwd():
        d2 = a.data
        return np.where(d2 >= 0, 1.0 / (1.0 + np.exp(-np.abs(d2))), np.exp(-np.abs(d2)) / (1.0 + np.exp(-np.abs(d2))))

    def bwd(g):
        return ((a, g * out.data * (1.0 - out.data)),)

    return _emit(out, (a,), fwd, bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad)

    def bwd(g):
        return ((a, g * (a.data > 0)),)

    return _emit(out, (a,), lambda: np.maximum(a.data, 0.0), bwd)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)

    def fwd():
        z = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)

    out = Tensor(fwd(), a.requires_grad)

    def bwd(g):
        s = out.data
        return ((a, s * (g - (g * s).sum(axis=axis, keepdims=True))),)

    return _emit(out, (a,), fwd, bwd)


_ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "softmax": softmax}


def activation(a, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise UsageError(f"unknown activation kind: {kind!r}") from None
    return fn(a)


# -------------------------------------------------------------- fused ops

def linear(x, w, b=None) -> Tensor:
    """y = x @ w.T + b with w stored (out_features, in_features)."""
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)

    def fwd():
        y = x.data @ w.data.T
        return y + b.data if b is not None else y

    out = Tensor(fwd(), _needs(x, w) or (b is not None and b.requires_grad))
    vec = x.data.ndim == 1

    def bwd(g):
        gx = g @ w.data
        gw = np.outer(g, x.data) if vec else g.T @ x.data
        pairs = [(x, gx), (w, gw)]
        if b is not None:
            pairs.append((b, g if vec else g.sum(axis=0)))
        return pairs

    inputs = (x, w) if b is None else (x, w, b)
    return _emit(out, inputs, fwd, bwd)


def gru_step(x, h_prev, w_x, w_h, b_x, b_h) -> Tensor:
    """Standard GRU cell, fused with a manual backward.

    Gate stacking order along the first axis of w_x (3q, n_in) and
    w_h (3q, q) is reset, update, candidate. The candidate's hidden
    contribution is gated by reset before the tanh:

        r = sigmoid(x W_xr^T + b_xr + h W_hr^T + b_hr)
        z = sigmoid(x W_xz^T + b_xz + h W_hz^T + b_hz)
        n = tanh(x W_xn^T + b_xn + r * (h W_hn^T + b_hn))
        h' = z * h_prev + (1 - z) * n
    """
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    w_x, w_h, b_x, b_h = as_tensor(w_x), as_tensor(w_h), as_tensor(b_x), as_tensor(b_h)
    q = w_h.data.shape[1]
    if w_x.data.shape[0] != 3 * q or w_h.data.shape[0] != 3 * q:
        raise UsageError("gru_step expects stacked gate weights of shape (3q, in)")

    cache = {}

    def fwd():
        xd = np.atleast_2d(x.data)
        hd = np.atleast_2d(h_prev.data)
        gx = xd @ w_x.data.T + b_x.data
        gh = hd @ w_h.data.T + b_h.data
        r = 1.0 / (1.0 + np.exp(-(gx[:, :q] + gh[:, :q])))
        z = 1.0 / (1.0 + np.exp(-(gx[:, q:2 * q] + gh[:, q:2 * q])))
        hn = gh[:, 2 * q:]
        n = np.tanh(gx[:, 2 * q:] + r * hn)
        cache.update(r=r, z=z, n=n, hn=hn, xd=xd, hd=hd)
        out_d = z * hd + (1.0 - z) * n
        return out_d if x.data.ndim > 1 else out_d[0]

    out = Tensor(fwd(), _needs(x, h_prev, w_x, w_h, b_x, b_h))

    def bwd(g):
        r, z, n, hn = cache["r"], cache["z"], cache["n"], cache["hn"]
        xd, hd = cache["xd"], cache["hd"]
        g2 = np.atleast_2d(g)
        dz = g2 * (hd - n)
        dn = g2 * (1.0 - z)
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * hn
        dhn = dn_pre * r
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        dgx = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dhn], axis=1)
        dx = dgx @ w_x.data
        dh = g2 * z + dgh @ w_h.data
        if x.data.ndim == 1:
            dx, dh = dx[0], dh[0]
        return (
            (x, dx),
            (h_prev, dh),
            (w_x, dgx.T @ xd),
            (w_h, dgh.T @ hd),
            (b_x, dgx.sum(axis=0)),
            (b_h, dgh.sum(axis=0)),
        )

    return _emit(out, (x, h_prev, w_x, w_h, b_x, b_h), fwd, bwd)


def weighted_sum(weights, vectors) -> Tensor:
    """out[b] = sum_c weights[b, c] * vectors[b, c, :]."""
    weights, vectors = as_tensor(weights), as_tensor(vectors)
    out = Tensor(np.einsum("bc,bce->be", weights.data, vectors.data), _needs(weights, vectors))

    def bwd(g):
        pairs = [(weights, np.einsum("be,bce->bc", g, vectors.data))]
        if vectors.requires_grad:
            pairs.append((vectors, np.einsum("bc,be->bce", weights.data, g)))
        return pairs

    return _emit(out, (weights, vectors), lambda: np.einsum("bc,bce->be", weights.data, vectors.data), bwd)


def bernoulli_log_prob(probs, bits) -> Tensor:
    """Sum over the last axis of log P(bit | prob), probs clamped before the log."""
    probs = as_tensor(probs)
    bits = np.asarray(bits, dtype=np.float64)

    def fwd():
        p = np.clip(probs.data, PROB_EPS, 1.0 - PROB_EPS)
        return (bits * np.log(p) + (1.0 - bits) * np.log1p(-p)).sum(axis=-1)

    out = Tensor(fwd(), probs.requires_grad)

    def bwd(g):
        p = np.clip(probs.data, PROB_EPS, 1.0 - PROB_EPS)
        inside = (probs.data >= PROB_EPS) & (probs.data <= 1.0 - PROB_EPS)
        dp = (bits / p - (1.0 - bits) / (1.0 - p)) * inside
        return ((probs, dp * np.expand_dims(g, -1)),)

    return _emit(out, (probs,), fwd, bwd)


def bernoulli_entropy(probs) -> Tensor:
    """Sum over the last axis of binary entropy in nats, clamped probs."""
    probs = as_tensor(probs)

    def fwd():
        p = np.clip(probs.data, PROB_EPS, 1.0 - PROB_EPS)
        return -(p * np.log(p) + (1.0 - p) * np.log1p(-p)).sum(axis=-1)

    out = Tensor(fwd(), probs.requires_grad)

    def bwd(g):
        p = np.clip(probs.data, PROB_EPS, 1.0 - PROB_EPS)
        inside = (probs.data >= PROB_EPS) & (probs.data <= 1.0 - PROB_EPS)
        dp = (np.log1p(-p) - np.log(p)) * inside
        return ((probs, dp * np.expand_dims(g, -1)),)

    return _emit(out, (probs,), fwd, bwd)


def nll_gather(dist, index) -> Tensor:
    """Per-row negative log of dist[row, index[row]], clamped."""
    dist = as_tensor(dist)
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(dist.data.shape[0])

    def fwd():
        p = np.clip(dist.data[rows, index], PROB_EPS, 1.0 - PROB_EPS)
        return -np.log(p)

    out = Tensor(fwd(), dist.requires_grad)

    def bwd(g):
        picked = dist.data[rows, index]
        p = np.clip(picked, PROB_EPS, 1.0 - PROB_EPS)
        inside = (picked >= PROB_EPS) & (picked <= 1.0 - PROB_EPS)
        gd = np.zeros_like(dist.data)
        gd[rows, index] = -g * inside / p
        return ((dist, gd),)

    return _emit(out, (dist,), fwd, bwd)


# ------------------------------------------------------------- sampling

def bernoulli_sample(probs, rng) -> np.ndarray:
    """Draw {0,1} bits elementwise. probs may be a Tensor or an array."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
        raise UsageError("bernoulli_sample requires probabilities in [0, 1]")
    return (rng.random(p.shape) < p).astype(np.float64)


def threshold_bits(probs) -> np.ndarray:
    """Deterministic test-mode quantization; ties at 0.5 round to 1."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    return (p >= 0.5).astype(np.float64)


def init_uniform(shape, fan_in, rng, gain=1.0) -> Tensor:
    """Weight init uniform in +-gain/sqrt(fan_in)."""
    bound = gain / math.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, shape))


def zeros_param(shape) -> Tensor:
    return param(np.zeros(shape))
