"""Autodiff correctness against central finite differences, plus the
sampling and clipping primitives."""

import numpy as np
import pytest

import emcomm.tensor as T
from emcomm.agents import (
    BaselineReceiverParams,
    BaselineSenderParams,
    SenderParams,
    baseline_receiver_value,
    baseline_sender_value,
    init_system,
    sender_forward,
)
from emcomm.errors import UsageError
from emcomm.optim import clip_gradient_norm
from emcomm.rng import RngStream, derive

H = 1e-5
TOL = 1e-4
N_INSTANCES = 20


def fd_worst_error(build, params, h=H):
    """Max relative error between tape gradients and central differences.

    build() must construct a scalar loss under the active tape; replay()
    re-executes the recorded forwards after each parameter nudge.
    """
    with T.Tape() as tape:
        loss = build()
    grads = tape.backward(loss)
    worst = 0.0
    for p in params:
        g = grads[p].reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            tape.replay()
            up = float(loss.data)
            flat[i] = orig - h
            tape.replay()
            down = float(loss.data)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(g[i] - fd) / max(1e-6, abs(g[i]) + abs(fd))
            worst = max(worst, err)
    tape.replay()
    return worst


def scalarize(out, rng):
    """Random fixed weighting so every output coordinate affects the loss."""
    w = T.const(rng.normal(size=out.data.shape))
    return T.tensor_sum(T.mul(out, w))


@pytest.mark.parametrize("kind", ["tanh", "sigmoid", "relu", "softmax"])
def test_activation_gradients(kind):
    for inst in range(N_INSTANCES):
        rng = derive(100, "fd", kind, inst)
        x = T.param(rng.normal(size=(3, 5)))
        if kind == "relu":
            # keep inputs away from the kink where FD is undefined
            x.data[np.abs(x.data) < 0.05] += 0.1
        err = fd_worst_error(
            lambda: scalarize(T.activation(x, kind), rng), [x])
        assert err < TOL, f"{kind} instance {inst}: {err}"


def test_linear_gradients():
    for inst in range(N_INSTANCES):
        rng = derive(101, "fd", inst)
        x = T.param(rng.normal(size=(4, 6)))
        w = T.param(rng.normal(size=(3, 6)))
        b = T.param(rng.normal(size=3))
        err = fd_worst_error(lambda: scalarize(T.linear(x, w, b), rng), [x, w, b])
        assert err < TOL


def test_gru_cell_gradients():
    for inst in range(N_INSTANCES):
        rng = derive(102, "fd", inst)
        q, d, b = 4, 3, 2
        x = T.param(rng.normal(size=(b, d)))
        h0 = T.param(rng.normal(size=(b, q)))
        w_x = T.param(rng.normal(size=(3 * q, d)))
        w_h = T.param(rng.normal(size=(3 * q, q)))
        b_x = T.param(rng.normal(size=3 * q))
        b_h = T.param(rng.normal(size=3 * q))
        params = [x, h0, w_x, w_h, b_x, b_h]
        err = fd_worst_error(
            lambda: scalarize(T.gru_step(x, h0, w_x, w_h, b_x, b_h), rng), params)
        assert err < TOL


def test_sender_forward_gradients():
    for inst in range(N_INSTANCES):
        rng = derive(103, "fd", inst)
        q, e, d = 5, 7, 3
        params = SenderParams(
            w_in=T.param(rng.normal(size=(q, e))), b_in=T.param(rng.normal(size=q)),
            w_msg=T.param(rng.normal(size=(q, d))), b_msg=T.param(rng.normal(size=q)),
            w_out=T.param(rng.normal(size=(d, q))), b_out=T.param(rng.normal(size=d)))
        o_s = rng.normal(size=(2, e))
        m_prev = (rng.random((2, d)) < 0.5).astype(float)
        tensors = list(params.named().values())
        err = fd_worst_error(
            lambda: scalarize(sender_forward(o_s, m_prev, params, mode="test").probs,
                              rng), tensors)
        assert err < TOL


def test_baseline_gradients():
    for inst in range(N_INSTANCES):
        rng = derive(104, "fd", inst)
        q, e, d, hb = 5, 7, 3, 6
        sender = SenderParams(
            w_in=T.param(rng.normal(size=(q, e))), b_in=T.param(rng.normal(size=q)),
            w_msg=T.param(rng.normal(size=(q, d))), b_msg=T.param(rng.normal(size=q)),
            w_out=T.param(rng.normal(size=(d, q))), b_out=T.param(rng.normal(size=d)))
        bs = BaselineSenderParams(
            w1=T.param(rng.normal(size=(hb, q + d))), b1=T.param(rng.normal(size=hb)),
            w2=T.param(rng.normal(size=(1, hb))), b2=T.param(rng.normal(size=1)))
        o_s = rng.normal(size=(2, e))
        m_prev = (rng.random((2, d)) < 0.5).astype(float)
        err = fd_worst_error(
            lambda: scalarize(baseline_sender_value(o_s, m_prev, sender, bs), rng),
            list(bs.named().values()))
        assert err < TOL

        br = BaselineReceiverParams(w=T.param(rng.normal(size=(1, q))),
                                    b=T.param(rng.normal(size=1)))
        h = T.const(rng.normal(size=(2, q)))
        err = fd_worst_error(
            lambda: scalarize(baseline_receiver_value(h, br), rng),
            list(br.named().values()))
        assert err < TOL


def test_composite_loss_gradients():
    # log/clip/nll/entropy path used by the training losses
    for inst in range(8):
        rng = derive(105, "fd", inst)
        logits = T.param(rng.normal(size=(3, 4)))
        probs_raw = T.param(rng.uniform(0.2, 0.8, (3, 4)))
        bits = (rng.random((3, 4)) < 0.5).astype(float)
        idx = np.array([0, 2, 1])

        def build():
            dist = T.softmax(logits)
            nll = T.mean(T.nll_gather(dist, idx))
            lp = T.mean(T.bernoulli_log_prob(T.sigmoid(probs_raw), bits))
            ent = T.mean(T.bernoulli_entropy(T.sigmoid(probs_raw)))
            return T.add(nll, T.add(lp, ent))

        err = fd_worst_error(build, [logits, probs_raw])
        assert err < TOL


def test_backward_requires_scalar():
    with T.Tape() as tape:
        x = T.param(np.ones((2, 2)))
        y = T.tanh(x)
    with pytest.raises(UsageError):
        tape.backward(y)


def test_nested_tape_rejected():
    with T.Tape():
        with pytest.raises(UsageError):
            with T.Tape():
                pass


def test_threshold_bits_tie_rounds_up():
    probs = T.const(np.array([[0.499, 0.5, 0.501]]))
    bits = T.threshold_bits(probs)
    assert bits.tolist() == [[0.0, 1.0, 1.0]]


def test_bernoulli_sample_statistics():
    rng = RngStream(7, 1)
    probs = T.const(np.full((2000, 3), [0.1, 0.5, 0.9]))
    bits = T.bernoulli_sample(probs, rng)
    assert set(np.unique(bits)) <= {0.0, 1.0}
    freq = bits.mean(axis=0)
    assert np.all(np.abs(freq - [0.1, 0.5, 0.9]) < 0.05)


def test_bernoulli_log_prob_matches_formula():
    probs = T.const(np.array([[0.25, 0.75]]))
    bits = np.array([[1.0, 0.0]])
    lp = T.bernoulli_log_prob(probs, bits)
    assert abs(lp.data[0] - (np.log(0.25) + np.log(0.25))) < 1e-12


def test_clip_gradient_norm_property():
    rng = RngStream(9, 2)
    for _ in range(50):
        grads = [rng.normal(size=(3, 3)) * 10 for _ in range(4)]
        clipped, pre_norm = clip_gradient_norm(grads, 1.0)
        norm = np.sqrt(sum(float((g ** 2).sum()) for g in clipped))
        assert norm <= 1.0 + 1e-12
        assert pre_norm > 1.0
    # already-small gradients pass through unchanged
    small = [np.full((2, 2), 0.01)]
    out, norm = clip_gradient_norm(small, 1.0)
    assert np.array_equal(out[0], small[0])
    assert abs(norm - 0.02) < 1e-12
    with pytest.raises(UsageError):
        clip_gradient_norm(small, 0.0)


def test_init_uniform_bounds_and_gain():
    rng = RngStream(11, 3)
    w = T.init_uniform((50, 50), 100, rng)
    assert np.all(np.abs(w.data) <= 0.1)
    w8 = T.init_uniform((50, 50), 100, rng, gain=8.0)
    assert np.all(np.abs(w8.data) <= 0.8)
    assert np.abs(w8.data).max() > 0.1  # the gain actually widens the band


def test_full_system_shapes():
    system = init_system(6, derive(0, "init"), hidden=16, mlp_hidden=24,
                         baseline_hidden=8, emb_dim=10, n_classes=6)
    assert system.sender.w_out.data.shape == (6, 16)
    assert system.receiver.w_mlp1.data.shape == (24, 16 + 6 * 10)
    names = system.parameters()
    assert len(names) == len(set(names))
    assert all(t.requires_grad for t in names.values())
