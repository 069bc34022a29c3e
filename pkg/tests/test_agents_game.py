"""Channel correctness and episode mechanics.

The hand-built codeword system from oracles.py proves the conversation
channel is lossless independent of any learning; random untrained
agents pin down the chance floor.
"""

import json

import numpy as np
import pytest

from emcomm.agents import init_system, receiver_step, sender_forward
from emcomm.errors import UsageError
from emcomm.game import (
    EpisodeSpec,
    run_batch,
    run_conversation,
    run_conversation_batch,
    split_transcripts,
    write_transcripts_jsonl,
)
from emcomm.rng import derive
from emcomm.tensor import const

from oracles import (
    CODES,
    MSG_LEN,
    N_CLASSES,
    all_class_batch,
    build_codeword_system,
    onehot_episode_batch,
)


@pytest.fixture(scope="module")
def codeword_system():
    return build_codeword_system()


def test_codeword_sender_emits_class_codes(codeword_system):
    eye = np.eye(N_CLASSES)
    m_prev = np.zeros((N_CLASSES, MSG_LEN))
    msg = sender_forward(eye, m_prev, codeword_system.sender, mode="test")
    assert np.array_equal(msg.bits, CODES)
    p = msg.probs.data
    assert np.all(p[CODES == 1.0] > 0.999)
    assert np.all(p[CODES == 0.0] < 0.001)
    # all six codewords distinct: the protocol is injective
    assert len({tuple(row) for row in msg.bits.tolist()}) == N_CLASSES


def test_codeword_receiver_copies_bits_into_hidden(codeword_system):
    h0 = const(np.zeros((N_CLASSES, MSG_LEN)))
    cand = np.broadcast_to(np.eye(N_CLASSES), (N_CLASSES, N_CLASSES, N_CLASSES)).copy()
    step = receiver_step(CODES, h0, cand, codeword_system.receiver, mode="test")
    assert np.max(np.abs(step.h.data - CODES)) < 1e-9


def test_codeword_system_perfect_for_all_classes_and_all_t(codeword_system):
    batch = all_class_batch(derive(11, "perfect"), reps=4)
    for t in range(1, 11):
        conv = run_conversation_batch(codeword_system, batch, mode="test",
                                      t_max=10, stop_override=t)
        assert conv.rewards.all(), f"miss at forced T={t}"
        assert np.all(conv.steps_taken == t)
        # decision is near-certain, not a lucky argmax
        pick = conv.final_class_dist.data[np.arange(batch.size), batch.target_index]
        assert np.all(pick > 0.999)


def test_codeword_system_perfect_with_sampled_bits(codeword_system):
    batch = all_class_batch(derive(12, "train-mode"), reps=10)
    conv = run_conversation_batch(codeword_system, batch, mode="train",
                                  rng=derive(12, "rollout"), t_max=10)
    assert conv.rewards.all()
    assert np.all(conv.steps_taken >= 1)


def test_codeword_system_stops_immediately_without_override(codeword_system):
    # stop logit 0 -> prob 0.5 -> threshold ties round to 1
    batch = all_class_batch(derive(13, "stop"), reps=2)
    conv = run_conversation_batch(codeword_system, batch, mode="test")
    assert np.all(conv.steps_taken == 1)
    assert conv.mask.shape == (batch.size, 1)
    assert conv.rewards.all()


def test_forced_continuation_runs_to_t_max(codeword_system):
    batch = all_class_batch(derive(14, "never"), reps=2)
    conv = run_conversation_batch(codeword_system, batch, mode="test",
                                  t_max=10, stop_override="never")
    assert np.all(conv.steps_taken == 10)
    assert conv.mask.shape == (batch.size, 10)
    assert conv.mask.all()
    assert conv.rewards.all()


def test_flipping_every_bit_breaks_the_protocol(codeword_system):
    batch = all_class_batch(derive(15, "flip"), reps=4)
    conv = run_conversation_batch(codeword_system, batch, mode="test",
                                  message_tamper=lambda bits, t: 1.0 - bits)
    assert conv.rewards.mean() <= 1.0 / N_CLASSES
    # the record keeps the original emission next to the delivered copy
    step = conv.steps[0]
    assert np.array_equal(step.delivered_bits, 1.0 - step.sender_msg.bits)


def test_identity_tamper_changes_nothing(codeword_system):
    batch = all_class_batch(derive(16, "identity"), reps=3)
    plain = run_conversation_batch(codeword_system, batch, mode="test")
    tampered = run_conversation_batch(codeword_system, batch, mode="test",
                                      message_tamper=lambda bits, t: bits.copy())
    assert np.array_equal(plain.predictions, tampered.predictions)
    assert np.array_equal(plain.rewards, tampered.rewards)


def test_untrained_agents_score_at_chance():
    system = init_system(MSG_LEN, derive(7, "chance-init"), hidden=16,
                         mlp_hidden=32, baseline_hidden=8, emb_dim=N_CLASSES)
    batch = onehot_episode_batch(derive(7, "chance-episodes"), 2000)
    conv = run_conversation_batch(system, batch, mode="train",
                                  rng=derive(7, "chance-rollout"), t_max=10)
    acc = conv.rewards.mean()
    assert abs(acc - 1.0 / 6.0) < 0.05


def test_episode_sampling_uniform_and_well_formed(tiny_uni_source):
    n = 10000
    batch = tiny_uni_source.sample_batch(n, derive(5, "uniform"), split="train")
    assert np.array_equal(np.sort(batch.candidate_classes, axis=1),
                          np.tile(np.arange(6), (n, 1)))
    picked = batch.candidate_classes[np.arange(n), batch.target_index]
    assert np.array_equal(picked, batch.target_class)
    for counts in (np.bincount(batch.target_index, minlength=6),
                   np.bincount(batch.target_class, minlength=6)):
        sigma = np.sqrt(n * (1 / 6) * (5 / 6))
        assert np.all(np.abs(counts - n / 6) < 3 * sigma)
    # sender observations come from the target class pool
    emb = tiny_uni_source.sender_ds.embeddings()
    for b in range(5):
        pool = tiny_uni_source.sender_ds.class_indices(int(batch.target_class[b]), "train")
        assert any(np.allclose(batch.sender_emb[b], emb[i]) for i in pool)


def test_sampling_rejects_bad_lengths(tiny_uni_source):
    with pytest.raises(UsageError):
        tiny_uni_source.sample_batch(4, derive(0, "bad"), target_classes=[1, 2])


def test_stop_override_validation(codeword_system):
    batch = all_class_batch(derive(17, "bad-override"), reps=1)
    with pytest.raises(UsageError):
        run_conversation_batch(codeword_system, batch, mode="test", stop_override=0)
    with pytest.raises(UsageError):
        run_conversation_batch(codeword_system, batch, mode="test",
                               stop_override="sometimes")
    with pytest.raises(UsageError):
        run_conversation_batch(codeword_system, batch, mode="test", t_max=0)


def test_empty_message_channel_rejected():
    with pytest.raises(UsageError):
        init_system(0, derive(0, "d0"))


def test_run_batch_summary_matches_transcripts(codeword_system):
    batch = all_class_batch(derive(18, "summary"), reps=3)
    transcripts, summary = run_batch(codeword_system, batch, mode="test")
    assert summary["n_episodes"] == batch.size
    assert summary["accuracy"] == np.mean([t.correct for t in transcripts])
    assert summary["mean_steps"] == np.mean([t.steps_taken for t in transcripts])
    for t in transcripts:
        assert 1 <= t.steps_taken <= 10
        assert 0 <= t.prediction < N_CLASSES
        assert t.sender_bits.shape == (t.steps_taken, MSG_LEN)
        assert t.class_dists.shape == (t.steps_taken, N_CLASSES)


def test_run_batch_rejects_empty_list(codeword_system):
    with pytest.raises(UsageError):
        run_batch(codeword_system, [])


def test_single_conversation_and_jsonl_round_trip(codeword_system, tmp_path):
    order = np.array([2, 4, 0, 1, 5, 3])
    spec = EpisodeSpec(
        target_class=4,
        target_index=1,
        sender_embedding=np.eye(6)[4],
        candidates=np.eye(6)[order],
        candidate_classes=order,
        episode_id="probe",
    )
    t1 = run_conversation(codeword_system, spec, mode="test")
    assert t1.correct and t1.prediction == 1 and t1.steps_taken == 1

    t10 = run_conversation(codeword_system, spec, mode="test", stop_override="never")
    assert t10.steps_taken == 10
    assert np.all(np.argmax(t10.class_dists, axis=1) == 1)

    path = tmp_path / "transcripts.jsonl"
    write_transcripts_jsonl(path, [t1, t10])
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == 2
    assert rows[0]["episode_id"] == "probe"
    assert rows[0]["correct"] is True
    assert len(rows[1]["steps"]) == 10
    assert rows[1]["steps"][0]["sender_bits"] == [int(v) for v in CODES[4]]
