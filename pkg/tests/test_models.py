"""
Tests for the five knowledge tracing architectures
"""
from pathlib import Path
import sys

import numpy as np
import pytest

# Add backend to path
sys.path.insert(0, str(Path(__file__).parent.parent / "backend"))

from errors import ConfigError, EncodingError, WindowError
from schemas import ARCHITECTURES, ModelConfig
from services.core_math import ComputeTape, grad_check
from services.data_pipeline import Interaction, StudentSequence
from services.dkvmn import correlation_weights
from services.kqn import skill_similarity
from services.model_registry import (
    EncodedWindow,
    WindowBatch,
    encode_interaction,
    forward,
    init_model,
    model_loss,
    model_predict,
    parameter_specs,
    predict_windows,
)
from services.sakt import attention_weights, causal_mask

NUM_SKILLS = 5

SMALL = ModelConfig(
    hidden_size=4,
    dkvmn_slots=3,
    dkvmn_key_dim=4,
    dkvmn_value_dim=4,
    dkvmn_summary_dim=4,
    sakt_dim=4,
    sakt_heads=2,
    sakt_max_len=8,
    kqn_dim=4,
)


def _model(arch, config=SMALL, seed=0):
    return init_model(arch, NUM_SKILLS, config, seed)


def _sequence(uid, skills, labels):
    return StudentSequence(uid, tuple(Interaction(s, c, 2020) for s, c in zip(skills, labels)))


def _batch():
    """Two windows, T = 8, the second padded after 5 steps"""
    return WindowBatch.from_sequences(
        [
            _sequence("a", [1, 2, 3, 4, 5, 1, 2, 3], [1, 0, 1, 1, 0, 1, 1, 0]),
            _sequence("b", [5, 4, 3, 2, 1], [0, 1, 1, 0, 1]),
        ],
        NUM_SKILLS,
    )


def _probs(state, skills, labels):
    return model_predict(state, _sequence("x", skills, labels)).numpy()[0]


def test_encode_interaction():
    """skill + correct * Q"""
    assert encode_interaction(3, 0, 5) == 3
    assert encode_interaction(3, 1, 5) == 8
    assert encode_interaction(5, 1, 5) == 10
    with pytest.raises(EncodingError):
        encode_interaction(0, 1, 5)
    with pytest.raises(EncodingError):
        encode_interaction(6, 0, 5)
    with pytest.raises(EncodingError):
        encode_interaction(2, 2, 5)


def test_window_batch_padding_and_targets():
    batch = _batch()
    assert (batch.size, batch.length) == (2, 8)
    assert batch.skill_ids[1].tolist() == [5, 4, 3, 2, 1, 1, 1, 1]
    assert batch.labels[1, 5:].tolist() == [0, 0, 0]
    assert batch.mask[1].tolist() == [1, 1, 1, 1, 1, 0, 0, 0]
    weights = batch.target_weights()
    assert weights[:, 0].tolist() == [0.0, 0.0]
    assert weights.sum() == 7 + 4
    assert batch.interaction_index()[0, :2].tolist() == [5, 1]


def test_encoded_window_rejects_out_of_vocabulary_skill():
    with pytest.raises(EncodingError):
        EncodedWindow.from_sequence(_sequence("a", [1, 9], [1, 0]), NUM_SKILLS)


def test_unknown_architecture():
    with pytest.raises(ConfigError):
        init_model("lstm", NUM_SKILLS, SMALL, 0)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_same_seed_same_parameters(arch):
    a, b = _model(arch, seed=3), _model(arch, seed=3)
    assert list(a.params) == [s.name for s in parameter_specs(arch, NUM_SKILLS, SMALL)]
    for name in a.params:
        np.testing.assert_array_equal(a[name].value.data, b[name].value.data)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_zero_weights_predict_one_half(arch):
    state = _model(arch)
    for p in state.parameters():
        p.assign(np.zeros(p.shape))
    np.testing.assert_allclose(_probs(state, [1, 2, 3], [1, 0, 1]), 0.5)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_probabilities_are_in_open_unit_interval(arch):
    probs = forward(ComputeTape(record=False), _model(arch), _batch()).numpy()
    assert probs.shape == (2, 8)
    assert ((probs > 0) & (probs < 1)).all()


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_prediction_depends_only_on_earlier_labels(arch):
    """Flipping label t leaves every probability at positions <= t unchanged"""
    state = _model(arch, seed=1)
    skills = [1, 2, 3, 4, 5, 1, 2, 3]
    labels = [1, 0, 1, 1, 0, 1, 1, 0]
    base = _probs(state, skills, labels)
    for t in range(len(skills)):
        flipped = list(labels)
        flipped[t] = 1 - flipped[t]
        changed = _probs(state, skills, flipped)
        np.testing.assert_array_equal(changed[: t + 1], base[: t + 1])
        if t + 1 < len(skills):
            assert not np.array_equal(changed[t + 1:], base[t + 1:])


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_future_skills_do_not_leak(arch):
    """Changing skill t leaves positions < t unchanged"""
    state = _model(arch, seed=2)
    labels = [1, 1, 0, 1, 0, 1]
    base = _probs(state, [1, 2, 3, 4, 5, 1], labels)
    changed = _probs(state, [1, 2, 3, 5, 5, 1], labels)
    np.testing.assert_array_equal(changed[:3], base[:3])


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_causality_on_random_windows(arch):
    """100 random windows: perturbing step t never moves an earlier prediction"""
    state = _model(arch, seed=7)
    rng = np.random.default_rng(ARCHITECTURES.index(arch))
    for _ in range(100):
        length = int(rng.integers(2, SMALL.sakt_max_len + 1))
        skills = [int(s) for s in rng.integers(1, NUM_SKILLS + 1, size=length)]
        labels = [int(c) for c in rng.integers(0, 2, size=length)]
        t = int(rng.integers(0, length))
        base = _probs(state, skills, labels)

        flipped = list(labels)
        flipped[t] = 1 - flipped[t]
        np.testing.assert_array_equal(_probs(state, skills, flipped)[: t + 1], base[: t + 1])

        moved = list(skills)
        moved[t] = moved[t] % NUM_SKILLS + 1
        np.testing.assert_array_equal(_probs(state, moved, labels)[:t], base[:t])


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_padding_does_not_change_valid_predictions(arch):
    """A window scores the same alone or padded next to a longer one"""
    state = _model(arch, seed=4)
    batch = _batch()
    together = forward(ComputeTape(record=False), state, batch).numpy()
    alone = _probs(state, [5, 4, 3, 2, 1], [0, 1, 1, 0, 1])
    np.testing.assert_allclose(together[1, :5], alone, rtol=0, atol=1e-12)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_gradients_match_central_differences(arch):
    """Tape gradients of the training loss agree with finite differences"""
    state = _model(arch, seed=5)
    batch = _batch()

    def loss_fn(tape):
        return model_loss(forward(tape, state, batch), state)

    assert grad_check(loss_fn, state.parameters(), eps=1e-5) <= 1e-4


def test_gru_knowledge_encoder_gradients():
    config = SMALL.model_copy(update={"kqn_cell": "gru"})
    state = _model("kqn", config=config, seed=6)
    assert "W_in_update" in state.params
    batch = _batch()
    assert grad_check(lambda tape: model_loss(forward(tape, state, batch), state), state.parameters()) <= 1e-4


def test_dkt_single_step_by_hand():
    """Q = 2, H = 1 recurrence worked out directly"""
    config = ModelConfig(hidden_size=1)
    state = init_model("dkt", 2, config, 0)
    state["W_hx"].assign(np.array([[0.5, -0.3, 0.2, 0.7]]))
    state["W_hh"].assign(np.array([[0.9]]))
    state["b_h"].assign(np.array([[0.1]]))
    state["W_yh"].assign(np.array([[1.5], [-2.0]]))
    state["b_y"].assign(np.array([[0.2, -0.1]]))
    window = EncodedWindow(skill_ids=(2, 1), labels=(1, 0), valid_mask=(1, 1))
    probs = model_predict(state, window).numpy()[0]

    sig = lambda x: 1.0 / (1.0 + np.exp(-x))
    # interaction (skill 2, correct) is one-hot index 2 + 2 - 1 = 3
    h0 = np.tanh(0.7 + 0.1)
    y0 = sig(np.array([1.5, -2.0]) * h0 + np.array([0.2, -0.1]))
    assert probs[0] == pytest.approx(sig(-0.1), abs=1e-15)
    assert probs[1] == pytest.approx(y0[0], abs=1e-15)


def test_dkt_trace_exposes_outputs_and_current():
    state = _model("dkt")
    trace = forward(ComputeTape(), state, _batch())
    assert trace.outputs.shape == (2, 8 * NUM_SKILLS)
    assert trace.current.shape == (2, 8)
    # current y_t[skill_t] at t equals the next position's prediction when the skill repeats
    batch = WindowBatch.from_sequences([_sequence("r", [2, 2], [1, 1])], NUM_SKILLS)
    trace = forward(ComputeTape(), state, batch)
    assert trace.current.numpy()[0, 0] == pytest.approx(trace.probs.numpy()[0, 1], abs=1e-15)


def test_dkt_plus_shares_dkt_parameters():
    assert [s.name for s in parameter_specs("dkt+", 5, SMALL)] == [s.name for s in parameter_specs("dkt", 5, SMALL)]


def test_dkvmn_correlation_weights_sum_to_one():
    weights = correlation_weights(_model("dkvmn"), np.arange(1, NUM_SKILLS + 1))
    assert weights.shape == (NUM_SKILLS, 3)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)
    assert (weights > 0).all()


def test_sakt_single_interaction_window():
    probs = _probs(_model("sakt"), [3], [1])
    assert probs.shape == (1,)
    assert 0.0 < probs[0] < 1.0


def test_sakt_rejects_window_longer_than_positions():
    state = _model("sakt")
    with pytest.raises(WindowError):
        _probs(state, [1] * 9, [0] * 9)


def test_sakt_causal_mask_and_attention_rows():
    mask = causal_mask(4)
    assert mask.shape == (3, 3)
    assert mask[0, 0] == 0.0 and mask[0, 1] < -1e29
    assert causal_mask(1).shape == (0, 0)
    batch = _batch()
    weights = attention_weights(_model("sakt"), batch, row=0, head=1)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.triu(weights, k=1), 0.0)


def test_sakt_dropout_only_applies_with_generator():
    config = SMALL.model_copy(update={"sakt_dropout": 0.5})
    state = _model("sakt", config=config)
    batch = _batch()
    plain = forward(ComputeTape(record=False), state, batch).numpy()
    again = forward(ComputeTape(record=False), state, batch).numpy()
    np.testing.assert_array_equal(plain, again)
    noisy = forward(ComputeTape(record=False), state, batch, rng=np.random.default_rng(0)).numpy()
    assert not np.array_equal(plain, noisy)


def test_kqn_first_prediction_is_one_half():
    probs = _probs(_model("kqn", seed=9), [4, 2, 1], [1, 1, 0])
    assert probs[0] == 0.5
    assert probs[1] != 0.5


def test_kqn_skill_similarity_tables():
    sim = skill_similarity(_model("kqn", seed=3))
    assert sim.cosine.shape == (NUM_SKILLS, NUM_SKILLS)
    np.testing.assert_array_equal(sim.cosine, sim.cosine.T)
    np.testing.assert_array_equal(np.diag(sim.cosine), 1.0)
    assert (np.abs(sim.cosine) <= 1.0).all()
    np.testing.assert_allclose(np.diag(sim.euclidean), 0.0)
    assert sim.missing == 0


def test_kqn_zero_skill_vectors_are_reported_missing():
    state = _model("kqn")
    state["W_skill_out"].assign(np.zeros((4, 4)))
    state["b_skill_out"].assign(np.zeros((1, 4)))
    sim = skill_similarity(state)
    assert sim.missing == NUM_SKILLS
    assert np.isnan(sim.cosine).all()
    np.testing.assert_allclose(sim.euclidean, 0.0)


def test_predict_windows_trims_to_window_length():
    state = _model("dkvmn")
    windows = [_sequence("a", [1, 2, 3], [1, 0, 1]), _sequence("b", [4, 5], [0, 0])]
    out = predict_windows(state, windows, batch_size=1)
    assert [len(p) for p in out] == [3, 2]
    batched = predict_windows(state, windows, batch_size=8)
    for x, y in zip(out, batched):
        np.testing.assert_allclose(x, y, atol=1e-12)
