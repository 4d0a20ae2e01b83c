import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speechkd.ctc import (CtcInfeasibleError, LabelError, Vocabulary, collapse, ctc_grad_check,
                          ctc_loss, ctc_oracle, greedy_decode, oracle_label_distribution,
                          random_instance)
from speechkd.numerics import softmax_rows


def onehot_probs(ids, V):
    p = np.full((len(ids), V), 0.01)
    p[np.arange(len(ids)), ids] = 1.0
    return p / p.sum(axis=1, keepdims=True)


def test_single_frame_single_path():
    res = ctc_loss(np.log([[0.1, 0.9]]), [1])
    assert res.loss == pytest.approx(-math.log(0.9), abs=1e-12)
    assert res.loss == pytest.approx(0.105361, abs=1e-6)


def test_two_frames_uniform():
    # paths aa, a-, -a each with probability 1/4
    res = ctc_loss(np.zeros((2, 2)), [1])
    assert res.loss == pytest.approx(-math.log(0.75), abs=1e-12)
    assert ctc_oracle(np.full((2, 2), 0.5), [1]) == pytest.approx(0.287682, abs=1e-6)


def test_matches_oracle_on_random_instances():
    r = np.random.default_rng(7)
    for _ in range(200):
        T, V = int(r.integers(1, 7)), int(r.integers(2, 5))
        logits, label = random_instance(r, T, V)
        assert abs(ctc_loss(logits, label).loss - ctc_oracle(softmax_rows(logits), label)) <= 1e-9


def test_infeasible_label_is_an_error():
    with pytest.raises(CtcInfeasibleError):
        ctc_loss(np.zeros((2, 3)), [1, 1])  # needs a blank between the repeats
    with pytest.raises(CtcInfeasibleError):
        ctc_loss(np.zeros((2, 3)), [1, 2, 1])
    ctc_loss(np.zeros((3, 3)), [1, 1])


def test_blank_in_label_rejected():
    with pytest.raises(LabelError):
        ctc_loss(np.zeros((3, 3)), [1, 0])
    with pytest.raises(LabelError):
        ctc_loss(np.zeros((3, 3)), [5])


def test_oracle_infeasible_and_cap():
    assert ctc_oracle(np.full((2, 3), 1 / 3), [1, 2, 1]) == math.inf
    assert ctc_oracle(np.array([[1.0, 0.0], [1.0, 0.0]]), [1]) == math.inf
    with pytest.raises(ValueError, match="refuses"):
        ctc_oracle(np.full((9, 2), 0.5), [1])


def test_label_space_sums_to_one():
    r = np.random.default_rng(3)
    for T, V in [(1, 2), (3, 3), (5, 2), (4, 4)]:
        probs = softmax_rows(r.normal(size=(T, V)))
        assert sum(oracle_label_distribution(probs).values()) == pytest.approx(1.0, abs=1e-12)


def test_gradient_rows_sum_to_zero():
    r = np.random.default_rng(11)
    for _ in range(50):
        logits, label = random_instance(r, int(r.integers(2, 10)), int(r.integers(2, 6)))
        g = ctc_loss(logits, label).grad_logits
        assert np.all(np.abs(g.sum(axis=1)) <= 1e-9)


def test_gradient_finite_differences():
    rep = ctc_grad_check(trials=100, tolerance=1e-4, seed=0)
    assert rep.passed, rep


def test_corrupted_gradient_fails():
    rep = ctc_grad_check(trials=5, tolerance=1e-4, corrupt=lambda g: g + 0.01)
    assert not rep.passed and rep.failed_seeds == [0, 1, 2, 3, 4]


def test_saturated_logits_give_finite_gradients():
    r = np.random.default_rng(5)
    logits, label = random_instance(r, 6, 4, scale=1e3)
    res = ctc_loss(logits, label)
    assert np.isfinite(res.loss) and np.all(np.isfinite(res.grad_logits))


def test_long_sequence_does_not_underflow():
    r = np.random.default_rng(0)
    logits = r.normal(size=(2000, 5))
    label = [int(x) for x in r.integers(1, 5, size=300)]
    res = ctc_loss(logits, label)
    assert np.isfinite(res.loss) and res.loss > 700  # probability far below float64 range


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_vocabulary_permutation_covariance(seed):
    r = np.random.default_rng(seed)
    T, V = int(r.integers(2, 8)), int(r.integers(3, 6))
    logits, label = random_instance(r, T, V)
    perm = np.concatenate([[0], 1 + r.permutation(V - 1)])  # keep the blank fixed
    new_logits = np.empty_like(logits)
    new_logits[:, perm] = logits
    new_label = [int(perm[t]) for t in label]
    assert ctc_loss(new_logits, new_label).loss == pytest.approx(ctc_loss(logits, label).loss,
                                                                  abs=1e-10)


def test_greedy_decode_examples():
    V = 3  # blank, a, b
    assert greedy_decode(onehot_probs([0, 1, 1, 2, 0, 2], V)) == [1, 2, 2]
    assert greedy_decode(onehot_probs([0, 0, 0], V)) == []
    assert greedy_decode(onehot_probs([1, 0, 1], V)) == [1, 1]


def test_greedy_tie_breaks_to_lowest_index():
    assert greedy_decode(np.array([[0.2, 0.4, 0.4]])) == [1]
    assert greedy_decode(np.array([[0.5, 0.5, 0.0]])) == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=12))
def test_greedy_never_emits_blank_or_grows(path):
    out = greedy_decode(onehot_probs(path, 4))
    assert 0 not in out and len(out) <= len(path)
    assert tuple(out) == collapse(path)


def test_vocabulary():
    v = Vocabulary.letters(3)
    assert v.size == 4 and v.blank_id == 0
    assert v.decode(v.encode("abc")) == "abc"
    with pytest.raises(ValueError):
        Vocabulary(("a", "a"))
    with pytest.raises(ValueError):
        Vocabulary(("-", "a"), blank_id=2)
