import numpy as np
import pytest

from speechkd.ctc import greedy_decode, min_frames
from speechkd.evalkit import cer
from speechkd.numerics import DimensionError, grad_check, softmax_rows
from speechkd.toy_models import (CorpusConfig, CorpusFormatError, StudentEncoder, TeacherEncoder,
                                 generate_corpus, oracle_student, read_corpus, retokenize_pairs,
                                 split_of, student_backward, student_forward, teacher_forward,
                                 write_corpus)

from test_numerics import naive_matmul


def test_noiseless_runs_are_constant():
    c = generate_corpus(CorpusConfig(n_utterances=5, noise_level=0.0))
    for u in c.utterances:
        for (a, b), tok in zip(u.boundaries, u.label):
            assert np.all(u.frames[a:b] == c.prototypes[tok])


def test_corpus_deterministic():
    a = generate_corpus(CorpusConfig(seed=3, n_utterances=10))
    b = generate_corpus(CorpusConfig(seed=3, n_utterances=10))
    for x, y in zip(a.utterances, b.utterances):
        assert np.array_equal(x.frames, y.frames) and x.label == y.label


def test_frame_count_range():
    c = generate_corpus(CorpusConfig(n_utterances=50, token_count=(3, 3), frames_per_token=(2, 4)))
    assert all(6 <= u.n_frames <= 12 for u in c.utterances)


def test_labels_feasible_and_teacher_coarser():
    cfg = CorpusConfig(n_utterances=200)
    for u in generate_corpus(cfg).utterances:
        assert u.n_frames >= min_frames(u.label)
        assert 0 not in u.label
        assert all(a != b for a, b in zip(u.label, u.label[1:]))
        assert 1 <= len(u.teacher_tokens) == (len(u.label) + 1) // 2
        assert all(0 <= t < cfg.teacher_vocab for t in u.teacher_tokens)


def test_retokenize_pairs():
    assert retokenize_pairs([1, 2, 3], 6, 13) == [6 + 1 % 7, 2]
    assert retokenize_pairs([4], 6, 13) == [3]


@pytest.mark.parametrize("bad", [dict(token_count=(3, 2)), dict(frames_per_token=(0, 2)),
                                 dict(teacher_vocab=5), dict(n_utterances=-1)])
def test_corpus_config_validation(bad):
    with pytest.raises(ValueError):
        CorpusConfig(**bad)


def test_split_proportions():
    counts = {"train": 0, "valid": 0, "test": 0}
    for i in range(5000):
        counts[split_of(i)] += 1
    assert abs(counts["train"] / 5000 - 0.8) < 0.03
    assert abs(counts["valid"] / 5000 - 0.1) < 0.02


def test_corpus_roundtrip(tmp_path):
    c = generate_corpus(CorpusConfig(n_utterances=7))
    write_corpus(c, tmp_path / "c.jsonl")
    back = read_corpus(tmp_path / "c.jsonl")
    assert back.config == c.config
    np.testing.assert_array_equal(back.prototypes, c.prototypes)
    for x, y in zip(c.utterances, back.utterances):
        assert np.array_equal(x.frames, y.frames)
        assert (x.uid, x.label, x.teacher_tokens, x.boundaries) == \
            (y.uid, y.label, y.teacher_tokens, y.boundaries)


def test_corpus_parse_error_names_line(tmp_path):
    c = generate_corpus(CorpusConfig(n_utterances=3))
    p = tmp_path / "c.jsonl"
    write_corpus(c, p)
    lines = p.read_text().splitlines()
    lines[2] = "{broken"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusFormatError, match="line 3"):
        read_corpus(p)


def test_student_shapes_and_head(rng):
    enc = StudentEncoder.init(8, 16, 7, 2, rng)
    out = student_forward(enc, rng.normal(size=(1, 8)))
    assert out.hidden.shape == (1, 16) and out.logits.shape == (1, 7)
    x = rng.normal(size=(5, 8))
    out = student_forward(enc, x)
    np.testing.assert_allclose(out.logits, naive_matmul(out.hidden, enc.w_head, enc.b_head), atol=1e-12)
    with pytest.raises(DimensionError):
        student_forward(enc, np.zeros((3, 7)))


def test_student_zero_weights_bias_only(rng):
    enc = StudentEncoder.init(4, 5, 3, 1, rng)
    for p in enc.parameters().values():
        p[...] = 0.0
    enc.b_in[:] = 0.3
    enc.blocks[0][1][:] = -0.2
    enc.b_head[:] = [1.0, 2.0, 3.0]
    out = student_forward(enc, rng.normal(size=(6, 4)))
    assert np.all(out.logits == out.logits[0]) and np.all(out.hidden == out.hidden[0])


@pytest.mark.parametrize("n_blocks", [0, 1, 2])
def test_student_backward_finite_differences(n_blocks, rng):
    enc = StudentEncoder.init(3, 4, 3, n_blocks, rng)
    x = rng.normal(size=(5, 3))
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))

    def f():
        o = student_forward(enc, x)
        return float(np.sum(a * o.logits) + np.sum(b * o.hidden ** 2))

    out = student_forward(enc, x)
    grads = student_backward(enc, out, a, 2 * b * out.hidden)
    params = enc.parameters()
    rep = grad_check(f, list(params.values()), [grads[k] for k in params], tolerance=1e-5)
    assert rep.passed, rep


def test_teacher_forward(rng):
    t = TeacherEncoder.init(13, 12, seed=1)
    h = teacher_forward(t, [3, 5, 3])
    assert h.shape == (3, 12)
    np.testing.assert_array_equal(h[0], h[2])
    np.testing.assert_array_equal(h, teacher_forward(TeacherEncoder.init(13, 12, seed=1), [3, 5, 3]))
    np.testing.assert_allclose(h[1], np.tanh(t.embedding[5] @ t.mixing))
    with pytest.raises(ValueError):
        teacher_forward(t, [13])
    with pytest.raises(ValueError):
        t.embedding[0, 0] = 1.0  # frozen


def test_oracle_student_perfect_on_noiseless_corpus():
    c = generate_corpus(CorpusConfig(n_utterances=100, noise_level=0.0))
    student = oracle_student(c.prototypes)
    hyps = [greedy_decode(softmax_rows(student_forward(student, u.frames).logits))
            for u in c.utterances]
    assert cer([u.label for u in c.utterances], hyps) == 0.0
