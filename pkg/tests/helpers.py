"""Small random fixtures shared by the distill and acceptance tests."""
from speechkd.align import ProjectionLayer
from speechkd.ctc import random_instance
from speechkd.distill import DistillModel, Sample, batch_gradients
from speechkd.numerics import softmax_rows
from speechkd.toy_models import TeacherEncoder, Utterance, student_forward


def random_sample(rng, T=None, V=4, F=3, G=2, S=None):
    T = T or int(rng.integers(3, 9))
    logits, label = random_instance(rng, T, V)
    # keep the blank from dominating so that shrink is non-empty
    logits[:, 0] -= 1.0
    S = S or int(rng.integers(1, 4))
    return Sample(logits, rng.normal(size=(T, F)), label, rng.normal(size=(S, G)))


def tiny_model(seed=0, input_dim=3, hidden=4, vocab=4, n_blocks=1, teacher_vocab=6, teacher_dim=3):
    teacher = TeacherEncoder.init(teacher_vocab, teacher_dim, seed=seed + 100)
    return DistillModel.init(input_dim, hidden, vocab, n_blocks, teacher, seed)


def tiny_batch(rng, n=2, input_dim=3, vocab=4, teacher_vocab=6):
    out = []
    for i in range(n):
        T = int(rng.integers(4, 8))
        L = int(rng.integers(1, 3))
        label = [int(x) for x in rng.integers(1, vocab, size=L)]
        frames = rng.normal(size=(T, input_dim))
        teacher = [int(x) for x in rng.integers(0, teacher_vocab, size=int(rng.integers(1, 3)))]
        out.append(Utterance(i, frames, label, teacher, []))
    return out


def frozen_segments(model, batch):
    from speechkd.align import segment_frames
    return [segment_frames(softmax_rows(student_forward(model.student, u.frames).logits))
            for u in batch]


def joint_gradient_check(model, batch, config, tolerance):
    """Finite-difference check of every trainable array, segmentation frozen."""
    from speechkd.numerics import grad_check
    segs = frozen_segments(model, batch)
    _, grads = batch_gradients(model, batch, config, segments=segs)
    params = model.trainable()

    def f():
        return batch_gradients(model, batch, config, segments=segs)[0].total

    return grad_check(f, list(params.values()), [grads[k] for k in params], tolerance=tolerance)


def random_projection(rng, F=3, G=2):
    return ProjectionLayer(rng.normal(size=(F, G)), rng.normal(size=G))
