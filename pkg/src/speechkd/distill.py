"""Joint CTC + feature-distillation objective and the SGD training loop.

The student's last hidden state is shrunk by its own CTC segmentation
and projected to the teacher's width; the frozen teacher features are
resampled to the shrunk length; the two are compared with MSE. The total
per-sample loss is ``ctc + lam * kd``, averaged over the batch.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .align import ProjectionLayer, Segment, interpolate_nn, project, project_backward, shrink, \
    shrink_backward
from .ctc import BLANK, CtcInfeasibleError, ctc_loss, greedy_decode
from .evalkit import EvalReport, evaluate
from .numerics import DimensionError, mse, mse_grad, softmax_rows
from .toy_models import StudentEncoder, TeacherEncoder, Utterance, student_backward, \
    student_forward, teacher_forward

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """A loss or gradient became non-finite during training."""


class EmptyShrinkError(ValueError):
    pass


@dataclass
class DistillConfig:
    lam: float = 0.0
    peak_lr: float = 0.05
    total_steps: int = 2000
    warmup_steps: int = 200
    eval_every: int = 200
    seed: int = 0
    batch_size: int = 8
    skip_kd_on_empty_shrink: bool = True
    kd_enabled: bool = True
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps exceeds total_steps")
        if self.eval_every < 1 or (self.total_steps and self.eval_every > self.total_steps):
            raise ValueError("eval_every must be in [1, total_steps]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.optimizer != "sgd":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    @classmethod
    def full_scale(cls, lam: float = 0.0) -> "DistillConfig":
        """Schedule used for the large pretrained models (Adam-era values)."""
        return cls(lam=lam, peak_lr=2e-5, total_steps=20000, warmup_steps=2000, eval_every=2000)


@dataclass
class LossBreakdown:
    ctc: float
    kd: float
    total: float
    lam: float
    kd_skipped: bool = False
    n_kd_skipped: int = 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def lr_at(step: int, config: DistillConfig) -> float:
    """Linear warm-up to ``peak_lr`` then cosine decay to zero."""
    if not 0 <= step <= config.total_steps:
        raise ValueError(f"step {step} outside [0, {config.total_steps}]")
    if step < config.warmup_steps:
        return config.peak_lr * step / config.warmup_steps
    decay = config.total_steps - config.warmup_steps
    if decay == 0:
        return config.peak_lr
    progress = (step - config.warmup_steps) / decay
    return config.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# -- losses -------------------------------------------------------------------


@dataclass
class KdResult:
    loss: float
    grad_hidden: np.ndarray
    grad_weights: np.ndarray
    grad_bias: np.ndarray
    skipped: bool = False
    segments: list[Segment] = field(default_factory=list)


def kd_loss(student_hidden, probs, teacher_hidden, projection: ProjectionLayer,
            skip_empty: bool = True, segments: list[Segment] | None = None,
            blank_id: int = BLANK) -> KdResult:
    """MSE between projected shrunk student features and resampled teacher features.

    The teacher side is treated as a constant. ``segments`` freezes the
    segmentation; otherwise it is read off ``probs``.
    """
    hidden = np.asarray(student_hidden, dtype=np.float64)
    teacher = np.asarray(teacher_hidden, dtype=np.float64)
    T, F = hidden.shape
    if teacher.ndim != 2 or teacher.shape[0] == 0:
        raise ValueError("teacher features must be a non-empty matrix")
    if projection.in_dim != F or projection.out_dim != teacher.shape[1]:
        raise DimensionError(
            f"projection maps {projection.in_dim}->{projection.out_dim} but student has "
            f"{F} and teacher has {teacher.shape[1]} features"
        )
    shrunk = shrink(hidden, probs, blank_id=blank_id, segments=segments)
    if len(shrunk) == 0:
        if not skip_empty:
            raise EmptyShrinkError("every frame predicts blank; nothing to distill")
        return KdResult(0.0, np.zeros_like(hidden), np.zeros_like(projection.weights),
                        np.zeros_like(projection.bias), skipped=True)
    projected = project(shrunk.features, projection)
    target = interpolate_nn(teacher, len(shrunk))
    loss = mse(projected, target)
    g_proj = mse_grad(projected, target)
    g_shrunk, g_w, g_b = project_backward(shrunk.features, projection, g_proj)
    g_hidden = shrink_backward(g_shrunk, shrunk.segments, T, F)
    return KdResult(loss, g_hidden, g_w, g_b, segments=shrunk.segments)


@dataclass
class Sample:
    logits: np.ndarray
    hidden: np.ndarray
    label: Sequence[int]
    teacher_hidden: np.ndarray


@dataclass
class JointResult:
    breakdown: LossBreakdown
    grad_logits: list[np.ndarray]
    grad_hidden: list[np.ndarray]
    grad_proj_weights: np.ndarray
    grad_proj_bias: np.ndarray


def joint_loss(batch: Sequence[Sample], projection: ProjectionLayer, lam: float,
               skip_empty: bool = True, kd_enabled: bool = True,
               segments: Sequence[list[Segment]] | None = None) -> JointResult:
    """Batch-mean of ``ctc + lam * kd`` with gradients on logits, hidden and projection."""
    if not batch:
        raise ValueError("empty batch")
    n = len(batch)
    ctc_sum = kd_sum = 0.0
    n_skipped = 0
    g_logits, g_hidden = [], []
    g_w = np.zeros_like(projection.weights)
    g_b = np.zeros_like(projection.bias)
    for i, s in enumerate(batch):
        try:
            c = ctc_loss(s.logits, s.label)
        except CtcInfeasibleError as exc:
            raise CtcInfeasibleError(f"sample {i}: {exc}") from exc
        ctc_sum += c.loss
        g_logits.append(c.grad_logits / n)
        if not kd_enabled:
            g_hidden.append(np.zeros_like(s.hidden))
            continue
        kd = kd_loss(s.hidden, softmax_rows(s.logits), s.teacher_hidden, projection,
                     skip_empty=skip_empty, segments=None if segments is None else segments[i])
        n_skipped += kd.skipped
        kd_sum += kd.loss
        g_hidden.append(lam * kd.grad_hidden / n)
        g_w += lam * kd.grad_weights / n
        g_b += lam * kd.grad_bias / n
    ctc_mean, kd_mean = ctc_sum / n, kd_sum / n
    breakdown = LossBreakdown(ctc_mean, kd_mean, ctc_mean + lam * kd_mean, lam,
                              kd_skipped=kd_enabled and n_skipped == n, n_kd_skipped=n_skipped)
    return JointResult(breakdown, g_logits, g_hidden, g_w, g_b)


# -- model and training ---------------------------------------------------------


@dataclass
class DistillModel:
    student: StudentEncoder
    projection: ProjectionLayer
    teacher: TeacherEncoder

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, vocab_size: int, n_blocks: int,
             teacher: TeacherEncoder, seed: int) -> "DistillModel":
        rng = np.random.default_rng([seed, 0])
        student = StudentEncoder.init(input_dim, hidden_dim, vocab_size, n_blocks, rng)
        projection = ProjectionLayer.init(hidden_dim, teacher.feature_dim, rng)
        return cls(student, projection, teacher)

    def trainable(self) -> dict[str, np.ndarray]:
        params = {f"student.{k}": v for k, v in self.student.parameters().items()}
        params["projection.weights"] = self.projection.weights
        params["projection.bias"] = self.projection.bias
        return params

    def copy(self) -> "DistillModel":
        # the teacher is frozen and shared
        return DistillModel(self.student.copy(), self.projection.copy(), self.teacher)


def batch_gradients(model: DistillModel, batch: Sequence[Utterance], config: DistillConfig,
                    segments: Sequence[list[Segment]] | None = None):
    """Joint loss breakdown and gradients for every trainable array.

    ``segments`` freezes each sample's shrink segmentation (gradient checks).
    """
    outs = [student_forward(model.student, u.frames) for u in batch]
    for o, u in zip(outs, batch):
        if not (np.all(np.isfinite(o.logits)) and np.all(np.isfinite(o.hidden))):
            raise NumericError(f"non-finite student output for utterance {u.uid}")
    samples = [Sample(o.logits, o.hidden, u.label, teacher_forward(model.teacher, u.teacher_tokens))
               for o, u in zip(outs, batch)]
    res = joint_loss(samples, model.projection, config.lam,
                     skip_empty=config.skip_kd_on_empty_shrink, kd_enabled=config.kd_enabled,
                     segments=segments)
    grads = {k: np.zeros_like(v) for k, v in model.trainable().items()}
    for o, gl, gh in zip(outs, res.grad_logits, res.grad_hidden):
        for k, g in student_backward(model.student, o, gl, gh).items():
            grads[f"student.{k}"] += g
    grads["projection.weights"] += res.grad_proj_weights
    grads["projection.bias"] += res.grad_proj_bias
    return res.breakdown, grads


def train_step(model: DistillModel, batch: Sequence[Utterance], config: DistillConfig,
               step: int) -> LossBreakdown:
    """One SGD update of student and projection; the teacher is never touched."""
    try:
        breakdown, grads = batch_gradients(model, batch, config)
    except NumericError as exc:
        raise NumericError(f"step {step}: {exc}") from exc
    finite = np.isfinite(breakdown.total) and all(np.all(np.isfinite(g)) for g in grads.values())
    if not finite:
        raise NumericError(
            f"non-finite loss or gradient at step {step} "
            f"(utterances {[u.uid for u in batch]}, loss {breakdown.as_dict()})"
        )
    lr = lr_at(step, config)
    params = model.trainable()
    for name, g in grads.items():
        params[name] -= lr * g
    return breakdown


def decode_all(student: StudentEncoder, utterances: Sequence[Utterance]):
    hyps, probs = [], []
    for u in utterances:
        p = softmax_rows(student_forward(student, u.frames).logits)
        probs.append(p)
        hyps.append(greedy_decode(p))
    return hyps, probs


def evaluate_student(student: StudentEncoder, utterances: Sequence[Utterance]) -> EvalReport:
    hyps, probs = decode_all(student, utterances)
    return evaluate([u.label for u in utterances], hyps, probs, uids=[u.uid for u in utterances])


@dataclass
class TrainResult:
    model: DistillModel
    best: DistillModel
    best_step: int
    best_valid_cer: float | None
    history: list[dict]


def fit(model: DistillModel, train: Sequence[Utterance], valid: Sequence[Utterance],
        config: DistillConfig, on_record: Callable[[dict], None] | None = None,
        record_wall_clock: bool = False) -> TrainResult:
    """Run ``config.total_steps`` SGD steps on random batches of ``train``.

    Validation CER is computed at step 0 and every ``eval_every`` steps;
    the parameters with the lowest validation CER are kept as ``best``.
    Each step emits one metrics record.
    """
    if not train and config.total_steps:
        raise ValueError("training split is empty")
    rng = np.random.default_rng([config.seed, 1])
    best, best_step = model.copy(), 0
    best_cer = evaluate_student(model.student, valid).cer if valid else None
    history = []
    for step in range(1, config.total_steps + 1):
        t0 = time.perf_counter()
        idx = rng.integers(0, len(train), size=config.batch_size)
        lr = lr_at(step, config)
        breakdown = train_step(model, [train[i] for i in idx], config, step)
        rec = {"step": step, "lr": lr, **breakdown.as_dict(), "valid_cer": None}
        if valid and step % config.eval_every == 0:
            cer_now = evaluate_student(model.student, valid).cer
            rec["valid_cer"] = cer_now
            if cer_now < best_cer:
                best, best_step, best_cer = model.copy(), step, cer_now
        rec["wall_ms"] = (time.perf_counter() - t0) * 1e3 if record_wall_clock else None
        history.append(rec)
        if on_record is not None:
            on_record(rec)
        if step % config.eval_every == 0:
            log.info("step %d lr %.4g loss %.4f valid_cer %s", step, lr, breakdown.total,
                     rec["valid_cer"])
    if not valid:
        best, best_step = model.copy(), config.total_steps
    return TrainResult(model, best, best_step, best_cer, history)
