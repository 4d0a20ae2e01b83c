"""Cross-modal feature distillation for CTC sequence models, at desk scale."""

from .align import ProjectionLayer, ShrunkFeature, interpolate_nn, project, shrink, shrink_backward
from .ctc import Vocabulary, ctc_loss, ctc_oracle, greedy_decode
from .distill import DistillConfig, DistillModel, LossBreakdown, fit, joint_loss, kd_loss, lr_at, \
    train_step
from .evalkit import EvalReport, cer, compare_runs, edit_distance, prediction_density
from .numerics import grad_check, linear_backward, linear_forward, mse, softmax_rows
from .toy_models import CorpusConfig, StudentEncoder, TeacherEncoder, generate_corpus, \
    student_forward, teacher_forward

__version__ = "0.1.0"

__all__ = [
    "CorpusConfig", "DistillConfig", "DistillModel", "EvalReport", "LossBreakdown",
    "ProjectionLayer", "ShrunkFeature", "StudentEncoder", "TeacherEncoder", "Vocabulary",
    "cer", "compare_runs", "ctc_loss", "ctc_oracle", "edit_distance", "fit", "generate_corpus",
    "grad_check", "greedy_decode", "interpolate_nn", "joint_loss", "kd_loss", "linear_backward",
    "linear_forward", "lr_at", "mse", "prediction_density", "project", "shrink", "shrink_backward",
    "softmax_rows", "student_forward", "teacher_forward", "train_step",
]
