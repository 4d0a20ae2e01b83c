# Training the toy student with and without distillation.
import time

from speechkd.distill import DistillConfig, DistillModel, evaluate_student, fit
from speechkd.evalkit import compare_runs
from speechkd.toy_models import CorpusConfig, TeacherEncoder, generate_corpus

corpus = generate_corpus(CorpusConfig(seed=0, n_utterances=300, noise_level=0.6))
train, valid = corpus.split('train'), corpus.split('valid')
print(f'{len(train)} training and {len(valid)} validation utterances')
print('first label:', train[0].label, ' teacher tokens:', train[0].teacher_tokens,
      ' frames:', train[0].frames.shape)

teacher = TeacherEncoder.init(corpus.config.teacher_vocab, 12, seed=1)
reports = {}
for lam in (0.0, 0.5):
    model = DistillModel.init(8, 16, corpus.config.student_vocab, 2, teacher, seed=0)
    config = DistillConfig(lam=lam, peak_lr=0.05, total_steps=600, warmup_steps=60, eval_every=100)
    t0 = time.perf_counter()
    result = fit(model, train, valid, config)
    last = result.history[-1]
    reports[lam] = evaluate_student(result.best.student, valid)
    print(f'lambda={lam}: ctc {last["ctc"]:.3f}  kd {last["kd"]:.3f}  '
          f'best valid CER {result.best_valid_cer:.3f} at step {result.best_step}  '
          f'({time.perf_counter() - t0:.1f}s)')

if reports[0.0].cer > 0:
    c = compare_runs(reports[0.0], reports[0.5])
    print(f'relative CER change with distillation: {100 * c.relative_improvement:+.1f}%')
