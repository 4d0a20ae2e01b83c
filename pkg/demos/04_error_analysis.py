# CER, prediction density and a breakdown by reference length.
import numpy as np

from speechkd.distill import DistillConfig, DistillModel, evaluate_student, fit
from speechkd.evalkit import edit_distance, length_breakdown
from speechkd.toy_models import CorpusConfig, TeacherEncoder, generate_corpus

print('edit distance kitten/sitting:', edit_distance('kitten', 'sitting'))

corpus = generate_corpus(CorpusConfig(seed=2, n_utterances=200, noise_level=0.8,
                                      token_count=(2, 12)))
teacher = TeacherEncoder.init(corpus.config.teacher_vocab, 12, seed=1)
model = DistillModel.init(8, 16, corpus.config.student_vocab, 2, teacher, seed=0)
fit(model, corpus.split('train'), [], DistillConfig(total_steps=300, warmup_steps=30, eval_every=100))

report = evaluate_student(model.student, corpus.split('test'))
print(report.summary())
for row in length_breakdown(report, [2, 5, 8, 13]):
    print(row)

densities = np.array([r.density for r in report.records])
print('density quartiles:', np.percentile(densities, [25, 50, 75]).round(3))
