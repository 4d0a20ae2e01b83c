# CTC loss, its gradient and greedy decoding on a tiny hand-made example.
import numpy as np

from speechkd.ctc import Vocabulary, ctc_loss, ctc_oracle, greedy_decode
from speechkd.numerics import softmax_rows

vocab = Vocabulary.letters(2)  # '-', 'a', 'b'
print('vocabulary:', vocab.symbols)

# two frames, uniform over {blank, a}: three paths (aa, a-, -a) give "a"
logits = np.zeros((2, 2))
res = ctc_loss(logits, [1])
print('loss for "a":', res.loss, ' expected:', -np.log(0.75))
print('gradient w.r.t. logits:\n', res.grad_logits)

# the forward-backward result agrees with brute-force path enumeration
rng = np.random.default_rng(0)
logits = rng.normal(size=(5, 3))
label = vocab.encode('ab')
print('recursion:', ctc_loss(logits, label).loss)
print('enumeration:', ctc_oracle(softmax_rows(logits), label))

# greedy decoding: argmax per frame, merge repeats, drop blanks
frames = ['-', 'a', 'a', 'b', '-', 'b']
probs = np.eye(3)[vocab.encode(''.join(frames))]
print(''.join(frames), '->', vocab.decode(greedy_decode(probs)))

# very long inputs stay finite because everything runs in log space
long_logits = rng.normal(size=(3000, 3))
long_label = [int(t) for t in rng.integers(1, 3, size=400)]
print('loss on T=3000, L=400:', ctc_loss(long_logits, long_label).loss)
