# Shrinking speech frames, stretching text features, projecting widths.
import numpy as np

from speechkd.align import ProjectionLayer, interpolate_nn, project, shrink
from speechkd.numerics import mse

rng = np.random.default_rng(1)

# eight frames of 4-d speech features and their frame-level predictions
hidden = rng.normal(size=(8, 4))
argmax = [0, 1, 1, 1, 0, 2, 2, 0]
probs = np.eye(3)[argmax] * 0.9 + 0.05
shrunk = shrink(hidden, probs)
print('segments (start, end, token):', [(s.start, s.end, s.token) for s in shrunk.segments])
print('shrunk shape:', shrunk.features.shape)
print('first row is the mean of frames 1..3:', np.allclose(shrunk.features[0], hidden[1:4].mean(axis=0)))

# three text-token features, resampled to the shrunk length (and beyond)
text = np.arange(6.0).reshape(3, 2)
for n in (2, 3, 6, 7):
    print(f'interpolate 3 -> {n}:', interpolate_nn(text, n)[:, 0].tolist())

# a linear layer maps speech width 4 to text width 2; MSE is the distillation loss
layer = ProjectionLayer.init(4, 2, rng)
projected = project(shrunk.features, layer)
target = interpolate_nn(text, len(shrunk))
print('distillation MSE:', mse(projected, target))
