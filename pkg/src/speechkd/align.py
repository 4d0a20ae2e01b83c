"""Bringing speech and text feature sequences to a common shape.

Speech frames are compressed with ``shrink`` (drop blank-argmax frames,
average each run of equal predictions), text features are stretched to
the shrunk length with nearest-neighbour ``interpolate_nn``, and the
feature width is bridged by a learnable linear ``ProjectionLayer``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .ctc import BLANK, frame_argmax
from .numerics import DimensionError, linear_backward, linear_forward


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # exclusive
    token: int

    def __len__(self) -> int:
        return self.end - self.start


@dataclass
class ShrunkFeature:
    features: np.ndarray
    segments: list[Segment]
    source_frames: int

    @property
    def tokens(self) -> list[int]:
        return [s.token for s in self.segments]

    def __len__(self) -> int:
        return len(self.segments)


def segment_frames(probs, blank_id: int = BLANK) -> list[Segment]:
    """Maximal runs of equal non-blank argmax, in frame order."""
    labels = frame_argmax(probs).tolist()
    segments = []
    pos = 0
    for tok, run in itertools.groupby(labels):
        n = len(list(run))
        if tok != blank_id:
            segments.append(Segment(pos, pos + n, int(tok)))
        pos += n
    return segments


def shrink(hidden, probs=None, blank_id: int = BLANK, segments: list[Segment] | None = None) -> ShrunkFeature:
    """Average ``hidden`` over each segment of the frame-level argmax.

    Pass ``segments`` to reuse a frozen segmentation instead of ``probs``.
    An all-blank input yields an empty result with zero rows.
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 2:
        raise DimensionError(f"hidden must be 2-D, got shape {hidden.shape}")
    T, F = hidden.shape
    if T == 0:
        raise ValueError("cannot shrink an empty frame sequence")
    if segments is None:
        if probs is None:
            raise ValueError("shrink needs probs or segments")
        probs = np.asarray(probs)
        if probs.shape[0] != T:
            raise DimensionError(f"hidden has {T} frames but probs has {probs.shape[0]}")
        segments = segment_frames(probs, blank_id)
    elif segments and segments[-1].end > T:
        raise DimensionError(f"segment ends at frame {segments[-1].end} beyond T={T}")
    features = np.empty((len(segments), F))
    for i, seg in enumerate(segments):
        features[i] = hidden[seg.start:seg.end].mean(axis=0)
    return ShrunkFeature(features, list(segments), T)


def shrink_backward(shrunk_grad, segments: list[Segment], T: int, F: int) -> np.ndarray:
    """Spread each segment's gradient evenly over its frames; blanks get zero."""
    g = np.asarray(shrunk_grad, dtype=np.float64)
    if g.size == 0:
        g = g.reshape(0, F)
    if g.shape != (len(segments), F):
        raise DimensionError(f"shrunk gradient has shape {g.shape}, expected {(len(segments), F)}")
    out = np.zeros((T, F))
    for i, seg in enumerate(segments):
        if seg.end > T:
            raise DimensionError(f"segment ends at frame {seg.end} beyond T={T}")
        out[seg.start:seg.end] = g[i] / len(seg)
    return out


def interpolate_indices(source_len: int, target_len: int) -> np.ndarray:
    """Centre-aligned nearest source index for every target position."""
    if source_len < 1:
        raise ValueError("cannot interpolate an empty source")
    if target_len < 1:
        raise ValueError("target length must be at least 1")
    i = np.arange(target_len)
    # integer form of floor((i + 0.5) * S / target) avoids float rounding at exact multiples
    idx = ((2 * i + 1) * source_len) // (2 * target_len)
    return np.clip(idx, 0, source_len - 1)


def interpolate_nn(source, target_len: int) -> np.ndarray:
    """Resample rows of ``source`` to ``target_len`` by copying the nearest row."""
    src = np.asarray(source, dtype=np.float64)
    if src.ndim != 2 or src.shape[0] == 0:
        raise ValueError(f"cannot interpolate source of shape {src.shape}")
    return src[interpolate_indices(src.shape[0], target_len)]


@dataclass
class ProjectionLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.bias.shape[0] != self.weights.shape[1]:
            raise DimensionError(
                f"projection weights {self.weights.shape} and bias {self.bias.shape} do not conform"
            )

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "ProjectionLayer":
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-limit, limit, size=(in_dim, out_dim)), np.zeros(out_dim))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ProjectionLayer":
        return ProjectionLayer(self.weights.copy(), self.bias.copy())


def project(shrunk, layer: ProjectionLayer) -> np.ndarray:
    shrunk = np.asarray(shrunk, dtype=np.float64)
    if shrunk.ndim != 2 or shrunk.shape[1] != layer.in_dim:
        raise DimensionError(
            f"projection expects {layer.in_dim} input features, got shape {shrunk.shape}"
        )
    return linear_forward(shrunk, layer.weights, layer.bias)


def project_backward(shrunk, layer: ProjectionLayer, upstream):
    """Returns ``(grad_shrunk, grad_weights, grad_bias)``."""
    return linear_backward(shrunk, layer.weights, upstream)
