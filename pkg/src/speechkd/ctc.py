"""Connectionist temporal classification: loss, gradient, greedy decoding.

The loss runs the forward-backward recursion over the blank-interleaved
label entirely in log space. :func:`ctc_oracle` is an independent check
that enumerates every frame path on tiny instances.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numerics import as_matrix, grad_check, log_softmax_rows, logaddexp_many, softmax_rows

BLANK = 0


class LabelError(ValueError):
    """Label contains the blank or an out-of-vocabulary id."""


class CtcInfeasibleError(ValueError):
    """No frame path of the given length can produce the label."""


@dataclass(frozen=True)
class Vocabulary:
    symbols: tuple[str, ...]
    blank_id: int = BLANK

    def __post_init__(self):
        if not 0 <= self.blank_id < len(self.symbols):
            raise ValueError(f"blank_id {self.blank_id} outside vocabulary of size {len(self.symbols)}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary display strings must be unique")

    @classmethod
    def letters(cls, n_symbols: int, blank: str = "-") -> "Vocabulary":
        """Blank at index 0 followed by ``n_symbols`` lowercase letters."""
        if not 0 < n_symbols <= 26:
            raise ValueError("n_symbols must be in [1, 26]")
        return cls((blank,) + tuple(chr(ord("a") + i) for i in range(n_symbols)))

    @property
    def size(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> list[int]:
        index = {s: i for i, s in enumerate(self.symbols)}
        return [index[c] for c in text]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.symbols[i] for i in ids)


@dataclass
class CtcResult:
    loss: float
    grad_logits: np.ndarray


def count_repeats(label: Sequence[int]) -> int:
    return sum(1 for a, b in zip(label, label[1:]) if a == b)


def min_frames(label: Sequence[int]) -> int:
    """Fewest frames that can emit ``label``: one per token plus a blank per repeat."""
    return len(label) + count_repeats(label)


def validate_label(label: Sequence[int], vocab_size: int, blank_id: int = BLANK) -> list[int]:
    out = [int(t) for t in label]
    for pos, t in enumerate(out):
        if t == blank_id:
            raise LabelError(f"label contains the blank id {blank_id} at position {pos}")
        if not 0 <= t < vocab_size:
            raise LabelError(f"label id {t} at position {pos} outside vocabulary of size {vocab_size}")
    return out


def _extend(label: Sequence[int], blank_id: int) -> np.ndarray:
    ext = np.full(2 * len(label) + 1, blank_id, dtype=np.int64)
    ext[1::2] = label
    return ext


def ctc_loss(logits, label: Sequence[int], blank_id: int = BLANK) -> CtcResult:
    """Negative log-likelihood of ``label`` and its gradient w.r.t. raw logits.

    Raises :class:`CtcInfeasibleError` rather than returning an infinite
    loss when the label is too long for the number of frames.
    """
    logits = as_matrix(logits, "logits")
    T, V = logits.shape
    label = validate_label(label, V, blank_id)
    need = min_frames(label)
    if T < need:
        raise CtcInfeasibleError(f"label needs at least {need} frames, got {T}")

    log_probs = log_softmax_rows(logits)
    ext = _extend(label, blank_id)
    S = ext.shape[0]
    emit = log_probs[:, ext]  # T x S

    # a skip from s-2 is allowed into non-blank states that differ from s-2
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank_id) & (ext[2:] != ext[:-2])

    neg_inf = -np.inf
    alpha = np.full((T, S), neg_inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), neg_inf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc

    log_likelihood = logaddexp_many(alpha[T - 1, max(S - 2, 0):])
    if not np.isfinite(log_likelihood):
        raise CtcInfeasibleError("label has zero probability under the given logits")

    occupancy_states = np.exp(alpha + beta - log_likelihood)  # T x S
    onehot = np.zeros((S, V))
    onehot[np.arange(S), ext] = 1.0
    occupancy = occupancy_states @ onehot
    grad = softmax_rows(logits) - occupancy
    return CtcResult(float(-log_likelihood), grad)


def collapse(path: Sequence[int], blank_id: int = BLANK) -> tuple[int, ...]:
    """Merge adjacent duplicates, then drop blanks."""
    return tuple(k for k, _ in itertools.groupby(path) if k != blank_id)


@functools.lru_cache(maxsize=64)
def _path_table(T: int, V: int, blank_id: int):
    paths = np.array(list(itertools.product(range(V), repeat=T)), dtype=np.int64)
    collapsed = [collapse(p, blank_id) for p in paths]
    return paths, collapsed


ORACLE_MAX_FRAMES = 8


def ctc_oracle(probs, label: Sequence[int], blank_id: int = BLANK,
               max_frames: int = ORACLE_MAX_FRAMES) -> float:
    """Brute-force CTC loss by enumerating all ``V**T`` frame paths.

    Returns ``inf`` when no path collapses to ``label``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    T, V = probs.shape
    if T > max_frames:
        raise ValueError(f"oracle refuses T={T} > {max_frames} (V**T paths)")
    target = tuple(int(t) for t in label)
    paths, collapsed = _path_table(T, V, blank_id)
    mask = np.fromiter((c == target for c in collapsed), dtype=bool, count=len(collapsed))
    if not mask.any():
        return float("inf")
    with np.errstate(divide="ignore"):
        log_p = np.log(probs)
    path_logp = log_p[np.arange(T)[None, :], paths[mask]].sum(axis=1)
    return -logaddexp_many(path_logp)


def oracle_label_distribution(probs, blank_id: int = BLANK) -> dict[tuple[int, ...], float]:
    """Probability mass of every collapsed label, by enumeration."""
    probs = np.asarray(probs, dtype=np.float64)
    T, V = probs.shape
    if T > ORACLE_MAX_FRAMES:
        raise ValueError(f"oracle refuses T={T} > {ORACLE_MAX_FRAMES}")
    paths, collapsed = _path_table(T, V, blank_id)
    path_p = np.prod(probs[np.arange(T)[None, :], paths], axis=1)
    out: dict[tuple[int, ...], float] = {}
    for c, p in zip(collapsed, path_p):
        out[c] = out.get(c, 0.0) + float(p)
    return out


def frame_argmax(probs) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest id
    return np.argmax(np.asarray(probs), axis=1)


def greedy_decode(probs, blank_id: int = BLANK) -> list[int]:
    return list(collapse(frame_argmax(probs).tolist(), blank_id))


def random_instance(rng: np.random.Generator, T: int, V: int, max_label: int = 3,
                    scale: float = 2.0, blank_id: int = BLANK):
    """Random logits and a random feasible blank-free label."""
    logits = rng.normal(scale=scale, size=(T, V))
    symbols = [k for k in range(V) if k != blank_id]
    while True:
        L = int(rng.integers(1, max_label + 1))
        label = [int(x) for x in rng.choice(symbols, size=L)]
        if min_frames(label) <= T:
            return logits, label


@dataclass
class CtcGradCheckReport:
    max_rel_error: float
    tolerance: float
    trials: int
    failed_seeds: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failed_seeds


def ctc_grad_check(
    trials: int = 100,
    tolerance: float = 1e-4,
    seed: int = 0,
    frames: tuple[int, int] = (2, 6),
    vocab: tuple[int, int] = (2, 4),
    scale: float = 2.0,
    corrupt: Callable[[np.ndarray], np.ndarray] | None = None,
) -> CtcGradCheckReport:
    """Finite-difference check of :func:`ctc_loss` on seeded random instances.

    Trial ``i`` uses seed ``seed + i``; failing seeds are reported.
    ``corrupt`` lets tests tamper with the analytic gradient.
    """
    worst = 0.0
    failed = []
    for i in range(trials):
        rng = np.random.default_rng(seed + i)
        T = int(rng.integers(frames[0], frames[1] + 1))
        V = int(rng.integers(vocab[0], vocab[1] + 1))
        logits, label = random_instance(rng, T, V, scale=scale)
        grad = ctc_loss(logits, label).grad_logits
        if corrupt is not None:
            grad = corrupt(grad)
        rep = grad_check(lambda: ctc_loss(logits, label).loss, [logits], [grad],
                         tolerance=tolerance)
        worst = max(worst, rep.max_rel_error)
        if not rep.passed:
            failed.append(seed + i)
    return CtcGradCheckReport(worst, tolerance, trials, failed)
