"""Desk-scale student and teacher encoders and a synthetic paired corpus.

The student is a frame-wise tanh MLP with a linear output head, so its
last hidden state and its logits share the frame axis. The teacher is a
frozen embedding followed by a tanh mixing layer over a coarser token
inventory obtained by merging adjacent student tokens in pairs.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ctc import BLANK, min_frames
from .numerics import DimensionError, linear_backward, linear_forward

CORPUS_FORMAT = "speechkd-corpus"
CORPUS_VERSION = 1


class CorpusFormatError(ValueError):
    pass


# -- encoders -----------------------------------------------------------------


def _glorot(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


@dataclass
class StudentEncoder:
    """Input projection, ``len(blocks)`` tanh layers, linear output head."""

    w_in: np.ndarray
    b_in: np.ndarray
    blocks: list[tuple[np.ndarray, np.ndarray]]
    w_head: np.ndarray
    b_head: np.ndarray

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, vocab_size: int, n_blocks: int,
             rng: np.random.Generator) -> "StudentEncoder":
        w_in = _glorot(rng, input_dim, hidden_dim)
        blocks = [(_glorot(rng, hidden_dim, hidden_dim), np.zeros(hidden_dim))
                  for _ in range(n_blocks)]
        w_head = _glorot(rng, hidden_dim, vocab_size)
        return cls(w_in, np.zeros(hidden_dim), blocks, w_head, np.zeros(vocab_size))

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.w_head.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array, in a fixed order."""
        out = {"w_in": self.w_in, "b_in": self.b_in}
        for k, (w, b) in enumerate(self.blocks):
            out[f"block{k}.w"] = w
            out[f"block{k}.b"] = b
        out["w_head"] = self.w_head
        out["b_head"] = self.b_head
        return out

    @classmethod
    def from_parameters(cls, params: dict[str, np.ndarray]) -> "StudentEncoder":
        n_blocks = sum(1 for k in params if k.startswith("block") and k.endswith(".w"))
        blocks = [(np.array(params[f"block{k}.w"]), np.array(params[f"block{k}.b"]))
                  for k in range(n_blocks)]
        return cls(np.array(params["w_in"]), np.array(params["b_in"]), blocks,
                   np.array(params["w_head"]), np.array(params["b_head"]))

    def copy(self) -> "StudentEncoder":
        return StudentEncoder.from_parameters({k: v.copy() for k, v in self.parameters().items()})


@dataclass
class StudentOutput:
    hidden: np.ndarray
    logits: np.ndarray
    activations: list[np.ndarray]  # input frames, then every layer output
    frames: np.ndarray


def student_forward(encoder: StudentEncoder, frames) -> StudentOutput:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != encoder.input_dim:
        raise DimensionError(
            f"student expects frames with {encoder.input_dim} features, got shape {x.shape}"
        )
    h = linear_forward(x, encoder.w_in, encoder.b_in)
    acts = [h]
    for w, b in encoder.blocks:
        h = np.tanh(linear_forward(h, w, b))
        acts.append(h)
    logits = linear_forward(h, encoder.w_head, encoder.b_head)
    return StudentOutput(h, logits, acts, x)


def student_backward(encoder: StudentEncoder, out: StudentOutput, d_logits=None,
                     d_hidden=None) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients on logits and/or hidden."""
    T, F = out.hidden.shape
    d_logits = np.zeros((T, encoder.vocab_size)) if d_logits is None else np.asarray(d_logits)
    dh, gw_head, gb_head = linear_backward(out.hidden, encoder.w_head, d_logits)
    if d_hidden is not None:
        dh = dh + d_hidden
    grads: dict[str, np.ndarray] = {}
    for k in range(len(encoder.blocks) - 1, -1, -1):
        w, _ = encoder.blocks[k]
        a = out.activations[k + 1]
        d_pre = dh * (1.0 - a * a)
        dh, gw, gb = linear_backward(out.activations[k], w, d_pre)
        grads[f"block{k}.w"] = gw
        grads[f"block{k}.b"] = gb
    _, gw_in, gb_in = linear_backward(out.frames, encoder.w_in, dh)
    grads["w_in"] = gw_in
    grads["b_in"] = gb_in
    grads["w_head"] = gw_head
    grads["b_head"] = gb_head
    return {k: grads[k] for k in encoder.parameters()}


@dataclass
class TeacherEncoder:
    embedding: np.ndarray
    mixing: np.ndarray

    @classmethod
    def init(cls, vocab_size: int, feature_dim: int, seed: int) -> "TeacherEncoder":
        rng = np.random.default_rng(seed)
        emb = rng.normal(size=(vocab_size, feature_dim))
        mix = rng.normal(scale=1.0 / np.sqrt(feature_dim), size=(feature_dim, feature_dim))
        emb.setflags(write=False)
        mix.setflags(write=False)
        return cls(emb, mix)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.embedding.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"embedding": self.embedding, "mixing": self.mixing}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.parameters().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def teacher_forward(encoder: TeacherEncoder, tokens) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("teacher tokens must be a flat sequence")
    bad = ids[(ids < 0) | (ids >= encoder.vocab_size)]
    if bad.size:
        raise ValueError(f"teacher token {int(bad[0])} outside vocabulary of size {encoder.vocab_size}")
    return np.tanh(encoder.embedding[ids] @ encoder.mixing)


# -- synthetic corpus ----------------------------------------------------------


@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 0
    n_utterances: int = 500
    token_count: tuple[int, int] = (3, 8)
    frames_per_token: tuple[int, int] = (2, 5)
    noise_level: float = 0.1
    n_symbols: int = 6
    teacher_vocab: int = 13
    input_dim: int = 8
    allow_repeats: bool = False

    def __post_init__(self):
        object.__setattr__(self, "token_count", tuple(int(v) for v in self.token_count))
        object.__setattr__(self, "frames_per_token", tuple(int(v) for v in self.frames_per_token))
        lo, hi = self.token_count
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid token_count range {self.token_count}")
        lo, hi = self.frames_per_token
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid frames_per_token range {self.frames_per_token}")
        if self.n_utterances < 0:
            raise ValueError("n_utterances must be non-negative")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        if self.n_symbols < 1 or self.input_dim < 1:
            raise ValueError("n_symbols and input_dim must be positive")
        if not self.allow_repeats and self.n_symbols < 2 and self.token_count[1] > 1:
            raise ValueError("need at least 2 symbols to avoid adjacent repeats")
        # one id per single symbol plus at least one bucket for merged pairs
        if self.teacher_vocab < self.n_symbols + 1:
            raise ValueError(
                f"teacher_vocab ({self.teacher_vocab}) must be >= student vocab ({self.n_symbols + 1})"
            )

    @property
    def student_vocab(self) -> int:
        return self.n_symbols + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["token_count"] = list(self.token_count)
        d["frames_per_token"] = list(self.frames_per_token)
        return d


@dataclass
class Utterance:
    uid: int
    frames: np.ndarray
    label: list[int]
    teacher_tokens: list[int]
    boundaries: list[tuple[int, int]]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class Corpus:
    config: CorpusConfig
    prototypes: np.ndarray  # (n_symbols + 1, input_dim); row 0 unused (blank)
    utterances: list[Utterance] = field(default_factory=list)

    def split(self, name: str) -> list[Utterance]:
        return [u for u in self.utterances if split_of(u.uid) == name]


def split_of(index: int) -> str:
    """80/10/10 train/valid/test bucket from a hash of the utterance index."""
    bucket = int(hashlib.sha256(str(index).encode()).hexdigest(), 16) % 10
    if bucket < 8:
        return "train"
    return "valid" if bucket == 8 else "test"


def retokenize_pairs(label, n_symbols: int, teacher_vocab: int) -> list[int]:
    """Coarser teacher tokens: adjacent student tokens merged in pairs.

    A lone trailing symbol ``s`` maps to teacher id ``s - 1``; a pair
    ``(a, b)`` maps into the buckets ``n_symbols .. teacher_vocab - 1``.
    """
    n_buckets = teacher_vocab - n_symbols
    out = []
    for i in range(0, len(label) - 1, 2):
        a, b = label[i] - 1, label[i + 1] - 1
        out.append(n_symbols + (a * n_symbols + b) % n_buckets)
    if len(label) % 2:
        out.append(label[-1] - 1)
    return out


def token_prototypes(config: CorpusConfig, rng: np.random.Generator) -> np.ndarray:
    protos = np.zeros((config.n_symbols + 1, config.input_dim))
    protos[1:] = rng.normal(size=(config.n_symbols, config.input_dim))
    return protos


def generate_corpus(config: CorpusConfig) -> Corpus:
    rng = np.random.default_rng(config.seed)
    protos = token_prototypes(config, rng)
    utts = []
    for uid in range(config.n_utterances):
        L = int(rng.integers(config.token_count[0], config.token_count[1] + 1))
        label = []
        for _ in range(L):
            if label and not config.allow_repeats:
                tok = int(rng.integers(1, config.n_symbols))
                tok += tok >= label[-1]
            else:
                tok = int(rng.integers(1, config.n_symbols + 1))
            label.append(tok)
        runs = rng.integers(config.frames_per_token[0], config.frames_per_token[1] + 1, size=L)
        frames, bounds, pos = [], [], 0
        for tok, n in zip(label, runs):
            n = int(n)
            frames.append(protos[tok] + config.noise_level * rng.normal(size=(n, config.input_dim)))
            bounds.append((pos, pos + n))
            pos += n
        x = np.concatenate(frames, axis=0)
        assert x.shape[0] >= min_frames(label)
        teacher = retokenize_pairs(label, config.n_symbols, config.teacher_vocab)
        utts.append(Utterance(uid, x, label, teacher, bounds))
    return Corpus(config, protos, utts)


def oracle_student(prototypes, sharpness: float = 10.0) -> StudentEncoder:
    """Hand-built nearest-prototype classifier with no hidden blocks.

    Frames are passed through unchanged and scored against every
    prototype; blank never wins. On a noiseless corpus without adjacent
    repeats its greedy decode is exact.
    """
    protos = np.asarray(prototypes, dtype=np.float64)
    V, F = protos.shape
    w_head = sharpness * protos.T.copy()
    b_head = -0.5 * sharpness * np.sum(protos ** 2, axis=1)
    w_head[:, BLANK] = 0.0
    b_head[BLANK] = -1e3
    return StudentEncoder(np.eye(F), np.zeros(F), [], w_head, b_head)


def write_corpus(corpus: Corpus, path) -> None:
    path = Path(path)
    if not corpus.utterances:
        warnings.warn(f"writing corpus with no utterances to {path}", stacklevel=2)
    header = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "config": corpus.config.to_dict(),
        "prototypes": corpus.prototypes.tolist(),
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for u in corpus.utterances:
            rec = {
                "id": u.uid,
                "frames": u.frames.tolist(),
                "label": u.label,
                "teacher_tokens": u.teacher_tokens,
                "boundaries": [list(b) for b in u.boundaries],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_corpus(path) -> Corpus:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorpusFormatError(f"{path}: line 1: empty file, expected header")
    try:
        header = json.loads(lines[0])
        if header.get("format") != CORPUS_FORMAT:
            raise CorpusFormatError(f"{path}: line 1: not a {CORPUS_FORMAT} file")
        if header.get("version") != CORPUS_VERSION:
            raise CorpusFormatError(f"{path}: line 1: unsupported version {header.get('version')}")
        config = CorpusConfig(**header["config"])
        protos = np.array(header["prototypes"], dtype=np.float64)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorpusFormatError(f"{path}: line 1: bad header ({exc})") from exc
    utts = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            frames = np.array(rec["frames"], dtype=np.float64)
            if frames.ndim != 2 or frames.shape[1] != config.input_dim:
                raise ValueError(f"frames have shape {frames.shape}")
            utts.append(Utterance(
                int(rec["id"]), frames, [int(t) for t in rec["label"]],
                [int(t) for t in rec["teacher_tokens"]],
                [(int(a), int(b)) for a, b in rec["boundaries"]],
            ))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
    return Corpus(config, protos, utts)
