"""Command-line entry point: ``gen-data``, ``train``, ``eval`` and ``sweep``.

Settings come from defaults, then an optional JSON ``--config`` file,
then individual flags. Exit status is 0 on success, 1 for invalid input
and 2 when training hits a non-finite loss.

Files written
-------------
corpus (``gen-data``)
    JSON lines. Line 1 is a header with ``format``, ``version``, the
    generation ``config`` and token ``prototypes``; each further line is
    one utterance with ``id``, ``frames``, ``label``, ``teacher_tokens``
    and ``boundaries``.
``metrics.jsonl`` (``train``)
    One JSON object per training step: ``step``, ``lr``, ``ctc``, ``kd``,
    ``total``, ``lambda``, ``kd_skipped``, ``n_kd_skipped``,
    ``valid_cer`` (null between evaluations) and ``wall_ms`` (null unless
    ``--record-wall-clock``, which makes the file non-reproducible).
``*.ckpt`` (``train``)
    Little-endian binary: magic ``SPKDCKPT``, uint32 format version,
    uint32 length + UTF-8 JSON run config, uint32 tensor count, then per
    tensor a uint16 length + UTF-8 name, uint8 rank, uint32 dims and the
    float64 values in row-major order.
``report.json`` / ``report.tsv`` (``eval``)
    Summary plus per-utterance records; the TSV has one row per utterance.
``sweep.tsv`` / ``comparisons.json`` (``sweep``)
    One row per lambda with validation CER and relative change vs. the
    lambda=0 run (or the first lambda when 0 is absent).

All randomness is numpy's PCG64 seeded through ``SeedSequence``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import struct
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import ProjectionLayer
from .distill import DistillConfig, DistillModel, NumericError, evaluate_student, fit
from .evalkit import EvalReport, compare_runs
from .numerics import DimensionError
from .toy_models import CorpusConfig, StudentEncoder, TeacherEncoder, generate_corpus, read_corpus, \
    write_corpus

log = logging.getLogger("speechkd")

CKPT_MAGIC = b"SPKDCKPT"
CKPT_VERSION = 1
DEFAULT_LAMBDAS = (0.0, 0.25, 0.5, 1.0)


class CheckpointError(ValueError):
    pass


@dataclass
class RunConfig:
    distill: DistillConfig = field(default_factory=DistillConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    corpus_path: str = "corpus.jsonl"
    out_dir: str = "run"
    hidden_dim: int = 16
    n_blocks: int = 2
    teacher_dim: int = 12
    teacher_seed: int = 1
    sweep_lambdas: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    record_wall_clock: bool = False

    def __post_init__(self):
        if isinstance(self.distill, dict):
            self.distill = DistillConfig(**self.distill)
        if isinstance(self.corpus, dict):
            self.corpus = CorpusConfig(**self.corpus)
        self.sweep_lambdas = [float(x) for x in self.sweep_lambdas]
        if not self.sweep_lambdas:
            raise ValueError("sweep needs at least one lambda")
        if self.hidden_dim < 1 or self.teacher_dim < 1 or self.n_blocks < 0:
            raise ValueError("model dimensions must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["corpus"] = self.corpus.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})


# -- checkpoints ------------------------------------------------------------------


def _model_tensors(model: DistillModel) -> dict[str, np.ndarray]:
    out = dict(model.trainable())
    out.update({f"teacher.{k}": v for k, v in model.teacher.parameters().items()})
    return out


def save_checkpoint(path, model: DistillModel, config: RunConfig) -> None:
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode()
    tensors = _model_tensors(model)
    with Path(path).open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.atleast_1d(np.asarray(arr))
            key = name.encode()
            fh.write(struct.pack("<H", len(key)) + key)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[DistillModel, RunConfig]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    buf = path.read_bytes()
    if not buf.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    try:
        pos = len(CKPT_MAGIC)
        version, n_cfg = struct.unpack_from("<II", buf, pos)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos += 8
        config = RunConfig.from_json(buf[pos:pos + n_cfg].decode())
        pos += n_cfg
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (n_key,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + n_key].decode()
            pos += n_key
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            n = int(np.prod(shape))
            tensors[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
            pos += 8 * n
    except CheckpointError:
        raise
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    student = StudentEncoder.from_parameters(
        {k[len("student."):]: v for k, v in tensors.items() if k.startswith("student.")})
    projection = ProjectionLayer(tensors["projection.weights"], tensors["projection.bias"])
    emb, mix = tensors["teacher.embedding"], tensors["teacher.mixing"]
    emb.setflags(write=False)
    mix.setflags(write=False)
    return DistillModel(student, projection, TeacherEncoder(emb, mix)), config


# -- commands --------------------------------------------------------------------


def cmd_gen_data(config: RunConfig) -> Path:
    path = Path(config.corpus_path)
    if path.parent and not path.parent.exists():
        raise FileNotFoundError(f"output directory {path.parent} does not exist")
    corpus = generate_corpus(config.corpus)
    write_corpus(corpus, path)
    log.info("wrote %d utterances to %s", len(corpus.utterances), path)
    return path


@dataclass
class TrainOutcome:
    out_dir: Path
    best_step: int
    best_valid_cer: float | None
    train_cer: float | None


def build_model(config: RunConfig, corpus_config: CorpusConfig) -> DistillModel:
    teacher = TeacherEncoder.init(corpus_config.teacher_vocab, config.teacher_dim, config.teacher_seed)
    return DistillModel.init(corpus_config.input_dim, config.hidden_dim, corpus_config.student_vocab,
                             config.n_blocks, teacher, config.distill.seed)


def cmd_train(config: RunConfig) -> TrainOutcome:
    corpus = read_corpus(config.corpus_path)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json() + "\n")
    model = build_model(config, corpus.config)
    train, valid = corpus.split("train"), corpus.split("valid")
    with (out / "metrics.jsonl").open("w") as fh:
        def emit(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        try:
            result = fit(model, train, valid, config.distill, on_record=emit,
                         record_wall_clock=config.record_wall_clock)
        except NumericError:
            save_checkpoint(out / "failed.ckpt", model, config)
            raise
    save_checkpoint(out / "final.ckpt", result.model, config)
    save_checkpoint(out / "best.ckpt", result.best, config)
    train_cer = evaluate_student(result.model.student, train).cer if train else None
    summary = {"best_step": result.best_step, "best_valid_cer": result.best_valid_cer,
               "final_train_cer": train_cer, "teacher_fingerprint": model.teacher.fingerprint()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return TrainOutcome(out, result.best_step, result.best_valid_cer, train_cer)


def cmd_eval(checkpoint, corpus_path, split: str = "valid", out=None) -> EvalReport:
    model, _ = load_checkpoint(checkpoint)
    corpus = read_corpus(corpus_path)
    cc = corpus.config
    if model.student.input_dim != cc.input_dim or model.student.vocab_size != cc.student_vocab:
        raise DimensionError(
            f"checkpoint expects input_dim={model.student.input_dim}, vocab={model.student.vocab_size} "
            f"but corpus has input_dim={cc.input_dim}, vocab={cc.student_vocab}"
        )
    utts = corpus.utterances if split == "all" else corpus.split(split)
    if not utts:
        raise ValueError(f"split {split!r} of {corpus_path} is empty")
    report = evaluate_student(model.student, utts)
    if out is not None:
        report.write(out)
    return report


def _relative(baseline: EvalReport, candidate: EvalReport):
    if baseline.cer == candidate.cer:
        return 0.0
    if baseline.cer == 0:
        return None
    return compare_runs(baseline, candidate).relative_improvement


def cmd_sweep(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports: dict[float, EvalReport] = {}
    steps: dict[float, int] = {}
    for lam in config.sweep_lambdas:
        run_dir = out / f"lambda_{lam:g}"
        run_cfg = config.replace(out_dir=str(run_dir),
                                 distill={**dataclasses.asdict(config.distill), "lam": lam})
        outcome = cmd_train(run_cfg)
        reports[lam] = cmd_eval(run_dir / "best.ckpt", config.corpus_path, "valid",
                                out=run_dir / "report.json")
        steps[lam] = outcome.best_step
    base_lam = 0.0 if 0.0 in reports else config.sweep_lambdas[0]
    base = reports[base_lam]
    table = out / "sweep.tsv"
    comparisons = {}
    with table.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["lambda", "valid_cer", "relative_change", "best_step"])
        for lam, rep in reports.items():
            rel = _relative(base, rep)
            w.writerow([f"{lam:g}", repr(rep.cer), "" if rel is None else repr(rel), steps[lam]])
            comparisons[f"{lam:g}"] = {
                "baseline_lambda": base_lam,
                "relative_improvement": rel,
                "density_delta": rep.mean_prediction_density - base.mean_prediction_density,
                "truth_length_delta": rep.mean_truth_length - base.mean_truth_length,
                "baseline": base.summary(),
                "candidate": rep.summary(),
            }
    (out / "comparisons.json").write_text(json.dumps(comparisons, indent=2, sort_keys=True) + "\n")
    return table


# -- argument parsing ----------------------------------------------------------------


def _pair(text: str) -> list[int]:
    lo, hi = text.split(",")
    return [int(lo), int(hi)]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


# flag -> (section, key, type); section None means a top-level RunConfig field
_FLAGS = {
    "--lambda": ("distill", "lam", float),
    "--peak-lr": ("distill", "peak_lr", float),
    "--total-steps": ("distill", "total_steps", int),
    "--warmup-steps": ("distill", "warmup_steps", int),
    "--eval-every": ("distill", "eval_every", int),
    "--batch-size": ("distill", "batch_size", int),
    "--seed": ("distill", "seed", int),
    "--corpus-seed": ("corpus", "seed", int),
    "--n-utterances": ("corpus", "n_utterances", int),
    "--token-count": ("corpus", "token_count", _pair),
    "--frames-per-token": ("corpus", "frames_per_token", _pair),
    "--noise-level": ("corpus", "noise_level", float),
    "--n-symbols": ("corpus", "n_symbols", int),
    "--teacher-vocab": ("corpus", "teacher_vocab", int),
    "--input-dim": ("corpus", "input_dim", int),
    "--corpus": (None, "corpus_path", str),
    "--out": (None, "out_dir", str),
    "--hidden-dim": (None, "hidden_dim", int),
    "--n-blocks": (None, "n_blocks", int),
    "--teacher-dim": (None, "teacher_dim", int),
    "--teacher-seed": (None, "teacher_seed", int),
    "--lambdas": (None, "sweep_lambdas", _floats),
}


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speechkd", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config")
        for flag, (_, _, typ) in _FLAGS.items():
            p.add_argument(flag, dest=_dest(flag), type=typ, default=None)
        p.add_argument("--record-wall-clock", action="store_true", default=None)
        p.add_argument("--no-kd", action="store_true", default=None,
                       help="disable the distillation path entirely")
    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="valid", choices=["train", "valid", "test", "all"])
    p.add_argument("--out", default=None, help="report path (JSON; a .tsv is written alongside)")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base = RunConfig()
    if args.config:
        base = RunConfig.from_json(Path(args.config).read_text())
    d = base.to_dict()
    for flag, (section, key, _) in _FLAGS.items():
        value = getattr(args, _dest(flag))
        if value is None:
            continue
        if section is None:
            d[key] = value
        else:
            d[section][key] = value
    if args.record_wall_clock:
        d["record_wall_clock"] = True
    if args.no_kd:
        d["distill"]["kd_enabled"] = False
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            report = cmd_eval(args.checkpoint, args.corpus, args.split, args.out)
            print(json.dumps(report.summary(), sort_keys=True))
            return 0
        config = config_from_args(args)
        if args.command == "gen-data":
            with warnings.catch_warnings():
                warnings.simplefilter("always")
                print(cmd_gen_data(config))
        elif args.command == "train":
            outcome = cmd_train(config)
            print(json.dumps({"out_dir": str(outcome.out_dir), "best_step": outcome.best_step,
                              "best_valid_cer": outcome.best_valid_cer,
                              "final_train_cer": outcome.train_cer}, sort_keys=True))
        elif args.command == "sweep":
            print(cmd_sweep(config))
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
