"""Character error rate, prediction density and run-to-run comparison."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ctc import BLANK, frame_argmax


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def cer(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> float:
    """Corpus-level CER: summed edit distance over summed reference length."""
    if len(references) != len(hypotheses):
        raise ValueError(f"{len(references)} references but {len(hypotheses)} hypotheses")
    errors = length = 0
    for i, (ref, hyp) in enumerate(zip(references, hypotheses)):
        if len(ref) == 0:
            raise ValueError(f"reference {i} is empty")
        errors += edit_distance(ref, hyp)
        length += len(ref)
    if length == 0:
        raise ValueError("no references given")
    return errors / length


def prediction_density(probs, blank_id: int = BLANK) -> float:
    """Fraction of frames whose argmax is not the blank."""
    labels = frame_argmax(probs)
    if labels.size == 0:
        raise ValueError("prediction density needs at least one frame")
    return 1.0 - float(np.count_nonzero(labels == blank_id)) / labels.size


@dataclass
class UtteranceRecord:
    uid: int
    ref_length: int
    hyp_length: int
    edit_distance: int
    density: float


@dataclass
class EvalReport:
    cer: float
    n_utterances: int
    mean_prediction_density: float
    mean_truth_length: float
    records: list[UtteranceRecord] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: list[UtteranceRecord]) -> "EvalReport":
        if not records:
            raise ValueError("cannot build a report from zero utterances")
        total_ref = sum(r.ref_length for r in records)
        if total_ref == 0:
            raise ValueError("all references are empty")
        return cls(
            cer=sum(r.edit_distance for r in records) / total_ref,
            n_utterances=len(records),
            mean_prediction_density=float(np.mean([r.density for r in records])),
            mean_truth_length=float(np.mean([r.ref_length for r in records])),
            records=list(records),
        )

    def summary(self) -> dict:
        return {
            "cer": self.cer,
            "n_utterances": self.n_utterances,
            "mean_prediction_density": self.mean_prediction_density,
            "mean_truth_length": self.mean_truth_length,
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d["records"] = [asdict(r) for r in self.records]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["cer"], d["n_utterances"], d["mean_prediction_density"],
                   d["mean_truth_length"], [UtteranceRecord(**r) for r in d.get("records", [])])

    def write(self, path) -> None:
        """JSON document at ``path`` plus per-utterance rows in ``path.tsv``."""
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        with path.with_suffix(".tsv").open("w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["uid", "ref_length", "hyp_length", "edit_distance", "density"])
            for r in self.records:
                w.writerow([r.uid, r.ref_length, r.hyp_length, r.edit_distance, repr(r.density)])

    @classmethod
    def read(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def evaluate(references, hypotheses, probs_list, uids=None, blank_id: int = BLANK) -> EvalReport:
    uids = list(range(len(references))) if uids is None else list(uids)
    if not (len(references) == len(hypotheses) == len(probs_list) == len(uids)):
        raise ValueError("references, hypotheses, probs and ids differ in length")
    records = []
    for uid, ref, hyp, probs in zip(uids, references, hypotheses, probs_list):
        if len(ref) == 0:
            raise ValueError(f"reference for utterance {uid} is empty")
        records.append(UtteranceRecord(int(uid), len(ref), len(hyp), edit_distance(ref, hyp),
                                       prediction_density(probs, blank_id)))
    return EvalReport.from_records(records)


@dataclass
class RunComparison:
    baseline_cer: float
    candidate_cer: float
    relative_improvement: float
    density_delta: float
    truth_length_delta: float


def compare_runs(baseline: EvalReport, candidate: EvalReport) -> RunComparison:
    """Relative CER decrease of ``candidate`` w.r.t. ``baseline``.

    Positive values mean the candidate is better: 0.20 -> 0.17 gives 0.15.
    """
    if baseline.n_utterances != candidate.n_utterances:
        raise ValueError("reports cover different evaluation sets")
    if baseline.cer == 0:
        raise ZeroDivisionError("relative improvement undefined for a baseline CER of 0")
    return RunComparison(
        baseline.cer,
        candidate.cer,
        (baseline.cer - candidate.cer) / baseline.cer,
        candidate.mean_prediction_density - baseline.mean_prediction_density,
        candidate.mean_truth_length - baseline.mean_truth_length,
    )


def group_by_improvement(comparisons: dict[str, RunComparison], high: float = 0.10,
                         low: float = 0.01) -> dict[str, list[str]]:
    """Split runs into cohorts by relative improvement (``> high``, ``< low``)."""
    groups: dict[str, list[str]] = {"high": [], "low": [], "middle": []}
    for name, c in comparisons.items():
        if c.relative_improvement > high:
            groups["high"].append(name)
        elif c.relative_improvement < low:
            groups["low"].append(name)
        else:
            groups["middle"].append(name)
    return groups


def length_breakdown(report: EvalReport, edges: Sequence[int]) -> list[dict]:
    """CER and mean density per ground-truth length bucket ``[edges[i], edges[i+1])``."""
    rows = []
    for lo, hi in zip(edges, edges[1:]):
        recs = [r for r in report.records if lo <= r.ref_length < hi]
        if not recs:
            continue
        rows.append({
            "min_length": lo,
            "max_length": hi,
            "n": len(recs),
            "cer": sum(r.edit_distance for r in recs) / sum(r.ref_length for r in recs),
            "mean_density": float(np.mean([r.density for r in recs])),
        })
    return rows
