"""Corpus-level frequency statistics and detector evaluation against labels."""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .detectors import SMELLS
from .errors import EmptyCorpus, MalformedLabels, MissingPrediction
from .report import NOT_APPLICABLE

# which quality property each smell degrades
PROPERTY_MAP = {
    "speed": frozenset({"SM2", "SM3", "SM4", "SM7", "SM9", "SM10"}),
    "efficiency": frozenset(SMELLS),
    "reliability": frozenset({"SM1", "SM3", "SM4", "SM9", "SM10"}),
}
FEATURES = ("uses_fallback_cache", "uses_multiple_caches_per_job", "uses_custom_compression")


@dataclass(frozen=True)
class SmellFrequency:
    smelly_repo_count: int
    applicable_repo_count: int
    # smelly / applicable, None when no repository is applicable
    percentage: float | None
    median_smelly_job_ratio: float | None


@dataclass(frozen=True)
class CorpusStats:
    repo_count: int
    per_smell: dict
    per_property: dict
    median_smells_per_repo: float
    smell_free_fraction: float
    feature_usage: dict
    skipped: tuple = ()

    def to_dict(self) -> dict:
        return {
            "repo_count": self.repo_count,
            "per_smell": {
                s: {
                    "smelly_repo_count": f.smelly_repo_count,
                    "applicable_repo_count": f.applicable_repo_count,
                    "percentage": f.percentage,
                    "median_smelly_job_ratio": f.median_smelly_job_ratio,
                }
                for s, f in self.per_smell.items()
            },
            "per_property": dict(self.per_property),
            "median_smells_per_repo": self.median_smells_per_repo,
            "smell_free_fraction": self.smell_free_fraction,
            "feature_usage": dict(self.feature_usage),
            "skipped": [list(s) for s in self.skipped],
        }


def aggregate(reports, skipped=()) -> CorpusStats:
    """Summarize a list of reports. ``skipped`` holds (repo_id, reason) pairs.

    Raises:
        EmptyCorpus: ``reports`` is empty.
    """
    reports = sorted(reports, key=lambda r: r.repo_id)
    if not reports:
        raise EmptyCorpus("no analyzable repositories")
    n = len(reports)
    present = [set(r.smells_present()) for r in reports]

    per_smell = {}
    for smell in SMELLS:
        applicable = [r for r in reports if r.applicability[smell] != NOT_APPLICABLE]
        smelly = [r for r in applicable if r.has_smell(smell)]
        ratios = [r.smelly_job_ratio[smell] for r in smelly]
        per_smell[smell] = SmellFrequency(
            smelly_repo_count=len(smelly),
            applicable_repo_count=len(applicable),
            percentage=len(smelly) / len(applicable) if applicable else None,
            median_smelly_job_ratio=statistics.median(ratios) if ratios else None,
        )
    per_property = {prop: sum(1 for smells in present if smells & members) for prop, members in PROPERTY_MAP.items()}
    return CorpusStats(
        repo_count=n,
        per_smell=per_smell,
        per_property=per_property,
        median_smells_per_repo=float(statistics.median(len(s) for s in present)),
        smell_free_fraction=sum(1 for s in present if not s) / n,
        feature_usage={name: sum(1 for r in reports if getattr(r.features, name)) / n for name in FEATURES},
        skipped=tuple(sorted((str(a), str(b)) for a, b in skipped)),
    )


@dataclass(frozen=True)
class DetectorScore:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def f1(self) -> float | None:
        denominator = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denominator if denominator else None

    def __add__(self, other: "DetectorScore") -> "DetectorScore":
        return DetectorScore(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class EvalResult:
    per_smell: dict
    aggregate: DetectorScore = field(default_factory=DetectorScore)

    @property
    def macro_f1(self) -> float | None:
        scores = [s.f1 for s in self.per_smell.values() if s.f1 is not None]
        return sum(scores) / len(scores) if scores else None

    def to_dict(self) -> dict:
        return {
            "per_smell": {s: score.to_dict() for s, score in self.per_smell.items()},
            "aggregate": self.aggregate.to_dict(),
            "macro_f1": self.macro_f1,
        }

    def table(self) -> str:
        rows = [f"{'smell':<7}{'TP':>5}{'TN':>5}{'FP':>5}{'FN':>5}  F1"]
        for smell, score in [*self.per_smell.items(), ("total", self.aggregate)]:
            f1 = "n/a" if score.f1 is None else f"{score.f1:.2f}"
            rows.append(f"{smell:<7}{score.tp:>5}{score.tn:>5}{score.fp:>5}{score.fn:>5}  {f1}")
        return "\n".join(rows) + "\n"


def evaluate(predictions: dict, labels: dict) -> EvalResult:
    """Confusion counts per smell over the labeled (repo, smell) pairs.

    Raises:
        MissingPrediction: A labeled pair has no prediction.
    """
    counts = {}
    for (repo, smell), truth in sorted(labels.items(), key=lambda kv: (kv[0][0], _smell_order(kv[0][1]))):
        if (repo, smell) not in predictions:
            raise MissingPrediction(f"no prediction for {repo} / {smell}")
        predicted = bool(predictions[(repo, smell)])
        tp, tn, fp, fn = counts.get(smell, (0, 0, 0, 0))
        if predicted and truth:
            tp += 1
        elif predicted:
            fp += 1
        elif truth:
            fn += 1
        else:
            tn += 1
        counts[smell] = (tp, tn, fp, fn)
    per_smell = {s: DetectorScore(*counts[s]) for s in sorted(counts, key=_smell_order)}
    total = DetectorScore()
    for score in per_smell.values():
        total = total + score
    return EvalResult(per_smell, total)


def _smell_order(smell: str) -> tuple:
    return (SMELLS.index(smell), "") if smell in SMELLS else (len(SMELLS), smell)


def load_labels(path) -> dict:
    """Read a ``repo_id,smell_id,label`` CSV into {(repo, smell): bool}.

    Raises:
        MalformedLabels: Bad header, unknown smell, label outside {0,1} or a duplicated pair.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise MalformedLabels(f"{path}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["repo_id", "smell_id", "label"]:
        raise MalformedLabels(f"{path}: header must be repo_id,smell_id,label")
    labels = {}
    for number, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise MalformedLabels(f"{path}:{number}: expected 3 columns, got {len(row)}")
        repo, smell, label = (c.strip() for c in row)
        if smell not in SMELLS:
            raise MalformedLabels(f"{path}:{number}: unknown smell id {smell!r}")
        if label not in ("0", "1"):
            raise MalformedLabels(f"{path}:{number}: label must be 0 or 1, got {label!r}")
        if not repo:
            raise MalformedLabels(f"{path}:{number}: empty repo_id")
        if (repo, smell) in labels:
            raise MalformedLabels(f"{path}:{number}: duplicate label for {repo} / {smell}")
        labels[(repo, smell)] = label == "1"
    return labels


def predictions_from_reports(reports) -> dict:
    """(repo, smell) -> predicted flag; a not-applicable smell predicts False."""
    return {(r.repo_id, smell): r.has_smell(smell) for r in reports for smell in SMELLS}
