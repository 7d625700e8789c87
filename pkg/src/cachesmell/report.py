"""Per-repository reports and their JSON / text serializations."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .analysis import Analysis
from .detectors import SMELLS, FeatureUsage, Finding, RepoContext, classify_jobs, uses_python_installs
from .errors import ZeroJobs
from .model import WorkflowModel

APPLICABLE = "applicable"
NOT_APPLICABLE = "not-applicable"


@dataclass(frozen=True)
class AnalysisReport:
    repo_id: str
    findings: tuple
    applicability: dict
    job_count: int
    # smell -> fraction of concrete jobs involved, None when not applicable
    smelly_job_ratio: dict
    features: FeatureUsage
    warnings: tuple = ()
    confidence: str = "full"

    def smells_present(self) -> list[str]:
        present = {f.smell for f in self.findings}
        return [s for s in SMELLS if s in present]

    def has_smell(self, smell: str) -> bool:
        return any(f.smell == smell for f in self.findings)

    def summary(self) -> "RepoSummary":
        return RepoSummary(self.repo_id, tuple(self.smells_present()), dict(self.applicability), self.job_count,
                           dict(self.smelly_job_ratio), self.features, self.confidence)


@dataclass(frozen=True)
class RepoSummary:
    """What corpus statistics need from a report, without the individual findings."""

    repo_id: str
    smells: tuple
    applicability: dict
    job_count: int
    smelly_job_ratio: dict
    features: FeatureUsage
    confidence: str = "full"

    def smells_present(self) -> list[str]:
        return list(self.smells)

    def has_smell(self, smell: str) -> bool:
        return smell in self.smells


def make_report(
    repo_id: str,
    findings,
    model: WorkflowModel,
    features: FeatureUsage,
    ctx: RepoContext,
    commands: dict | None = None,
    notices=(),
    warnings=(),
    jobs=None,
) -> AnalysisReport:
    """Assemble an :class:`AnalysisReport`.

    Ratios count distinct concrete jobs: the instances of a matrix job map
    back to the job that declared the matrix, and the denominator is the
    number of jobs before matrix expansion.

    Raises:
        ZeroJobs: The model has no runnable jobs.
    """
    job_count = len(model.jobs)
    if job_count == 0:
        raise ZeroJobs(f"{repo_id}: workflow defines no runnable jobs")
    if jobs is None:
        jobs = model.expanded_jobs()
    if commands is None:
        commands = classify_jobs(jobs)

    applicability = {s: APPLICABLE for s in SMELLS}
    if ctx.is_group_repository is not True:
        applicability["SM9"] = NOT_APPLICABLE
    if not uses_python_installs(commands):
        applicability["SM3"] = NOT_APPLICABLE

    base_of = {job.name: job.concrete_name for job in jobs}
    involved: dict = {s: set() for s in SMELLS}
    for f in findings:
        involved[f.smell].update(base_of.get(name, name) for name in f.jobs)
    ratios = {s: None if applicability[s] == NOT_APPLICABLE else len(involved[s]) / job_count for s in SMELLS}

    notices = tuple(notices)
    rendered = [*warnings, *(n.render() for n in notices)]
    reduced = (
        model.incomplete
        or any(f.confidence != "full" for f in findings)
        or any(n.level == "warning" for n in notices)
    )
    return AnalysisReport(
        repo_id=repo_id,
        findings=tuple(sorted(findings, key=Finding.sort_key)),
        applicability=applicability,
        job_count=job_count,
        smelly_job_ratio=ratios,
        features=features,
        warnings=tuple(dict.fromkeys(rendered)),
        confidence="reduced" if reduced else "full",
    )


def report_from_analysis(repo_id: str, analysis: Analysis) -> AnalysisReport:
    return make_report(
        repo_id,
        analysis.findings,
        analysis.model,
        analysis.features,
        analysis.context,
        commands=analysis.commands,
        notices=analysis.notices,
        warnings=analysis.warnings,
        jobs=analysis.jobs,
    )


def finding_dict(finding: Finding) -> dict:
    return {
        "smell": finding.smell,
        "jobs": list(finding.jobs),
        "file": finding.location.file,
        "line": finding.location.line,
        "yaml_path": [str(p) for p in finding.location.yaml_path],
        "evidence": finding.evidence,
        "confidence": finding.confidence,
    }


def report_dict(report: AnalysisReport) -> dict:
    return {
        "repo_id": report.repo_id,
        "job_count": report.job_count,
        "confidence": report.confidence,
        "findings": [finding_dict(f) for f in report.findings],
        "applicability": {s: report.applicability[s] for s in SMELLS},
        "ratios": {s: report.smelly_job_ratio[s] for s in SMELLS},
        "features": asdict(report.features),
        "warnings": list(report.warnings),
    }


def to_json(report: AnalysisReport) -> str:
    return json.dumps(report_dict(report), indent=2, ensure_ascii=False) + "\n"


def to_text(report: AnalysisReport) -> str:
    lines = []
    for f in report.findings:
        lines.append(f"{f.smell}  {','.join(f.jobs)}  {f.location.file}:{f.location.line}  {f.evidence}")
    for smell in SMELLS:
        if report.applicability[smell] == NOT_APPLICABLE:
            lines.append(f"# {smell} not applicable")
    for warning in report.warnings:
        lines.append(f"# warning: {warning}")
    return "\n".join(lines) + ("\n" if lines else "")
