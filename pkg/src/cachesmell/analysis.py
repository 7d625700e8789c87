"""End-to-end analysis of one workflow file."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import detectors as d
from .frontend import RawDocument, load_text, load_workflow
from .graph import ExecutionGraph, build_graph
from .model import JobConfig, WorkflowModel
from .resolver import resolve


@dataclass(frozen=True)
class Analysis:
    model: WorkflowModel
    jobs: tuple
    graph: ExecutionGraph
    commands: dict
    findings: tuple
    notices: tuple
    features: d.FeatureUsage
    context: d.RepoContext
    warnings: tuple


def run_detectors(model: WorkflowModel, ctx: d.RepoContext) -> Analysis:
    jobs: list[JobConfig] = model.expanded_jobs()
    graph = build_graph(model, jobs)
    script_warnings: list[str] = []
    commands = d.classify_jobs(jobs, script_warnings)
    notes: list[d.Notice] = []
    findings = [
        *d.detect_sm1(model, jobs),
        *d.detect_sm2(model, graph, jobs),
        *d.detect_sm3(model, commands, jobs),
        *d.detect_sm4(model, jobs),
        *d.detect_sm7(model, jobs, notes),
        *d.detect_sm9(model, ctx, commands, jobs, notes),
        *d.detect_sm10(model, commands, jobs, notes),
    ]
    findings.sort(key=d.Finding.sort_key)
    warnings = list(dict.fromkeys([*model.warnings, *graph.warnings, *script_warnings]))
    return Analysis(model, tuple(jobs), graph, commands, tuple(findings), tuple(notes),
                    d.scan_features(model), ctx, tuple(warnings))


def analyze_document(doc: RawDocument, ctx: d.RepoContext | None = None) -> Analysis:
    return run_detectors(resolve(doc), ctx or d.RepoContext())


def analyze_file(file, repo_root=None, is_group: bool | None = None) -> Analysis:
    file = Path(file)
    root = Path(repo_root) if repo_root is not None else file.parent
    doc = load_workflow(file, root)
    return analyze_document(doc, d.RepoContext(root, is_group, file))


def analyze_text(text: str, is_group: bool | None = None, relpath: str = ".gitlab-ci.yml") -> Analysis:
    return analyze_document(load_text(text, relpath), d.RepoContext(None, is_group, relpath))
