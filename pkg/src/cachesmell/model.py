"""Resolved workflow model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .frontend import Mapping, SourceLocation
from .images import ImageRef
from .variables import VariableValue

POLICIES = ("pull", "push", "pull-push")
PUSHING_POLICIES = frozenset({"push", "pull-push"})
DEFAULT_STAGES = ("build", "test", "deploy")
MAX_CACHES_PER_JOB = 4


@dataclass(frozen=True)
class CacheKey:
    kind: str  # "literal" or "files"
    value: str = ""
    files: tuple = ()
    prefix: str | None = None
    variables_used: frozenset = frozenset()
    raw: Any = "default"
    fully_resolved: bool = True

    def canonical(self) -> tuple:
        if self.kind == "files":
            return ("files", tuple(sorted(self.files)), self.prefix)
        return ("literal", self.value)


@dataclass(frozen=True)
class CacheSpec:
    key: CacheKey
    paths: tuple = ()
    policy: str = "pull-push"
    fallback_keys: tuple = ()
    untracked: bool = False
    location: SourceLocation | None = field(default=None, compare=False)

    @property
    def pushes(self) -> bool:
        return self.policy in PUSHING_POLICIES


@dataclass(frozen=True)
class ArtifactsSpec:
    paths: tuple = ()
    has_reports: bool = False
    expire_in: str | None = None
    untracked: bool = False
    location: SourceLocation | None = field(default=None, compare=False)


@dataclass(frozen=True)
class NeedRef:
    job: str
    artifacts_explicit: bool | None = None
    optional: bool = False


@dataclass(frozen=True)
class ScriptLine:
    text: str
    section: str
    location: SourceLocation | None = field(default=None, compare=False)
    # block scalars (| and >) start on the line after their indicator
    block_offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class JobConfig:
    name: str
    stage: str
    needs: tuple | None = None
    dependencies: tuple | None = None
    artifacts: ArtifactsSpec | None = None
    caches: tuple = ()
    image: ImageRef | None = None
    services: tuple = ()
    before_script: tuple = ()
    script: tuple = ()
    after_script: tuple = ()
    variables: dict = field(default_factory=dict)
    matrix_instances: tuple = ()
    # global variables visible to the job; None for inherited_globals means all of them
    global_scope: dict = field(default_factory=dict, compare=False, repr=False)
    inherited_globals: tuple | None = None
    base_name: str = ""
    location: SourceLocation | None = field(default=None, compare=False)
    # effective (post-inheritance) mapping; needed to rebuild matrix instances
    source: Mapping | None = field(default=None, compare=False, repr=False)

    @property
    def concrete_name(self) -> str:
        return self.base_name or self.name

    def script_lines(self) -> list[ScriptLine]:
        return [*self.before_script, *self.script, *self.after_script]

    def defines(self, variable: str) -> bool:
        return variable in self.variables

    def variable_scopes(self) -> tuple:
        """Raw variable maps for expansion, innermost first."""
        return ({k: v.raw for k, v in self.variables.items()}, self.global_scope)


@dataclass(frozen=True)
class WorkflowModel:
    stages: tuple
    global_variables: dict
    default_block: dict
    jobs: dict
    hidden_templates: dict
    warnings: tuple = ()
    incomplete: bool = False
    files: tuple = ()

    def stage_index(self, stage: str) -> int:
        return self.stages.index(stage)

    def expanded_jobs(self) -> list[JobConfig]:
        """Concrete jobs with ``parallel:matrix`` jobs replaced by their instances."""
        from .resolver import expand_matrix

        out: list[JobConfig] = []
        for job in self.jobs.values():
            out.extend(expand_matrix(job))
        return out

    def get(self, name: str) -> JobConfig:
        return self.jobs[name]
