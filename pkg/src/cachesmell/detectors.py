"""Cache-related smell detectors.

Every detector is a pure function over the resolved model. Detectors that
look at jobs run over the matrix-expanded job list, so a ``parallel:matrix``
job contributes one virtual job per instance.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, field
from pathlib import Path

from .frontend import SourceLocation
from .graph import ExecutionGraph, build_graph
from .images import ImageRef, parse_image, same_image
from .model import JobConfig, WorkflowModel
from .script import PYTHON_MANAGER_KINDS, CommandClass, SimpleCommand, classify, tokenize_script
from .variables import expand_variables

SMELLS = ("SM1", "SM2", "SM3", "SM4", "SM7", "SM9", "SM10")
_SMELL_ORDER = {smell: i for i, smell in enumerate(SMELLS)}
SMELL_NAMES = {
    "SM1": "Artifacts Default Expiration Period",
    "SM2": "Artifacts Fetched by Default",
    "SM3": "No Dependencies Cache",
    "SM4": "No Fallback Cache",
    "SM7": "Redundant Cache Updates",
    "SM9": "No Docker Pull-Through Cache",
    "SM10": "No Docker Layers Cache",
}

# predefined variables whose value differs between jobs of one pipeline
JOB_UNIQUE_VARIABLES = frozenset({"CI_JOB_ID", "CI_JOB_NAME", "CI_JOB_NAME_SLUG", "CI_JOB_STARTED_AT", "CI_NODE_INDEX"})

FALLBACK_VARIABLE = "CACHE_FALLBACK_KEY"
COMPRESSION_VARIABLES = ("ARTIFACT_COMPRESSION_LEVEL", "CACHE_COMPRESSION_LEVEL")

# typical download-cache locations per package manager: full relative paths
# (an ancestor directory such as `.cache` also covers them) and substrings
CANONICAL_CACHE_PATHS = {
    "pip": ((".cache/pip", ".pip-cache", "pip-cache", "cache/pip"), ("cache/pip", ".pip-cache", "pip-cache")),
    "conda": ((".conda/pkgs", "conda/pkgs", "opt/conda/pkgs"), ("conda/pkgs", ".conda")),
    "apt": ((".cache/apt", "var/cache/apt", "cache/apt", "apt-cache", "apt/archives"), ("cache/apt", "apt-cache", "apt/archives")),
}
VIRTUALENV_DIRS = frozenset({"venv", ".venv"})
MANAGER_OF_KIND = {"pip-install": "pip", "conda-install": "conda", "apt-python-install": "apt"}
MANAGER_DIR_VARIABLES = {"pip": "PIP_CACHE_DIR", "conda": "CONDA_PKGS_DIRS"}


@dataclass(frozen=True)
class Finding:
    smell: str
    jobs: tuple
    location: SourceLocation
    evidence: str
    confidence: str = "full"

    def sort_key(self) -> tuple:
        return (_SMELL_ORDER[self.smell], self.jobs, self.location.file, self.location.line, self.evidence)


@dataclass(frozen=True)
class Notice:
    """A diagnostic that is not a finding: an informational note or a skipped check."""

    smell: str
    job: str
    message: str
    level: str = "warning"  # "warning" (reduced confidence) or "notice"
    location: SourceLocation | None = field(default=None, compare=False)

    def render(self) -> str:
        where = f" ({self.location})" if self.location is not None else ""
        return f"[{self.level}] {self.smell} {self.job}: {self.message}{where}"


@dataclass(frozen=True)
class RepoContext:
    repo_path: Path | str | None = None
    is_group_repository: bool | None = None
    workflow_file: Path | str | None = None


@dataclass(frozen=True)
class FeatureUsage:
    uses_fallback_cache: bool = False
    uses_multiple_caches_per_job: bool = False
    uses_custom_compression: bool = False


def classify_jobs(jobs: list[JobConfig], warnings: list | None = None) -> dict:
    """Tokenize and classify every job's scripts: job name -> [(SimpleCommand, CommandClass)]."""
    out = {}
    cache: dict = {}
    classes: dict = {}
    for job in jobs:
        commands = tokenize_script(job.script_lines(), job.variable_scopes(), warnings, cache)
        for cmd in commands:
            if cmd.argv not in classes:
                classes[cmd.argv] = classify(cmd)
        out[job.name] = [(cmd, classes[cmd.argv]) for cmd in commands]
    return out


def _jobs(model: WorkflowModel, jobs) -> list[JobConfig]:
    return model.expanded_jobs() if jobs is None else jobs


def _confidence(model: WorkflowModel, *reduced: bool) -> str:
    return "reduced" if model.incomplete or any(reduced) else "full"


def _loc(job: JobConfig, *candidates) -> SourceLocation:
    for candidate in candidates:
        if candidate is not None:
            return candidate
    return job.location or SourceLocation((job.source.loc.file if job.source else "<unknown>"), 1, (job.name,))


# ---------------------------------------------------------------------------


def detect_sm1(model: WorkflowModel, jobs=None) -> list[Finding]:
    """Jobs whose artifacts have no ``expire_in``."""
    findings = []
    for job in _jobs(model, jobs):
        art = job.artifacts
        if art is None or art.expire_in is not None:
            continue
        what = ", ".join(art.paths) if art.paths else ("reports" if art.has_reports else "untracked files")
        findings.append(
            Finding("SM1", (job.name,), _loc(job, art.location),
                    f"artifacts ({what}) have no expire_in; the instance default retention applies",
                    _confidence(model))
        )
    return sorted(findings, key=Finding.sort_key)


def _declares_artifact_dependencies(job: JobConfig) -> bool:
    if job.dependencies is not None:
        return True
    return job.needs is not None and any(n.artifacts_explicit is not None for n in job.needs)


def detect_sm2(model: WorkflowModel, graph: ExecutionGraph | None = None, jobs=None) -> list[Finding]:
    """Pairs (producer, consumer) where the consumer fetches artifacts only by default."""
    jobs = _jobs(model, jobs)
    graph = graph if graph is not None else build_graph(model, jobs)
    by_name = {job.name: job for job in jobs}
    explicit = {job.name: _declares_artifact_dependencies(job) for job in jobs}
    findings = []
    for (down, up), kind in graph.waits_for.items():
        if by_name[up].artifacts is None or explicit[down]:
            continue
        consumer = by_name[down]
        findings.append(
            Finding("SM2", (up, down), _loc(consumer),
                    f"{down} waits for {up} ({kind}) and fetches its artifacts by default; "
                    "declare dependencies or needs:artifacts",
                    _confidence(model, (down, up) in graph.optional_edges))
        )
    return sorted(findings, key=Finding.sort_key)


# ---------------------------------------------------------------------------
# SM3


def normalize_cache_path(path: str) -> str:
    text = path.strip().replace("\\", "/")
    for prefix in ("$CI_PROJECT_DIR", "${CI_PROJECT_DIR}", "$CI_BUILDS_DIR", "${CI_BUILDS_DIR}"):
        if text.startswith(prefix):
            text = text[len(prefix):]
    while text.endswith(("/**", "/*")):
        text = text.rsplit("/", 1)[0]
    text = posixpath.normpath(text) if text else ""
    text = text.lstrip("/")
    if text.startswith("./"):
        text = text[2:]
    return "" if text == "." else text


def _is_ancestor(ancestor: str, path: str) -> bool:
    if not ancestor:
        return False
    a, p = ancestor.split("/"), path.split("/")
    return len(a) <= len(p) and p[: len(a)] == a


def _job_variable(job: JobConfig, name: str) -> str | None:
    if name in job.variables:
        return job.variables[name].expanded
    if name in job.global_scope:
        return expand_variables(job.global_scope[name], (job.global_scope,)).expanded
    return None


def manager_cached(manager: str, cached_paths, job: JobConfig) -> bool:
    """Whether any cached path covers the download cache of ``manager``."""
    full_paths, substrings = CANONICAL_CACHE_PATHS[manager]
    targets = list(full_paths)
    variable = MANAGER_DIR_VARIABLES.get(manager)
    custom = _job_variable(job, variable) if variable else None
    if custom:
        targets.extend(normalize_cache_path(p) for p in custom.replace(",", ":").split(":") if p.strip())
    for raw in cached_paths:
        path = normalize_cache_path(raw)
        if not path:
            continue
        if any(sub in path for sub in substrings):
            return True
        if any(_is_ancestor(path, target) for target in targets):
            return True
        if manager == "pip" and VIRTUALENV_DIRS & set(path.split("/")):
            return True
    return False


def python_installs(commands) -> list[tuple[SimpleCommand, CommandClass]]:
    return [(cmd, cls) for cmd, cls in commands if cls.kind in PYTHON_MANAGER_KINDS]


def detect_sm3(model: WorkflowModel, commands_per_job: dict | None = None, jobs=None) -> list[Finding]:
    """Jobs that install Python packages without caching the manager's download directory."""
    jobs = _jobs(model, jobs)
    commands_per_job = commands_per_job if commands_per_job is not None else classify_jobs(jobs)
    findings = []
    for job in jobs:
        installs = python_installs(commands_per_job.get(job.name, ()))
        if not installs:
            continue
        cached = [p for cache in job.caches for p in cache.paths]
        missing = []
        for cmd, cls in installs:
            manager = MANAGER_OF_KIND[cls.kind]
            if not manager_cached(manager, cached, job) and manager not in [m for m, _ in missing]:
                missing.append((manager, cmd))
        if not missing:
            continue
        managers = ", ".join(m for m, _ in missing)
        first = missing[0][1]
        findings.append(
            Finding("SM3", (job.name,), _loc(job, first.location),
                    f"installs Python dependencies with {managers} (`{first.raw}`) but no cache path "
                    "covers the download cache",
                    _confidence(model, any(cmd.flattened for _, cmd in missing)))
        )
    return sorted(findings, key=Finding.sort_key)


# ---------------------------------------------------------------------------


def detect_sm4(model: WorkflowModel, jobs=None) -> list[Finding]:
    """Jobs using a cache without fallback keys or a global fallback key."""
    global_fallback = FALLBACK_VARIABLE in model.global_variables
    findings = []
    for job in _jobs(model, jobs):
        if global_fallback or job.defines(FALLBACK_VARIABLE):
            continue
        bare = [c for c in job.caches if not c.fallback_keys]
        if not bare:
            continue
        keys = ", ".join(_key_text(c.key) for c in bare)
        findings.append(
            Finding("SM4", (job.name,), _loc(job, bare[0].location),
                    f"cache key(s) {keys} have no fallback_keys and {FALLBACK_VARIABLE} is not set",
                    _confidence(model))
        )
    return sorted(findings, key=Finding.sort_key)


def _key_text(key) -> str:
    if key.kind == "files":
        files = ",".join(key.files)
        return f"files[{files}]" + (f" prefix {key.prefix}" if key.prefix else "")
    return key.value


def detect_sm7(model: WorkflowModel, jobs=None, notes: list | None = None) -> list[Finding]:
    """Cache keys shared by two or more jobs that push to them."""
    groups: dict = {}
    for job in _jobs(model, jobs):
        for cache in job.caches:
            if cache.key.variables_used & JOB_UNIQUE_VARIABLES:
                continue
            if not cache.key.fully_resolved:
                if notes is not None and cache.pushes:
                    notes.append(Notice("SM7", job.name, f"cache key {cache.key.raw!r} could not be resolved; "
                                        "not compared", "warning", cache.location))
                continue
            if cache.pushes:
                groups.setdefault(cache.key.canonical(), []).append((job, cache))
    findings = []
    for canonical, entries in groups.items():
        jobs_pushing = sorted({job.name for job, _ in entries})
        if len(jobs_pushing) < 2:
            continue
        first = min(entries, key=lambda e: e[0].name)
        findings.append(
            Finding("SM7", tuple(jobs_pushing), _loc(first[0], first[1].location),
                    f"{len(jobs_pushing)} jobs push cache key {_key_text(first[1].key)}; "
                    "only one needs push or pull-push",
                    _confidence(model))
        )
    return sorted(findings, key=Finding.sort_key)


# ---------------------------------------------------------------------------
# SM9


def _self_images(commands) -> list[str]:
    images = []
    for _, cls in commands:
        if cls.kind == "docker-build":
            images.extend(cls.details.get("tags", []))
            images.extend(cls.details.get("cache_from", []))
        elif cls.kind == "docker-push" and cls.details.get("image"):
            images.append(cls.details["image"])
    return images


def pulled_images(job: JobConfig, commands) -> list[ImageRef]:
    """Images a job pulls: its image, services and ``docker pull`` of images it does not build."""
    refs = []
    if job.image is not None:
        refs.append(job.image)
    refs.extend(job.services)
    own = _self_images(commands)
    scopes = job.variable_scopes()
    for cmd, cls in commands:
        if cls.kind != "docker-pull" or not cls.details.get("image"):
            continue
        image = cls.details["image"]
        if any(same_image(image, mine) for mine in own):
            continue
        refs.append(parse_image(image, scopes, "script-pull", cmd.location))
    return refs


def detect_sm9(model: WorkflowModel, ctx: RepoContext, commands_per_job: dict | None = None, jobs=None,
               notes: list | None = None) -> list[Finding]:
    """Docker Hub images pulled without the group dependency proxy (group repositories only)."""
    if ctx.is_group_repository is not True:
        return []
    jobs = _jobs(model, jobs)
    commands_per_job = commands_per_job if commands_per_job is not None else classify_jobs(jobs)
    grouped: dict = {}
    for job in jobs:
        for ref in pulled_images(job, commands_per_job.get(job.name, ())):
            if ref.is_proxied:
                continue
            if not ref.fully_resolved:
                if notes is not None:
                    notes.append(Notice("SM9", job.name, f"image {ref.raw!r} could not be resolved to a registry; "
                                        "skipped (reduced confidence)", "warning", ref.location))
                continue
            if not ref.is_docker_hub:
                continue
            location = _loc(job, ref.location)
            entry = grouped.setdefault((ref.expanded, location.file, location.line, ref.origin), [location, set()])
            entry[1].add(job.name)
    findings = []
    for (image, _, _, origin), (location, names) in grouped.items():
        findings.append(
            Finding("SM9", tuple(sorted(names)), location,
                    f"{origin} pulls {image} directly from Docker Hub; prefix it with "
                    "$CI_DEPENDENCY_PROXY_GROUP_IMAGE_PREFIX",
                    _confidence(model))
        )
    return sorted(findings, key=Finding.sort_key)


# ---------------------------------------------------------------------------


def detect_sm10(model: WorkflowModel, commands_per_job: dict | None = None, jobs=None,
                notes: list | None = None) -> list[Finding]:
    """``docker build`` invocations without ``--cache-from``."""
    jobs = _jobs(model, jobs)
    commands_per_job = commands_per_job if commands_per_job is not None else classify_jobs(jobs)
    findings = []
    for job in jobs:
        for cmd, cls in commands_per_job.get(job.name, ()):
            if cls.kind == "docker-buildx-bake":
                if notes is not None:
                    notes.append(Notice("SM10", job.name, "docker buildx bake reads its cache settings from the bake "
                                        "file; layer caching not checked", "notice", cmd.location))
                continue
            if cls.kind != "docker-build" or cls.details["cache_from_present"]:
                continue
            findings.append(
                Finding("SM10", (job.name,), _loc(job, cmd.location),
                        f"`{cmd.raw}` builds without --cache-from; layers are rebuilt from scratch",
                        _confidence(model, cmd.flattened))
            )
    return sorted(findings, key=Finding.sort_key)


def scan_features(model: WorkflowModel) -> FeatureUsage:
    jobs = list(model.jobs.values())
    scopes = [set(model.global_variables)] + [set(job.variables) for job in jobs]
    fallback = any(c.fallback_keys for job in jobs for c in job.caches) or any(FALLBACK_VARIABLE in s for s in scopes)
    multiple = any(len(job.caches) >= 2 for job in jobs)
    compression = any(name in s for s in scopes for name in COMPRESSION_VARIABLES)
    return FeatureUsage(fallback, multiple, compression)


def uses_python_installs(commands_per_job: dict) -> bool:
    return any(python_installs(cmds) for cmds in commands_per_job.values())
