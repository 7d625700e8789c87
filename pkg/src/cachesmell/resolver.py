"""GitLab configuration layering.

Turns a :class:`~cachesmell.frontend.RawDocument` into a
:class:`~cachesmell.model.WorkflowModel`. The order matters and mirrors the
platform: ``!reference`` tags, then ``extends`` (recursive mapping merge),
then ``default:`` / legacy top-level keys copied whole into jobs that lack
them, then variable expansion.
"""

from __future__ import annotations

import dataclasses
import itertools
from typing import Iterable

from .errors import ExtendsDepthExceeded, NeedsUnknownJob, UnknownExtendsTarget, UnknownStage
from .frontend import Mapping, Node, RawDocument, Scalar, Sequence, SourceLocation
from .images import parse_image
from .model import (
    DEFAULT_STAGES,
    MAX_CACHES_PER_JOB,
    POLICIES,
    ArtifactsSpec,
    CacheKey,
    CacheSpec,
    JobConfig,
    NeedRef,
    ScriptLine,
    WorkflowModel,
)
from .variables import VariableValue, expand_variables, variable_escape, variable_names

MAX_EXTENDS_DEPTH = 11
MAX_REFERENCE_DEPTH = 10

RESERVED_KEYS = frozenset(
    {
        "stages",
        "variables",
        "default",
        "include",
        "workflow",
        "image",
        "services",
        "cache",
        "before_script",
        "after_script",
        "types",
        "spec",
    }
)
LEGACY_DEFAULT_KEYS = ("image", "services", "cache", "before_script", "after_script")
SCRIPT_SECTIONS = ("before_script", "script", "after_script")
PRE, POST = ".pre", ".post"


class _Warnings(list):
    def add(self, message: str) -> None:
        if message not in self:
            self.append(message)


# ---------------------------------------------------------------------------
# !reference


def _resolve_references(node: Node, root: Mapping, warnings: _Warnings, depth: int = 0) -> Node:
    if isinstance(node, Sequence) and node.tag == "!reference":
        return _dereference(node, root, warnings, depth)
    if isinstance(node, Sequence):
        items = tuple(_resolve_references(n, root, warnings, depth) for n in node.items)
        if all(a is b for a, b in zip(items, node.items)):
            return node
        return Sequence(items, node.loc, node.tag)
    if isinstance(node, Mapping):
        changed = False
        items = {}
        for key, value in node.items.items():
            new = _resolve_references(value, root, warnings, depth)
            changed = changed or new is not value
            items[key] = new
        return Mapping(items, node.loc, node.tag) if changed else node
    return node


def _dereference(node: Sequence, root: Mapping, warnings: _Warnings, depth: int) -> Node:
    path = [item.text for item in node.items if isinstance(item, Scalar)]
    if depth >= MAX_REFERENCE_DEPTH:
        warnings.add(f"{node.loc}: !reference nesting deeper than {MAX_REFERENCE_DEPTH}; dropped")
        return Sequence((), node.loc)
    target: Node | None = root
    for segment in path:
        target = target.get(segment) if isinstance(target, Mapping) else None
        if target is None:
            break
    if target is None:
        warnings.add(f"{node.loc}: !reference {path} does not resolve; dropped")
        return Sequence((), node.loc)
    return _resolve_references(target, root, warnings, depth + 1)


# ---------------------------------------------------------------------------
# merging


def deep_merge(base: Mapping, override: Mapping) -> Mapping:
    """Merge ``override`` over ``base``: mappings recurse, everything else is replaced."""
    items = dict(base.items)
    for key, value in override.items.items():
        current = items.get(key)
        if isinstance(current, Mapping) and isinstance(value, Mapping):
            items[key] = deep_merge(current, value)
        else:
            items[key] = value
    return Mapping(items, override.loc, override.tag)


class _ExtendsResolver:
    def __init__(self, definitions: dict):
        self.definitions = definitions
        self.cache: dict = {}
        self.depths: dict = {}

    def resolve(self, name: str, stack: tuple = ()) -> Mapping:
        if name in self.cache:
            return self.cache[name]
        if name in stack:
            chain = " -> ".join(stack + (name,))
            raise ExtendsDepthExceeded(f"circular extends: {chain}")
        node = self.definitions[name]
        parents = node.get("extends")
        if parents is None:
            self.cache[name] = node
            self.depths[name] = 0
            return node
        names = [parents.text] if isinstance(parents, Scalar) else [p.text for p in parents if isinstance(p, Scalar)]
        merged: Mapping | None = None
        depth = 0
        for parent in names:
            if parent not in self.definitions:
                raise UnknownExtendsTarget(f"{parents.loc}: job {name!r} extends unknown {parent!r}")
            resolved = self.resolve(parent, stack + (name,))
            depth = max(depth, self.depths[parent] + 1)
            merged = resolved if merged is None else deep_merge(merged, resolved)
        if depth > MAX_EXTENDS_DEPTH:
            raise ExtendsDepthExceeded(
                f"{node.loc}: job {name!r} has {depth} levels of extends (limit {MAX_EXTENDS_DEPTH})"
            )
        own = Mapping({k: v for k, v in node.items.items() if k != "extends"}, node.loc, node.tag)
        result = deep_merge(merged, own) if merged is not None else own
        result = Mapping({k: v for k, v in result.items.items() if k != "extends"}, node.loc, node.tag)
        self.cache[name] = result
        self.depths[name] = depth
        return result


# ---------------------------------------------------------------------------
# small node readers


def _texts(node: Node | None) -> list[str]:
    """Scalar or (nested) sequence of scalars as a flat list of strings."""
    if node is None:
        return []
    if isinstance(node, Scalar):
        return [] if node.value is None else [node.text]
    if isinstance(node, Sequence):
        out: list[str] = []
        for item in node.items:
            out.extend(_texts(item))
        return out
    return []


def _flatten_lines(node: Node | None, section: str) -> tuple:
    if node is None:
        return ()
    if isinstance(node, Scalar):
        if node.value is None:
            return ()
        return (ScriptLine(node.text, section, node.loc, 1 if node.style in ("|", ">") else 0),)
    if isinstance(node, Sequence):
        out: list[ScriptLine] = []
        for item in node.items:
            out.extend(_flatten_lines(item, section))
        return tuple(out)
    return ()


def _bool(node: Node | None) -> bool | None:
    if isinstance(node, Scalar):
        if isinstance(node.value, bool):
            return node.value
        if isinstance(node.value, str) and node.value.lower() in ("true", "false"):
            return node.value.lower() == "true"
    return None


def parse_variables(node: Node | None, warnings: _Warnings | None = None) -> dict:
    """Variable mapping as name -> scope text (``expand: false`` values are escaped)."""
    if not isinstance(node, Mapping):
        if node is not None and not (isinstance(node, Scalar) and node.value is None) and warnings is not None:
            warnings.add(f"{node.loc}: variables must be a mapping; ignored")
        return {}
    out = {}
    for name, value in node.items.items():
        if isinstance(value, Mapping):
            text = value.get("value")
            text = text.text if isinstance(text, Scalar) else ""
            if _bool(value.get("expand")) is False:
                text = variable_escape(text)
            out[name] = text
        elif isinstance(value, Scalar):
            out[name] = value.text
        elif warnings is not None:
            warnings.add(f"{value.loc}: variable {name!r} has a non-scalar value; ignored")
    return out


def _values(scope: dict, scopes: tuple) -> dict:
    return {name: _vv(text, scopes) for name, text in scope.items()}


def _vv(text: str, scopes) -> VariableValue:
    value = expand_variables(text, scopes)
    return VariableValue(text, value.expanded, value.fully_resolved)


def parse_matrix(node: Node | None) -> tuple:
    """``parallel: matrix:`` as a tuple of variable-assignment dicts."""
    if not isinstance(node, Mapping):
        return ()
    matrix = node.get("matrix")
    if not isinstance(matrix, Sequence):
        return ()
    instances = []
    for entry in matrix.items:
        if not isinstance(entry, Mapping):
            continue
        names = list(entry.items)
        choices = []
        for name in names:
            value = entry.items[name]
            texts = _texts(value)
            choices.append(texts or [""])
        for combo in itertools.product(*choices):
            instances.append(dict(zip(names, combo)))
    return tuple(instances)


def matrix_job_name(name: str, instance: dict) -> str:
    return f"{name} [{', '.join(f'{k}={v}' for k, v in instance.items())}]"


# ---------------------------------------------------------------------------
# job construction


def _artifacts(node: Node | None) -> ArtifactsSpec | None:
    if not isinstance(node, Mapping):
        return None
    paths = tuple(_texts(node.get("paths")))
    reports = node.get("reports")
    has_reports = isinstance(reports, Mapping) and len(reports) > 0
    untracked = _bool(node.get("untracked")) is True
    if not (paths or has_reports or untracked):
        return None
    expire = node.get("expire_in")
    expire_in = expire.text if isinstance(expire, Scalar) and expire.value is not None else None
    return ArtifactsSpec(paths, has_reports, expire_in, untracked, node.loc)


def _cache_key(node: Node | None, scopes) -> CacheKey:
    if node is None or (isinstance(node, Scalar) and node.value is None):
        return CacheKey("literal", "default", raw="default")
    if isinstance(node, Mapping):
        files = tuple(expand_variables(t, scopes).expanded for t in _texts(node.get("files")))
        prefix_node = node.get("prefix")
        raw_prefix = prefix_node.text if isinstance(prefix_node, Scalar) else None
        used = set()
        resolved = True
        prefix = None
        if raw_prefix is not None:
            value = expand_variables(raw_prefix, scopes)
            prefix, resolved = value.expanded, value.fully_resolved
            used |= variable_names(raw_prefix)
        for text in _texts(node.get("files")):
            used |= variable_names(text)
        raw = {"files": _texts(node.get("files"))}
        if raw_prefix is not None:
            raw["prefix"] = raw_prefix
        return CacheKey("files", "", files, prefix, frozenset(used), raw, resolved)
    text = node.text if isinstance(node, Scalar) else ""
    value = expand_variables(text, scopes)
    return CacheKey("literal", value.expanded, variables_used=variable_names(text), raw=text,
                    fully_resolved=value.fully_resolved)


def _caches(node: Node | None, scopes, warnings: _Warnings, job: str) -> tuple:
    if node is None:
        return ()
    entries = node.items if isinstance(node, Sequence) else (node,)
    specs = []
    for entry in entries:
        if not isinstance(entry, Mapping) or len(entry) == 0:
            continue
        policy_node = entry.get("policy")
        policy = "pull-push"
        if isinstance(policy_node, Scalar) and policy_node.value is not None:
            policy = expand_variables(policy_node.text, scopes).expanded.strip()
            if policy not in POLICIES:
                warnings.add(f"{policy_node.loc}: job {job!r} cache policy {policy!r} is not one of "
                             f"{', '.join(POLICIES)}; treated as pull-push")
                policy = "pull-push"
        specs.append(
            CacheSpec(
                key=_cache_key(entry.get("key"), scopes),
                paths=tuple(expand_variables(t, scopes).expanded for t in _texts(entry.get("paths"))),
                policy=policy,
                fallback_keys=tuple(expand_variables(t, scopes).expanded for t in _texts(entry.get("fallback_keys"))),
                untracked=_bool(entry.get("untracked")) is True,
                location=entry.loc,
            )
        )
    if len(specs) > MAX_CACHES_PER_JOB:
        warnings.add(f"job {job!r} defines {len(specs)} caches; only the first {MAX_CACHES_PER_JOB} are used")
        specs = specs[:MAX_CACHES_PER_JOB]
    return tuple(specs)


def _image(node: Node | None, scopes, origin: str):
    if isinstance(node, Mapping):
        node = node.get("name")
    if isinstance(node, Scalar) and node.value is not None and node.text.strip():
        return parse_image(node.text.strip(), scopes, origin, node.loc)
    return None


def _needs(node: Node | None) -> tuple | None:
    if node is None or (isinstance(node, Scalar) and node.value is None):
        return None
    if not isinstance(node, Sequence):
        return None
    refs = []
    for entry in node.items:
        if isinstance(entry, Scalar):
            refs.append(NeedRef(entry.text))
        elif isinstance(entry, Mapping):
            if "project" in entry or "pipeline" in entry:
                continue  # cross-pipeline needs do not order local jobs
            job = entry.get("job")
            if not isinstance(job, Scalar):
                continue
            refs.append(NeedRef(job.text, _bool(entry.get("artifacts")), _bool(entry.get("optional")) is True))
    return tuple(refs)


def build_job(
    name: str,
    effective: Mapping,
    global_scope: dict,
    warnings: _Warnings,
    instance: dict | None = None,
    inherited_globals: tuple | None = None,
) -> JobConfig:
    """Build a :class:`JobConfig` from a job's effective mapping.

    ``instance`` holds one ``parallel:matrix`` assignment; it becomes the
    innermost variable scope and the job is named after it.
    """
    job_scope = parse_variables(effective.get("variables"), warnings)
    if inherited_globals is not None:
        global_scope = {k: v for k, v in global_scope.items() if k in inherited_globals}
    scope_chain = (instance or {}, job_scope, global_scope) if instance else (job_scope, global_scope)
    variables = _values({**job_scope, **(instance or {})}, scope_chain)

    stage_node = effective.get("stage")
    stage = stage_node.text if isinstance(stage_node, Scalar) and stage_node.value is not None else "test"

    deps_node = effective.get("dependencies")
    dependencies = tuple(_texts(deps_node)) if isinstance(deps_node, Sequence) else None

    services_node = effective.get("services")
    services = []
    if isinstance(services_node, Sequence):
        for entry in services_node.items:
            ref = _image(entry, scope_chain, "services-clause")
            if ref is not None:
                services.append(ref)

    return JobConfig(
        name=matrix_job_name(name, instance) if instance else name,
        stage=stage,
        needs=_needs(effective.get("needs")),
        dependencies=dependencies,
        artifacts=_artifacts(effective.get("artifacts")),
        caches=_caches(effective.get("cache"), scope_chain, warnings, name),
        image=_image(effective.get("image"), scope_chain, "image-clause"),
        services=tuple(services),
        before_script=_flatten_lines(effective.get("before_script"), "before_script"),
        script=_flatten_lines(effective.get("script"), "script"),
        after_script=_flatten_lines(effective.get("after_script"), "after_script"),
        variables=variables,
        matrix_instances=() if instance else parse_matrix(effective.get("parallel")),
        global_scope=global_scope,
        inherited_globals=inherited_globals,
        base_name=name if instance else "",
        location=effective.loc,
        source=effective,
    )


def expand_matrix(job: JobConfig) -> list[JobConfig]:
    """One virtual job per ``parallel:matrix`` instance; identity without a matrix."""
    if not job.matrix_instances or job.source is None:
        return [job]
    warnings = _Warnings()
    return [
        _replace(
            build_job(job.name, job.source, job.global_scope, warnings, dict(instance), job.inherited_globals),
            needs=job.needs,
            dependencies=job.dependencies,
        )
        for instance in job.matrix_instances
    ]


# ---------------------------------------------------------------------------
# stages


def _declared_stages(root: Mapping) -> list[str] | None:
    node = root.get("stages", root.get("types"))
    if node is None:
        return None
    return _texts(node)


def _stage_list(declared: list[str] | None, used: Iterable[str]) -> tuple:
    if declared is not None:
        middle = list(dict.fromkeys(s for s in declared if s not in (PRE, POST)))
        return (PRE, *middle, POST)
    stages = list(DEFAULT_STAGES)
    previous = None
    for stage in dict.fromkeys(used):
        if stage in (PRE, POST):
            continue
        if stage not in stages:
            # slot an undeclared stage right after the one preceding it in file order
            position = stages.index(previous) + 1 if previous is not None else 0
            stages.insert(position, stage)
        previous = stage
    return (PRE, *stages, POST)


# ---------------------------------------------------------------------------


def _inherit(effective: Mapping, what: str):
    """``inherit:`` setting for ``what``: True, False or a tuple of names."""
    inherit = effective.get("inherit")
    if not isinstance(inherit, Mapping) or what not in inherit:
        return True
    node = inherit.get(what)
    flag = _bool(node)
    if flag is not None:
        return flag
    return tuple(_texts(node))


def resolve(doc: RawDocument) -> WorkflowModel:
    """Resolve inheritance and defaults for every job in ``doc``.

    Raises:
        UnknownExtendsTarget: ``extends`` names a key that does not exist.
        ExtendsDepthExceeded: more than 11 levels of ``extends`` (or a cycle).
        UnknownStage: a job uses a stage missing from a declared ``stages:``.
        NeedsUnknownJob: ``needs`` names a job that is not a concrete job.
    """
    warnings = _Warnings(doc.warnings)
    root = doc.root
    if any(isinstance(v, (Mapping, Sequence)) for v in root.values()):
        root = _resolve_references(root, doc.root, warnings)

    definitions: dict = {}
    for key, value in root.items.items():
        if key in RESERVED_KEYS:
            continue
        if isinstance(value, Mapping):
            definitions[key] = value
        else:
            warnings.add(f"{value.loc}: top-level key {key!r} is not a job mapping; ignored")

    global_scope = parse_variables(root.get("variables"), warnings)

    default_node = root.get("default")
    defaults: dict = {k: root.items[k] for k in LEGACY_DEFAULT_KEYS if k in root}
    if isinstance(default_node, Mapping):
        defaults.update(default_node.items)

    extends = _ExtendsResolver(definitions)
    effective: dict = {}
    hidden: dict = {}
    for name, node in definitions.items():
        if name.startswith("."):
            hidden[name] = node
            continue
        merged = extends.resolve(name)
        inherit_default = _inherit(merged, "default")
        items = dict(merged.items)
        for key, value in defaults.items():
            if key in items:
                continue
            if inherit_default is True or (isinstance(inherit_default, tuple) and key in inherit_default):
                items[key] = value
        effective[name] = Mapping(items, merged.loc, merged.tag)

    jobs: dict = {}
    for name, eff in effective.items():
        inherit_vars = _inherit(eff, "variables")
        inherited = None if inherit_vars is True else (() if inherit_vars is False else inherit_vars)
        jobs[name] = build_job(name, eff, global_scope, warnings, None, inherited)

    declared = _declared_stages(root)
    stages = _stage_list(declared, (job.stage for job in jobs.values()))
    for job in jobs.values():
        if job.stage not in stages:
            raise UnknownStage(f"{job.location}: job {job.name!r} uses stage {job.stage!r}, "
                               f"not in stages {list(stages)}")

    jobs = {name: _validate_references(job, jobs, stages, warnings) for name, job in jobs.items()}

    return WorkflowModel(
        stages=stages,
        global_variables=_values(global_scope, (global_scope,)),
        default_block={k: v.plain() for k, v in defaults.items()},
        jobs=jobs,
        hidden_templates={k: v for k, v in hidden.items()},
        warnings=tuple(warnings),
        incomplete=doc.incomplete,
        files=doc.files,
    )


def _validate_references(job: JobConfig, jobs: dict, stages: tuple, warnings: _Warnings) -> JobConfig:
    needs = job.needs
    if needs is not None:
        kept = []
        for need in needs:
            if need.job in jobs:
                kept.append(need)
            elif need.optional:
                warnings.add(f"job {job.name!r}: optional need {need.job!r} does not exist; ignored")
            else:
                raise NeedsUnknownJob(f"{job.location}: job {job.name!r} needs unknown job {need.job!r}")
        needs = tuple(kept)
    dependencies = job.dependencies
    if dependencies is not None:
        kept_deps = []
        own = stages.index(job.stage)
        for dep in dependencies:
            if dep not in jobs:
                warnings.add(f"job {job.name!r}: dependency {dep!r} is not a job; ignored")
            elif stages.index(jobs[dep].stage) >= own:
                warnings.add(f"job {job.name!r}: dependency {dep!r} is not in an earlier stage; ignored")
            else:
                kept_deps.append(dep)
        dependencies = tuple(kept_deps)
    if needs is job.needs and dependencies is job.dependencies:
        return job
    return _replace(job, needs=needs, dependencies=dependencies)


def _replace(job: JobConfig, **changes) -> JobConfig:
    return dataclasses.replace(job, **changes)


# ---------------------------------------------------------------------------
# explicit serialization (used to check resolution idempotence)


def to_document(model: WorkflowModel) -> dict:
    """Render a model as a plain document with no extends or defaults left."""
    doc: dict = {"stages": [s for s in model.stages if s not in (PRE, POST)]}
    if model.global_variables:
        doc["variables"] = {k: v.raw for k, v in model.global_variables.items()}
    for job in model.jobs.values():
        doc[job.name] = _job_document(job)
    return doc


def _job_document(job: JobConfig) -> dict:
    out: dict = {"stage": job.stage}
    if job.needs is not None:
        needs = []
        for need in job.needs:
            entry: dict = {"job": need.job}
            if need.artifacts_explicit is not None:
                entry["artifacts"] = need.artifacts_explicit
            if need.optional:
                entry["optional"] = True
            needs.append(entry)
        out["needs"] = needs
    if job.dependencies is not None:
        out["dependencies"] = list(job.dependencies)
    if job.artifacts is not None:
        art: dict = {}
        if job.artifacts.paths:
            art["paths"] = list(job.artifacts.paths)
        if job.artifacts.has_reports:
            art["reports"] = {"junit": "report.xml"}
        if job.artifacts.untracked:
            art["untracked"] = True
        if job.artifacts.expire_in is not None:
            art["expire_in"] = job.artifacts.expire_in
        out["artifacts"] = art
    if job.caches:
        out["cache"] = [_cache_document(c) for c in job.caches]
    if job.image is not None:
        out["image"] = job.image.raw
    if job.services:
        out["services"] = [s.raw for s in job.services]
    for section in SCRIPT_SECTIONS:
        lines = getattr(job, section)
        if lines:
            out[section] = [line.text for line in lines]
    if job.variables:
        out["variables"] = {k: v.raw for k, v in job.variables.items()}
    if job.matrix_instances:
        out["parallel"] = {"matrix": [dict(i) for i in job.matrix_instances]}
    if job.inherited_globals is not None:
        out["inherit"] = {"variables": list(job.inherited_globals)}
    return out


def _cache_document(cache: CacheSpec) -> dict:
    out: dict = {"key": cache.key.raw, "paths": list(cache.paths), "policy": cache.policy}
    if cache.fallback_keys:
        out["fallback_keys"] = list(cache.fallback_keys)
    if cache.untracked:
        out["untracked"] = True
    return out
