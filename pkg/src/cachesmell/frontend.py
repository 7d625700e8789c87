"""Loading workflow files into a location-annotated document tree.

PyYAML composes the file into a node graph (aliases become shared nodes);
the graph is then copied into immutable :class:`Scalar` / :class:`Sequence` /
:class:`Mapping` nodes, each tagged with the file, line and key path it came
from. Merge keys (``<<``) are flattened during the copy, duplicate keys are
rejected, and ``include: local:`` files are inlined.
"""

from __future__ import annotations

import glob
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Union

import yaml

from .errors import IncludeCycle, MalformedYaml, NotAMapping

try:
    _Loader = yaml.CSafeLoader
except AttributeError:  # pragma: no cover - libyaml missing
    _Loader = yaml.SafeLoader

MAX_INCLUDED_FILES = 100
# guards against alias expansion bombs
MAX_NODES = 2_000_000

_MERGE_TAG = "tag:yaml.org,2002:merge"
_TIMESTAMP_TAG = "tag:yaml.org,2002:timestamp"
_REMOTE_INCLUDE_KINDS = ("remote", "template", "project", "component")


@dataclass(frozen=True)
class SourceLocation:
    file: str
    line: int
    yaml_path: tuple = ()

    def __post_init__(self):
        if self.line < 1:
            raise ValueError(f"line must be >= 1, got {self.line}")

    def child(self, segment, line: int | None = None) -> "SourceLocation":
        return SourceLocation(self.file, self.line if line is None else line, self.yaml_path + (segment,))

    def __str__(self) -> str:
        return f"{self.file}:{self.line}"


@dataclass(frozen=True)
class Scalar:
    value: Any
    loc: SourceLocation
    tag: str = ""
    style: str | None = None

    @property
    def text(self) -> str:
        """The value as GitLab would stringify it."""
        return scalar_text(self.value)

    def plain(self):
        return self.value


@dataclass(frozen=True)
class Sequence:
    items: tuple
    loc: SourceLocation
    tag: str = ""

    def __iter__(self) -> Iterator["Node"]:
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def plain(self):
        return [item.plain() for item in self.items]


@dataclass(frozen=True)
class Mapping:
    items: dict = field(default_factory=dict)
    loc: SourceLocation = SourceLocation("<memory>", 1)
    tag: str = ""

    def __contains__(self, key) -> bool:
        return key in self.items

    def __iter__(self):
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def get(self, key, default=None):
        return self.items.get(key, default)

    def keys(self):
        return self.items.keys()

    def values(self):
        return self.items.values()

    def plain(self):
        return {k: v.plain() for k, v in self.items.items()}


Node = Union[Scalar, Sequence, Mapping]


def scalar_text(value) -> str:
    if value is None:
        return ""
    if value is True:
        return "true"
    if value is False:
        return "false"
    return str(value)


@dataclass(frozen=True)
class RawDocument:
    root: Mapping
    warnings: tuple = ()
    files: tuple = ()
    # true when remote/template/project includes could not be inlined
    incomplete: bool = False

    def plain(self) -> dict:
        return self.root.plain()


class _Converter:
    """Copies one composed PyYAML graph into location-annotated nodes."""

    def __init__(self, relpath: str):
        self.relpath = relpath
        self.count = 0
        self._constructor = yaml.SafeLoader("")

    def convert(self, node: yaml.Node, path: tuple, line: int | None = None) -> Node:
        self.count += 1
        if self.count > MAX_NODES:
            raise MalformedYaml(f"{self.relpath}: document expands to more than {MAX_NODES} nodes")
        # mapping values are located at their key, so block values point at `key:`
        loc = SourceLocation(self.relpath, line or node.start_mark.line + 1, path)
        if isinstance(node, yaml.ScalarNode):
            return Scalar(self._scalar_value(node), loc, node.tag, node.style)
        if isinstance(node, yaml.SequenceNode):
            return Sequence(
                tuple(self.convert(item, path + (i,)) for i, item in enumerate(node.value)),
                loc,
                node.tag,
            )
        if isinstance(node, yaml.MappingNode):
            return self._mapping(node, loc, path)
        raise MalformedYaml(f"{loc}: unsupported YAML node {type(node).__name__}")  # pragma: no cover

    def _scalar_value(self, node: yaml.ScalarNode):
        if node.tag == _TIMESTAMP_TAG or node.tag.startswith("!"):
            return node.value
        try:
            return self._constructor.construct_object(node)
        except yaml.YAMLError:
            return node.value

    def _mapping(self, node: yaml.MappingNode, loc: SourceLocation, path: tuple) -> Mapping:
        own: dict = {}
        merged: dict = {}
        for key_node, value_node in node.value:
            if key_node.tag == _MERGE_TAG:
                sources = value_node.value if isinstance(value_node, yaml.SequenceNode) else [value_node]
                for src in sources:
                    if not isinstance(src, yaml.MappingNode):
                        raise MalformedYaml(f"{self.relpath}:{src.start_mark.line + 1}: merge key needs a mapping")
                    converted = self._mapping(src, loc, path)
                    for k, v in converted.items.items():
                        # earlier merge sources win over later ones
                        merged.setdefault(k, v)
                continue
            if not isinstance(key_node, yaml.ScalarNode):
                raise MalformedYaml(f"{self.relpath}:{key_node.start_mark.line + 1}: mapping keys must be scalars")
            key = key_node.value
            if key in own:
                raise MalformedYaml(
                    f"{self.relpath}:{key_node.start_mark.line + 1}: duplicate key {key!r} "
                    f"(first defined on line {own[key].loc.line})"
                )
            own[key] = self.convert(value_node, path + (key,), key_node.start_mark.line + 1)
        if merged:
            # merged values were built at the merge site path; re-root them under the key
            for k, v in merged.items():
                if k not in own:
                    own[k] = _reroot(v, path + (k,))
        return Mapping(own, loc, node.tag)


def _reroot(node: Node, path: tuple) -> Node:
    loc = SourceLocation(node.loc.file, node.loc.line, path)
    if isinstance(node, Scalar):
        return Scalar(node.value, loc, node.tag, node.style)
    if isinstance(node, Sequence):
        return Sequence(tuple(_reroot(n, path + (i,)) for i, n in enumerate(node.items)), loc, node.tag)
    return Mapping({k: _reroot(v, path + (k,)) for k, v in node.items.items()}, loc, node.tag)


def parse_text(text: str, relpath: str = "<memory>") -> Mapping:
    """Parse YAML text into a root :class:`Mapping`.

    A leading ``spec:`` header document (CI components) is skipped.
    """
    try:
        docs = [d for d in yaml.compose_all(text, Loader=_Loader)]
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else "?"
        raise MalformedYaml(f"{relpath}:{line}: {exc.problem or exc}") from exc
    except yaml.YAMLError as exc:
        raise MalformedYaml(f"{relpath}: {exc}") from exc
    docs = [d for d in docs if d is not None]
    if len(docs) > 1 and _is_spec_header(docs[0]):
        docs = docs[1:]
    if not docs:
        raise NotAMapping(f"{relpath}: document is empty")
    if len(docs) > 1:
        raise MalformedYaml(f"{relpath}: expected a single YAML document, found {len(docs)}")
    root = docs[0]
    if not isinstance(root, yaml.MappingNode):
        raise NotAMapping(f"{relpath}: document root is a {type(root).__name__[:-4].lower()}, not a mapping")
    result = _Converter(relpath).convert(root, ())
    return Mapping(result.items, SourceLocation(relpath, 1, ()), result.tag)


def _is_spec_header(node) -> bool:
    return isinstance(node, yaml.MappingNode) and any(k.value == "spec" for k, _ in node.value)


def load_workflow(file, repo_root=None) -> RawDocument:
    """Load a workflow file, inlining ``include: local:`` entries.

    Args:
        file: Path to the workflow file.
        repo_root: Repository root used to resolve local includes and to
            relativize source locations. Defaults to the file's directory.

    Raises:
        MalformedYaml: On syntax errors or duplicate keys.
        IncludeCycle: When local includes revisit a file or exceed the cap.
        NotAMapping: When the document root is not a mapping.
    """
    file = Path(file)
    root_dir = Path(repo_root) if repo_root is not None else file.parent
    state = _IncludeState(root_dir.resolve())
    mapping = state.load(file.resolve(), chain=())
    return RawDocument(mapping, tuple(state.warnings), tuple(state.visited), state.incomplete)


def load_text(text: str, relpath: str = ".gitlab-ci.yml") -> RawDocument:
    """Load a single in-memory workflow; includes are recorded but not followed."""
    mapping = parse_text(text, relpath)
    warnings = []
    incomplete = False
    if "include" in mapping:
        warnings.append(f"{relpath}: includes are not followed for in-memory documents")
        incomplete = True
        mapping = Mapping({k: v for k, v in mapping.items.items() if k != "include"}, mapping.loc, mapping.tag)
    return RawDocument(mapping, tuple(warnings), (relpath,), incomplete)


class _IncludeState:
    def __init__(self, repo_root: Path):
        self.repo_root = repo_root
        self.warnings: list[str] = []
        self.visited: list[str] = []
        self.incomplete = False

    def relpath(self, path: Path) -> str:
        try:
            return path.relative_to(self.repo_root).as_posix()
        except ValueError:
            return path.as_posix()

    def load(self, path: Path, chain: tuple) -> Mapping:
        rel = self.relpath(path)
        if path in chain:
            cycle = " -> ".join(self.relpath(p) for p in chain + (path,))
            raise IncludeCycle(f"local include cycle: {cycle}")
        if len(self.visited) >= MAX_INCLUDED_FILES:
            raise IncludeCycle(f"more than {MAX_INCLUDED_FILES} files reached through local includes")
        self.visited.append(rel)
        try:
            text = path.read_text(encoding="utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedYaml(f"{rel}: not valid UTF-8") from exc
        mapping = parse_text(text, rel)
        include = mapping.get("include")
        if include is None:
            return mapping
        combined: dict = {}
        for local in self._local_includes(include, rel):
            if not local.exists():
                self.warnings.append(f"{rel}: local include {self.relpath(local)} not found")
                self.incomplete = True
                continue
            combined.update(self.load(local, chain + (path,)).items)
        for key, value in mapping.items.items():
            if key != "include":
                combined[key] = value
        return Mapping(combined, mapping.loc, mapping.tag)

    def _local_includes(self, node: Node, rel: str) -> list[Path]:
        entries = node.items if isinstance(node, Sequence) else (node,)
        paths: list[Path] = []
        for entry in entries:
            target = None
            if isinstance(entry, Scalar):
                text = entry.text
                if "://" in text:
                    self._skip(rel, entry, "remote", text)
                    continue
                target = text
            elif isinstance(entry, Mapping):
                if "local" in entry and isinstance(entry.get("local"), Scalar):
                    target = entry.get("local").text
                else:
                    kind = next((k for k in _REMOTE_INCLUDE_KINDS if k in entry), "unknown")
                    value = entry.get(kind)
                    self._skip(rel, entry, kind, value.plain() if value is not None else "")
                    continue
            else:
                self._skip(rel, entry, "unknown", "")
                continue
            paths.extend(self._expand_local(target))
        return paths

    def _expand_local(self, target: str) -> list[Path]:
        pattern = target.lstrip("/")
        if any(ch in pattern for ch in "*?["):
            found = sorted(glob.glob(os.path.join(self.repo_root, pattern), recursive=True))
            return [Path(p).resolve() for p in found if p.endswith((".yml", ".yaml"))]
        return [(self.repo_root / pattern).resolve()]

    def _skip(self, rel: str, entry: Node, kind: str, value) -> None:
        self.incomplete = True
        self.warnings.append(
            f"{rel}:{entry.loc.line}: {kind} include {value!r} is not resolved statically; "
            "analysis confidence is reduced"
        )
