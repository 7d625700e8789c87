"""Container image reference parsing."""

from __future__ import annotations

from dataclasses import dataclass, field

from .frontend import SourceLocation
from .variables import REGISTRY_VARIABLES, expand_variables, variable_names

DOCKER_HUB_HOSTS = frozenset({"docker.io", "index.docker.io", "registry-1.docker.io"})

PROXY_VARIABLES = (
    "CI_DEPENDENCY_PROXY_GROUP_IMAGE_PREFIX",
    "CI_DEPENDENCY_PROXY_DIRECT_GROUP_IMAGE_PREFIX",
    "CI_DEPENDENCY_PROXY_SERVER",
)

ORIGINS = ("image-clause", "services-clause", "script-pull")


@dataclass(frozen=True)
class ImageRef:
    raw: str
    expanded: str
    fully_resolved: bool
    registry: str | None
    repository: str
    tag: str | None
    origin: str = "image-clause"
    digest: str | None = None
    location: SourceLocation | None = field(default=None, compare=False)

    def reassemble(self) -> str:
        text = self.repository
        if self.registry is not None:
            text = f"{self.registry}/{text}"
        if self.tag is not None:
            text = f"{text}:{self.tag}"
        if self.digest is not None:
            text = f"{text}@{self.digest}"
        return text

    @property
    def is_proxied(self) -> bool:
        return any(name in self.raw for name in PROXY_VARIABLES) or "/dependency_proxy/" in self.expanded

    @property
    def is_docker_hub(self) -> bool:
        return self.registry is None or self.registry.lower() in DOCKER_HUB_HOSTS

    @property
    def name(self) -> str:
        """Registry + repository, without tag or digest."""
        return self.repository if self.registry is None else f"{self.registry}/{self.repository}"


def _is_registry_host(head: str) -> bool:
    if "." in head or ":" in head or head == "localhost":
        return True
    # a platform variable in host position expands to a GitLab host
    names = variable_names(head)
    return bool(names) and head.startswith("$") and any(n in REGISTRY_VARIABLES for n in names)


def split_image(text: str) -> tuple[str | None, str, str | None, str | None]:
    """Split ``[registry/]repository[:tag][@digest]`` into its parts."""
    digest = None
    if "@" in text:
        text, digest = text.split("@", 1)
    registry = None
    rest = text
    if "/" in text:
        head, tail = text.split("/", 1)
        if _is_registry_host(head):
            registry, rest = head, tail
    tag = None
    last_slash = rest.rfind("/")
    colon = rest.rfind(":")
    if colon > last_slash:
        rest, tag = rest[:colon], rest[colon + 1 :]
    return registry, rest, tag, digest


def parse_image(
    raw: str,
    scopes=(),
    origin: str = "image-clause",
    location: SourceLocation | None = None,
) -> ImageRef:
    value = expand_variables(raw, scopes)
    registry, repository, tag, digest = split_image(value.expanded)
    return ImageRef(
        raw=raw,
        expanded=value.expanded,
        fully_resolved=value.fully_resolved,
        registry=registry,
        repository=repository,
        tag=tag,
        origin=origin,
        digest=digest,
        location=location,
    )


def same_image(a: str, b: str) -> bool:
    """Compare image names, treating a missing tag as ``latest``."""

    def norm(text: str) -> tuple:
        registry, repository, tag, digest = split_image(text)
        if registry is not None and registry.lower() in DOCKER_HUB_HOSTS:
            registry = None
        if registry is None and repository.startswith("library/"):
            repository = repository[len("library/") :]
        return registry, repository, tag or "latest", digest

    return norm(a) == norm(b)
