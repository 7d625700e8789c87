"""CI variable expansion."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping as TMapping, Sequence as TSequence

MAX_PASSES = 10

# $$ must be matched first so an escaped dollar never starts a reference
_TOKEN = re.compile(r"\$\$|\$\{([A-Za-z_][A-Za-z0-9_]*)\}|\$([A-Za-z_][A-Za-z0-9_]*)")
_ESCAPED = "\x00"

PREDEFINED_PREFIXES = ("CI_", "GITLAB_")

# Predefined names that do not carry one of the prefixes above.
PREDEFINED_NAMES = frozenset(
    {
        "CI",
        "CHAT_CHANNEL",
        "CHAT_INPUT",
        "CHAT_USER_ID",
        "TRIGGER_PAYLOAD",
        "KUBECONFIG",
    }
)

# Predefined variables whose value is a GitLab-hosted registry address.
REGISTRY_VARIABLES = frozenset(
    {
        "CI_REGISTRY",
        "CI_REGISTRY_IMAGE",
        "CI_TEMPLATE_REGISTRY_HOST",
        "CI_SERVER_HOST",
        "CI_SERVER_FQDN",
        "CI_DEPENDENCY_PROXY_SERVER",
        "CI_DEPENDENCY_PROXY_GROUP_IMAGE_PREFIX",
        "CI_DEPENDENCY_PROXY_DIRECT_GROUP_IMAGE_PREFIX",
    }
)


def is_predefined(name: str) -> bool:
    return name.startswith(PREDEFINED_PREFIXES) or name in PREDEFINED_NAMES


@dataclass(frozen=True)
class VariableValue:
    raw: str
    expanded: str
    fully_resolved: bool = True


def variable_names(text: str) -> frozenset:
    """Names referenced as ``$NAME`` or ``${NAME}`` in ``text`` (escapes excluded)."""
    return frozenset(m.group(1) or m.group(2) for m in _TOKEN.finditer(text) if m.group(0) != "$$")


def _lookup(name: str, scopes):
    for scope in scopes:
        if name in scope:
            return scope[name]
    return None


def expand_variables(text: str, scopes: TSequence[TMapping[str, str]] = ()) -> VariableValue:
    """Expand ``$NAME`` / ``${NAME}`` references against ordered scopes.

    ``scopes`` runs innermost first; the first scope defining a name wins.
    Expansion repeats until nothing changes or :data:`MAX_PASSES` passes have
    run. Predefined CI names that no scope defines stay symbolic without
    affecting ``fully_resolved``; any other leftover reference clears it.
    ``$$`` yields a literal ``$``.
    """
    text = "" if text is None else str(text)
    if "$" not in text:
        return VariableValue(text, text, True)

    def substitute(match: re.Match) -> str:
        whole = match.group(0)
        if whole == "$$":
            return _ESCAPED
        value = _lookup(match.group(1) or match.group(2), scopes)
        return whole if value is None else str(value)

    current = text
    for _ in range(MAX_PASSES):
        following = _TOKEN.sub(substitute, current)
        if following == current:
            break
        current = following

    resolved = True
    for match in _TOKEN.finditer(current):
        if match.group(0) == "$$":
            continue
        name = match.group(1) or match.group(2)
        if _lookup(name, scopes) is not None or not is_predefined(name):
            # still defined after the last pass means a reference cycle
            resolved = False
            break
    return VariableValue(text, current.replace(_ESCAPED, "$"), resolved)


def variable_escape(text: str) -> str:
    """Escape ``$`` so a value is substituted literally (``expand: false``)."""
    return text.replace("$", "$$")
