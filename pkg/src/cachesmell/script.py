"""Job script tokenizing and command classification.

This is not a shell parser. Lines are split into simple commands on
unquoted ``&&``, ``||``, ``;``, ``|`` and newlines; the contents of
``$( )``, backticks and ``sh -c "..."`` are scanned again as flat text and
marked as reduced confidence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .frontend import SourceLocation
from .model import ScriptLine
from .variables import expand_variables

DOCKER_BUILD_PREFIXES = (("docker", "build"), ("docker", "image", "build"), ("docker", "buildx", "build"))
PIP_PREFIXES = (("pip", "install"), ("pip3", "install"), ("pip", "download"), ("pip3", "download"))
CONDA_PREFIXES = (
    ("conda", "install"),
    ("conda", "create"),
    ("mamba", "install"),
    ("mamba", "create"),
    ("micromamba", "install"),
    ("micromamba", "create"),
    ("conda", "env", "create"),
    ("conda", "env", "update"),
)
APT_TOOLS = ("apt-get", "apt")
# python3-<name> packages that are interpreter/OS tooling rather than libraries
APT_PYTHON_EXCLUSIONS = frozenset({"dev", "pip", "venv", "setuptools", "wheel", "distutils", "minimal", "full", "all", "apt"})
PYTHON_MANAGER_KINDS = frozenset({"pip-install", "conda-install", "apt-python-install"})
WILDCARD = "*"

_APT_PYTHON = re.compile(r"^python3?-([A-Za-z0-9][A-Za-z0-9.+-]*)$")
_PYTHON_EXE = re.compile(r"^(?:.*/)?python(?:3(?:\.\d+)?)?$")
_ASSIGNMENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*=")
_REDIRECT = re.compile(r"^(?:\d*|&)(?:>>?|<<?|>&|<&)")
_SHELL_KEYWORDS = frozenset({"if", "then", "else", "elif", "do", "while", "until", "!", "time", "{", "(", "}", ")"})
_WRAPPERS = frozenset({"sudo", "exec", "command", "nohup", "env", "xargs"})
_SHELLS = frozenset({"sh", "bash", "ash", "dash", "zsh"})

_DOCKER_GLOBAL_VALUE_FLAGS = frozenset({"-H", "--host", "--config", "-c", "--context", "-l", "--log-level"})
_PIP_VALUE_FLAGS = frozenset(
    {"-r", "--requirement", "-c", "--constraint", "-i", "--index-url", "--extra-index-url", "-f",
     "--find-links", "-t", "--target", "--prefix", "--root", "--platform", "--python-version",
     "--implementation", "--abi", "--src", "--cache-dir", "--progress-bar", "--trusted-host",
     "--proxy", "--timeout", "--retries", "-d", "--dest", "--log", "--python", "--upgrade-strategy"}
)
_CONDA_VALUE_FLAGS = frozenset({"-n", "--name", "-p", "--prefix", "-c", "--channel", "--file", "-f"})
_APT_VALUE_FLAGS = frozenset({"-o", "--option", "-t", "--target-release", "-c", "--config-file"})

# characters with no special meaning to the lexer, consumed as one run
_ORDINARY = re.compile(r"[^\\'\"$`#\s;|&]+")

@dataclass(frozen=True)
class SimpleCommand:
    argv: tuple
    raw: str
    location: SourceLocation | None = field(default=None, compare=False)
    section: str = "script"
    # set when the command came from a subshell, backticks or `sh -c`
    flattened: bool = False


@dataclass(frozen=True)
class CommandClass:
    kind: str
    details: dict = field(default_factory=dict)


@dataclass
class _Word:
    parts: list = field(default_factory=list)  # (text, expandable)

    def add(self, text: str, expandable: bool) -> None:
        if self.parts and self.parts[-1][1] == expandable:
            self.parts[-1] = (self.parts[-1][0] + text, expandable)
        else:
            self.parts.append((text, expandable))

    @property
    def started(self) -> bool:
        return bool(self.parts)

    def render(self, scopes) -> str:
        out = []
        for text, expandable in self.parts:
            out.append(expand_variables(text, scopes).expanded if expandable and "$" in text else text)
        return "".join(out)


class _Lexer:
    """Splits one script line into commands; collects nested fragments for flat scanning."""

    def __init__(self, text: str, scopes):
        self.text = text
        self.scopes = scopes
        self.commands: list[tuple[list[str], str]] = []
        self.nested: list[str] = []
        self.warnings: list[str] = []

    def run(self) -> None:
        text, n = self.text, len(self.text)
        i = 0
        words: list[str] = []
        word = _Word()
        start = 0

        def end_word():
            nonlocal word
            if word.started:
                words.append(word.render(self.scopes))
            word = _Word()

        def end_command(stop: int):
            nonlocal words, start
            end_word()
            if words:
                self.commands.append((words, text[start:stop].strip()))
            words = []

        while i < n:
            ch = text[i]
            if ch == "\\" and i + 1 < n:
                if text[i + 1] == "\n":
                    i += 2
                    continue
                word.add(text[i + 1], False)
                i += 2
            elif ch == "'":
                close = text.find("'", i + 1)
                if close < 0:
                    self.warnings.append(f"unterminated single quote in {text!r}")
                    close = n
                word.add(text[i + 1 : close], False)
                i = close + 1
            elif ch == '"':
                j = i + 1
                buf = []
                while j < n and text[j] != '"':
                    if text[j] == "\\" and j + 1 < n and text[j + 1] in '"\\$`':
                        buf.append(text[j + 1])
                        j += 2
                        continue
                    buf.append(text[j])
                    j += 1
                if j >= n:
                    self.warnings.append(f"unterminated double quote in {text!r}")
                content = "".join(buf)
                self._scan_substitutions(content)
                word.add(content, True)
                i = j + 1
            elif ch == "$" and text.startswith("$(", i) and not text.startswith("$((", i):
                close = _matching_paren(text, i + 1)
                self.nested.append(text[i + 2 : close])
                word.add(text[i : close + 1], False)
                i = close + 1
            elif ch == "`":
                close = text.find("`", i + 1)
                close = n if close < 0 else close
                self.nested.append(text[i + 1 : close])
                word.add(text[i : close + 1], False)
                i = close + 1
            elif ch == "#" and not word.started:
                # comment to end of line
                nl = text.find("\n", i)
                i = n if nl < 0 else nl
            elif ch in " \t":
                end_word()
                i += 1
            elif ch == "\n":
                end_command(i)
                start = i + 1
                i += 1
            elif text.startswith(("&&", "||"), i):
                end_command(i)
                i += 2
                start = i
            elif ch in ";|":
                end_command(i)
                i += 2 if text.startswith("|&", i) else 1
                start = i
            elif ch == "&" and not word.started:
                end_command(i)
                i += 1
                start = i
            else:
                run = _ORDINARY.match(text, i)
                stop = run.end() if run else i + 1
                word.add(text[i:stop], True)
                i = stop
        end_command(n)

    def _scan_substitutions(self, content: str) -> None:
        i = 0
        while True:
            i = content.find("$(", i)
            if i < 0:
                break
            close = _matching_paren(content, i + 1)
            self.nested.append(content[i + 2 : close])
            i = close + 1


def _matching_paren(text: str, open_index: int) -> int:
    depth = 0
    for j in range(open_index, len(text)):
        if text[j] == "(":
            depth += 1
        elif text[j] == ")":
            depth -= 1
            if depth == 0:
                return j
    return len(text)


def _line_offset(line: ScriptLine, raw: str, text: str) -> SourceLocation | None:
    loc = line.location
    if loc is None:
        return None
    position = text.find(raw) if raw else -1
    offset = line.block_offset + (text.count("\n", 0, position) if position > 0 else 0)
    if offset == 0:
        return loc
    return SourceLocation(loc.file, loc.line + offset, loc.yaml_path)


def _strip_prefix(argv: list[str]) -> list[str]:
    """Drop shell keywords, env assignments, redirections and wrapper commands."""
    out: list[str] = []
    skip_target = False
    for w in argv:
        if skip_target:
            skip_target = False
            continue
        match = _REDIRECT.match(w)
        if match:
            # a bare operator (`>`, `2>>`) takes the next word as its target
            skip_target = match.end() == len(w) and not w.endswith("&")
            continue
        out.append(w)
    changed = True
    while out and changed:
        changed = False
        if out[0] in _SHELL_KEYWORDS or _ASSIGNMENT.match(out[0]):
            out = out[1:]
            changed = True
        elif out[0] in _WRAPPERS:
            out = out[1:]
            while out and (out[0].startswith("-") or _ASSIGNMENT.match(out[0])):
                out = out[1:]
            changed = True
    return out


def tokenize_script(lines, scopes=(), warnings: list | None = None, cache: dict | None = None) -> list[SimpleCommand]:
    """Split script lines into :class:`SimpleCommand` objects.

    Args:
        lines: :class:`ScriptLine` objects (or plain strings, taken as ``script``).
        scopes: Variable scopes, innermost first, used to expand words.
        warnings: Optional list that receives reduced-confidence notes.
        cache: Optional dict shared across calls to reuse lexing results.
    """
    commands: list[SimpleCommand] = []
    signature = None
    for line in lines:
        if isinstance(line, str):
            line = ScriptLine(line, "script", None)
        if cache is None:
            lexed = _lex(line.text, scopes, 0)
        else:
            # text without `$` cannot depend on variables
            if "$" in line.text:
                if signature is None:
                    signature = tuple(tuple(sorted(scope.items())) for scope in scopes)
                key = (line.text, signature)
            else:
                key = line.text
            lexed = cache.get(key)
            if lexed is None:
                lexed = cache[key] = _lex(line.text, scopes, 0)
        items, notes, nested = lexed
        if warnings is not None:
            warnings.extend(notes)
            warnings.extend([f"{line.location or '?'}: nested shell text scanned as flat commands"] * nested)
        if cache is None:
            commands.extend(_build(line, items))
            continue
        # commands are immutable, so jobs sharing a script line share them
        built_key = ("built", key, line.location, line.section, line.block_offset)
        built = cache.get(built_key)
        if built is None:
            built = cache[built_key] = _build(line, items)
        commands.extend(built)
    return commands


def _build(line: ScriptLine, items) -> tuple:
    return tuple(SimpleCommand(argv, raw, _line_offset(line, raw, line.text), line.section, flat)
                 for argv, raw, flat in items)


def _lex(text: str, scopes, depth: int) -> tuple[list, list, int]:
    """Location-free lexing: ([(argv, raw, flattened)], warnings, nested scan count)."""
    items: list = []
    notes: list[str] = []
    if text.lstrip().startswith("#") and "\n" not in text.strip():
        return items, notes, 0
    lexer = _Lexer(text, scopes)
    lexer.run()
    notes.extend(lexer.warnings)
    nested = list(lexer.nested)
    for words, raw in lexer.commands:
        argv = _strip_prefix(words)
        if not argv:
            continue
        if argv[0] in _SHELLS and "-c" in argv[1:]:
            index = argv.index("-c")
            if index + 1 < len(argv):
                nested.append(argv[index + 1])
        items.append((tuple(argv), raw, depth > 0))
    count = 0
    if nested and depth < 5:
        count = 1
        for fragment in nested:
            sub_items, sub_notes, sub_count = _lex(fragment, scopes, depth + 1)
            items.extend(sub_items)
            notes.extend(sub_notes)
            count += sub_count
    return items, notes, count


# ---------------------------------------------------------------------------


def _docker_subcommand(argv: tuple) -> tuple:
    """argv with docker global options removed (``docker -H x build`` -> ``docker build``)."""
    if not argv or argv[0] != "docker":
        return argv
    rest = list(argv[1:])
    while rest and rest[0].startswith("-"):
        flag = rest.pop(0)
        if flag in _DOCKER_GLOBAL_VALUE_FLAGS and rest:
            rest.pop(0)
    return ("docker", *rest)


def _operands(args, value_flags) -> tuple[list[str], dict]:
    operands: list[str] = []
    values: dict = {}
    it = iter(args)
    for arg in it:
        if arg.startswith("-"):
            name, eq, value = arg.partition("=")
            if name in value_flags:
                if not eq:
                    value = next(it, "")
                values.setdefault(name, []).append(value)
            continue
        operands.append(arg)
    return operands, values


def _docker_build_details(args) -> dict:
    cache_from = any(a == "--cache-from" or a.startswith("--cache-from=") for a in args)
    value_flags = {"-t", "--tag", "-f", "--file", "--cache-from", "--build-arg", "--target", "--platform",
                   "--label", "--secret", "--ssh", "--output", "-o", "--cache-to", "--network", "--progress",
                   "--iidfile", "--metadata-file", "--build-context", "--add-host", "--shm-size"}
    operands, values = _operands(args, value_flags)
    return {
        "cache_from_present": cache_from,
        "tags": values.get("-t", []) + values.get("--tag", []),
        "cache_from": values.get("--cache-from", []),
        "context": operands[0] if operands else None,
    }


def _image_operand(args) -> str | None:
    operands, _ = _operands(args, {"--platform"})
    return operands[0] if operands else None


def _pip_details(args) -> dict:
    operands, values = _operands(args, _PIP_VALUE_FLAGS)
    requirements = values.get("-r", []) + values.get("--requirement", [])
    editable = [a for a in args if a.startswith("-e") or a.startswith("--editable")]
    packages = operands
    return {"packages": packages or [WILDCARD], "requirements": requirements, "editable": bool(editable)}


def _conda_details(args) -> dict:
    operands, values = _operands(args, _CONDA_VALUE_FLAGS)
    packages = operands or [WILDCARD]
    return {"packages": packages, "files": values.get("--file", []) + values.get("-f", [])}


def _apt_python_packages(args) -> list[str]:
    operands, _ = _operands(args, _APT_VALUE_FLAGS)
    out = []
    for operand in operands:
        name = re.split(r"[=:]", operand, maxsplit=1)[0]
        match = _APT_PYTHON.match(name)
        if match and match.group(1) not in APT_PYTHON_EXCLUSIONS:
            out.append(name)
    return out


def classify(cmd: SimpleCommand | tuple | list) -> CommandClass:
    """Classify one command by its argv prefix."""
    argv = tuple(cmd.argv if isinstance(cmd, SimpleCommand) else cmd)
    if not argv:
        return CommandClass("other")
    docker = _docker_subcommand(argv)
    for prefix in DOCKER_BUILD_PREFIXES:
        if docker[: len(prefix)] == prefix:
            return CommandClass("docker-build", _docker_build_details(docker[len(prefix):]))
    if docker[:3] == ("docker", "buildx", "bake"):
        return CommandClass("docker-buildx-bake", {"targets": _operands(docker[3:], {"-f", "--file", "--set"})[0]})
    if docker[:2] == ("docker", "pull") or docker[:3] == ("docker", "image", "pull"):
        args = docker[3:] if docker[1] == "image" else docker[2:]
        return CommandClass("docker-pull", {"image": _image_operand(args)})
    if docker[:2] == ("docker", "push") or docker[:3] == ("docker", "image", "push"):
        args = docker[3:] if docker[1] == "image" else docker[2:]
        return CommandClass("docker-push", {"image": _image_operand(args)})

    pip_args = None
    for prefix in PIP_PREFIXES:
        if argv[: len(prefix)] == prefix:
            pip_args = argv[len(prefix):]
    if pip_args is None and len(argv) >= 4 and _PYTHON_EXE.match(argv[0]) and argv[1:3] == ("-m", "pip") and argv[3] in ("install", "download"):
        pip_args = argv[4:]
    if pip_args is not None:
        return CommandClass("pip-install", _pip_details(pip_args))

    for prefix in CONDA_PREFIXES:
        if argv[: len(prefix)] == prefix:
            return CommandClass("conda-install", _conda_details(argv[len(prefix):]))

    if argv[0] in APT_TOOLS:
        operands, _ = _operands(argv[1:], _APT_VALUE_FLAGS)
        if operands and operands[0] == "install":
            index = argv.index("install")
            packages = _apt_python_packages(argv[index + 1:])
            if packages:
                return CommandClass("apt-python-install", {"packages": packages})
    return CommandClass("other")
