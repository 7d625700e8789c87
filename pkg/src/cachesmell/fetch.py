"""Fetching workflow files and namespace kind from a GitLab instance.

All HTTP goes through a small transport interface so tests can replay a
recorded cassette instead of touching the network.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from email.utils import parsedate_to_datetime
from pathlib import Path
from typing import Callable, Protocol
from urllib.parse import quote

import requests

from .errors import FetchError, HttpError, NoCiFile, RateLimited

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://gitlab.com"
DEFAULT_CI_FILE = ".gitlab-ci.yml"
METADATA_FILE = "metadata.json"
TOKEN_HEADER = "PRIVATE-TOKEN"


@dataclass(frozen=True)
class Response:
    status: int
    body: str
    headers: dict = field(default_factory=dict)

    def header(self, name: str) -> str | None:
        lowered = name.lower()
        for key, value in self.headers.items():
            if key.lower() == lowered:
                return value
        return None


class Transport(Protocol):
    def get(self, url: str, headers: dict) -> Response: ...


class RequestsTransport:
    def __init__(self, timeout: float = 30.0, session: requests.Session | None = None):
        self.timeout = timeout
        self.session = session or requests.Session()

    def get(self, url: str, headers: dict) -> Response:
        try:
            resp = self.session.get(url, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise FetchError(f"GET {url} failed: {exc}") from exc
        return Response(resp.status_code, resp.text, dict(resp.headers))


class ReplayTransport:
    """Serves responses from a JSON cassette, in recorded order per URL."""

    def __init__(self, cassette):
        data = json.loads(Path(cassette).read_text(encoding="utf-8"))
        self._queues: dict = {}
        for entry in data["interactions"]:
            req, resp = entry["request"], entry["response"]
            self._queues.setdefault(req["url"], []).append(
                Response(resp["status"], resp.get("body", ""), resp.get("headers", {}))
            )
        self.requests: list[tuple[str, dict]] = []

    def get(self, url: str, headers: dict) -> Response:
        self.requests.append((url, dict(headers)))
        queue = self._queues.get(url)
        if not queue:
            raise FetchError(f"cassette has no (more) responses for {url}")
        return queue.pop(0)


class RecordingTransport:
    """Wraps a transport and writes every exchange to a cassette; tokens are never stored."""

    def __init__(self, inner: Transport, cassette):
        self.inner = inner
        self.cassette = Path(cassette)
        self.interactions: list[dict] = []

    def get(self, url: str, headers: dict) -> Response:
        resp = self.inner.get(url, headers)
        kept = {k: v for k, v in resp.headers.items() if k.lower() in ("retry-after", "content-type")}
        self.interactions.append({
            "request": {"method": "GET", "url": url},
            "response": {"status": resp.status, "headers": kept, "body": resp.body},
        })
        return resp

    def save(self) -> None:
        self.cassette.parent.mkdir(parents=True, exist_ok=True)
        self.cassette.write_text(json.dumps({"interactions": self.interactions}, indent=2) + "\n", encoding="utf-8")


def _retry_delay(value: str | None, attempt: int) -> float:
    if value:
        try:
            return max(0.0, float(value))
        except ValueError:
            try:
                when = parsedate_to_datetime(value)
                return max(0.0, when.timestamp() - time.time())
            except (TypeError, ValueError):
                pass
    return float(2 ** attempt)


class GitLabClient:
    def __init__(
        self,
        endpoint: str = DEFAULT_ENDPOINT,
        token: str | None = None,
        transport: Transport | None = None,
        max_retries: int = 3,
        sleep: Callable[[float], None] = time.sleep,
        max_delay: float = 120.0,
    ):
        self.base = endpoint.rstrip("/") + "/api/v4"
        self.token = token
        self.transport = transport or RequestsTransport()
        self.max_retries = max_retries
        self.sleep = sleep
        self.max_delay = max_delay

    def _get(self, url: str) -> Response:
        headers = {TOKEN_HEADER: self.token} if self.token else {}
        retry_after = None
        for attempt in range(self.max_retries + 1):
            resp = self.transport.get(url, headers)
            if resp.status != 429:
                if resp.status >= 400:
                    raise HttpError(resp.status, url, _error_message(resp.body))
                return resp
            retry_after = _retry_delay(resp.header("Retry-After"), attempt)
            if attempt == self.max_retries or retry_after > self.max_delay:
                break
            log.info("rate limited on %s; retrying in %.1fs", url, retry_after)
            self.sleep(retry_after)
        raise RateLimited(url, retry_after, attempt + 1)

    def project(self, ref: str) -> dict:
        return json.loads(self._get(f"{self.base}/projects/{quote(str(ref), safe='')}").body)

    def raw_file(self, project_id, path: str, ref: str) -> str:
        url = (f"{self.base}/projects/{quote(str(project_id), safe='')}/repository/files/"
               f"{quote(path, safe='')}/raw?ref={quote(ref, safe='')}")
        try:
            return self._get(url).body
        except HttpError as exc:
            if exc.status == 404:
                raise NoCiFile(f"project {project_id} has no {path} on {ref}") from exc
            raise


def _error_message(body: str) -> str:
    try:
        data = json.loads(body)
    except (ValueError, TypeError):
        return body.strip()[:200]
    if isinstance(data, dict):
        return str(data.get("message") or data.get("error") or "")
    return ""


@dataclass(frozen=True)
class FetchedProject:
    repo_id: str
    project: str
    workflow_text: str
    is_group: bool
    default_branch: str
    ci_file: str
    endpoint: str


def repo_id_for(path_with_namespace: str) -> str:
    return path_with_namespace.strip("/").replace("/", "__")


def fetch_remote(project_ref, endpoint: str = DEFAULT_ENDPOINT, token: str | None = None,
                 transport: Transport | None = None, **client_options) -> FetchedProject:
    """Download a project's CI file and whether it lives in a group namespace.

    Raises:
        HttpError: Non-success status other than rate limiting.
        NoCiFile: The project has no CI file on its default branch.
        RateLimited: Still rate limited after the retry budget.
    """
    client = GitLabClient(endpoint, token, transport, **client_options)
    meta = client.project(project_ref)
    branch = meta.get("default_branch")
    if not branch:
        raise NoCiFile(f"project {project_ref} has an empty repository")
    ci_file = meta.get("ci_config_path") or DEFAULT_CI_FILE
    if "@" in ci_file or "://" in ci_file:
        raise NoCiFile(f"project {project_ref} keeps its CI configuration elsewhere ({ci_file})")
    text = client.raw_file(meta["id"], ci_file, branch)
    path = meta.get("path_with_namespace") or str(project_ref)
    return FetchedProject(
        repo_id=repo_id_for(path),
        project=path,
        workflow_text=text,
        is_group=(meta.get("namespace") or {}).get("kind") == "group",
        default_branch=branch,
        ci_file=ci_file,
        endpoint=endpoint,
    )


def save_fetched(fetched: FetchedProject, out_dir) -> Path:
    """Write ``<out>/<repo_id>/.gitlab-ci.yml`` and ``metadata.json``; returns the repo directory."""
    repo_dir = Path(out_dir) / fetched.repo_id
    repo_dir.mkdir(parents=True, exist_ok=True)
    (repo_dir / DEFAULT_CI_FILE).write_text(fetched.workflow_text, encoding="utf-8")
    metadata = {
        "repo_id": fetched.repo_id,
        "project": fetched.project,
        "is_group": fetched.is_group,
        "default_branch": fetched.default_branch,
        "ci_file": fetched.ci_file,
        "endpoint": fetched.endpoint,
    }
    (repo_dir / METADATA_FILE).write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return repo_dir


def read_metadata(repo_dir) -> dict | None:
    path = Path(repo_dir) / METADATA_FILE
    if not path.is_file():
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError:
        return None
