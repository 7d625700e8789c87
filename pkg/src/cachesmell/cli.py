"""Command-line interface: analyze, corpus, eval and fetch."""

from __future__ import annotations

import argparse
import gc
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .analysis import analyze_file
from .errors import AnalysisError
from .fetch import DEFAULT_ENDPOINT, RecordingTransport, ReplayTransport, RequestsTransport, fetch_remote, \
    read_metadata, save_fetched
from .metrics import aggregate, evaluate, load_labels, predictions_from_reports
from .report import RepoSummary, report_from_analysis, to_json, to_text

log = logging.getLogger("cachesmell")

EXIT_CLEAN = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2
WORKFLOW_NAMES = (".gitlab-ci.yml", ".gitlab-ci.yaml")
DEFAULT_TOKEN_ENV = "GITLAB_TOKEN"


def exit_code(has_findings: bool, has_error: bool, fail_on_findings: bool) -> int:
    if has_error:
        return EXIT_ERROR
    return EXIT_FINDINGS if has_findings and fail_on_findings else EXIT_CLEAN


def _group_flag(value: str) -> str:
    value = value.lower()
    if value not in ("true", "false", "auto"):
        raise argparse.ArgumentTypeError("expected true, false or auto")
    return value


def build_parser() -> argparse.ArgumentParser:
    # no prefix matching: `--token` must not silently become `--token-env`
    parser = argparse.ArgumentParser(prog="cachesmell", description="Detect cache smells in GitLab CI workflows.",
                                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", allow_abbrev=False, help="analyze one workflow file")
    p.add_argument("file", type=Path)
    p.add_argument("--repo-root", type=Path, help="repository root for local includes (default: the file's directory)")
    p.add_argument("--group", type=_group_flag, nargs="?", const="true", default=None,
                   help="whether the project lives in a group namespace; auto reads metadata.json")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--fail-on-findings", action="store_true", help="exit 1 when any finding is reported")
    p.add_argument("--dot", type=Path, help="write the job graph in Graphviz format")
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")
    p.add_argument("--repo-id", help="identifier used in the report (default: repository directory name)")

    p = sub.add_parser("corpus", allow_abbrev=False, help="analyze a directory of repositories and write frequency statistics")
    p.add_argument("dir", type=Path)
    p.add_argument("--metadata", type=Path, help="JSON file mapping repo_id to {\"is_group\": bool}")
    p.add_argument("--out", type=Path)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    p.add_argument("--reports", type=Path, help="also write one JSON report per repository into this directory")

    p = sub.add_parser("eval", allow_abbrev=False, help="evaluate detectors against labeled repositories")
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--metadata", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("fetch", allow_abbrev=False, help="download a project's CI file and namespace kind")
    p.add_argument("--project", required=True, help="numeric id or namespace/path")
    p.add_argument("--endpoint", default=DEFAULT_ENDPOINT)
    p.add_argument("--token-env", default=DEFAULT_TOKEN_ENV,
                   help=f"environment variable holding an access token (default: {DEFAULT_TOKEN_ENV})")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--replay", type=Path, help="serve HTTP from this cassette instead of the network")
    p.add_argument("--record", type=Path, help="record HTTP exchanges into this cassette")
    return parser


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")


def _error(message) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_ERROR


# ---------------------------------------------------------------------------


def run_analyze(args) -> int:
    file: Path = args.file
    if not file.is_file():
        return _error(f"{file}: no such file")
    root = args.repo_root or file.parent
    is_group = None
    if args.group == "true":
        is_group = True
    elif args.group == "false":
        is_group = False
    elif args.group == "auto":
        meta = read_metadata(root)
        if meta is None or not isinstance(meta.get("is_group"), bool):
            return _error(f"--group auto needs {root / 'metadata.json'} with an is_group field (see `fetch`)")
        is_group = meta["is_group"]
    try:
        analysis = analyze_file(file, root, is_group)
        report = report_from_analysis(args.repo_id or Path(root).resolve().name, analysis)
    except AnalysisError as exc:
        return _error(exc)
    except OSError as exc:
        return _error(exc)
    if args.dot is not None:
        _write(analysis.graph.to_dot(), args.dot)
    _write(to_json(report) if args.format == "json" else to_text(report), args.out)
    return exit_code(bool(report.findings), False, args.fail_on_findings)


def find_workflow(repo_dir: Path) -> Path | None:
    for name in WORKFLOW_NAMES:
        if (repo_dir / name).is_file():
            return repo_dir / name
    return None


def _load_group_map(path: Path | None) -> dict:
    if path is None:
        return {}
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return {str(k): (v.get("is_group") if isinstance(v, dict) else None) for k, v in data.items()}


def analyze_repo(job: tuple) -> tuple:
    """Worker: (repo_id, repo_dir, is_group, reports_dir) -> (repo_id, RepoSummary | None, error | None).

    Only the summary travels back to the parent; the full report is written
    to ``reports_dir`` here when one is given.
    """
    repo_id, repo_dir, is_group, reports_dir = job
    repo_dir = Path(repo_dir)
    workflow = find_workflow(repo_dir)
    if workflow is None:
        return repo_id, None, "no workflow file"
    try:
        report = report_from_analysis(repo_id, analyze_file(workflow, repo_dir, is_group))
    except (AnalysisError, OSError, RecursionError) as exc:
        return repo_id, None, f"{type(exc).__name__}: {exc}"
    if reports_dir is not None:
        (Path(reports_dir) / f"{repo_id}.json").write_text(to_json(report), encoding="utf-8")
    return repo_id, report.summary(), None


def available_cpus() -> int:
    try:
        return len(os.sched_getaffinity(0)) or 1
    except AttributeError:  # not on Linux
        return os.cpu_count() or 1


def effective_workers(requested: int | None) -> int:
    """Worker processes to start: the request capped at the CPUs this process may use.

    Analysis is CPU-bound, so processes beyond the available CPUs only add
    scheduling and memory overhead.
    """
    cpus = available_cpus()
    if requested is None:
        return cpus
    if requested > cpus:
        log.info("using %d worker(s) instead of %d: only %d CPU(s) available", cpus, requested, cpus)
    return max(1, min(requested, cpus))


def analyze_corpus(corpus: Path, group_map: dict, workers: int | None, only=None,
                   reports_dir: Path | None = None) -> tuple[list, list]:
    """Analyze every repository directory; returns (summaries, skipped) sorted by repo id."""
    if reports_dir is not None:
        reports_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for repo_dir in sorted(p for p in corpus.iterdir() if p.is_dir()):
        repo_id = repo_dir.name
        if only is not None and repo_id not in only:
            continue
        is_group = group_map.get(repo_id)
        if is_group is None:
            meta = read_metadata(repo_dir)
            if meta is not None and isinstance(meta.get("is_group"), bool):
                is_group = meta["is_group"]
        jobs.append((repo_id, str(repo_dir), is_group, None if reports_dir is None else str(reports_dir)))
    workers = effective_workers(workers)
    # keep collections (and, in forked workers, copy-on-write) away from the existing heap
    gc.freeze()
    try:
        if workers <= 1 or len(jobs) <= 1:
            results = [analyze_repo(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(analyze_repo, jobs, chunksize=max(1, len(jobs) // (workers * 4))))
    finally:
        gc.unfreeze()
    summaries: list[RepoSummary] = []
    skipped = []
    for repo_id, summary, error in results:
        if summary is None:
            log.warning("skipping %s: %s", repo_id, error)
            skipped.append((repo_id, error))
        else:
            summaries.append(summary)
    return summaries, skipped


def run_corpus(args) -> int:
    if not args.dir.is_dir():
        return _error(f"{args.dir}: not a directory")
    try:
        group_map = _load_group_map(args.metadata)
    except (OSError, ValueError) as exc:
        return _error(exc)
    summaries, skipped = analyze_corpus(args.dir, group_map, args.jobs, reports_dir=args.reports)
    try:
        stats = aggregate(summaries, skipped)
    except AnalysisError as exc:
        return _error(exc)
    _write(json.dumps(stats.to_dict(), indent=2) + "\n", args.out)
    return EXIT_CLEAN


def run_eval(args) -> int:
    try:
        labels = load_labels(args.labels)
        group_map = _load_group_map(args.metadata)
    except (AnalysisError, OSError, ValueError) as exc:
        return _error(exc)
    if not args.corpus.is_dir():
        return _error(f"{args.corpus}: not a directory")
    repos = {repo for repo, _ in labels}
    reports, skipped = analyze_corpus(args.corpus, group_map, args.jobs, only=repos)
    for repo_id, reason in skipped:
        print(f"warning: {repo_id} not analyzed: {reason}", file=sys.stderr)
    try:
        result = evaluate(predictions_from_reports(reports), labels)
    except AnalysisError as exc:
        return _error(exc)
    sys.stderr.write(result.table())
    _write(json.dumps(result.to_dict(), indent=2) + "\n", args.out)
    return EXIT_CLEAN


def run_fetch(args) -> int:
    token = os.environ.get(args.token_env) or None
    transport = ReplayTransport(args.replay) if args.replay else RequestsTransport()
    if args.record:
        transport = RecordingTransport(transport, args.record)
    try:
        fetched = fetch_remote(args.project, args.endpoint, token, transport)
    except AnalysisError as exc:
        return _error(exc)
    finally:
        if args.record:
            transport.save()
    repo_dir = save_fetched(fetched, args.out)
    print(f"{fetched.project}: saved to {repo_dir} (group namespace: {str(fetched.is_group).lower()})")
    return EXIT_CLEAN


COMMANDS = {"analyze": run_analyze, "corpus": run_corpus, "eval": run_eval, "fetch": run_fetch}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
