"""Waits-for relation between jobs."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CyclicNeeds
from .model import JobConfig, WorkflowModel

STAGE_ORDER = "stage-order"
NEEDS = "needs"


@dataclass(frozen=True)
class ExecutionGraph:
    nodes: tuple
    # (downstream, upstream) -> edge kind
    waits_for: dict
    stage_index: dict
    optional_edges: frozenset = frozenset()
    warnings: tuple = field(default=(), compare=False)

    def pairs(self) -> set:
        return set(self.waits_for)

    def upstream(self, job: str) -> list[str]:
        return [up for (down, up) in self.waits_for if down == job]

    def waits(self, downstream: str, upstream: str) -> bool:
        return (downstream, upstream) in self.waits_for

    def to_dot(self) -> str:
        lines = ["digraph pipeline {", "  rankdir=LR;"]
        for node in self.nodes:
            lines.append(f'  "{_dot_escape(node)}" [label="{_dot_escape(node)}\\n({self.stage_index[node]})"];')
        for (down, up), kind in sorted(self.waits_for.items()):
            style = "solid" if kind == NEEDS else "dashed"
            lines.append(f'  "{_dot_escape(up)}" -> "{_dot_escape(down)}" [style={style}, label="{kind}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def build_graph(model: WorkflowModel, jobs: list[JobConfig] | None = None) -> ExecutionGraph:
    """Build the waits-for graph over ``jobs`` (matrix-expanded by default).

    A job without ``needs`` waits for every job in an earlier stage; a job
    with ``needs`` waits exactly for the listed jobs (every instance of a
    matrix job). ``dependencies`` adds no edges.

    Raises:
        CyclicNeeds: The ``needs`` relation contains a cycle.
    """
    if jobs is None:
        jobs = model.expanded_jobs()
    stage_index = {job.name: model.stage_index(job.stage) for job in jobs}
    by_base: dict = {}
    for job in jobs:
        by_base.setdefault(job.concrete_name, []).append(job.name)
        if job.name != job.concrete_name:
            by_base.setdefault(job.name, []).append(job.name)

    by_stage: dict = {}
    for job in jobs:
        by_stage.setdefault(stage_index[job.name], []).append(job.name)
    ordered_stages = sorted(by_stage)

    waits: dict = {}
    optional: set = set()
    warnings: list[str] = []
    for job in jobs:
        own = stage_index[job.name]
        if job.needs is None:
            for stage in ordered_stages:
                if stage >= own:
                    break
                for upstream in by_stage[stage]:
                    waits[(job.name, upstream)] = STAGE_ORDER
            continue
        for need in job.needs:
            for upstream in by_base.get(need.job, ()):
                if upstream == job.name:
                    raise CyclicNeeds(f"job {job.name!r} needs itself")
                if stage_index[upstream] > own:
                    warnings.append(
                        f"job {job.name!r} needs {upstream!r} from a later stage; edge ignored"
                    )
                    continue
                waits[(job.name, upstream)] = NEEDS
                if need.optional:
                    optional.add((job.name, upstream))

    _check_acyclic(waits)
    return ExecutionGraph(
        nodes=tuple(job.name for job in jobs),
        waits_for=waits,
        stage_index=stage_index,
        optional_edges=frozenset(optional),
        warnings=tuple(warnings),
    )


def _check_acyclic(waits: dict) -> None:
    adjacency: dict = {}
    for down, up in waits:
        adjacency.setdefault(down, []).append(up)
    white, grey, black = 0, 1, 2
    colour: dict = {}
    for start in adjacency:
        if colour.get(start, white) != white:
            continue
        stack = [(start, iter(adjacency.get(start, ())))]
        colour[start] = grey
        while stack:
            node, children = stack[-1]
            child = next(children, None)
            if child is None:
                colour[node] = black
                stack.pop()
                continue
            state = colour.get(child, white)
            if state == grey:
                path = [n for n, _ in stack]
                cycle = path[path.index(child):] + [child]
                raise CyclicNeeds("needs cycle: " + " -> ".join(cycle))
            if state == white:
                colour[child] = grey
                stack.append((child, iter(adjacency.get(child, ()))))
