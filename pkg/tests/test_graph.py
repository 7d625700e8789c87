import pytest

from cachesmell.errors import CyclicNeeds
from cachesmell.frontend import load_text, load_workflow
from cachesmell.graph import NEEDS, STAGE_ORDER, build_graph
from cachesmell.resolver import resolve


def graph_of(text):
    return build_graph(resolve(load_text(text)))


def test_listing1_graph(fixtures):
    graph = build_graph(resolve(load_workflow(fixtures / "listing1.yml")))
    assert set(graph.upstream("deploy_app")) == {"build_app", "unit_testing", "integration_testing"}
    assert graph.upstream("unit_testing") == ["build_app"]
    assert set(graph.waits_for.values()) == {STAGE_ORDER}


def test_single_job():
    assert graph_of("job:\n  script: x\n").waits_for == {}


def test_same_stage_needs():
    graph = graph_of("a:\n  stage: test\n  script: x\nb:\n  stage: test\n  script: x\n  needs: [a]\n")
    assert graph.waits_for == {("b", "a"): NEEDS}


def test_empty_needs_removes_only_own_edges():
    base = "stages: [s1, s2]\na:\n  stage: s1\n  script: x\nb:\n  stage: s2\n  script: x\nc:\n  stage: s2\n  script: x\n"
    before = graph_of(base).pairs()
    after = graph_of(base + "  needs: []\n").pairs()
    assert before - after == {("c", "a")}
    assert after <= before


def test_dependencies_add_no_edges():
    graph = graph_of("stages: [s1, s2]\na:\n  stage: s1\n  script: x\nb:\n  stage: s1\n  script: x\n  dependencies: []\n")
    assert graph.waits_for == {}


def test_pre_and_post_order():
    graph = graph_of("p:\n  stage: .pre\n  script: x\nj:\n  script: x\nz:\n  stage: .post\n  script: x\n")
    assert graph.pairs() == {("j", "p"), ("z", "p"), ("z", "j")}


def test_needs_cycle():
    with pytest.raises(CyclicNeeds, match="a -> b -> a|b -> a -> b"):
        graph_of("a:\n  script: x\n  needs: [b]\nb:\n  script: x\n  needs: [a]\n")


def test_self_need():
    with pytest.raises(CyclicNeeds):
        graph_of("a:\n  script: x\n  needs: [a]\n")


def test_needs_on_later_stage_dropped():
    graph = graph_of("stages: [s1, s2]\na:\n  stage: s1\n  script: x\n  needs: [b]\nb:\n  stage: s2\n  script: x\n  needs: []\n")
    assert graph.waits_for == {}
    assert graph.warnings


def test_needs_on_matrix_job_covers_all_instances():
    graph = graph_of(
        "stages: [s1, s2]\nm:\n  stage: s1\n  script: x\n  parallel:\n    matrix:\n      - V: [1, 2]\n"
        "d:\n  stage: s2\n  script: x\n  needs: [m]\n"
    )
    assert graph.pairs() == {("d", "m [V=1]"), ("d", "m [V=2]")}


def test_optional_needs_tracked():
    graph = graph_of("a:\n  script: x\nb:\n  script: x\n  needs:\n    - job: a\n      optional: true\n")
    assert graph.optional_edges == {("b", "a")}


def test_dot_output(fixtures):
    dot = build_graph(resolve(load_workflow(fixtures / "listing1.yml"))).to_dot()
    assert dot.startswith("digraph pipeline {")
    assert '"build_app" -> "unit_testing" [style=dashed, label="stage-order"];' in dot
