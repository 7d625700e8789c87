import pytest

from cachesmell.errors import IncludeCycle, MalformedYaml, NotAMapping
from cachesmell.frontend import Mapping, Scalar, Sequence, SourceLocation, load_text, load_workflow, parse_text


def _leaves(node):
    if isinstance(node, Scalar):
        yield node
    elif isinstance(node, Sequence):
        for item in node:
            yield from _leaves(item)
    else:
        for value in node.values():
            yield from _leaves(value)


def _paths(node):
    yield node.loc.yaml_path
    children = node.items if isinstance(node, Sequence) else (node.values() if isinstance(node, Mapping) else ())
    for child in children:
        yield from _paths(child)


def test_listing1_top_level_keys(fixtures):
    doc = load_workflow(fixtures / "listing1.yml")
    assert list(doc.root.keys()) == ["image", "build_app", "unit_testing", "integration_testing", "deploy_app"]
    assert doc.warnings == ()
    assert not doc.incomplete


def test_empty_file_is_not_a_mapping(write):
    root = write({"a.yml": ""})
    with pytest.raises(NotAMapping):
        load_workflow(root / "a.yml")


def test_list_root_is_not_a_mapping():
    with pytest.raises(NotAMapping):
        parse_text("- a\n- b\n")


def test_syntax_error_has_location():
    with pytest.raises(MalformedYaml, match=r"x.yml:2"):
        parse_text("a: 1\nb: c: d\nz: 2\n", "x.yml")


def test_duplicate_keys_rejected():
    with pytest.raises(MalformedYaml, match="duplicate key 'job'"):
        parse_text("job:\n  script: a\njob:\n  script: b\n")


def test_local_include_union_and_locations(write):
    root = write({
        "a.yml": "include:\n  local: b.yml\ny:\n  script: echo y\n",
        "b.yml": "x:\n  script: echo x\n",
    })
    doc = load_workflow(root / "a.yml", root)
    assert set(doc.root.keys()) == {"x", "y"}
    assert doc.root.get("x").loc.file == "b.yml"
    assert doc.root.get("x").get("script").loc == SourceLocation("b.yml", 2, ("x", "script"))
    assert doc.root.get("y").loc.file == "a.yml"
    assert doc.files == ("a.yml", "b.yml")


def test_including_file_wins_on_collision(write):
    root = write({
        "a.yml": "include:\n  - local: /b.yml\njob:\n  script: from-a\n",
        "b.yml": "job:\n  script: from-b\nother:\n  script: b\n",
    })
    doc = load_workflow(root / "a.yml", root)
    assert doc.root.get("job").get("script").value == "from-a"
    assert "other" in doc.root


def test_include_glob_and_nested(write):
    root = write({
        "a.yml": "include: 'ci/*.yml'\nmain:\n  script: m\n",
        "ci/one.yml": "include:\n  local: ci/deep/two.yaml\none:\n  script: 1\n",
        "ci/deep/two.yaml": "two:\n  script: 2\n",
    })
    doc = load_workflow(root / "a.yml", root)
    assert set(doc.root.keys()) == {"main", "one", "two"}


def test_include_cycle(write):
    root = write({
        "a.yml": "include:\n  local: b.yml\na:\n  script: a\n",
        "b.yml": "include:\n  local: a.yml\nb:\n  script: b\n",
    })
    with pytest.raises(IncludeCycle, match="a.yml -> b.yml -> a.yml"):
        load_workflow(root / "a.yml", root)


def test_include_cap(write, monkeypatch):
    import cachesmell.frontend as frontend

    monkeypatch.setattr(frontend, "MAX_INCLUDED_FILES", 3)
    files = {f"f{i}.yml": f"include:\n  local: f{i + 1}.yml\nj{i}:\n  script: x\n" for i in range(5)}
    root = write(files)
    with pytest.raises(IncludeCycle, match="more than 3"):
        load_workflow(root / "f0.yml", root)


def test_remote_includes_warn_and_mark_incomplete(write):
    root = write({
        "a.yml": (
            "include:\n"
            "  - remote: https://example.com/ci.yml\n"
            "  - template: Auto-DevOps.gitlab-ci.yml\n"
            "  - project: grp/other\n"
            "    file: ci.yml\n"
            "  - https://example.com/x.yml\n"
            "  - local: missing.yml\n"
            "job:\n  script: x\n"
        )
    })
    doc = load_workflow(root / "a.yml", root)
    assert doc.incomplete
    assert len(doc.warnings) == 5
    assert any("remote" in w for w in doc.warnings)
    assert any("template" in w for w in doc.warnings)
    assert any("project" in w for w in doc.warnings)
    assert any("missing.yml not found" in w for w in doc.warnings)
    assert list(doc.root.keys()) == ["job"]


def test_anchor_equivalence():
    anchored = (
        ".defaults: &defaults\n"
        "  image: gradle:8\n"
        "  cache:\n"
        "    key: k\n"
        "    paths: [a]\n"
        "job:\n"
        "  <<: *defaults\n"
        "  script: x\n"
        "lists:\n"
        "  items: &list\n"
        "    - key: z\n"
        "other:\n"
        "  cache: *list\n"
        "  script: y\n"
    )
    expanded = (
        ".defaults:\n"
        "  image: gradle:8\n"
        "  cache:\n"
        "    key: k\n"
        "    paths: [a]\n"
        "job:\n"
        "  image: gradle:8\n"
        "  cache:\n"
        "    key: k\n"
        "    paths: [a]\n"
        "  script: x\n"
        "lists:\n"
        "  items:\n"
        "    - key: z\n"
        "other:\n"
        "  cache:\n"
        "    - key: z\n"
        "  script: y\n"
    )
    assert parse_text(anchored).plain() == parse_text(expanded).plain()


def test_alias_in_sequence_and_explicit_key_wins_over_merge():
    text = (
        "base: &b {a: 1, b: 2}\n"
        "job:\n"
        "  <<: [*b, {b: 3, c: 4}]\n"
        "  a: 9\n"
        "scripts: &s [x, y]\n"
        "use:\n"
        "  script: *s\n"
    )
    root = parse_text(text)
    assert root.get("job").plain() == {"a": 9, "b": 2, "c": 4}
    assert root.get("use").get("script").plain() == ["x", "y"]
    assert root.get("job").get("b").loc.yaml_path == ("job", "b")


def test_scalar_text_and_tags():
    root = parse_text("a: true\nb: 2024-01-01\nc: 1.50\nd: !reference [x, y]\ne: null\n")
    assert root.get("a").text == "true"
    assert root.get("b").text == "2024-01-01"
    assert root.get("c").value == 1.5
    assert root.get("d").tag == "!reference"
    assert root.get("e").text == ""


def test_spec_header_document_skipped():
    root = parse_text("spec:\n  inputs:\n    a: {}\n---\njob:\n  script: x\n")
    assert list(root.keys()) == ["job"]


def test_locations_point_at_real_lines(fixtures):
    for name in ("listing1.yml", "listing2.yml"):
        lines = (fixtures / name).read_text().splitlines()
        doc = load_workflow(fixtures / name)
        for leaf in _leaves(doc.root):
            assert 1 <= leaf.loc.line <= len(lines)
            assert leaf.loc.file == name
            assert str(leaf.value).split("\n")[0].strip()[:10] in lines[leaf.loc.line - 1] or leaf.style in ("|", ">")
        assert all(path != () for path in list(_paths(doc.root))[1:])


def test_block_value_located_at_its_key(fixtures):
    doc = load_workflow(fixtures / "listing1.yml")
    job = doc.root.get("deploy_app")
    assert job.loc.line == 27
    assert job.get("artifacts").loc.line == 29


def test_load_is_deterministic(fixtures):
    assert load_workflow(fixtures / "listing2.yml") == load_workflow(fixtures / "listing2.yml")


def test_load_text_does_not_follow_includes():
    doc = load_text("include: b.yml\njob:\n  script: x\n")
    assert doc.incomplete
    assert "include" not in doc.root


def test_source_location_rejects_line_zero():
    with pytest.raises(ValueError):
        SourceLocation("a", 0)


def test_non_utf8_file(tmp_path):
    path = tmp_path / "a.yml"
    path.write_bytes(b"job:\n  script: \xff\xfe\n")
    with pytest.raises(MalformedYaml, match="UTF-8"):
        load_workflow(path)
