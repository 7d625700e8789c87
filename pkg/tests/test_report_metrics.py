import json
import math
import random

import pytest

from cachesmell.analysis import analyze_file, analyze_text
from cachesmell.detectors import SMELLS, FeatureUsage, Finding, RepoContext
from cachesmell.errors import EmptyCorpus, MalformedLabels, MissingPrediction, ZeroJobs
from cachesmell.frontend import SourceLocation, load_text
from cachesmell.metrics import DetectorScore, aggregate, evaluate, load_labels, predictions_from_reports
from cachesmell.report import NOT_APPLICABLE, AnalysisReport, make_report, report_dict, report_from_analysis, to_json, to_text
from cachesmell.resolver import resolve


def report_for(text, repo="r", is_group=None):
    return report_from_analysis(repo, analyze_text(text, is_group))


def test_listing1_ratios(fixtures):
    report = report_from_analysis("l1", analyze_file(fixtures / "listing1.yml", is_group=True))
    assert report.job_count == 4
    assert report.smelly_job_ratio["SM9"] == 1.0
    assert report.smelly_job_ratio["SM10"] == 0.25
    assert report.smelly_job_ratio["SM1"] == 0.5
    assert report.applicability["SM3"] == NOT_APPLICABLE
    assert report.smelly_job_ratio["SM3"] is None


def test_zero_jobs():
    model = resolve(load_text(".hidden:\n  script: x\n"))
    with pytest.raises(ZeroJobs):
        make_report("r", [], model, FeatureUsage(), RepoContext())


def test_non_group_sm9_not_applicable():
    report = report_for("job:\n  image: a:1\n  script: x\n", is_group=False)
    assert report.applicability["SM9"] == NOT_APPLICABLE
    assert report.smelly_job_ratio["SM9"] is None


def test_sm3_applicable_with_python_installs():
    report = report_for("job:\n  script: pip install x\n")
    assert report.applicability["SM3"] == "applicable"
    assert report.smelly_job_ratio["SM3"] == 1.0


def test_matrix_ratio_counts_concrete_jobs():
    text = (
        "m:\n  script: x\n  parallel:\n    matrix:\n      - V: ['1', '2', '3']\n  artifacts: {paths: [a]}\n"
        "other:\n  script: y\n"
    )
    report = report_for(text)
    assert report.job_count == 2
    assert report.smelly_job_ratio["SM1"] == 0.5


def test_json_shape_and_stability(fixtures):
    report = report_from_analysis("l1", analyze_file(fixtures / "listing1.yml", is_group=True))
    data = json.loads(to_json(report))
    assert list(data) == ["repo_id", "job_count", "confidence", "findings", "applicability", "ratios", "features",
                          "warnings"]
    assert list(data["findings"][0]) == ["smell", "jobs", "file", "line", "yaml_path", "evidence", "confidence"]
    assert data["findings"][0]["yaml_path"] == ["build_app", "artifacts"]
    assert to_json(report) == to_json(report_from_analysis("l1", analyze_file(fixtures / "listing1.yml", is_group=True)))


def test_text_format(fixtures):
    report = report_from_analysis("l1", analyze_file(fixtures / "listing1.yml", is_group=True))
    first = to_text(report).splitlines()[0]
    assert first.startswith("SM1  build_app  listing1.yml:5  ")


def test_notices_carried_as_warnings():
    report = report_for("job:\n  image: $NOPE\n  script: x\n", is_group=True)
    assert report.confidence == "reduced"
    assert any("[warning] SM9 job" in w for w in report_dict(report)["warnings"])


def _report(repo, smells, features=FeatureUsage(), group=True, jobs=("j",)):
    loc = SourceLocation("f.yml", 1, ("j",))
    findings = tuple(Finding(s, (jobs[0],), loc, "e") for s in smells)
    applicability = {s: "applicable" for s in SMELLS}
    if not group:
        applicability["SM9"] = NOT_APPLICABLE
    ratios = {s: (None if applicability[s] == NOT_APPLICABLE else (1.0 if s in smells else 0.0)) for s in SMELLS}
    return AnalysisReport(repo, findings, applicability, len(jobs), ratios, features)


def test_aggregate_two_reports():
    stats = aggregate([_report("a", ["SM1"]), _report("b", [])])
    assert stats.per_smell["SM1"].percentage == 0.5
    assert stats.smell_free_fraction == 0.5
    assert stats.median_smells_per_repo == 0.5


def test_aggregate_all_clean():
    stats = aggregate([_report("a", []), _report("b", [])])
    assert all(f.percentage == 0 for f in stats.per_smell.values())
    assert stats.smell_free_fraction == 1.0


def test_aggregate_property_matrix():
    stats = aggregate([_report("a", ["SM1"])])
    assert stats.per_property == {"speed": 0, "efficiency": 1, "reliability": 1}
    stats = aggregate([_report("a", ["SM7"])])
    assert stats.per_property == {"speed": 1, "efficiency": 1, "reliability": 0}


def test_aggregate_applicability_and_features():
    stats = aggregate([
        _report("a", ["SM9"], FeatureUsage(True, False, False)),
        _report("b", [], group=False),
    ])
    assert stats.per_smell["SM9"].applicable_repo_count == 1
    assert stats.per_smell["SM9"].percentage == 1.0
    assert stats.feature_usage["uses_fallback_cache"] == 0.5


def test_aggregate_permutation_invariant():
    rng = random.Random(4)
    reports = [_report(f"r{i}", rng.sample(SMELLS, rng.randint(0, 4))) for i in range(20)]
    shuffled = reports[:]
    rng.shuffle(shuffled)
    assert aggregate(reports).to_dict() == aggregate(shuffled).to_dict()


def test_aggregate_empty():
    with pytest.raises(EmptyCorpus):
        aggregate([])


def _pairs(tp, tn, fp, fn, smell="SM1"):
    preds, labels = {}, {}
    for kind, count in (("tp", tp), ("tn", tn), ("fp", fp), ("fn", fn)):
        for i in range(count):
            key = (f"{kind}{i}", smell)
            preds[key] = kind in ("tp", "fp")
            labels[key] = kind in ("tp", "fn")
    return preds, labels


def test_evaluate_perfect():
    preds, labels = _pairs(30, 20, 0, 0)
    assert evaluate(preds, labels).aggregate.f1 == 1.0


def test_evaluate_layers_row():
    preds, labels = _pairs(8, 40, 0, 2, "SM10")
    score = evaluate(preds, labels).per_smell["SM10"]
    assert math.isclose(score.f1, 16 / 18)
    assert round(score.f1, 2) == 0.89


def test_evaluate_total_row():
    assert math.isclose(DetectorScore(221, 123, 4, 2).f1, 442 / 448)


def test_undefined_metrics_are_none():
    score = DetectorScore(0, 10, 0, 0)
    assert score.precision is None and score.recall is None and score.f1 is None
    assert DetectorScore(0, 0, 3, 0).recall is None and DetectorScore(0, 0, 3, 0).precision == 0.0


def test_f1_is_harmonic_mean():
    rng = random.Random(1)
    for _ in range(200):
        score = DetectorScore(*(rng.randint(0, 20) for _ in range(4)))
        if score.precision and score.recall:
            assert math.isclose(score.f1, 2 * score.precision * score.recall / (score.precision + score.recall))


def test_missing_prediction():
    with pytest.raises(MissingPrediction):
        evaluate({}, {("r", "SM1"): True})


def test_predictions_from_reports():
    preds = predictions_from_reports([_report("a", ["SM1"])])
    assert preds[("a", "SM1")] is True and preds[("a", "SM9")] is False
    assert len(preds) == len(SMELLS)


def test_load_labels(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("repo_id,smell_id,label\nr1,SM1,1\nr1,SM10,0\n\n")
    assert load_labels(path) == {("r1", "SM1"): True, ("r1", "SM10"): False}


@pytest.mark.parametrize(
    "body",
    [
        "repo,smell,label\nr,SM1,1\n",
        "repo_id,smell_id,label\nr,SM5,1\n",
        "repo_id,smell_id,label\nr,SM1,yes\n",
        "repo_id,smell_id,label\nr,SM1,1\nr,SM1,0\n",
        "repo_id,smell_id,label\nr,SM1\n",
        "",
    ],
)
def test_malformed_labels(tmp_path, body):
    path = tmp_path / "labels.csv"
    path.write_text(body)
    with pytest.raises(MalformedLabels):
        load_labels(path)


def test_summary_aggregates_like_full_report(fixtures):
    reports = [report_from_analysis("l1", analyze_file(fixtures / "listing1.yml", is_group=True)),
               report_for("job:\n  script: x\n", "clean")]
    summaries = [r.summary() for r in reports]
    assert summaries[0].smells_present() == reports[0].smells_present()
    assert all(summaries[0].has_smell(s) == reports[0].has_smell(s) for s in SMELLS)
    assert aggregate(summaries).to_dict() == aggregate(reports).to_dict()
    assert predictions_from_reports(summaries) == predictions_from_reports(reports)
