import pytest
from hypothesis import given, settings, strategies as st

from faultobs.classify import (
    CatalogError,
    IncompleteMatrixError,
    ScenarioEvidenceCatalog,
    brute_force_ambiguity,
    classify_ambiguity,
    classify_consistency,
    classify_visibility,
    render_tables,
)
from faultobs.core import Channel, Scenario, Tri
from faultobs.scenarios import CATALOG_SCENARIOS, build_catalog, run_scenario


def test_visibility_examples(golden):
    _, _, cells = golden
    assert not cells[("F4", "openwhisk_like", "none", "response")].verdict.visible
    assert cells[("F4", "openwhisk_like", "none", "log")].verdict.visible
    for col in (("aws_like", "platform_supported_auto"), ("openwhisk_like", "developer_driven"),
                ("openwhisk_like", "platform_supported")):
        assert cells[("F1", *col, "trace")].verdict.visible


def test_visibility_refuses_clean_runs():
    run = run_scenario(Scenario.F1, "openwhisk_like", "none")
    run.truth.injected = None
    with pytest.raises(ValueError, match="clean run"):
        classify_visibility(run.evidence, Channel.LOG, run.truth)


def test_ambiguity_examples(golden):
    catalog, _, _ = golden
    f2 = run_scenario(Scenario.F2, "openwhisk_like", "none").evidence
    f1 = run_scenario(Scenario.F1, "openwhisk_like", "none").evidence
    f3 = run_scenario(Scenario.F3, "openwhisk_like", "platform_supported").evidence
    assert classify_ambiguity(f2, Channel.RESPONSE, catalog, "openwhisk_like", "none") is Tri.FALSE
    assert classify_ambiguity(f1, Channel.RESPONSE, catalog, "openwhisk_like", "none") is Tri.TRUE
    assert classify_ambiguity(f3, Channel.TRACE, catalog, "openwhisk_like", "platform_supported") is Tri.TRUE


def test_missing_catalog_configuration():
    run = run_scenario(Scenario.F1, "aws_like", "none")
    with pytest.raises(CatalogError):
        classify_ambiguity(run.evidence, Channel.RESPONSE, ScenarioEvidenceCatalog(), "aws_like", "none")


def test_consistency_examples():
    aws_f1 = run_scenario(Scenario.F1, "aws_like", "none")
    assert not classify_consistency(aws_f1.evidence, Channel.RESPONSE, aws_f1.truth)
    f3 = run_scenario(Scenario.F3, "openwhisk_like", "none")
    assert not classify_consistency(f3.evidence, Channel.LOG, f3.truth)
    dev_f3 = run_scenario(Scenario.F3, "openwhisk_like", "developer_driven")
    assert not classify_consistency(dev_f3.evidence, Channel.TRACE, dev_f3.truth)
    dev_f2 = run_scenario(Scenario.F2, "openwhisk_like", "developer_driven")
    c = classify_consistency(dev_f2.evidence, Channel.TRACE, dev_f2.truth)
    assert c.consistent and c.partial


def test_not_applicable_coupling(golden):
    _, matrix, _ = golden
    for cell in matrix:
        v = cell.verdict
        assert (v.unambiguous is Tri.NOT_APPLICABLE) == (not v.visible)


def _good(v):
    return v.visible and v.consistent and v.unambiguous is Tri.TRUE


@pytest.mark.parametrize("scenario", ["F2", "F3", "F4"])
def test_richer_channels_never_lose_observability(golden, scenario):
    _, _, cells = golden
    chain = [cells[(scenario, "openwhisk_like", "none", "response")].verdict,
             cells[(scenario, "openwhisk_like", "none", "log")].verdict,
             cells[(scenario, "openwhisk_like", "platform_supported", "trace")].verdict]
    scores = [_good(v) for v in chain]
    assert scores == sorted(scores)


def test_ambiguity_matches_pairwise_oracle(golden):
    catalog, _, _ = golden
    for (profile, mode), sets in catalog.entries.items():
        for channel in Channel:
            if channel is Channel.TRACE and mode == "none":
                continue
            oracle = brute_force_ambiguity(catalog, profile, mode, channel)
            for s, es in sets.items():
                assert classify_ambiguity(es, channel, catalog, profile, mode) is oracle[s]


@settings(max_examples=8, deadline=None)
@given(st.sets(st.sampled_from(CATALOG_SCENARIOS), min_size=1),
       st.sampled_from([("openwhisk_like", "none"), ("openwhisk_like", "developer_driven"),
                        ("aws_like", "platform_supported_auto")]))
def test_oracle_agreement_on_sub_catalogs(members, conf):
    catalog, _ = build_catalog([conf], sorted(members, key=lambda s: s.value))
    for channel in Channel:
        if channel is Channel.TRACE and conf[1] == "none":
            continue
        oracle = brute_force_ambiguity(catalog, *conf, channel)
        for s, es in catalog.entries[conf].items():
            assert classify_ambiguity(es, channel, catalog, *conf) is oracle[s]


def test_render_full_tables(golden):
    _, matrix, _ = golden
    report = render_tables(matrix)
    assert len(report.document["response"]) == 8 and len(report.document["trace"]) == 12
    assert "partial-true / partial-true / true" in report.markdown
    assert report.markdown.count("(improved)") == 4


def test_render_empty_matrix_lists_all_scenarios():
    with pytest.raises(IncompleteMatrixError) as err:
        render_tables([], profiles=["openwhisk_like"], trace_columns=[])
    missing = err.value.missing
    assert {m.split("/")[0] for m in missing} == {"F1", "F2", "F3", "F4"}
    assert len(missing) == 8


def test_verdict_json_schema(golden):
    _, matrix, _ = golden
    doc = matrix[0].to_json()
    assert {"scenario", "profile", "tracing_mode", "channel", "visible", "unambiguous",
            "consistent", "partial"} <= set(doc)
