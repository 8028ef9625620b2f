from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apkscope.features import VIEW_ORDER, FeatureSubtype
from apkscope.gateway import CallRecord, Gateway, ProviderConfig, UsageStats
from apkscope.memory import MemoryStats
from apkscope.prompts import FunctionDescriptionList, ViewSummary
from apkscope.report import PHASES, RunAccounting, generate_report, parse_summary_table, summarize_run

S = FeatureSubtype


def test_four_phases():
    assert PHASES == ("feature_extraction", "function_description", "view_summary", "embedding_detection")


def test_unknown_phase_rejected():
    with pytest.raises(ValueError):
        RunAccounting().add_call(CallRecord("report", "diagnostic_report", UsageStats()))


def test_summary_table_hand_values():
    acc = RunAccounting(apps=2, memory=MemoryStats(3, 1))
    acc.add_call(CallRecord("function_description", "function_description", UsageStats(100, 10, 0.5, 2)))
    acc.add_time("feature_extraction", 0.25)
    table = summarize_run(acc)
    rows = parse_summary_table(table)
    assert list(rows) == [*PHASES, "total"]
    fd = rows["function_description"]
    assert (fd["calls"], fd["prompt_tokens"], fd["avg_calls"], fd["avg_prompt_tokens"]) == ("2", "100", "1.000000", "50.000000")
    assert rows["feature_extraction"]["calls"] == "0"
    assert rows["total"]["wall_time_s"] == "0.750000"
    assert table.rstrip().splitlines()[-1] == "3\t1\t0.750000"


def test_summary_memory_disabled_and_no_lookups():
    off = RunAccounting(apps=1, memory=MemoryStats(0, 5), memory_enabled=False)
    assert summarize_run(off).rstrip().splitlines()[-1] == "0\t5\t0.000000"
    assert summarize_run(RunAccounting(apps=1)).rstrip().endswith("undefined")
    assert parse_summary_table(summarize_run(RunAccounting()))["total"]["avg_calls"] == "undefined"


_usage = st.builds(UsageStats, st.integers(0, 10_000), st.integers(0, 1000),
                   st.floats(0, 10, allow_nan=False), st.integers(0, 5))
_records = st.lists(st.tuples(st.sampled_from(PHASES), _usage), max_size=40)


@settings(max_examples=100, deadline=None)
@given(records=_records, apps=st.integers(1, 50))
def test_accounting_conservation(records, apps):
    acc = RunAccounting(apps=apps)
    for phase, u in records:
        acc.add_call(CallRecord(phase, "x", u))
    total = sum((u for _, u in records), UsageStats())
    assert acc.total.call_count == total.call_count
    assert acc.total.prompt_tokens == total.prompt_tokens
    assert acc.total.response_tokens == total.response_tokens
    assert acc.total.wall_time == pytest.approx(total.wall_time)
    rows = parse_summary_table(summarize_run(acc))
    assert int(rows["total"]["calls"]) == sum(int(rows[p]["calls"]) for p in PHASES)
    assert int(rows["total"]["prompt_tokens"]) == total.prompt_tokens


def test_accounting_json_and_merge(tmp_path):
    a = RunAccounting(apps=3, memory=MemoryStats(1, 2))
    a.add_call(CallRecord("view_summary", "view_summary", UsageStats(5, 6, 0.1, 1)))
    a.save(tmp_path / "a.json")
    back = RunAccounting.load(tmp_path / "a.json")
    assert back.to_json() == a.to_json()
    b = RunAccounting(apps=3, memory_enabled=False)
    b.add_time("embedding_detection", 1.0)
    m = a.merge(b)
    assert m.apps == 3 and not m.memory_enabled
    assert len(m.calls) == 2
    assert m.total.wall_time == pytest.approx(1.1)


def _lists():
    return [FunctionDescriptionList(s, ((f"{s.value}.x", "does x"),)) for s in S]


def test_generate_report(tmp_path):
    gw = Gateway(ProviderConfig())
    summaries = [ViewSummary(v, f"risk in {v.label}") for v in VIEW_ORDER]
    rep = generate_report("app1", "com.x", "malicious", _lists(), summaries, gw, meta={"seed": 0})
    assert rep.report_text.startswith('Diagnostic Report: Analysis of "com.x" Application')
    assert "Verdict: classified as malicious by the classifier." in rep.report_text
    assert "Summary of Potential Risks:" in rep.report_text
    assert "Detailed Guidance for Further Detection:" in rep.report_text
    assert "risk in API View" in rep.report_text
    assert gw.calls[0].phase == "report"
    path = rep.save(tmp_path)
    prov = json.loads((tmp_path / "app1.provenance.json").read_text())
    assert prov["verdict"] == "malicious"
    assert len(prov["prompt_sha256"]) == 64
    assert prov["meta"] == {"seed": 0}
    assert set(prov["lists"]) == {s.value for s in S}
    assert path.read_text().endswith("\n")
