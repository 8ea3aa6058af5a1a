"""Visibility, ambiguity and consistency of fault evidence, and the tables
built from them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Optional, Sequence

from .core import (
    ASYNC_CONTEXT_PROPAGATED,
    CALL_SITE_INSTRUMENTED,
    FAILURE_CONTENT,
    TABLE_SCENARIOS,
    Channel,
    Content,
    EvidenceRecord,
    EvidenceSignature,
    Mechanism,
    ObservabilityVerdict,
    Position,
    Scenario,
    SpanKind,
    Tri,
    signature_of,
)
from .evidence import COLD_START_EXPLANATION, LATE_DELIVERY_EXPLANATION, EvidenceSet
from .faults import GroundTruth

FULL = "full"
RESTRICTED = "restricted"


class CatalogError(KeyError):
    pass


class IncompleteMatrixError(ValueError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__("missing verdict cells: " + ", ".join(self.missing))


def restrict(records: Iterable[EvidenceRecord]) -> list[EvidenceRecord]:
    """The trace evidence that survives without coverage assumptions.

    Spans written by hand around third-party calls are dropped, and spans
    tied to the request only by a context the developer forwarded to an
    async callee become unattributable.
    """
    out = []
    for r in records:
        if CALL_SITE_INSTRUMENTED in r.assumes:
            continue
        if ASYNC_CONTEXT_PROPAGATED in r.assumes and r.linked:
            r = EvidenceRecord(**{**r.__dict__, "linked": False})
        out.append(r)
    return out


def view_of(es: EvidenceSet, channel: Channel, view: str = FULL) -> list[EvidenceRecord]:
    records = es.channel(channel)
    if view == RESTRICTED and Channel(channel) is Channel.TRACE:
        return restrict(records)
    return list(records)


def _attributable(records: Iterable[EvidenceRecord]) -> list[EvidenceRecord]:
    return [r for r in records if r.linked or r.channel is not Channel.TRACE]


def _visible(records: Iterable[EvidenceRecord]) -> bool:
    return any(r.content in FAILURE_CONTENT for r in _attributable(records))


def _require_fault(ground_truth: Optional[GroundTruth]) -> None:
    if ground_truth is not None and ground_truth.injected is None:
        raise ValueError(f"{ground_truth.request_id} is a clean run; visibility needs an injected fault")


def classify_visibility(es: EvidenceSet, channel: Channel, ground_truth: Optional[GroundTruth] = None,
                        view: str = FULL) -> bool:
    _require_fault(ground_truth)
    return _visible(view_of(es, channel, view))


@dataclass
class ScenarioEvidenceCatalog:
    """Golden evidence per (profile, mode), one set per catalog scenario."""

    entries: dict[tuple[str, str], dict[Scenario, EvidenceSet]] = field(default_factory=dict)

    def add(self, profile: str, mode: str, scenario: Scenario, es: EvidenceSet) -> None:
        self.entries.setdefault((str(profile), str(mode)), {})[Scenario(scenario)] = es

    def members(self, profile: str, mode: str) -> list[Scenario]:
        try:
            return sorted(self.entries[(str(profile), str(mode))], key=lambda s: s.value)
        except KeyError:
            raise CatalogError(f"catalog has no entry for profile={profile} mode={mode}") from None

    def signature(self, profile: str, mode: str, channel: Channel, scenario: Scenario,
                  view: str = FULL) -> EvidenceSignature:
        self.members(profile, mode)
        es = self.entries[(str(profile), str(mode))][Scenario(scenario)]
        return signature_of(view_of(es, channel, view), Channel(channel))

    def signatures(self, view: str = FULL) -> dict[tuple, EvidenceSignature]:
        out = {}
        for (profile, mode), sets in sorted(self.entries.items()):
            for scenario in sorted(sets, key=lambda s: s.value):
                for channel in Channel:
                    out[(scenario.value, profile, mode, channel.value)] = self.signature(
                        profile, mode, channel, scenario, view)
        return out


def classify_ambiguity(es: EvidenceSet, channel: Channel, catalog: ScenarioEvidenceCatalog,
                       profile: str, mode: str, view: str = FULL) -> Tri:
    members = catalog.members(profile, mode)
    records = view_of(es, channel, view)
    if not _visible(records):
        return Tri.NOT_APPLICABLE
    mine = signature_of(records, Channel(channel))
    matches = sum(1 for s in members if catalog.signature(profile, mode, channel, s, view) == mine)
    return Tri.FALSE if matches >= 2 else Tri.TRUE


def brute_force_ambiguity(catalog: ScenarioEvidenceCatalog, profile: str, mode: str,
                          channel: Channel, view: str = FULL) -> dict[Scenario, Tri]:
    """Reference answer by comparing every pair of catalog scenarios."""
    members = catalog.members(profile, mode)
    sets = catalog.entries[(str(profile), str(mode))]
    records = {s: view_of(sets[s], channel, view) for s in members}
    out = {}
    for s in members:
        if not any(r.content in FAILURE_CONTENT and (r.linked or r.channel is not Channel.TRACE)
                   for r in records[s]):
            out[s] = Tri.NOT_APPLICABLE
        else:
            out[s] = Tri.TRUE
    for a, b in combinations(members, 2):
        sa = signature_of(records[a], Channel(channel))
        sb = signature_of(records[b], Channel(channel))
        if sa.items == sb.items:
            for s in (a, b):
                if out[s] is not Tri.NOT_APPLICABLE:
                    out[s] = Tri.FALSE
    return out


# -- consistency --------------------------------------------------------------

def _fails(r: EvidenceRecord) -> bool:
    return r.content in FAILURE_CONTENT


def _response_consistent(records, truth: Optional[GroundTruth]) -> bool:
    by = {r.source: r for r in records}
    code, body = by["code"], by["body"]
    agree = _fails(code) == _fails(body)
    reflected = truth is None or truth.injected is None or _fails(body)
    return agree and reflected


def _log_consistent(records) -> bool:
    return len({_fails(r) for r in records}) <= 1


_ERROR_LOCUS = {
    Mechanism.UNCAUGHT_EXCEPTION,
    Mechanism.ASYNC_DOWNSTREAM_BUG,
    Mechanism.INVALID_DEPENDENCY,
    Mechanism.CONTAINER_KILL,
}


def _has_locus(records: list[EvidenceRecord], mechanism: Mechanism, target: str) -> bool:
    on_target = [r for r in records if r.source == target and not r.structural
                 and r.kind != SpanKind.GATEWAY.value]
    if mechanism in _ERROR_LOCUS:
        return any(r.content is Content.ERROR for r in on_target)
    if mechanism is Mechanism.EXTERNAL_API_TIMEOUT:
        # the party that waited on the third-party call; a handler span
        # closed at the deadline only knows that time ran out
        observers = {SpanKind.INVOCATION.value, SpanKind.EXTERNAL_CALL.value}
        return any(r.content is Content.ERROR_TIMEOUT and r.kind in observers for r in on_target)
    if mechanism is Mechanism.COLD_SYNC_TIMEOUT:
        return any(r.message == COLD_START_EXPLANATION for r in on_target)
    if mechanism is Mechanism.SYNC_CALL_DELAY:
        return any(r.message == LATE_DELIVERY_EXPLANATION for r in on_target)
    raise AssertionError(mechanism)


def _trace_consistent(records: list[EvidenceRecord], truth: Optional[GroundTruth]) -> bool:
    if truth is None or truth.injected is None:
        return not any(r.masks_failure for r in records) and not any(_fails(r) for r in records)
    inj = truth.injected
    if any(r.masks_failure for r in records):
        return False
    return _has_locus(records, inj.mechanism, inj.target_function)


@dataclass(frozen=True)
class Consistency:
    consistent: bool
    partial: bool = False

    def __bool__(self) -> bool:
        return self.consistent


def _consistent(records, channel: Channel, truth) -> bool:
    channel = Channel(channel)
    if channel is Channel.RESPONSE:
        return _response_consistent(records, truth)
    if channel is Channel.LOG:
        return _log_consistent(records)
    return _trace_consistent(records, truth)


def classify_consistency(es: EvidenceSet, channel: Channel, ground_truth: Optional[GroundTruth]) -> Consistency:
    full = _consistent(view_of(es, channel, FULL), channel, ground_truth)
    restricted = _consistent(view_of(es, channel, RESTRICTED), channel, ground_truth)
    return Consistency(full, full and not restricted)


def classify(es: EvidenceSet, channel: Channel, ground_truth: GroundTruth,
             catalog: ScenarioEvidenceCatalog, profile: str, mode: str) -> ObservabilityVerdict:
    """Full verdict, with each true field checked again without coverage assumptions."""
    _require_fault(ground_truth)
    partial = set()
    visible = classify_visibility(es, channel)
    if visible and not classify_visibility(es, channel, view=RESTRICTED):
        partial.add("visible")
    unambiguous = classify_ambiguity(es, channel, catalog, profile, mode)
    if unambiguous is Tri.TRUE and classify_ambiguity(es, channel, catalog, profile, mode,
                                                      RESTRICTED) is not Tri.TRUE:
        partial.add("unambiguous")
    consistency = classify_consistency(es, channel, ground_truth)
    if consistency.partial:
        partial.add("consistent")
    return ObservabilityVerdict(visible, unambiguous, consistency.consistent, frozenset(partial))


# -- tables -----------------------------------------------------------------------

_LABEL = {Content.SUCCESS: "success", Content.ERROR: "error", Content.ERROR_TIMEOUT: "error (TO)"}


@dataclass(frozen=True)
class VerdictCell:
    scenario: Scenario
    profile: str
    tracing_mode: str
    channel: Channel
    verdict: ObservabilityVerdict
    # what the channel showed, e.g. code/body or upstream/downstream
    shown: Mapping[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        v = self.verdict
        return {
            "scenario": self.scenario.value,
            "profile": self.profile,
            "tracing_mode": self.tracing_mode,
            "channel": self.channel.value,
            "visible": v.visible,
            "unambiguous": v.unambiguous.value,
            "consistent": v.consistent,
            "partial": v.partial,
            "partial_fields": sorted(v.partial_fields),
            "shown": dict(self.shown),
        }


def shown_values(es: EvidenceSet, channel: Channel) -> dict[str, str]:
    channel = Channel(channel)
    if channel is Channel.RESPONSE:
        by = {r.source: r for r in es.response}
        return {"code": _LABEL[by["code"].content], "body": _LABEL[by["body"].content]}
    if channel is Channel.LOG:
        up = [r for r in es.logs if r.position is Position.UPSTREAM]
        down = [r for r in es.logs if r.position is Position.DOWNSTREAM]
        return {"upstream": _summary(up), "downstream": _summary(down)}
    return {}


def _summary(records: list[EvidenceRecord]) -> str:
    if not records:
        return "n.a."
    for content in (Content.ERROR_TIMEOUT, Content.ERROR):
        if any(r.content is content for r in records):
            return _LABEL[content]
    return "success"


@dataclass(frozen=True)
class TraceColumn:
    title: str
    profile: str
    mode: str


TRACE_COLUMNS = (
    TraceColumn("XRay", "aws_like", "platform_supported_auto"),
    TraceColumn("Dev-driven", "openwhisk_like", "developer_driven"),
    TraceColumn("Platform-supported", "openwhisk_like", "platform_supported"),
)
PROFILES = ("aws_like", "openwhisk_like")
_PROFILE_TITLE = {"aws_like": "AWS", "openwhisk_like": "OWhisk"}


@dataclass
class TableReport:
    markdown: str
    document: dict

    def json(self) -> str:
        return json.dumps(self.document, indent=2, sort_keys=True) + "\n"


def _flag(value: bool, partial: bool = False) -> str:
    text = "true" if value else "false"
    return f"partial-{text}" if partial and value else text


def _tri(value: Tri, partial: bool = False) -> str:
    if value is Tri.NOT_APPLICABLE:
        return "-"
    return _flag(value is Tri.TRUE, partial)


def _better(new: ObservabilityVerdict, old: ObservabilityVerdict, name: str) -> bool:
    rank = {Tri.NOT_APPLICABLE: 0, False: 0, Tri.FALSE: 0, True: 1, Tri.TRUE: 1}
    return rank[getattr(new, name)] > rank[getattr(old, name)]


def render_tables(matrix: Iterable[VerdictCell], profiles: Sequence[str] = PROFILES,
                  trace_columns: Sequence[TraceColumn] = TRACE_COLUMNS,
                  tracing_mode: str = "none", scenarios: Sequence[Scenario] = TABLE_SCENARIOS) -> TableReport:
    """Response, log and tracing tables from a verdict matrix.

    Response and log cells are looked up under `tracing_mode`. Raises
    IncompleteMatrixError naming every cell the tables need but the matrix
    lacks.
    """
    cells = {(c.scenario, c.profile, c.tracing_mode, c.channel): c for c in matrix}
    need = []
    for p in profiles:
        for ch in (Channel.RESPONSE, Channel.LOG):
            need += [(s, p, tracing_mode, ch) for s in scenarios]
    for col in trace_columns:
        need += [(s, col.profile, col.mode, Channel.TRACE) for s in scenarios]
    missing = [f"{s.value}/{p}/{m}/{ch.value}" for s, p, m, ch in need if (s, p, m, ch) not in cells]
    if missing:
        raise IncompleteMatrixError(missing)

    doc: dict = {"response": [], "log": [], "trace": []}
    md = []
    if profiles:
        md += ["## Response channel", "",
               "| Platform | Scenario | Code | Body | Consistent | Unambiguous |",
               "|---|---|---|---|---|---|"]
        for p in profiles:
            for s in scenarios:
                c = cells[(s, p, tracing_mode, Channel.RESPONSE)]
                v = c.verdict
                md.append(f"| {_PROFILE_TITLE.get(p, p)} | {s.value} | {c.shown['code']} | {c.shown['body']} "
                          f"| {_flag(v.consistent)} | {_tri(v.unambiguous)} |")
                doc["response"].append({"profile": p, "scenario": s.value, **c.shown,
                                        "consistent": v.consistent, "unambiguous": v.unambiguous.value})
        md += ["", "## Log channel", "",
               "| Platform | Scenario | Upstream | Downstream | Consistent | Unambiguous |",
               "|---|---|---|---|---|---|"]
        for p in profiles:
            for s in scenarios:
                c = cells[(s, p, tracing_mode, Channel.LOG)]
                v = c.verdict
                prev = cells[(s, p, tracing_mode, Channel.RESPONSE)].verdict
                improved = [n for n in ("consistent", "unambiguous") if _better(v, prev, n)]
                cons = _flag(v.consistent) + (" (improved)" if "consistent" in improved else "")
                amb = _tri(v.unambiguous) + (" (improved)" if "unambiguous" in improved else "")
                md.append(f"| {_PROFILE_TITLE.get(p, p)} | {s.value} | {c.shown['upstream']} "
                          f"| {c.shown['downstream']} | {cons} | {amb} |")
                doc["log"].append({"profile": p, "scenario": s.value, **c.shown,
                                   "consistent": v.consistent, "unambiguous": v.unambiguous.value,
                                   "improved": improved})
    if trace_columns:
        if md:
            md.append("")
        header = " | ".join(col.title for col in trace_columns)
        md += ["## Trace channel (visible / unambiguous / consistent)", "",
               f"| Scenario | {header} |", "|---" * (len(trace_columns) + 1) + "|"]
        for s in scenarios:
            row = []
            for col in trace_columns:
                v = cells[(s, col.profile, col.mode, Channel.TRACE)].verdict
                pf = v.partial_fields
                row.append(" / ".join([_flag(v.visible, "visible" in pf),
                                       _tri(v.unambiguous, "unambiguous" in pf),
                                       _flag(v.consistent, "consistent" in pf)]))
                doc["trace"].append({"column": col.title, "profile": col.profile, "tracing_mode": col.mode,
                                     "scenario": s.value, "visible": v.visible,
                                     "unambiguous": v.unambiguous.value, "consistent": v.consistent,
                                     "partial_fields": sorted(pf)})
            md.append(f"| {s.value} | " + " | ".join(row) + " |")
    md.append("")
    return TableReport("\n".join(md), doc)
