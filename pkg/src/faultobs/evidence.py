"""Evidence channels of a finished run: response, logs and traces.

Each channel is reduced to EvidenceRecords. Records are what a developer
could read off that channel for one request; classification works on
them alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .core import (
    ASYNC_CONTEXT_PROPAGATED,
    CALL_SITE_INSTRUMENTED,
    Channel,
    Content,
    EvidenceRecord,
    Position,
    Span,
    SpanKind,
    Trace,
)
from .platform import TIMEOUT_LOG_PREFIX, LogStore, ResponseEnvelope
from .tracing import DEV_COMPONENT, Collector

COLD_START_EXPLANATION = "cold start exceeded caller deadline"
LATE_DELIVERY_EXPLANATION = "activation scheduled after caller deadline"


def collect_response(envelope: ResponseEnvelope) -> list[EvidenceRecord]:
    code_content = Content.SUCCESS if envelope.code_ok else Content.ERROR
    body_content = {
        "success": Content.SUCCESS,
        "timeout": Content.ERROR_TIMEOUT,
    }.get(envelope.body.get("status"), Content.ERROR)
    rid = envelope.request_id
    return [
        EvidenceRecord(Channel.RESPONSE, "code", Position.CLIENT, code_content, rid, 0,
                       f"HTTP {envelope.code}"),
        EvidenceRecord(Channel.RESPONSE, "body", Position.CLIENT, body_content, rid, 0,
                       envelope.body.get("message", "")),
    ]


def collect_logs(log_store: LogStore, request_id: str, entry: str) -> list[EvidenceRecord]:
    """One record per function that logged for the request.

    A function that never ran has no lines and so no record, which is how
    a missing downstream shows up.
    """
    out = []
    for fn, lines in sorted(log_store.for_request(request_id).items()):
        content, message, when = Content.SUCCESS, "", lines[-1].time
        for line in lines:
            if line.level != "error":
                continue
            if line.origin == "platform" and line.message.startswith(TIMEOUT_LOG_PREFIX):
                content, message, when = Content.ERROR_TIMEOUT, line.message, line.time
                break
            if content is Content.SUCCESS:
                content, message, when = Content.ERROR, line.message, line.time
        position = Position.UPSTREAM if fn == entry else Position.DOWNSTREAM
        out.append(EvidenceRecord(Channel.LOG, fn, position, content, request_id, when, message))
    return out


def _is_async_boundary(span: Span, parent: Optional[Span]) -> bool:
    if span.kind is SpanKind.CONTROLLER and span.tags.get("faas.trigger") == "async":
        return True
    return parent is not None and parent.tags.get("invoke.mode") == "async"


def sync_ancestors(span: Span, index: dict[str, Span]) -> list[Span]:
    """Ancestors reachable without crossing an asynchronous invocation."""
    chain = []
    cur = span
    while cur.parent_span_id is not None and cur.parent_span_id in index:
        parent = index[cur.parent_span_id]
        if _is_async_boundary(cur, parent):
            break
        chain.append(parent)
        cur = parent
    return chain


def _inherited(span: Span, index: dict[str, Span], memo: dict[str, bool]) -> bool:
    """Whether the path to `span` runs through a developer-forwarded async context."""
    if span.span_id in memo:
        return memo[span.span_id]
    parent = index.get(span.parent_span_id) if span.parent_span_id is not None else None
    if parent is None:
        found = False
    elif (parent.tags.get("invoke.mode") == "async" and parent.component == DEV_COMPONENT
          and span.component == DEV_COMPONENT):
        # function code handed its own context to an async callee; no
        # platform component vouches for the link
        found = True
    else:
        found = _inherited(parent, index, memo)
    memo[span.span_id] = found
    return found


def _assumptions(span: Span, index: dict[str, Span], memo: dict[str, bool]) -> tuple[str, ...]:
    found = []
    if _inherited(span, index, memo):
        found.append(ASYNC_CONTEXT_PROPAGATED)
    if (span.kind is SpanKind.EXTERNAL_CALL and span.component == DEV_COMPONENT
            and span.tags.get("call.target") == "api"):
        found.append(CALL_SITE_INSTRUMENTED)
    return tuple(sorted(found))


def _position(span: Span, entry: Optional[str]) -> Position:
    if span.kind is SpanKind.GATEWAY:
        return Position.PLATFORM
    return Position.UPSTREAM if span.tags.get("faas.function") == entry else Position.DOWNSTREAM


def _source(span: Span) -> str:
    if span.kind is SpanKind.GATEWAY:
        return "gateway"
    return span.tags.get("faas.function", span.component)


def _trace_records(spans: Iterable[Span], request_id: str, entry: Optional[str],
                   linked: bool) -> list[EvidenceRecord]:
    spans = list(spans)
    index = {s.span_id: s for s in spans}
    memo: dict[str, bool] = {}
    any_timeout = any(s.is_timeout for s in spans)
    out = []
    structure = set()

    def rec(span, content, message, **kw):
        return EvidenceRecord(Channel.TRACE, _source(span), _position(span, entry), content, request_id,
                              span.end, message, span.kind.value, linked, _assumptions(span, index, memo), **kw)

    for span in sorted(spans, key=lambda s: (s.start, s.end, s.span_id)):
        structure.add((_position(span, entry), span.kind.value, _assumptions(span, index, memo)))
        failed = span.is_error or span.is_timeout
        explainable = any_timeout and span.kind in (SpanKind.INIT, SpanKind.CONTROLLER)
        if not (failed or explainable):
            continue
        ancestors = sync_ancestors(span, index)
        if failed:
            content = Content.ERROR_TIMEOUT if span.is_timeout else Content.ERROR
            out.append(rec(span, content, span.tags.get("error.message", "")))
            for anc in ancestors:
                if not (anc.is_error or anc.is_timeout):
                    out.append(rec(anc, Content.SUCCESS, f"success over failed {span.name}",
                                   masks_failure=True))
        deadline = next((a for a in ancestors if a.is_timeout), None)
        if deadline is None:
            continue
        if span.kind is SpanKind.INIT and span.start < deadline.end < span.end:
            out.append(rec(span, Content.ERROR_TIMEOUT, COLD_START_EXPLANATION))
        elif span.kind is SpanKind.CONTROLLER and span.start >= deadline.end:
            out.append(rec(span, Content.ERROR_TIMEOUT, LATE_DELIVERY_EXPLANATION))

    for position, kind, assumes in sorted(structure):
        out.append(EvidenceRecord(Channel.TRACE, "structure", position, Content.SUCCESS, request_id, 0,
                                  "", kind, linked, assumes, structural=True))
    return out


def collect_trace_evidence(collector: Collector, request_id: str,
                           entry: Optional[str] = None) -> list[EvidenceRecord]:
    """Records for every span the request produced.

    Spans in the request's rooted trace are linked; anything the request
    emitted into other traces is kept but marked unlinked, since a reader
    could not tie it back to the request.
    """
    spans = collector.spans_for_request(request_id)
    if not spans:
        return []
    rooted: Optional[Trace] = collector.trace_for_request(request_id)
    if entry is None and rooted is not None:
        entry = rooted.root.tags.get("faas.function")
    out = []
    if rooted is not None:
        mine = [s for s in rooted.spans if collector.request_of_span.get(s.span_id) == request_id]
        out += _trace_records(mine, request_id, entry, linked=True)
    rooted_id = rooted.trace_id if rooted is not None else None
    stray: dict[str, list[Span]] = {}
    for s in spans:
        if s.trace_id != rooted_id:
            stray.setdefault(s.trace_id, []).append(s)
    for tid in sorted(stray):
        out += _trace_records(stray[tid], request_id, entry, linked=False)
    return out


@dataclass
class EvidenceSet:
    request_id: str
    response: list[EvidenceRecord] = field(default_factory=list)
    logs: list[EvidenceRecord] = field(default_factory=list)
    traces: list[EvidenceRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.response and len(self.response) != 2:
            raise ValueError("a response carries exactly a code record and a body record")

    def channel(self, channel: Channel) -> list[EvidenceRecord]:
        return {Channel.RESPONSE: self.response, Channel.LOG: self.logs,
                Channel.TRACE: self.traces}[Channel(channel)]

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "response": [r.to_json() for r in self.response],
            "logs": [r.to_json() for r in self.logs],
            "traces": [r.to_json() for r in self.traces],
        }

    @classmethod
    def from_json(cls, doc) -> "EvidenceSet":
        return cls(
            doc["request_id"],
            [EvidenceRecord.from_json(r) for r in doc["response"]],
            [EvidenceRecord.from_json(r) for r in doc["logs"]],
            [EvidenceRecord.from_json(r) for r in doc["traces"]],
        )


def collect_evidence(handle, request_id: str, envelope: ResponseEnvelope) -> EvidenceSet:
    entry = handle.spec.entry
    return EvidenceSet(
        request_id,
        collect_response(envelope),
        collect_logs(handle.logs, request_id, entry),
        collect_trace_evidence(handle.collector, request_id, entry),
    )


def dumps_jsonl(sets: Iterable[EvidenceSet]) -> str:
    return "".join(json.dumps(s.to_json(), sort_keys=True, separators=(",", ":")) + "\n" for s in sets)


def loads_jsonl(text: str) -> list[EvidenceSet]:
    return [EvidenceSet.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]
