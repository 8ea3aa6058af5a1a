"""Tracing architectures: developer-driven instrumentation, platform hooks,
samplers, an in-memory collector and Zipkin v2 export."""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .core import (
    IdGenerator,
    PLATFORM_KINDS,
    Span,
    SpanKind,
    Trace,
    TraceContext,
    child_context,
)

TRACE_CONTEXT_ENV = "TRACE_CONTEXT"
DEFAULT_EVENT_FLAG_HEADER = "X-Sample-Trace"
ZIPKIN_EPOCH_MS = 1_600_000_000_000

DEV_COMPONENT = "dev-tracer"
AUTO_COMPONENT = "auto-instrumentation"


class Mode(str, enum.Enum):
    NONE = "none"
    DEVELOPER_DRIVEN = "developer_driven"
    PLATFORM_SUPPORTED = "platform_supported"
    PLATFORM_SUPPORTED_AUTO = "platform_supported_auto"

    @property
    def platform(self) -> bool:
        return self in (Mode.PLATFORM_SUPPORTED, Mode.PLATFORM_SUPPORTED_AUTO)


class SamplerKind(str, enum.Enum):
    EVENT_BASED = "event_based"
    PROBABILITY_BASED = "probability_based"


@dataclass(frozen=True)
class SamplerConfig:
    kind: SamplerKind = SamplerKind.PROBABILITY_BASED
    probability: float = 1.0
    event_flag_header: str = DEFAULT_EVENT_FLAG_HEADER

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"sampling probability {self.probability} outside [0, 1]")


@dataclass(frozen=True)
class TracingMode:
    mode: Mode = Mode.NONE
    sampling: SamplerConfig = field(default_factory=SamplerConfig)
    report_overhead_ms: int = 5
    # rare large flush delays; off unless configured
    tail_probability: float = 0.0
    tail_overhead_ms: int = 60_000
    platform_hook_overhead_ms: int = 2

    @property
    def auto_instrument(self) -> bool:
        return self.mode is Mode.PLATFORM_SUPPORTED_AUTO


def sample_decision(config: SamplerConfig, request_metadata: Mapping[str, str], rng: random.Random) -> bool:
    if config.kind is SamplerKind.EVENT_BASED:
        return config.event_flag_header in request_metadata
    # always draw so the stream position does not depend on the probability
    return rng.random() < config.probability


class Collector:
    """In-memory span sink standing in for a Zipkin backend."""

    def __init__(self, available: bool = True):
        self.available = available
        self.traces: dict[str, list[Span]] = {}
        self.dropped_batches = 0
        self.delivered_batches = 0
        # simulator bookkeeping, not part of any exported span
        self.request_of_span: dict[str, str] = {}
        self.root_of_request: dict[str, str] = {}
        self._by_request: dict[str, list[Span]] = {}

    def span_count(self) -> int:
        return sum(len(v) for v in self.traces.values())

    def trace(self, trace_id: str) -> Trace:
        return Trace(trace_id, tuple(self.traces[trace_id]))

    def all_traces(self) -> list[Trace]:
        return [Trace(tid, tuple(spans)) for tid, spans in self.traces.items()]

    def trace_for_request(self, request_id: str) -> Optional[Trace]:
        tid = self.root_of_request.get(request_id)
        return self.trace(tid) if tid in self.traces else None

    def spans_for_request(self, request_id: str) -> list[Span]:
        return list(self._by_request.get(request_id, ()))


def report_spans(collector: Collector, batch: list[Span], request_id: Optional[str] = None) -> bool:
    """Ship a batch. Returns False when the collector dropped it."""
    if not batch:
        raise ValueError("empty span batch")
    if not collector.available:
        collector.dropped_batches += 1
        return False
    collector.delivered_batches += 1
    for span in batch:
        collector.traces.setdefault(span.trace_id, []).append(span)
        if request_id is not None:
            collector.request_of_span[span.span_id] = request_id
            collector._by_request.setdefault(request_id, []).append(span)
            if span.parent_span_id is None and span.tags.get("request.id") == request_id:
                collector.root_of_request[request_id] = span.trace_id
    return True


def inject_context(env: Mapping[str, str], context: Optional[TraceContext]) -> dict[str, str]:
    out = dict(env)
    if context is not None and context.sampled:
        out[TRACE_CONTEXT_ENV] = f"{context.trace_id}-{context.span_id}-01"
    return out


def extract_context(env: Mapping[str, str]) -> Optional[TraceContext]:
    raw = env.get(TRACE_CONTEXT_ENV)
    if not raw:
        return None
    trace_id, span_id, flags = raw.split("-")
    return TraceContext(trace_id, span_id, flags == "01")


@dataclass
class OpenSpan:
    context: TraceContext
    parent_span_id: Optional[str]
    name: str
    kind: SpanKind
    start: int
    component: str
    tags: dict[str, str] = field(default_factory=dict)

    def finish(self, end: int, **tags: str) -> Span:
        self.tags.update(tags)
        return Span(self.context, self.parent_span_id, self.name, self.kind, self.start, end,
                    self.component, dict(self.tags))


class FunctionTracer:
    """Instrumentation living inside a function body.

    Spans are buffered and shipped in one flush when the function returns.
    The wrapper survives exceptions raised by the body, and it is aware of
    the activation deadline, so open spans are flushed with a timeout tag
    right before the platform kills the activation. A killed container
    takes every unflushed span with it.
    """

    def __init__(self, function: str, parent: TraceContext, ids: IdGenerator, activation_id: str,
                 root_tags: Optional[Mapping[str, str]] = None):
        self.function = function
        self.ids = ids
        self.activation_id = activation_id
        self.open_spans: list[OpenSpan] = []
        self.finished: list[Span] = []
        self.flushes = 0
        self._parent = parent
        self._root_tags = dict(root_tags or {})
        self.handler: Optional[OpenSpan] = None

    @property
    def sampled(self) -> bool:
        return self._parent.sampled

    def start_handler(self, now: int, is_root: bool) -> OpenSpan:
        ctx = self._parent if is_root else child_context(self._parent, self.ids)
        parent_id = None if is_root else self._parent.span_id
        tags = {"faas.function": self.function, "faas.activation": self.activation_id}
        if is_root:
            tags.update(self._root_tags)
        self.handler = self._open(ctx, parent_id, self.function, SpanKind.FUNCTION_INTERNAL, now,
                                  DEV_COMPONENT, tags)
        return self.handler

    def instrument_call(self, name: str, now: int, target: str, component: str = DEV_COMPONENT,
                        **tags: str) -> OpenSpan:
        parent = self.handler
        ctx = child_context(parent.context, self.ids)
        base = {"faas.function": self.function, "faas.activation": self.activation_id,
                "call.target": target}
        base.update(tags)
        return self._open(ctx, parent.context.span_id, name, SpanKind.EXTERNAL_CALL, now,
                          component, base)

    def _open(self, ctx, parent_id, name, kind, now, component, tags) -> OpenSpan:
        span = OpenSpan(ctx, parent_id, name, kind, now, component, tags)
        self.open_spans.append(span)
        return span

    def close(self, span: OpenSpan, now: int, **tags: str) -> Span:
        self.open_spans.remove(span)
        done = span.finish(now, **tags)
        self.finished.append(done)
        return done

    def fail_open_spans(self, now: int, message: str) -> None:
        """Close every open span as failed by an uncaught exception."""
        for span in reversed(list(self.open_spans)):
            self.close(span, now, **{"error": "true", "error.message": message})

    def deadline_flush(self, now: int) -> None:
        for span in reversed(list(self.open_spans)):
            self.close(span, now, **{"error": "true", "timeout": "true",
                                     "error.message": "deadline exceeded", "flush": "deadline"})

    def drain(self) -> list[Span]:
        batch, self.finished = self.finished, []
        if batch:
            self.flushes += 1
        return batch


class PlatformTracer:
    """Spans emitted by the gateway, controller and invoker."""

    def __init__(self, ids: IdGenerator):
        self.ids = ids

    def open(self, event: str, parent: TraceContext, start: int, function: str, **tags: str) -> OpenSpan:
        kind, component = _HOOKS[event]
        base = {"faas.function": function}
        base.update(tags)
        return OpenSpan(child_context(parent, self.ids), parent.span_id, f"{kind.value} {function}",
                        kind, start, component, base)

    def platform_hook(self, event: str, parent: TraceContext, start: int, end: int, function: str,
                      **tags: str) -> Span:
        return self.open(event, parent, start, function, **tags).finish(end)


_HOOKS = {
    "gateway_received": (SpanKind.GATEWAY, "gateway"),
    "controller_scheduled": (SpanKind.CONTROLLER, "controller"),
    "invoker_activation": (SpanKind.INVOKER, "invoker"),
    "invoker_init": (SpanKind.INIT, "invoker"),
    "invoker_run": (SpanKind.INVOCATION, "invoker"),
}


def zipkin_span(span: Span) -> dict:
    doc = {
        "traceId": span.trace_id,
        "id": span.span_id,
        "name": span.name,
        "timestamp": (ZIPKIN_EPOCH_MS + span.start) * 1000,
        "duration": span.duration * 1000,
        "localEndpoint": {"serviceName": span.tags.get("faas.function", span.component)
                          if span.kind not in PLATFORM_KINDS else span.component},
        "tags": {str(k): str(v) for k, v in sorted(span.tags.items())},
    }
    if span.parent_span_id is not None:
        doc["parentId"] = span.parent_span_id
    doc["tags"]["sim.kind"] = span.kind.value
    doc["tags"]["sim.component"] = span.component
    return doc


def export_zipkin_v2(collector: Collector) -> bytes:
    spans = [s for spans in collector.traces.values() for s in spans]
    spans.sort(key=lambda s: (s.start, s.trace_id, s.span_id))
    docs = [zipkin_span(s) for s in spans]
    return json.dumps(docs, sort_keys=True, separators=(",", ":")).encode()

