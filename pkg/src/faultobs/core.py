"""Shared value types: trace identity, spans, faults, evidence and verdicts.

Everything here is an immutable value. Time is virtual: integer milliseconds
advanced only by the simulation loop.
"""

from __future__ import annotations

import enum
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

VirtualTime = int  # milliseconds of simulated time


class SpanKind(str, enum.Enum):
    GATEWAY = "gateway"
    CONTROLLER = "controller"
    INVOKER = "invoker"
    INIT = "init"
    INVOCATION = "invocation"
    FUNCTION_INTERNAL = "function_internal"
    EXTERNAL_CALL = "external_call"


PLATFORM_KINDS = frozenset(
    {SpanKind.GATEWAY, SpanKind.CONTROLLER, SpanKind.INVOKER, SpanKind.INIT, SpanKind.INVOCATION}
)


class Scenario(str, enum.Enum):
    F1 = "F1"
    F2 = "F2"
    F3 = "F3"
    F4 = "F4"
    # Reference hypothesis for the ambiguity catalog: a sync call whose
    # delivery is delayed in transit. Never a table row.
    N1 = "N1"


TABLE_SCENARIOS = (Scenario.F1, Scenario.F2, Scenario.F3, Scenario.F4)


class Mechanism(str, enum.Enum):
    UNCAUGHT_EXCEPTION = "uncaught_exception"
    EXTERNAL_API_TIMEOUT = "external_api_timeout"
    COLD_SYNC_TIMEOUT = "cold_sync_timeout"
    ASYNC_DOWNSTREAM_BUG = "async_downstream_bug"
    INVALID_DEPENDENCY = "invalid_dependency"
    CONTAINER_KILL = "container_kill"
    SYNC_CALL_DELAY = "sync_call_delay"


SCENARIO_MECHANISM = {
    Scenario.F1: Mechanism.UNCAUGHT_EXCEPTION,
    Scenario.F2: Mechanism.EXTERNAL_API_TIMEOUT,
    Scenario.F3: Mechanism.COLD_SYNC_TIMEOUT,
    Scenario.F4: Mechanism.ASYNC_DOWNSTREAM_BUG,
    Scenario.N1: Mechanism.SYNC_CALL_DELAY,
}


class Channel(str, enum.Enum):
    RESPONSE = "response"
    LOG = "log"
    TRACE = "trace"


class Position(str, enum.Enum):
    UPSTREAM = "upstream"
    DOWNSTREAM = "downstream"
    PLATFORM = "platform"
    CLIENT = "client"


class Content(str, enum.Enum):
    SUCCESS = "success"
    ERROR = "error"
    ERROR_TIMEOUT = "error_timeout"
    ABSENT = "absent"


FAILURE_CONTENT = frozenset({Content.ERROR, Content.ERROR_TIMEOUT})


class Tri(str, enum.Enum):
    TRUE = "true"
    FALSE = "false"
    NOT_APPLICABLE = "not_applicable"

    @classmethod
    def of(cls, value: bool) -> "Tri":
        return cls.TRUE if value else cls.FALSE


# Coverage assumptions an evidence record may depend on.
CALL_SITE_INSTRUMENTED = "call_site_instrumented"
ASYNC_CONTEXT_PROPAGATED = "async_context_propagated"


class IdGenerator:
    """Seeded source of trace and span identifiers."""

    def __init__(self, seed: int):
        self._rng = random.Random(seed)

    def trace_id(self) -> str:
        return f"{self._rng.getrandbits(128):032x}"

    def span_id(self) -> str:
        # all-zero span ids are invalid on the wire
        return f"{self._rng.getrandbits(64) or 1:016x}"


@dataclass(frozen=True)
class TraceContext:
    trace_id: str
    span_id: str
    sampled: bool

    def __post_init__(self):
        if not _TRACE_ID.fullmatch(self.trace_id):
            raise ValueError(f"trace_id must be 32 lowercase hex chars: {self.trace_id!r}")
        if not _SPAN_ID.fullmatch(self.span_id):
            raise ValueError(f"span_id must be 16 lowercase hex chars: {self.span_id!r}")


_TRACE_ID = re.compile(r"[0-9a-f]{32}")
_SPAN_ID = re.compile(r"[0-9a-f]{16}")


def new_root_context(ids: IdGenerator, sampled: bool) -> TraceContext:
    return TraceContext(ids.trace_id(), ids.span_id(), sampled)


def child_context(parent: TraceContext, ids: IdGenerator) -> TraceContext:
    # ids from the generator are well-formed by construction; skip the checks
    ctx = object.__new__(TraceContext)
    object.__setattr__(ctx, "trace_id", parent.trace_id)
    object.__setattr__(ctx, "span_id", ids.span_id())
    object.__setattr__(ctx, "sampled", parent.sampled)
    return ctx


@dataclass(frozen=True)
class Span:
    context: TraceContext
    parent_span_id: Optional[str]
    name: str
    kind: SpanKind
    start: VirtualTime
    end: VirtualTime
    component: str
    tags: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"span {self.name!r} ends before it starts")

    @property
    def trace_id(self) -> str:
        return self.context.trace_id

    @property
    def span_id(self) -> str:
        return self.context.span_id

    @property
    def duration(self) -> int:
        return self.end - self.start

    @property
    def is_error(self) -> bool:
        return self.tags.get("error") == "true"

    @property
    def is_timeout(self) -> bool:
        return self.tags.get("timeout") == "true"


@dataclass(frozen=True)
class Trace:
    trace_id: str
    spans: tuple[Span, ...]

    def roots(self) -> list[Span]:
        return [s for s in self.spans if s.parent_span_id is None]

    @property
    def root(self) -> Span:
        roots = self.roots()
        if len(roots) != 1:
            raise ValueError(f"trace {self.trace_id} has {len(roots)} roots")
        return roots[0]

    def is_tree(self) -> bool:
        ids = {s.span_id for s in self.spans}
        if len(ids) != len(self.spans) or len(self.roots()) != 1:
            return False
        if any(s.trace_id != self.trace_id for s in self.spans):
            return False
        return all(s.parent_span_id in ids for s in self.spans if s.parent_span_id is not None)

    def by_id(self) -> dict[str, Span]:
        return {s.span_id: s for s in self.spans}

    def ancestors(self, span: Span) -> list[Span]:
        index = self.by_id()
        chain = []
        parent = span.parent_span_id
        while parent is not None and parent in index:
            chain.append(index[parent])
            parent = index[parent].parent_span_id
        return chain


@dataclass(frozen=True)
class FaultSpec:
    mechanism: Mechanism
    target_function: str
    probability: float = 1.0
    scenario: Optional[Scenario] = None

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        if self.scenario is not None and SCENARIO_MECHANISM[self.scenario] is not self.mechanism:
            raise ValueError(
                f"scenario {self.scenario.value} is bound to "
                f"{SCENARIO_MECHANISM[self.scenario].value}, not {self.mechanism.value}"
            )

    @classmethod
    def for_scenario(cls, scenario: Scenario, target: str, probability: float = 1.0) -> "FaultSpec":
        return cls(SCENARIO_MECHANISM[scenario], target, probability, scenario)

    @property
    def label(self) -> str:
        return self.scenario.value if self.scenario else self.mechanism.value


@dataclass(frozen=True)
class EvidenceRecord:
    channel: Channel
    source: str
    position: Position
    content: Content
    request_id: str
    time: VirtualTime
    message: str = ""
    # trace channel only: which span kind produced the record, whether it
    # lies in the request's rooted trace, and coverage assumptions it needs
    kind: str = ""
    linked: bool = True
    assumes: tuple[str, ...] = ()
    structural: bool = False
    # a span that reports success over a failed synchronous child
    masks_failure: bool = False

    def to_json(self) -> dict:
        doc = {
            "channel": self.channel.value,
            "source": self.source,
            "position": self.position.value,
            "content": self.content.value,
            "request_id": self.request_id,
            "time": self.time,
            "message": self.message,
        }
        if self.channel is Channel.TRACE:
            doc.update(kind=self.kind, linked=self.linked, assumes=list(self.assumes),
                       structural=self.structural, masks_failure=self.masks_failure)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "EvidenceRecord":
        return cls(
            channel=Channel(doc["channel"]),
            source=doc["source"],
            position=Position(doc["position"]),
            content=Content(doc["content"]),
            request_id=doc["request_id"],
            time=doc["time"],
            message=doc.get("message", ""),
            kind=doc.get("kind", ""),
            linked=doc.get("linked", True),
            assumes=tuple(doc.get("assumes", ())),
            structural=doc.get("structural", False),
            masks_failure=doc.get("masks_failure", False),
        )


_HEX_ID = re.compile(r"\b[0-9a-f]{8,}\b")
_NUMBER = re.compile(r"\d+")


def normalize_message(text: str) -> str:
    """Strip run-specific identifiers and numbers from a message."""
    def ident(m):
        return "#" if m.group().isdigit() else "<id>"

    return _NUMBER.sub("#", _HEX_ID.sub(ident, text)).strip()


@dataclass(frozen=True)
class EvidenceSignature:
    channel: Channel
    items: tuple[tuple[str, str, str], ...]

    @property
    def no_evidence(self) -> bool:
        return not any(content in {c.value for c in FAILURE_CONTENT} for _, content, _ in self.items)


def signature_of(records: Iterable[EvidenceRecord], channel: Channel) -> EvidenceSignature:
    """Reduce records to what a developer reading `channel` can tell apart.

    Only failure-bearing records and trace-structure records count: success
    records look the same as in a clean run. Trace records outside the
    request's rooted trace are not attributable and are ignored.
    """
    items = set()
    for r in records:
        if r.channel is not channel:
            continue
        if channel is Channel.TRACE and not r.linked:
            continue
        if r.content not in FAILURE_CONTENT and not r.structural:
            continue
        role = f"{r.position.value}:{r.kind}" if r.kind else r.position.value
        if r.channel is Channel.RESPONSE:
            role = r.source
        items.add((role, r.content.value, normalize_message(r.message)))
    return EvidenceSignature(channel, tuple(sorted(items)))


@dataclass(frozen=True)
class ObservabilityVerdict:
    visible: bool
    unambiguous: Tri
    consistent: bool
    partial_fields: frozenset[str] = frozenset()

    def __post_init__(self):
        if (self.unambiguous is Tri.NOT_APPLICABLE) == self.visible:
            raise ValueError("unambiguous is not_applicable exactly when evidence is invisible")
        for name in self.partial_fields:
            if name not in {"visible", "unambiguous", "consistent"}:
                raise ValueError(f"unknown verdict field {name!r}")
            if getattr(self, name) not in (True, Tri.TRUE):
                raise ValueError(f"only true verdicts can be partial, {name} is not")

    @property
    def partial(self) -> bool:
        return bool(self.partial_fields)
