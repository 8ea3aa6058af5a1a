"""Virtual-time FaaS platform: gateway, controller, invoker pool, cold starts,
sync/async composition execution and profile-specific response shaping."""

from __future__ import annotations

import enum
import itertools
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Generator, Iterable, Mapping, Optional, Union

from .core import IdGenerator, Span, SpanKind, TraceContext, child_context, new_root_context
from .engine import Event, Simulation
from .faults import (
    KILL_MESSAGE,
    FaultEffect,
    FaultInjector,
    FaultPlan,
    InvocationContext,
)
from .tracing import (
    AUTO_COMPONENT,
    Collector,
    FunctionTracer,
    Mode,
    OpenSpan,
    PlatformTracer,
    TracingMode,
    extract_context,
    inject_context,
    report_spans,
    sample_decision,
)

TIMEOUT_LOG_PREFIX = "timeout: action exceeded its time limit"
TIMEOUT_BODY_MESSAGE = "The action exceeded its time limit"


class CompositionError(ValueError):
    pass


@dataclass(frozen=True)
class FunctionSpec:
    name: str
    base_exec_ms: int = 100
    memory_mb: int = 128
    timeout_ms: int = 300_000
    external_calls: tuple[str, ...] = ()
    instrumented: bool = True
    # developer placed spans around third-party calls
    instrument_external_calls: bool = True
    external_call_ms: int = 50

    def __post_init__(self):
        if self.memory_mb <= 0:
            raise CompositionError(f"{self.name}: memory_mb must be positive")
        if self.timeout_ms <= 0:
            raise CompositionError(f"{self.name}: timeout_ms must be positive")
        if self.base_exec_ms < 0:
            raise CompositionError(f"{self.name}: base_exec_ms must be non-negative")


@dataclass(frozen=True)
class Edge:
    caller: str
    callee: str
    mode: str = "sync"
    # an int, or the name of a payload key holding the fan-out count
    fanout: Union[int, str] = 1
    # developer-driven tracing: whether the caller passes its context along
    propagate_context: bool = True

    def __post_init__(self):
        if self.mode not in ("sync", "async"):
            raise CompositionError(f"edge {self.caller}->{self.callee}: mode must be sync or async")

    def count(self, payload: Mapping[str, Any]) -> int:
        if isinstance(self.fanout, int):
            return self.fanout
        return int(payload.get(self.fanout, 1))


@dataclass(frozen=True)
class CompositionSpec:
    functions: Mapping[str, FunctionSpec]
    edges: tuple[Edge, ...]
    entry: str

    def validate(self) -> None:
        if self.entry not in self.functions:
            raise CompositionError(f"unknown entry function {self.entry!r}")
        for e in self.edges:
            for end in (e.caller, e.callee):
                if end not in self.functions:
                    raise CompositionError(f"edge {e.caller}->{e.callee} references unknown function {end!r}")
        cycle = self.find_cycle()
        if cycle:
            raise CompositionError("cyclic composition: " + " -> ".join(cycle))

    def find_cycle(self) -> Optional[list[str]]:
        color: dict[str, int] = {}
        stack: list[str] = []

        def visit(n: str) -> Optional[list[str]]:
            color[n] = 1
            stack.append(n)
            for e in self.outgoing(n):
                c = color.get(e.callee, 0)
                if c == 1:
                    return stack[stack.index(e.callee):] + [e.callee]
                if c == 0:
                    found = visit(e.callee)
                    if found:
                        return found
            stack.pop()
            color[n] = 2
            return None

        for name in sorted(self.functions):
            if color.get(name, 0) == 0:
                found = visit(name)
                if found:
                    return found
        return None

    def outgoing(self, name: str, mode: Optional[str] = None) -> list[Edge]:
        return [e for e in self.edges if e.caller == name and (mode is None or e.mode == mode)]

    def incoming_modes(self, name: str) -> set[str]:
        modes = {e.mode for e in self.edges if e.callee == name}
        if name == self.entry:
            modes.add("entry")
        return modes

    def to_dict(self) -> dict:
        return {
            "entry": self.entry,
            "functions": {
                n: {
                    "base_exec_ms": f.base_exec_ms,
                    "memory_mb": f.memory_mb,
                    "timeout_ms": f.timeout_ms,
                    "external_calls": list(f.external_calls),
                    "instrumented": f.instrumented,
                    "instrument_external_calls": f.instrument_external_calls,
                    "external_call_ms": f.external_call_ms,
                }
                for n, f in self.functions.items()
            },
            "edges": [
                {"caller": e.caller, "callee": e.callee, "mode": e.mode, "fanout": e.fanout,
                 "propagate_context": e.propagate_context}
                for e in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping, defaults: Optional[Mapping] = None) -> "CompositionSpec":
        defaults = dict(defaults or {})
        functions = {}
        for name, fdoc in (doc.get("functions") or {}).items():
            merged = {**defaults, **(fdoc or {})}
            merged["external_calls"] = tuple(merged.get("external_calls", ()))
            functions[name] = FunctionSpec(name=name, **merged)
        edges = tuple(Edge(**e) for e in doc.get("edges", ()))
        spec = cls(functions, edges, doc.get("entry", ""))
        spec.validate()
        return spec


class ProfileName(str, enum.Enum):
    AWS_LIKE = "aws_like"
    OPENWHISK_LIKE = "openwhisk_like"


class CodePolicy(str, enum.Enum):
    ALWAYS_SUCCESS_CODE = "always_success_code"
    ERROR_CODE_ON_FAILURE = "error_code_on_failure"


@dataclass(frozen=True)
class PlatformProfile:
    name: ProfileName
    error_response_code_policy: CodePolicy
    async_failure_surfaced_in_response: bool = False
    async_retries: bool = False

    def __post_init__(self):
        expected = {ProfileName.AWS_LIKE: CodePolicy.ALWAYS_SUCCESS_CODE,
                    ProfileName.OPENWHISK_LIKE: CodePolicy.ERROR_CODE_ON_FAILURE}[self.name]
        if self.error_response_code_policy is not expected:
            raise ValueError(f"{self.name.value} requires {expected.value}")
        if self.async_failure_surfaced_in_response:
            raise ValueError("async failures are never surfaced in the response")
        if self.async_retries:
            raise NotImplementedError("async retries are outside the evaluated model")

    @classmethod
    def named(cls, name: Union[str, ProfileName]) -> "PlatformProfile":
        name = ProfileName(name)
        policy = (CodePolicy.ALWAYS_SUCCESS_CODE if name is ProfileName.AWS_LIKE
                  else CodePolicy.ERROR_CODE_ON_FAILURE)
        return cls(name, policy)


@dataclass(frozen=True)
class PlatformConfig:
    cold_start_ms: int = 500
    warm_ttl_ms: int = 600_000
    validation_ms: int = 1
    resource_allocation_ms: int = 1
    async_dispatch_ms: int = 10
    max_events: int = 20_000_000


class RuntimePool:
    """Idle warm runtimes per function, reused most-recent first."""

    def __init__(self, warm_ttl_ms: int):
        self.warm_ttl_ms = warm_ttl_ms
        # release times, oldest first
        self._idle: dict[str, deque] = {}

    def _prune(self, function: str, now: int) -> deque:
        idle = self._idle.setdefault(function, deque())
        while idle and now - idle[0] > self.warm_ttl_ms:
            idle.popleft()
        return idle

    def acquire(self, function: str, now: int, force_cold: bool = False) -> bool:
        """Take a runtime; returns True when it had to be cold-started."""
        idle = self._prune(function, now)
        if force_cold or not idle:
            return True
        idle.pop()
        return False

    def release(self, function: str, now: int) -> None:
        self._idle.setdefault(function, deque()).append(now)

    def warm(self, function: str, now: Optional[int] = None) -> int:
        if now is None:
            return len(self._idle.get(function, ()))
        return len(self._prune(function, now))

    def total_warm(self) -> int:
        return sum(len(v) for v in self._idle.values())


STEP_ORDER = ("validation", "resource_allocation", "cold_start_init", "invocation")


@dataclass
class InvocationRecord:
    request_id: str
    function: str
    activation_id: str
    trigger_mode: str
    parent_invocation: Optional[str]
    seq: int
    steps: list[tuple[str, int, int]] = field(default_factory=list)
    outcome: str = "pending"
    cold: bool = False
    message: str = ""
    tracing_overhead_ms: int = 0
    flushes: int = 0
    spans_reported: int = 0

    @property
    def start(self) -> int:
        return self.steps[0][1] if self.steps else 0

    @property
    def end(self) -> int:
        return self.steps[-1][2] if self.steps else 0

    @property
    def duration(self) -> int:
        return self.end - self.start

    @property
    def exec_ms(self) -> int:
        for step, s, e in self.steps:
            if step == "invocation":
                return e - s
        return 0

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "function": self.function,
            "activation_id": self.activation_id,
            "trigger_mode": self.trigger_mode,
            "parent_invocation": self.parent_invocation,
            "steps": [list(s) for s in self.steps],
            "outcome": self.outcome,
            "cold": self.cold,
            "message": self.message,
            "tracing_overhead_ms": self.tracing_overhead_ms,
        }


@dataclass(frozen=True)
class ResponseEnvelope:
    request_id: str
    code: int
    outcome: str
    body: Mapping[str, str]

    @property
    def code_ok(self) -> bool:
        return 200 <= self.code < 300


@dataclass(frozen=True)
class LogLine:
    time: int
    level: str
    message: str
    request_id: str
    origin: str = "function"


class LogStore:
    """Append-only lines per function, indexed by request for lookup."""

    def __init__(self):
        self.lines: dict[str, list[LogLine]] = {}
        self._by_request: dict[str, dict[str, list[LogLine]]] = {}

    def append(self, function: str, line: LogLine) -> None:
        self.lines.setdefault(function, []).append(line)
        self._by_request.setdefault(line.request_id, {}).setdefault(function, []).append(line)

    def for_request(self, request_id: str) -> dict[str, list[LogLine]]:
        return {fn: list(lines) for fn, lines in self._by_request.get(request_id, {}).items()}


class UncaughtFunctionError(Exception):
    pass


_PLANNED = object()


@dataclass
class _Request:
    request_id: str
    index: int
    payload: Mapping[str, Any]
    metadata: Mapping[str, str]
    arrival: int
    sampled: Optional[bool] = None
    gateway: Optional[OpenSpan] = None
    envelope: Optional[ResponseEnvelope] = None


@dataclass
class _Activation:
    request: _Request
    fn: FunctionSpec
    trigger: str
    parent: Optional[InvocationRecord]
    trace_parent: Optional[TraceContext]
    caller_timeout_ms: Optional[int]
    is_entry: bool = False


class PlatformHandle:
    """A deployed composition plus all simulation state of one run."""

    def __init__(self, spec: CompositionSpec, profile: PlatformProfile, tracing: TracingMode,
                 fault_plan: Optional[FaultPlan] = None, config: Optional[PlatformConfig] = None,
                 seed: int = 0, collector: Optional[Collector] = None):
        spec.validate()
        self.spec = spec
        self.profile = profile
        self.tracing = tracing
        self.fault_plan = fault_plan or FaultPlan()
        self.fault_plan.validate(spec)
        self.config = config or PlatformConfig()
        self.seed = seed
        self._collector_available = collector.available if collector else True
        self._reset(collector)

    def _reset(self, collector: Optional[Collector] = None) -> None:
        self.sim = Simulation(self.config.max_events)
        self.pool = RuntimePool(self.config.warm_ttl_ms)
        self.collector = collector or Collector(self._collector_available)
        self.logs = LogStore()
        self.injector = FaultInjector(self.fault_plan)
        self.ids = IdGenerator(self.seed)
        self.platform_tracer = PlatformTracer(self.ids)
        self._sampling_rng = random.Random(f"{self.seed}:sampling")
        self._tail_rng = random.Random(f"{self.seed}:tail")
        self._activation_rng = random.Random(f"{self.seed}:activations")
        self._seq = itertools.count()
        self.records: list[InvocationRecord] = []
        self.requests: list[_Request] = []
        self._planned: Optional[list] = None
        self.platform_flushes = 0
        self.developer_flushes = 0

    def redeploy(self) -> "PlatformHandle":
        self._reset()
        return self

    # -- request API -------------------------------------------------

    def plan_requests(self, n: int) -> None:
        """Fix the fault assignment for the next `n` submitted requests."""
        self._planned = self.fault_plan.assign(len(self.requests) + n)

    def submit_request(self, payload: Optional[Mapping[str, Any]] = None, client_sample_flag: bool = False,
                       at: Optional[int] = None, run: bool = True, fault: Any = _PLANNED) -> Optional[ResponseEnvelope]:
        """Queue one request; `fault` overrides the plan's pick (None for a clean run)."""
        index = len(self.requests)
        request_id = f"req-{index:06d}"
        metadata = {self.tracing.sampling.event_flag_header: "1"} if client_sample_flag else {}
        arrival = max(self.sim.now, at if at is not None else self.sim.now)
        req = _Request(request_id, index, dict(payload or {}), metadata, arrival)
        self.requests.append(req)
        if self._planned is None or index >= len(self._planned):
            self._planned = self.fault_plan.assign(index + 1)
        self.injector.register(request_id, self._planned[index] if fault is _PLANNED else fault)
        self.sim.schedule(arrival - self.sim.now, lambda: self._arrive(req))
        if run:
            self.run_to_quiescence()
            return req.envelope
        return None

    def run_to_quiescence(self) -> list[InvocationRecord]:
        self.sim.run()
        return self.ledger()

    def ledger(self) -> list[InvocationRecord]:
        return sorted(self.records, key=lambda r: (r.start, r.seq))

    def envelopes(self) -> list[ResponseEnvelope]:
        return [r.envelope for r in self.requests]

    def ground_truth(self):
        return [self.injector.truths[r.request_id] for r in self.requests]

    # -- execution ---------------------------------------------------

    def _arrive(self, req: _Request) -> None:
        trace_parent = None
        if self.tracing.mode.platform:
            req.sampled = sample_decision(self.tracing.sampling, req.metadata, self._sampling_rng)
            root = new_root_context(self.ids, req.sampled)
            if req.sampled:
                req.gateway = OpenSpan(root, None, f"POST /{self.spec.entry}", SpanKind.GATEWAY,
                                       self.sim.now, "gateway",
                                       {"faas.function": self.spec.entry, "request.id": req.request_id})
            trace_parent = root
        self._start_entry(req, self.spec.entry, "entry", trace_parent, None)

    def _start_entry(self, req, function, trigger, trace_parent, caller_timeout_ms):
        act = _Activation(req, self.spec.functions[function], trigger, None, trace_parent,
                          caller_timeout_ms, is_entry=True)
        done = self.sim.process(self._activation(act))
        done.add_callback(lambda ev: self._respond(req, ev))
        return done

    def _respond(self, req: _Request, ev: Event) -> None:
        if not ev.ok:
            raise ev.value
        record: InvocationRecord = ev.value
        outcome = record.outcome
        if outcome == "success":
            body = {"status": "success"}
        elif outcome == "timeout":
            body = {"status": "timeout", "message": TIMEOUT_BODY_MESSAGE}
        else:
            body = {"status": "error", "message": record.message}
        if self.profile.error_response_code_policy is CodePolicy.ALWAYS_SUCCESS_CODE or outcome == "success":
            code = 200
        else:
            code = 504 if outcome == "timeout" else 502
        req.envelope = ResponseEnvelope(req.request_id, code, outcome, body)
        if req.gateway is not None:
            tags = {"http.status_code": str(code)}
            if outcome != "success":
                tags.update(_failure_tags(outcome, body["message"]))
            report_spans(self.collector, [req.gateway.finish(self.sim.now, **tags)], req.request_id)

    def _activation(self, act: _Activation) -> Generator[Event, Any, InvocationRecord]:
        sim, cfg, fn, req = self.sim, self.config, act.fn, act.request
        ictx = InvocationContext(fn.name, fn.external_calls, fn.base_exec_ms, act.trigger,
                                 act.caller_timeout_ms, cfg.cold_start_ms)
        effect = self.injector.effect_for(req.request_id, ictx, sim.now)
        if effect.delivery_delay_ms:
            yield sim.timeout(effect.delivery_delay_ms)

        activation_id = f"{self._activation_rng.getrandbits(128):032x}"
        rec = InvocationRecord(req.request_id, fn.name, activation_id, act.trigger,
                               act.parent.activation_id if act.parent else None, next(self._seq))
        self.records.append(rec)

        # platform span contexts are fixed up front so they can be injected
        platform = (self.tracing.mode.platform and act.trace_parent is not None
                    and act.trace_parent.sampled)
        pt = self.platform_tracer
        spans: list[Span] = []
        tag = {"faas.activation": activation_id, "faas.trigger": act.trigger}
        if platform:
            controller = pt.open("controller_scheduled", act.trace_parent, sim.now, fn.name, **tag)

        t = sim.now
        yield sim.timeout(cfg.validation_ms)
        rec.steps.append(("validation", t, sim.now))
        t = sim.now
        if platform:
            invoker = pt.open("invoker_activation", controller.context, t, fn.name, **tag)
        yield sim.timeout(cfg.resource_allocation_ms)
        rec.steps.append(("resource_allocation", t, sim.now))

        rec.cold = self.pool.acquire(fn.name, sim.now, effect.force_cold)
        if rec.cold:
            t = sim.now
            if platform:
                init = pt.open("invoker_init", invoker.context, t, fn.name, cold_start="true", **tag)
            yield sim.timeout(cfg.cold_start_ms + effect.extra_cold_start_ms)
            rec.steps.append(("cold_start_init", t, sim.now))
            if platform:
                tags = _failure_tags("error", effect.init_failure) if effect.init_failure else {}
                spans.append(init.finish(sim.now, **tags))
            if effect.init_failure:
                # the runtime reports the import error; the handler never runs
                self.logs.append(fn.name, LogLine(sim.now, "error", effect.init_failure, req.request_id))
                self._finish(rec, "error", effect.init_failure)
                if platform:
                    self._close_platform(rec, spans, (invoker, controller))
                return rec

        run_start = sim.now
        env = {"__OW_ACTIVATION_ID": activation_id}
        invocation = None
        if platform:
            invocation = pt.open("invoker_run", invoker.context, run_start, fn.name, **tag)
            env = inject_context(env, invocation.context)

        tracer, downstream_ctx = self._function_tracer(act, activation_id, env)
        body = sim.process(self._body(act, rec, tracer, effect, invocation, downstream_ctx))
        deadline, deadline_timer = sim.timer(fn.timeout_ms)
        kill = kill_timer = None
        if effect.kill_after_ms is not None:
            kill, kill_timer = sim.timer(effect.kill_after_ms)
        which, _ = yield sim.first_of(body, deadline, kill)
        sim.cancel(deadline_timer)
        if kill_timer is not None:
            sim.cancel(kill_timer)

        keep_runtime = True
        if which == 0:
            if body.ok:
                outcome, message = "success", ""
            elif isinstance(body.value, UncaughtFunctionError):
                outcome, message = "error", str(body.value)
                self.logs.append(fn.name, LogLine(sim.now, "error", f"Traceback: {message}", req.request_id))
                if tracer is not None:
                    tracer.fail_open_spans(sim.now, message)
            else:
                raise body.value
            if tracer is not None:
                yield from self._flush(rec, tracer, charge=self.tracing.mode is Mode.DEVELOPER_DRIVEN)
        elif which == 1:
            body.cancel()
            outcome, message = "timeout", f"{TIMEOUT_LOG_PREFIX} of {fn.timeout_ms} ms"
            keep_runtime = False
            self.logs.append(fn.name, LogLine(sim.now, "error", message, req.request_id, "platform"))
            if tracer is not None:
                tracer.deadline_flush(sim.now)
                yield from self._flush(rec, tracer, charge=False)
        else:
            body.cancel()
            outcome, message = "error", KILL_MESSAGE
            keep_runtime = False
            self.logs.append(fn.name, LogLine(sim.now, "error", message, req.request_id, "platform"))

        if platform and outcome != "timeout":
            # controller and invoker instrumentation sits on the activation path
            hook = self.tracing.platform_hook_overhead_ms * (3 + rec.cold)
            if hook:
                yield sim.timeout(hook)
                rec.tracing_overhead_ms += hook
        rec.steps.append(("invocation", run_start, sim.now))
        self._finish(rec, outcome, message)
        if platform:
            tags = _failure_tags(outcome, message) if outcome != "success" else {}
            spans.append(invocation.finish(sim.now, **tags))
            self._close_platform(rec, spans, (invoker, controller))
        if keep_runtime:
            self.pool.release(fn.name, sim.now)
        return rec

    @staticmethod
    def _finish(rec: InvocationRecord, outcome: str, message: str) -> None:
        rec.outcome = outcome
        rec.message = message

    def _close_platform(self, rec: InvocationRecord, spans: list[Span], wrappers) -> None:
        tags = _failure_tags(rec.outcome, rec.message) if rec.outcome != "success" else {}
        spans = spans + [w.finish(self.sim.now, **tags) for w in wrappers]
        report_spans(self.collector, spans, rec.request_id)
        self.platform_flushes += 1

    def _function_tracer(self, act: _Activation, activation_id: str, env: Mapping[str, str]):
        """Developer-side instrumentation for one activation.

        Returns the tracer (or None) and the context callees should inherit
        when the function does not trace itself.
        """
        mode = self.tracing.mode
        fn, req = act.fn, act.request
        if mode is Mode.NONE:
            return None, None
        if mode.platform:
            ctx = extract_context(env)
            if ctx is None or not fn.instrumented:
                return None, ctx
            return FunctionTracer(fn.name, ctx, self.ids, activation_id), ctx
        # developer-driven: context travels in the invocation payload
        if not fn.instrumented:
            return None, None
        ctx = act.trace_parent
        if ctx is None:
            metadata = req.metadata if act.is_entry else {}
            ctx = new_root_context(self.ids, sample_decision(self.tracing.sampling, metadata,
                                                             self._sampling_rng))
        if not ctx.sampled:
            return None, ctx
        root_tags = {"request.id": req.request_id} if act.is_entry else {}
        return FunctionTracer(fn.name, ctx, self.ids, activation_id, root_tags), ctx

    def _flush(self, rec: InvocationRecord, tracer: FunctionTracer, charge: bool):
        batch = tracer.drain()
        if not batch:
            return
        if charge:
            cost = self.tracing.report_overhead_ms
            if self.tracing.tail_probability and self._tail_rng.random() < self.tracing.tail_probability:
                cost += self.tracing.tail_overhead_ms
            if cost:
                yield self.sim.timeout(cost)
            rec.tracing_overhead_ms += cost
        rec.flushes += 1
        rec.spans_reported += len(batch)
        if self.tracing.mode is Mode.DEVELOPER_DRIVEN:
            self.developer_flushes += 1
        report_spans(self.collector, batch, rec.request_id)

    def _body(self, act: _Activation, rec: InvocationRecord, tracer: Optional[FunctionTracer],
              effect: FaultEffect, invocation: Optional[OpenSpan], downstream_ctx: Optional[TraceContext]):
        sim, fn, req = self.sim, act.fn, act.request
        if tracer is not None:
            own_root = self.tracing.mode is Mode.DEVELOPER_DRIVEN and act.trace_parent is None
            tracer.start_handler(sim.now, is_root=own_root)
        self.logs.append(fn.name, LogLine(sim.now, "info", f"{fn.name} started", req.request_id))

        for call in fn.external_calls:
            span = self._external_span(call, tracer, invocation, rec)
            if call == effect.hang_external_call:
                yield sim.event()  # the third party never answers
            yield sim.timeout(fn.external_call_ms)
            if span is not None:
                if tracer is not None:
                    tracer.close(span, sim.now)
                else:
                    report_spans(self.collector, [span.finish(sim.now)], req.request_id)

        yield sim.timeout(fn.base_exec_ms)
        if effect.raise_message:
            raise UncaughtFunctionError(effect.raise_message)

        for edge in self.spec.outgoing(fn.name, "sync"):
            for _ in range(edge.count(req.payload)):
                span, ctx = self._call_site(tracer, edge, invocation, downstream_ctx)
                callee = _Activation(req, self.spec.functions[edge.callee], "sync", rec, ctx, fn.timeout_ms)
                result: InvocationRecord = yield sim.process(self._activation(callee))
                if span is not None:
                    tags = {}
                    if result.outcome != "success":
                        tags = _failure_tags("error", f"{edge.callee} returned {result.outcome}")
                    tracer.close(span, sim.now, **tags)
                if result.outcome != "success":
                    raise UncaughtFunctionError(f"sync call to {edge.callee} failed: {result.outcome}")

        for edge in self.spec.outgoing(fn.name, "async"):
            for _ in range(edge.count(req.payload)):
                span, ctx = self._call_site(tracer, edge, invocation, downstream_ctx)
                if span is not None:
                    tracer.close(span, sim.now)
                callee = _Activation(req, self.spec.functions[edge.callee], "async", rec, ctx, None)
                sim.schedule(self.config.async_dispatch_ms,
                             lambda c=callee: sim.process(self._activation(c)))

        self.logs.append(fn.name, LogLine(sim.now, "info", f"{fn.name} finished", req.request_id))
        if tracer is not None:
            tracer.close(tracer.handler, sim.now)

    def _external_span(self, call: str, tracer: Optional[FunctionTracer], invocation: Optional[OpenSpan],
                       rec: InvocationRecord) -> Optional[OpenSpan]:
        if self.tracing.auto_instrument and invocation is not None:
            # patched client libraries trace every third-party call
            parent = tracer.handler.context if tracer is not None else invocation.context
            span = OpenSpan(child_context(parent, self.ids), parent.span_id, f"GET {call}",
                            SpanKind.EXTERNAL_CALL, self.sim.now, AUTO_COMPONENT,
                            {"faas.function": rec.function, "faas.activation": rec.activation_id,
                             "call.target": "api"})
            if tracer is not None:
                tracer.open_spans.append(span)
            return span
        if tracer is not None and act_instruments_calls(tracer, rec, self.spec):
            return tracer.instrument_call(f"GET {call}", self.sim.now, "api")
        return None

    def _call_site(self, tracer: Optional[FunctionTracer], edge: Edge, invocation: Optional[OpenSpan],
                   downstream_ctx: Optional[TraceContext]):
        """Span around an outgoing invocation, and the context the callee gets."""
        mode = self.tracing.mode
        span = None
        if tracer is not None:
            span = tracer.instrument_call(f"invoke {edge.callee}", self.sim.now, "function",
                                          **{"invoke.mode": edge.mode})
        if mode.platform:
            # the controller relates activations whether or not the caller traces
            if span is not None:
                return span, span.context
            return None, invocation.context if invocation is not None else None
        if mode is Mode.DEVELOPER_DRIVEN and edge.propagate_context:
            return span, span.context if span is not None else downstream_ctx
        return span, None


def act_instruments_calls(tracer: FunctionTracer, rec: InvocationRecord, spec: CompositionSpec) -> bool:
    return spec.functions[rec.function].instrument_external_calls


def _failure_tags(outcome: str, message: str) -> dict[str, str]:
    tags = {"error": "true", "error.message": message}
    if outcome == "timeout":
        tags["timeout"] = "true"
    return tags


def deploy(spec: CompositionSpec, profile: PlatformProfile, tracing: Optional[TracingMode] = None,
           fault_plan: Optional[FaultPlan] = None, config: Optional[PlatformConfig] = None,
           seed: int = 0, collector: Optional[Collector] = None) -> PlatformHandle:
    return PlatformHandle(spec, profile, tracing or TracingMode(), fault_plan, config, seed, collector)


def execute_invocation(handle: PlatformHandle, function: str, trigger: str = "entry",
                       context: Optional[TraceContext] = None, payload: Optional[Mapping] = None,
                       caller_timeout_ms: Optional[int] = None) -> InvocationRecord:
    """Run a single activation of `function` (and whatever it calls) to quiescence."""
    if function not in handle.spec.functions:
        raise CompositionError(f"function {function!r} is not registered")
    index = len(handle.requests)
    req = _Request(f"req-{index:06d}", index, dict(payload or {}), {}, handle.sim.now)
    handle.requests.append(req)
    planned = handle.fault_plan.assign(index + 1)[index]
    handle.injector.register(req.request_id, planned)
    proc = handle._start_entry(req, function, trigger, context, caller_timeout_ms)
    handle.run_to_quiescence()
    return proc.value


def count_traversals(spec: CompositionSpec, payload: Mapping[str, Any]) -> int:
    """Invocations one fault-free request produces: entry plus every edge traversal."""
    memo: dict[str, int] = {}

    def below(name: str) -> int:
        if name not in memo:
            memo[name] = 1 + sum(e.count(payload) * below(e.callee) for e in spec.outgoing(name))
        return memo[name]

    return below(spec.entry)


def iter_records(records: Iterable[InvocationRecord], function: str) -> list[InvocationRecord]:
    return [r for r in records if r.function == function]
