"""Fault catalog and injection engine."""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

from .core import FaultSpec, Mechanism, Scenario, VirtualTime

if TYPE_CHECKING:
    from .platform import CompositionSpec

_GOLDEN = (math.sqrt(5) - 1) / 2

UNCAUGHT_MESSAGE = "RuntimeError: injected uncaught_exception"
IMPORT_MESSAGE = "ModuleNotFoundError: injected invalid_dependency"
KILL_MESSAGE = "container terminated unexpectedly"


class PlanMode(str, enum.Enum):
    DETERMINISTIC_PER_REQUEST = "deterministic_per_request"
    PROBABILISTIC = "probabilistic"


class FaultPlanError(ValueError):
    pass


@dataclass(frozen=True)
class FaultPlan:
    specs: tuple[FaultSpec, ...] = ()
    seed: int = 0
    mode: PlanMode = PlanMode.PROBABILISTIC

    def __post_init__(self):
        total = sum(s.probability for s in self.specs)
        if total > 1.0 + 1e-12:
            raise FaultPlanError(
                f"occurrence chances sum to {total:.3f}; a request carries at most one fault"
            )

    def validate(self, spec: "CompositionSpec") -> None:
        for fs in self.specs:
            fn = spec.functions.get(fs.target_function)
            if fn is None:
                raise FaultPlanError(f"{fs.label}: unknown target function {fs.target_function!r}")
            modes = spec.incoming_modes(fs.target_function)
            if fs.mechanism is Mechanism.EXTERNAL_API_TIMEOUT and not fn.external_calls:
                raise FaultPlanError(f"{fs.label}: {fn.name} makes no external calls")
            if fs.mechanism in (Mechanism.COLD_SYNC_TIMEOUT, Mechanism.SYNC_CALL_DELAY) and "sync" not in modes:
                raise FaultPlanError(f"{fs.label}: {fn.name} is not reached over a sync edge")
            if fs.mechanism is Mechanism.ASYNC_DOWNSTREAM_BUG and "async" not in modes:
                raise FaultPlanError(f"{fs.label}: {fn.name} is not reached over an async edge")

    def assign(self, n_requests: int) -> list[Optional[FaultSpec]]:
        """Fault (or None) for each request index, reproducible from the seed."""
        rng = random.Random(self.seed)
        out = []
        for i in range(n_requests):
            if self.mode is PlanMode.PROBABILISTIC:
                u = rng.random()
            else:
                u = ((i + 1) * _GOLDEN) % 1.0
            out.append(_pick(self.specs, u))
        return out


def _pick(specs: Sequence[FaultSpec], u: float) -> Optional[FaultSpec]:
    acc = 0.0
    for fs in specs:
        acc += fs.probability
        if u < acc:
            return fs
    return None


def plan_faults(config: Mapping, seed: int) -> FaultPlan:
    """Build a plan from a config mapping.

    Accepted shapes: ``{"F1": 0.2, ...}`` or ``{"mode": ..., "specs": [
    {"scenario"|"mechanism": ..., "target": ..., "probability": ...}]}``.
    Scenario shorthand targets come from ``default_targets``.
    """
    config = dict(config or {})
    mode = PlanMode(config.pop("mode", PlanMode.PROBABILISTIC.value))
    targets = dict(config.pop("default_targets", {}))
    raw_specs = config.pop("specs", None)
    seed = config.pop("seed", seed)
    specs = []
    if raw_specs is None:
        raw_specs = [{"scenario": k, "probability": v} for k, v in config.items()]
    for entry in raw_specs:
        p = float(entry.get("probability", 1.0))
        if not 0.0 <= p <= 1.0:
            raise FaultPlanError(f"probability {p} outside [0, 1]")
        scenario = Scenario(entry["scenario"]) if entry.get("scenario") else None
        mechanism = Mechanism(entry["mechanism"]) if entry.get("mechanism") else None
        if scenario is None and mechanism is None:
            raise FaultPlanError(f"fault entry needs a scenario or mechanism: {entry!r}")
        target = entry.get("target") or targets.get(scenario.value if scenario else mechanism.value)
        if target is None:
            raise FaultPlanError(f"no target function for {entry!r}")
        if scenario is not None:
            specs.append(FaultSpec.for_scenario(scenario, target, p))
        else:
            specs.append(FaultSpec(mechanism, target, p))
    return FaultPlan(tuple(specs), int(seed), mode)


@dataclass(frozen=True)
class FaultEffect:
    """What the platform must do differently for one invocation."""

    raise_message: Optional[str] = None
    hang_external_call: Optional[str] = None
    force_cold: bool = False
    extra_cold_start_ms: int = 0
    init_failure: Optional[str] = None
    kill_after_ms: Optional[int] = None
    delivery_delay_ms: int = 0


NO_EFFECT = FaultEffect()


@dataclass(frozen=True)
class InvocationContext:
    function: str
    external_calls: tuple[str, ...]
    base_exec_ms: int
    trigger_mode: str
    caller_timeout_ms: Optional[int] = None
    cold_start_ms: int = 500


def apply_fault(spec: FaultSpec, ctx: InvocationContext) -> FaultEffect:
    if spec.target_function != ctx.function:
        raise FaultPlanError(f"{spec.label} targets {spec.target_function}, not {ctx.function}")
    m = spec.mechanism
    if m is Mechanism.UNCAUGHT_EXCEPTION:
        return FaultEffect(raise_message=UNCAUGHT_MESSAGE)
    if m is Mechanism.ASYNC_DOWNSTREAM_BUG:
        if ctx.trigger_mode != "async":
            raise FaultPlanError(f"{spec.label} needs an async-triggered invocation")
        return FaultEffect(raise_message=UNCAUGHT_MESSAGE)
    if m is Mechanism.EXTERNAL_API_TIMEOUT:
        if not ctx.external_calls:
            raise FaultPlanError(f"{spec.label}: {ctx.function} makes no external calls")
        return FaultEffect(hang_external_call=ctx.external_calls[0])
    if m in (Mechanism.COLD_SYNC_TIMEOUT, Mechanism.SYNC_CALL_DELAY):
        if ctx.trigger_mode != "sync" or ctx.caller_timeout_ms is None:
            raise FaultPlanError(f"{spec.label} needs a sync-triggered invocation")
        # enough to overrun whatever budget the caller has left
        overrun = ctx.caller_timeout_ms + ctx.cold_start_ms
        if m is Mechanism.COLD_SYNC_TIMEOUT:
            return FaultEffect(force_cold=True, extra_cold_start_ms=overrun)
        return FaultEffect(delivery_delay_ms=overrun)
    if m is Mechanism.INVALID_DEPENDENCY:
        return FaultEffect(force_cold=True, init_failure=IMPORT_MESSAGE)
    if m is Mechanism.CONTAINER_KILL:
        return FaultEffect(kill_after_ms=max(1, ctx.base_exec_ms // 2))
    raise AssertionError(m)


@dataclass
class Injection:
    scenario: Optional[Scenario]
    mechanism: Mechanism
    target_function: str
    injection_time: VirtualTime


@dataclass
class GroundTruth:
    request_id: str
    planned: Optional[FaultSpec] = None
    injected: Optional[Injection] = None

    def to_json(self) -> dict:
        doc: dict = {"request_id": self.request_id, "injected": None}
        if self.injected is not None:
            inj = self.injected
            doc["injected"] = {
                "scenario": inj.scenario.value if inj.scenario else None,
                "mechanism": inj.mechanism.value,
                "target_function": inj.target_function,
                "injection_time": inj.injection_time,
            }
        return doc


@dataclass
class FaultInjector:
    """Hands out each request's planned fault to the first matching invocation."""

    plan: FaultPlan
    truths: dict[str, GroundTruth] = field(default_factory=dict)

    def register(self, request_id: str, spec: Optional[FaultSpec]) -> None:
        self.truths[request_id] = GroundTruth(request_id, spec)

    def effect_for(self, request_id: str, ctx: InvocationContext, now: VirtualTime) -> FaultEffect:
        truth = self.truths[request_id]
        spec = truth.planned
        if spec is None or truth.injected is not None or spec.target_function != ctx.function:
            return NO_EFFECT
        if spec.mechanism is Mechanism.ASYNC_DOWNSTREAM_BUG and ctx.trigger_mode != "async":
            return NO_EFFECT
        if spec.mechanism in (Mechanism.COLD_SYNC_TIMEOUT, Mechanism.SYNC_CALL_DELAY) and ctx.trigger_mode != "sync":
            return NO_EFFECT
        truth.injected = Injection(spec.scenario, spec.mechanism, spec.target_function, now)
        return apply_fault(spec, ctx)
