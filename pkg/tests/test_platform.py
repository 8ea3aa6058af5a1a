import pytest
from hypothesis import given, settings, strategies as st

from faultobs.core import FaultSpec, Mechanism, Scenario
from faultobs.faults import FaultPlan, PlanMode
from faultobs.platform import (
    STEP_ORDER,
    CompositionError,
    CompositionSpec,
    Edge,
    FunctionSpec,
    PlatformConfig,
    PlatformProfile,
    count_traversals,
    deploy,
    execute_invocation,
)
from faultobs.tracing import Mode, TracingMode


def single(base=100):
    return CompositionSpec({"f": FunctionSpec("f", base_exec_ms=base)}, (), "f")


def pair(mode="sync", **down):
    fns = {"up": FunctionSpec("up"), "down": FunctionSpec("down", **down)}
    return CompositionSpec(fns, (Edge("up", "down", mode),), "up")


def test_first_call_cold_then_warm():
    h = deploy(single(), PlatformProfile.named("openwhisk_like"))
    first = execute_invocation(h, "f")
    second = execute_invocation(h, "f")
    assert first.cold and [s[0] for s in first.steps] == list(STEP_ORDER)
    assert not second.cold
    assert [s[0] for s in second.steps] == ["validation", "resource_allocation", "invocation"]
    assert second.exec_ms == 100


def test_warm_ttl_expiry_makes_cold_again():
    h = deploy(single(), PlatformProfile.named("openwhisk_like"), config=PlatformConfig(warm_ttl_ms=1000))
    h.submit_request()
    h.submit_request(at=h.sim.now + 500)
    h.submit_request(at=h.sim.now + 5000)
    assert [r.cold for r in h.ledger()] == [True, False, True]


def test_unknown_function_rejected():
    h = deploy(single(), PlatformProfile.named("aws_like"))
    with pytest.raises(CompositionError):
        execute_invocation(h, "nope")


def test_cycle_reported_with_path():
    fns = {n: FunctionSpec(n) for n in "abc"}
    spec = CompositionSpec(fns, (Edge("a", "b"), Edge("b", "c"), Edge("c", "a")), "a")
    with pytest.raises(CompositionError, match="a -> b -> c -> a"):
        spec.validate()


def test_from_dict_applies_defaults_and_round_trips():
    doc = {"entry": "a", "functions": {"a": {}, "b": {"base_exec_ms": 5}},
           "edges": [{"caller": "a", "callee": "b", "mode": "async", "fanout": "n"}]}
    spec = CompositionSpec.from_dict(doc, {"memory_mb": 256})
    assert spec.functions["a"].memory_mb == 256 and spec.functions["b"].base_exec_ms == 5
    assert CompositionSpec.from_dict(spec.to_dict()) == spec


def test_profiles_are_fixed_to_their_code_policy():
    from faultobs.platform import CodePolicy, ProfileName
    with pytest.raises(ValueError):
        PlatformProfile(ProfileName.AWS_LIKE, CodePolicy.ERROR_CODE_ON_FAILURE)
    with pytest.raises(NotImplementedError):
        PlatformProfile(ProfileName.AWS_LIKE, CodePolicy.ALWAYS_SUCCESS_CODE, async_retries=True)


def run_one(spec, scenario, target, profile="openwhisk_like", mode=Mode.NONE):
    h = deploy(spec, PlatformProfile.named(profile), TracingMode(mode))
    h.submit_request(fault=None)
    env = h.submit_request(fault=FaultSpec.for_scenario(scenario, target))
    return h, env


def test_cold_sync_callee_times_out_caller_but_completes():
    h, env = run_one(pair(), Scenario.F3, "down")
    recs = [r for r in h.ledger() if r.request_id == env.request_id]
    assert {r.function: r.outcome for r in recs} == {"up": "timeout", "down": "success"}
    assert env.code == 504
    down = next(r for r in recs if r.function == "down")
    assert down.cold


@pytest.mark.parametrize("profile", ["aws_like", "openwhisk_like"])
@pytest.mark.parametrize("scenario,mode,target", [
    (Scenario.F1, None, "up"), (Scenario.F3, "sync", "down"), (Scenario.F4, "async", "down")])
def test_profile_code_contract(profile, scenario, mode, target):
    spec = pair(mode) if mode else CompositionSpec({"up": FunctionSpec("up")}, (), "up")
    h, env = run_one(spec, scenario, target, profile)
    entry = next(r for r in h.ledger() if r.request_id == env.request_id and r.function == "up")
    if profile == "aws_like":
        assert env.code == 200
    else:
        assert env.code_ok == (entry.outcome == "success")


@pytest.mark.parametrize("profile", ["aws_like", "openwhisk_like"])
def test_async_failure_leaves_response_untouched(profile):
    clean = deploy(pair("async"), PlatformProfile.named(profile)).submit_request()
    _, faulty = run_one(pair("async"), Scenario.F4, "down", profile)
    assert (faulty.code, faulty.outcome, dict(faulty.body)) == (clean.code, clean.outcome, dict(clean.body))


def _oracle_count(spec, payload):
    # literal expansion of the invocation tree, no memoisation
    total, stack = 0, [spec.entry]
    while stack:
        name = stack.pop()
        total += 1
        for e in spec.edges:
            if e.caller == name:
                stack.extend([e.callee] * e.count(payload))
    return total


@st.composite
def dags(draw):
    n = draw(st.integers(1, 5))
    names = [f"f{i}" for i in range(n)]
    edges = []
    for j in range(1, n):
        for i in range(j):
            if draw(st.booleans()):
                edges.append(Edge(names[i], names[j], draw(st.sampled_from(["sync", "async"])),
                                  draw(st.integers(0, 2))))
    fns = {m: FunctionSpec(m, base_exec_ms=draw(st.integers(0, 50))) for m in names}
    return CompositionSpec(fns, tuple(edges), names[0])


@settings(max_examples=60, deadline=None)
@given(dags(), st.integers(1, 3), st.sampled_from(list(Mode)))
def test_conservation_and_step_order(spec, requests, mode):
    h = deploy(spec, PlatformProfile.named("openwhisk_like"), TracingMode(mode))
    for _ in range(requests):
        h.submit_request(run=False)
    ledger = h.run_to_quiescence()
    assert len(ledger) == requests * _oracle_count(spec, {}) == requests * count_traversals(spec, {})
    for r in ledger:
        names = [s[0] for s in r.steps]
        it = iter(STEP_ORDER)
        assert all(any(n == o for o in it) for n in names)
        assert r.outcome == "success"
    assert ledger == sorted(ledger, key=lambda r: (r.start, r.seq))


def test_container_kill_stops_function_logs():
    spec = CompositionSpec({"f": FunctionSpec("f", base_exec_ms=400)}, (), "f")
    plan = FaultPlan((FaultSpec(Mechanism.CONTAINER_KILL, "f"),), mode=PlanMode.DETERMINISTIC_PER_REQUEST)
    h = deploy(spec, PlatformProfile.named("openwhisk_like"), fault_plan=plan)
    h.submit_request()
    rec = h.ledger()[0]
    assert rec.outcome == "error"
    kill_time = rec.end
    lines = h.logs.lines["f"]
    assert all(l.time <= kill_time for l in lines)
    assert not any(l.origin == "function" and l.message.endswith("finished") for l in lines)
    assert lines[-1].origin == "platform"


def test_invalid_dependency_fails_during_init():
    spec = CompositionSpec({"f": FunctionSpec("f")}, (), "f")
    plan = FaultPlan((FaultSpec(Mechanism.INVALID_DEPENDENCY, "f"),))
    h = deploy(spec, PlatformProfile.named("openwhisk_like"), fault_plan=plan)
    env = h.submit_request()
    rec = h.ledger()[0]
    assert env.code == 502 and rec.outcome == "error"
    assert [s[0] for s in rec.steps] == ["validation", "resource_allocation", "cold_start_init"]


def test_event_limit_guards_runaway_fanout():
    fns = {"a": FunctionSpec("a"), "b": FunctionSpec("b")}
    spec = CompositionSpec(fns, (Edge("a", "b", "async", 5000),), "a")
    h = deploy(spec, PlatformProfile.named("aws_like"), config=PlatformConfig(max_events=1000))
    from faultobs.engine import SimulationLimitExceeded
    with pytest.raises(SimulationLimitExceeded):
        h.submit_request()
