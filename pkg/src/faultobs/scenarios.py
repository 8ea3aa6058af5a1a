"""Golden scenario runs and the evidence catalog built from them.

Every scenario runs in isolation on a fresh deployment: one clean request
warms the runtimes, then the faulty request is observed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .classify import (
    PROFILES,
    TRACE_COLUMNS,
    ScenarioEvidenceCatalog,
    TraceColumn,
    VerdictCell,
    classify,
    shown_values,
)
from .core import TABLE_SCENARIOS, Channel, FaultSpec, Scenario
from .evidence import EvidenceSet, collect_evidence
from .faults import GroundTruth
from .platform import CompositionSpec, Edge, FunctionSpec, PlatformConfig, PlatformProfile, deploy
from .tracing import Mode, SamplerConfig, TracingMode

CATALOG_SCENARIOS = (Scenario.F1, Scenario.F2, Scenario.F3, Scenario.F4, Scenario.N1)

UPSTREAM = "upstream"
DOWNSTREAM = "downstream"
THIRD_PARTY = "third_party_api"


def minimal_composition(scenario: Scenario) -> tuple[CompositionSpec, str]:
    """Smallest composition that can exhibit `scenario`, and its fault target."""
    scenario = Scenario(scenario)
    up = FunctionSpec(UPSTREAM, base_exec_ms=100)
    down = FunctionSpec(DOWNSTREAM, base_exec_ms=100)
    if scenario is Scenario.F1:
        return CompositionSpec({UPSTREAM: up}, (), UPSTREAM), UPSTREAM
    if scenario is Scenario.F2:
        up = FunctionSpec(UPSTREAM, base_exec_ms=100, external_calls=(THIRD_PARTY,))
        return CompositionSpec({UPSTREAM: up}, (), UPSTREAM), UPSTREAM
    mode = "async" if scenario is Scenario.F4 else "sync"
    spec = CompositionSpec({UPSTREAM: up, DOWNSTREAM: down}, (Edge(UPSTREAM, DOWNSTREAM, mode),), UPSTREAM)
    return spec, DOWNSTREAM


@dataclass
class ScenarioRun:
    scenario: Scenario
    profile: str
    mode: str
    evidence: EvidenceSet
    truth: GroundTruth


def run_scenario(scenario: Scenario, profile: str, mode: str, seed: int = 0,
                 composition: Optional[CompositionSpec] = None, target: Optional[str] = None,
                 payload: Optional[Mapping] = None, config: Optional[PlatformConfig] = None) -> ScenarioRun:
    scenario = Scenario(scenario)
    if composition is None:
        composition, default_target = minimal_composition(scenario)
        target = target or default_target
    if target is None:
        raise ValueError(f"{scenario.value}: no fault target for the given composition")
    tracing = TracingMode(Mode(mode), SamplerConfig())
    handle = deploy(composition, PlatformProfile.named(profile), tracing, config=config, seed=seed)
    handle.submit_request(payload, fault=None)
    fault = FaultSpec.for_scenario(scenario, target)
    envelope = handle.submit_request(payload, fault=fault)
    request_id = handle.requests[-1].request_id
    evidence = collect_evidence(handle, request_id, envelope)
    return ScenarioRun(scenario, str(profile), str(mode), evidence, handle.injector.truths[request_id])


def _val(x) -> str:
    return getattr(x, "value", x)


def build_catalog(configurations: Iterable[tuple[str, str]], scenarios: Sequence[Scenario] = CATALOG_SCENARIOS,
                  seed: int = 0, composition: Optional[CompositionSpec] = None,
                  targets: Optional[Mapping[str, str]] = None, payload: Optional[Mapping] = None):
    """Run every scenario for every (profile, mode); returns (catalog, runs)."""
    catalog = ScenarioEvidenceCatalog()
    runs = []
    for profile, mode in configurations:
        for s in scenarios:
            target = (targets or {}).get(Scenario(s).value) if composition is not None else None
            run = run_scenario(s, _val(profile), _val(mode), seed, composition, target, payload)
            catalog.add(run.profile, run.mode, run.scenario, run.evidence)
            runs.append(run)
    return catalog, runs


def table_configurations(profiles: Sequence[str] = PROFILES,
                         trace_columns: Sequence[TraceColumn] = TRACE_COLUMNS) -> list[tuple[str, str]]:
    confs = [(p, Mode.NONE.value) for p in profiles]
    confs += [(c.profile, c.mode) for c in trace_columns]
    return list(dict.fromkeys(confs))


def verdict_matrix(catalog: ScenarioEvidenceCatalog, runs: Iterable[ScenarioRun],
                   scenarios: Sequence[Scenario] = TABLE_SCENARIOS) -> list[VerdictCell]:
    cells = []
    for run in runs:
        if run.scenario not in scenarios:
            continue
        channels = [Channel.RESPONSE, Channel.LOG]
        if run.mode != Mode.NONE.value:
            channels.append(Channel.TRACE)
        for ch in channels:
            verdict = classify(run.evidence, ch, run.truth, catalog, run.profile, run.mode)
            cells.append(VerdictCell(run.scenario, run.profile, run.mode, ch, verdict,
                                     shown_values(run.evidence, ch)))
    return cells


def golden_matrix(profiles: Sequence[str] = PROFILES, trace_columns: Sequence[TraceColumn] = TRACE_COLUMNS,
                  seed: int = 0):
    """Catalog and verdict matrix behind the three tables."""
    catalog, runs = build_catalog(table_configurations(profiles, trace_columns), seed=seed)
    return catalog, verdict_matrix(catalog, runs)
