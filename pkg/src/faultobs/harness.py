"""Bulk-import experiment: composition, variant runs, cost accounting and
the report."""

from __future__ import annotations

import json
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .classify import classify
from .config import VARIANTS, BulkImportWorkload, CostParams, ExperimentConfig
from .core import Channel, Scenario
from .evidence import EvidenceSet, collect_evidence, dumps_jsonl
from .faults import FaultPlan, GroundTruth, plan_faults
from .platform import (
    CompositionSpec,
    Edge,
    FunctionSpec,
    InvocationRecord,
    PlatformConfig,
    PlatformProfile,
    ResponseEnvelope,
    deploy,
)
from .scenarios import CATALOG_SCENARIOS, build_catalog
from .tracing import Collector, Mode, TracingMode, export_zipkin_v2

FETCH = "fetch_product_images"

BULK_TARGETS = {
    Scenario.F1.value: "insert_products",
    Scenario.F2.value: FETCH,
    Scenario.F3.value: "update_catalogue",
    Scenario.F4.value: "render_listing",
    Scenario.N1.value: "update_catalogue",
    "invalid_dependency": "render_listing",
    "container_kill": FETCH,
}


def build_bulk_import() -> CompositionSpec:
    functions = {
        "import_csv": FunctionSpec("import_csv", base_exec_ms=200),
        "insert_products": FunctionSpec("insert_products", base_exec_ms=300),
        "update_catalogue": FunctionSpec("update_catalogue", base_exec_ms=100),
        # the longest-running function of the application
        FETCH: FunctionSpec(FETCH, base_exec_ms=800, external_calls=("image_cdn",), external_call_ms=400),
        "render_listing": FunctionSpec("render_listing", base_exec_ms=150),
    }
    edges = (
        Edge("import_csv", "insert_products", "sync"),
        Edge("insert_products", "update_catalogue", "sync"),
        Edge("insert_products", FETCH, "async", fanout="images"),
        Edge("insert_products", "render_listing", "async", fanout="records"),
    )
    spec = CompositionSpec(functions, edges, "import_csv")
    spec.validate()
    return spec


@dataclass
class ExperimentArtifacts:
    variant: str
    workload: BulkImportWorkload
    seed: int
    plan: FaultPlan
    ledger: list[InvocationRecord]
    envelopes: list[ResponseEnvelope]
    evidence: list[EvidenceSet]
    collector: Collector
    ground_truth: list[GroundTruth]
    developer_flushes: int = 0
    platform_flushes: int = 0
    profile: str = "openwhisk_like"

    def zipkin(self) -> bytes:
        return export_zipkin_v2(self.collector)


def run_experiment(variant: str, workload: BulkImportWorkload, fault_plan: Optional[FaultPlan] = None,
                   seed: int = 0, profile: str = "openwhisk_like", tracing: Optional[TracingMode] = None,
                   composition: Optional[CompositionSpec] = None,
                   platform: Optional[PlatformConfig] = None, flagged_fraction: float = 0.0) -> ExperimentArtifacts:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    tracing = tracing or TracingMode(Mode(variant))
    if tracing.mode is not Mode(variant):
        raise ValueError(f"tracing mode {tracing.mode.value} does not match variant {variant}")
    spec = composition or build_bulk_import()
    plan = fault_plan or FaultPlan(seed=seed)
    handle = deploy(spec, PlatformProfile.named(profile), tracing, plan, platform, seed)
    handle.plan_requests(workload.requests)
    flagged = int(round(flagged_fraction * workload.requests))
    for i in range(workload.requests):
        handle.submit_request(workload.payload(), client_sample_flag=i < flagged,
                              at=i * workload.request_interval_ms, run=False)
    handle.run_to_quiescence()
    envelopes = handle.envelopes()
    evidence = [collect_evidence(handle, e.request_id, e) for e in envelopes]
    return ExperimentArtifacts(variant, workload, seed, plan, handle.ledger(), envelopes, evidence,
                               handle.collector, handle.ground_truth(), handle.developer_flushes,
                               handle.platform_flushes, profile)


@dataclass
class VariantCost:
    variant: str
    matched: int
    mean_ms: float
    median_ms: float
    max_ms: int
    provider_units: float
    provider_memory_mb: int
    network_flushes: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CostReport:
    variants: dict[str, VariantCost] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {k: v.to_json() for k, v in self.variants.items()}


def _fetch_times(art: ExperimentArtifacts, function: str) -> dict[tuple[str, int], int]:
    seen: Counter = Counter()
    out = {}
    for rec in sorted(art.ledger, key=lambda r: r.seq):
        if rec.function != function or rec.outcome != "success":
            continue
        key = (rec.request_id, seen[rec.request_id])
        seen[rec.request_id] += 1
        out[key] = rec.exec_ms
    return out


def account_costs(artifacts: ExperimentArtifacts, baseline: ExperimentArtifacts,
                  costs: Optional[CostParams] = None, function: str = FETCH) -> VariantCost:
    """Per-invocation function-time deltas against the baseline run, plus
    the provider-side execution-unit charge of the variant."""
    if artifacts.workload != baseline.workload:
        raise ValueError("artifacts and baseline were produced by different workloads")
    if artifacts.seed != baseline.seed:
        raise ValueError(f"seed mismatch: {artifacts.seed} vs baseline {baseline.seed}")
    if artifacts.plan != baseline.plan:
        raise ValueError("artifacts and baseline used different fault plans")
    costs = costs or CostParams()
    mine, base = _fetch_times(artifacts, function), _fetch_times(baseline, function)
    deltas = [mine[k] - base[k] for k in sorted(mine.keys() & base.keys())]
    if deltas:
        mean, median, top = statistics.fmean(deltas), float(statistics.median(deltas)), max(deltas)
    else:
        mean, median, top = 0.0, 0.0, 0
    platform = artifacts.variant in (Mode.PLATFORM_SUPPORTED.value, Mode.PLATFORM_SUPPORTED_AUTO.value)
    memory = costs.platform_memory_mb if platform else 0
    return VariantCost(artifacts.variant, len(deltas), round(mean, 6), median, top,
                       memory / costs.unit_memory_mb, memory, artifacts.developer_flushes)


def observability_summary(art: ExperimentArtifacts, catalog) -> dict:
    """Share of faulty requests with each property, per scenario and channel."""
    channels = [Channel.RESPONSE, Channel.LOG]
    if art.variant != Mode.NONE.value:
        channels.append(Channel.TRACE)
    tally: dict = {}
    for es, truth in zip(art.evidence, art.ground_truth):
        if truth.injected is None:
            continue
        label = truth.injected.scenario.value if truth.injected.scenario else truth.injected.mechanism.value
        for ch in channels:
            v = classify(es, ch, truth, catalog, art.profile, art.variant)
            t = tally.setdefault(label, {}).setdefault(ch.value, Counter())
            t["requests"] += 1
            t["visible"] += v.visible
            t["unambiguous"] += v.unambiguous.value == "true"
            t["consistent"] += v.consistent
            t["partial"] += v.partial
    return {s: {ch: dict(sorted(c.items())) for ch, c in sorted(chs.items())} for s, chs in sorted(tally.items())}


def _catalog_for(cfg: ExperimentConfig, spec: CompositionSpec, targets: Mapping[str, str]):
    wl = BulkImportWorkload(records=cfg.catalog_records, images_per_record=cfg.workload.images_per_record,
                            requests=1)
    scenarios = [s for s in CATALOG_SCENARIOS if s.value in targets]
    confs = [(cfg.profile, v) for v in cfg.variants]
    catalog, _ = build_catalog(confs, scenarios, cfg.seed, spec, targets, wl.payload())
    return catalog


def run_all(cfg: ExperimentConfig) -> dict[str, ExperimentArtifacts]:
    spec = cfg.composition_spec() or build_bulk_import()
    faults = dict(cfg.faults)
    if cfg.composition is None:
        faults.setdefault("default_targets", BULK_TARGETS)
    plan = plan_faults(faults, cfg.seed)
    out = {}
    for variant in cfg.variants:
        out[variant] = run_experiment(variant, cfg.workload, plan, cfg.seed, cfg.profile, cfg.tracing(variant),
                                      spec, cfg.platform, cfg.flagged_fraction)
    return out


def build_report(cfg: ExperimentConfig, arts: Mapping[str, ExperimentArtifacts]) -> dict:
    spec = cfg.composition_spec() or build_bulk_import()
    targets = dict(BULK_TARGETS) if cfg.composition is None else {}
    targets.update(dict(cfg.faults).get("default_targets", {}))
    catalog = _catalog_for(cfg, spec, targets) if targets else None
    baseline = arts.get(Mode.NONE.value)
    variants = {}
    for name, art in arts.items():
        traces = art.collector.all_traces()
        entry = {
            "invocations": len(art.ledger),
            "spans": art.collector.span_count(),
            "traces": len(traces),
            "dropped_batches": art.collector.dropped_batches,
            "responses": dict(sorted(Counter(str(e.code) for e in art.envelopes).items())),
            "outcomes": dict(sorted(Counter(r.outcome for r in art.ledger).items())),
            "cold_starts": sum(r.cold for r in art.ledger),
            "injected": dict(sorted(Counter(
                (g.injected.scenario.value if g.injected.scenario else g.injected.mechanism.value)
                for g in art.ground_truth if g.injected).items())),
        }
        if baseline is not None:
            entry["cost"] = account_costs(art, baseline, cfg.costs).to_json()
        if catalog is not None:
            entry["observability"] = observability_summary(art, catalog)
        variants[name] = entry
    return {
        "config": cfg.to_json(),
        "invocations_per_request": cfg.workload.invocations_per_request if cfg.composition is None else None,
        "catalog": [s.value for s in CATALOG_SCENARIOS if s.value in targets],
        "cost_contract": "ordinal: baseline deltas are zero, developer_driven <= platform_supported; "
                         "magnitudes follow the configured cost parameters",
        "variants": variants,
    }


def render_report_md(report: dict) -> str:
    lines = ["# Bulk import experiment", ""]
    cfg = report["config"]
    wl = cfg["workload"]
    lines += [f"seed {cfg['seed']}, profile {cfg['profile']}, {wl['requests']} requests of "
              f"{wl['records']} records, sampling {cfg['sampling']}", ""]
    lines += ["| Variant | Invocations | Spans | Traces | Cold starts |", "|---|---|---|---|---|"]
    for name, v in report["variants"].items():
        lines.append(f"| {name} | {v['invocations']} | {v['spans']} | {v['traces']} | {v['cold_starts']} |")
    if all("cost" in v for v in report["variants"].values()):
        lines += ["", f"## Function time impact on {FETCH} (virtual ms)", "",
                  "| Variant | Mean | Median | Max | Provider units | Network flushes |",
                  "|---|---|---|---|---|---|"]
        for name, v in report["variants"].items():
            c = v["cost"]
            lines.append(f"| {name} | {c['mean_ms']:g} | {c['median_ms']:g} | {c['max_ms']} "
                         f"| {c['provider_units']:g} | {c['network_flushes']} |")
        lines += ["", f"Contract: {report['cost_contract']}."]
    for name, v in report["variants"].items():
        obs = v.get("observability")
        if not obs:
            continue
        lines += ["", f"## Observability, {name}", "",
                  "| Fault | Channel | Requests | Visible | Unambiguous | Consistent | Partial |",
                  "|---|---|---|---|---|---|---|"]
        for fault, chs in obs.items():
            for ch, c in chs.items():
                lines.append(f"| {fault} | {ch} | {c.get('requests', 0)} | {c.get('visible', 0)} "
                             f"| {c.get('unambiguous', 0)} | {c.get('consistent', 0)} | {c.get('partial', 0)} |")
    lines.append("")
    return "\n".join(lines)


def write_artifacts(out_dir, cfg: ExperimentConfig, arts: Mapping[str, ExperimentArtifacts]) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(cfg, arts)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.md").write_text(render_report_md(report))
    for name, art in arts.items():
        (out / f"traces-{name}.json").write_bytes(art.zipkin())
        (out / f"evidence-{name}.jsonl").write_text(dumps_jsonl(art.evidence))
    return report
