"""Experiment configuration: dataclasses plus YAML/JSON loading."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .platform import CompositionError, CompositionSpec, PlatformConfig
from .tracing import Mode, SamplerConfig, SamplerKind, TracingMode

VARIANTS = ("none", "developer_driven", "platform_supported")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BulkImportWorkload:
    records: int = 150
    images_per_record: int = 1
    requests: int = 100
    request_interval_ms: int = 60_000

    def __post_init__(self):
        if self.records < 1:
            raise ConfigError("records must be at least 1")
        if self.images_per_record < 1:
            raise ConfigError("images_per_record must be at least 1")
        if self.requests < 0:
            raise ConfigError("requests must be non-negative")
        if self.request_interval_ms < 0:
            raise ConfigError("request_interval_ms must be non-negative")

    def payload(self) -> dict:
        return {"records": self.records, "images": self.records * self.images_per_record}

    @property
    def invocations_per_request(self) -> int:
        return 3 + self.records + self.records * self.images_per_record


@dataclass(frozen=True)
class CostParams:
    report_overhead_ms: int = 5
    tail_probability: float = 0.0
    tail_overhead_ms: int = 60_000
    platform_hook_overhead_ms: int = 2
    # memory the tracing platform components take from the worker pool
    platform_memory_mb: int = 192
    unit_memory_mb: int = 128

    def __post_init__(self):
        if not 0.0 <= self.tail_probability <= 1.0:
            raise ConfigError("tail_probability must lie in [0, 1]")
        units = self.platform_memory_mb / self.unit_memory_mb
        if not 1.0 <= units <= 2.0:
            raise ConfigError(f"platform overhead of {units:g} units is outside [1, 2]")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    profile: str = "openwhisk_like"
    variants: tuple[str, ...] = VARIANTS
    workload: BulkImportWorkload = field(default_factory=BulkImportWorkload)
    sampling: float = 1.0
    sampler: str = SamplerKind.PROBABILITY_BASED.value
    event_flag_header: str = "X-Sample-Trace"
    # fraction of requests carrying the client sampling flag
    flagged_fraction: float = 0.0
    faults: Mapping[str, Any] = field(default_factory=dict)
    costs: CostParams = field(default_factory=CostParams)
    platform: PlatformConfig = field(default_factory=PlatformConfig)
    composition: Optional[Mapping[str, Any]] = None
    catalog_records: int = 2

    def __post_init__(self):
        if not 0.0 <= self.sampling <= 1.0:
            raise ConfigError(f"sampling {self.sampling} outside [0, 1]")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; expected one of {', '.join(VARIANTS)}")
        if self.profile not in ("aws_like", "openwhisk_like"):
            raise ConfigError(f"unknown profile {self.profile!r}")

    def tracing(self, variant: str) -> TracingMode:
        c = self.costs
        sampler = SamplerConfig(SamplerKind(self.sampler), self.sampling, self.event_flag_header)
        return TracingMode(Mode(variant), sampler, c.report_overhead_ms, c.tail_probability,
                           c.tail_overhead_ms, c.platform_hook_overhead_ms)

    def composition_spec(self) -> Optional[CompositionSpec]:
        if self.composition is None:
            return None
        doc = dict(self.composition)
        return CompositionSpec.from_dict(doc, doc.get("defaults"))

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["variants"] = list(self.variants)
        doc["faults"] = _plain(self.faults)
        doc["composition"] = _plain(self.composition) if self.composition is not None else None
        return doc


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, doc: Optional[Mapping], where: str):
    doc = dict(doc or {})
    known = {f.name for f in fields(cls)}
    extra = sorted(set(doc) - known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {', '.join(extra)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_mapping(doc: Optional[Mapping]) -> ExperimentConfig:
    doc = dict(doc or {})
    nested = {
        "workload": BulkImportWorkload,
        "costs": CostParams,
        "platform": PlatformConfig,
    }
    for key, cls in nested.items():
        if key in doc:
            doc[key] = _build(cls, doc[key], key)
    if "variants" in doc:
        doc["variants"] = tuple(expand_variants(doc["variants"]))
    comp = doc.get("composition")
    if comp is not None:
        # a composition file may carry its own profile
        comp = dict(comp)
        if "profile" in comp and "profile" not in doc:
            doc["profile"] = comp["profile"]
        doc["composition"] = comp
    cfg = _build(ExperimentConfig, doc, "config")
    try:
        cfg.composition_spec()
    except (CompositionError, TypeError) as exc:
        raise ConfigError(f"composition: {exc}") from None
    return cfg


def expand_variants(value) -> list[str]:
    if isinstance(value, str):
        value = [value]
    out = []
    for v in value:
        out.extend(VARIANTS if v == "all" else [v])
    return list(dict.fromkeys(out))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc.__class__.__name__})") from None
    if doc is not None and not isinstance(doc, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_mapping(doc)


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Apply flag values on top of a file config; None means not given."""
    changes = {k: v for k, v in changes.items() if v is not None}
    workload = {k: changes.pop(k) for k in ("records", "requests", "images_per_record") if k in changes}
    if workload:
        changes["workload"] = replace(cfg.workload, **workload)
    if "variants" in changes:
        changes["variants"] = tuple(expand_variants(changes["variants"]))
    return replace(cfg, **changes)
