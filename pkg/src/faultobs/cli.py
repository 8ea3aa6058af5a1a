"""faultobs command line.

    faultobs run --variant all --requests 100 --records 150 --out out/
    faultobs tables --profile openwhisk_like
    faultobs classify --config exp.yaml --variant developer_driven
    faultobs export-traces --variant platform_supported --out out/

Every failure prints one line starting with ``error:`` on stderr and exits
nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .classify import PROFILES, TRACE_COLUMNS, CatalogError, IncompleteMatrixError, classify, render_tables
from .config import VARIANTS, ConfigError, ExperimentConfig, config_from_mapping, load_config, override
from .core import Channel
from .faults import FaultPlanError
from .harness import BULK_TARGETS, _catalog_for, build_bulk_import, run_all, write_artifacts
from .platform import CompositionError
from .scenarios import golden_matrix
from .tracing import Mode

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _sampling(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sampling expects a number, got {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"--sampling {value} outside [0, 1]")
    return value


def _count(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="faultobs", description="Fault observability experiments on a simulated FaaS platform.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, variant_default="all"):
        sp.add_argument("--config", help="experiment config file (YAML or JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--variant", default=None, choices=[*VARIANTS, "all"],
                        help=f"variant to run (default: {variant_default})")
        sp.add_argument("--profile", choices=list(PROFILES))
        sp.add_argument("--requests", type=_count)
        sp.add_argument("--records", type=_count)
        sp.add_argument("--sampling", type=_sampling, help="probability-based sampling rate in [0, 1]")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--format", choices=["json", "md"], default="md")

    common(sub.add_parser("run", help="run experiment variants and write artifacts"))
    common(sub.add_parser("classify", help="verdicts for every faulty request"))
    common(sub.add_parser("export-traces", help="write Zipkin v2 trace files"), "platform_supported")
    t = sub.add_parser("tables", help="observability tables from the golden scenario runs")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--profile", choices=list(PROFILES))
    t.add_argument("--mode", choices=[m.value for m in Mode if m is not Mode.NONE],
                   help="only the trace column(s) with this tracing mode")
    t.add_argument("--out", help="write tables.md and tables.json here")
    t.add_argument("--format", choices=["json", "md"], default="md")
    return p


def resolve_config(args, default_variant: str = "all") -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_mapping({})
    variant = args.variant
    if variant is None and not args.config:
        variant = default_variant
    records = args.records
    if records == 0:
        raise ConfigError("--records must be at least 1")
    return override(cfg, seed=args.seed, profile=args.profile, records=records, requests=args.requests,
                    sampling=args.sampling, variants=variant)


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out or "out")
    arts = run_all(cfg)
    report = write_artifacts(out, cfg, arts)
    if args.format == "json":
        print(json.dumps({k: {"invocations": v["invocations"], "spans": v["spans"], "traces": v["traces"]}
                          for k, v in report["variants"].items()}, sort_keys=True))
    else:
        for name, v in report["variants"].items():
            print(f"{name}: {v['invocations']} invocations, {v['spans']} spans, {v['traces']} traces")
        print(f"artifacts in {out}")
    return 0


def cmd_classify(args) -> int:
    cfg = resolve_config(args)
    arts = run_all(cfg)
    targets = dict(BULK_TARGETS) if cfg.composition is None else {}
    targets.update(dict(cfg.faults).get("default_targets", {}))
    if not targets:
        raise ConfigError("classify needs default_targets in the fault plan for a custom composition")
    spec = cfg.composition_spec() or build_bulk_import()
    catalog = _catalog_for(cfg, spec, targets)
    rows = []
    for variant, art in arts.items():
        channels = [Channel.RESPONSE, Channel.LOG] + ([Channel.TRACE] if variant != "none" else [])
        for es, truth in zip(art.evidence, art.ground_truth):
            if truth.injected is None:
                continue
            inj = truth.injected
            for ch in channels:
                v = classify(es, ch, truth, catalog, cfg.profile, variant)
                rows.append({
                    "request_id": es.request_id,
                    "scenario": inj.scenario.value if inj.scenario else inj.mechanism.value,
                    "profile": cfg.profile, "tracing_mode": variant, "channel": ch.value,
                    "visible": v.visible, "unambiguous": v.unambiguous.value, "consistent": v.consistent,
                    "partial": v.partial,
                })
    if args.format == "json":
        text = json.dumps(rows, indent=2, sort_keys=True) + "\n"
    else:
        lines = ["| Request | Fault | Mode | Channel | Visible | Unambiguous | Consistent | Partial |",
                 "|---|---|---|---|---|---|---|---|"]
        lines += [f"| {r['request_id']} | {r['scenario']} | {r['tracing_mode']} | {r['channel']} | "
                  f"{str(r['visible']).lower()} | {r['unambiguous']} | {str(r['consistent']).lower()} | "
                  f"{str(r['partial']).lower()} |" for r in rows]
        text = "\n".join(lines) + "\n"
    _emit(text, args.out, f"verdicts.{args.format}")
    return 0


def cmd_tables(args) -> int:
    profiles = [args.profile] if args.profile else list(PROFILES)
    columns = [c for c in TRACE_COLUMNS
               if (args.profile is None or c.profile == args.profile) and (args.mode is None or c.mode == args.mode)]
    if args.mode is not None:
        profiles = []
    seed = args.seed
    if seed is None:
        seed = load_config(args.config).seed if args.config else 0
    _, matrix = golden_matrix(profiles, columns, seed)
    report = render_tables(matrix, profiles, columns)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "tables.md").write_text(report.markdown)
        (out / "tables.json").write_text(report.json())
    sys.stdout.write(report.json() if args.format == "json" else report.markdown)
    return 0


def cmd_export_traces(args) -> int:
    cfg = resolve_config(args, default_variant="platform_supported")
    arts = run_all(cfg)
    if args.out is None and len(arts) == 1:
        sys.stdout.write(next(iter(arts.values())).zipkin().decode() + "\n")
        return 0
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    for name, art in arts.items():
        (out / f"traces-{name}.json").write_bytes(art.zipkin())
        print(out / f"traces-{name}.json")
    return 0


def _emit(text: str, out: Optional[str], name: str) -> None:
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / name).write_text(text)
    else:
        sys.stdout.write(text)


COMMANDS = {"run": cmd_run, "classify": cmd_classify, "tables": cmd_tables, "export-traces": cmd_export_traces}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        _diag(exc)
        return EXIT_USAGE
    except (ConfigError, FaultPlanError, CompositionError, CatalogError, IncompleteMatrixError, ValueError,
            OSError) as exc:
        _diag(exc)
        return EXIT_FAILURE


def _diag(exc: BaseException) -> None:
    text = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
    print("error: " + " ".join(text.split()), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
