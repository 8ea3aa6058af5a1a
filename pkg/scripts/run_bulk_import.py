#!/usr/bin/env python3
"""Run the bulk import experiment for every tracing variant and print the report.

    python3 scripts/run_bulk_import.py [--config configs/bulk_import.yaml] [--out out/]
"""

import argparse
import time

from faultobs.config import config_from_mapping, load_config
from faultobs.harness import render_report_md, run_all, write_artifacts


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="out")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else config_from_mapping({})
    start = time.perf_counter()
    arts = run_all(cfg)
    report = write_artifacts(args.out, cfg, arts)
    print(render_report_md(report))
    print(f"wall time {time.perf_counter() - start:.1f}s, artifacts in {args.out}")


if __name__ == "__main__":
    main()
