"""Fault observability on a simulated FaaS platform.

Simulates a function composition on an OpenWhisk- or AWS-like platform,
injects faults, traces requests with developer-driven or platform-supported
instrumentation, and classifies the evidence each channel leaves behind.
"""

from .classify import classify, classify_ambiguity, classify_consistency, classify_visibility, render_tables
from .core import Channel, Scenario, Tri
from .harness import build_bulk_import, run_experiment
from .platform import deploy

__all__ = [
    "Channel",
    "Scenario",
    "Tri",
    "build_bulk_import",
    "classify",
    "classify_ambiguity",
    "classify_consistency",
    "classify_visibility",
    "deploy",
    "render_tables",
    "run_experiment",
]
