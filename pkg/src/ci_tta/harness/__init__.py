"""Datasets, metrics, ablation sweeps, and the desk-scale experiment tooling."""

from .manifest import Manifest, load_manifest, save_manifest
from .sweep import (
    ConfidenceHistogram,
    SweepReport,
    SweepRow,
    SweepSpec,
    export_confidence_histograms,
    load_report_csv,
    results_to_jsonl,
    run_sweep,
)
from .synth import generate_synthetic_dg
from .train import TrainReport, train_tiny_model

__all__ = [
    "Manifest",
    "load_manifest",
    "save_manifest",
    "SweepSpec",
    "SweepRow",
    "SweepReport",
    "ConfidenceHistogram",
    "run_sweep",
    "export_confidence_histograms",
    "load_report_csv",
    "results_to_jsonl",
    "generate_synthetic_dg",
    "TrainReport",
    "train_tiny_model",
]
