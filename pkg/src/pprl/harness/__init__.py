"""Synthetic data and evaluation harness.

Everything needed to reproduce desk-scale linkage-quality experiments:
frequency-table record generation, realistic corruption, file splitting,
pair-level evaluation against ground truth, threshold sweeps, and a
helper that boots the full service stack on local ports.
"""

from pprl.harness.corrupt import CorruptionConfig, corrupt_records
from pprl.harness.evaluate import EvaluationReport, GroundTruth, evaluate
from pprl.harness.generate import GeneratorConfig, generate
from pprl.harness.splitter import interleave_versions, split_records

__all__ = [
    "CorruptionConfig",
    "EvaluationReport",
    "GeneratorConfig",
    "GroundTruth",
    "corrupt_records",
    "evaluate",
    "generate",
    "interleave_versions",
    "split_records",
]
