"""Metrics, streaming-equivalence harness and benchmarks."""

from .harness import (PersonalizationResult, align_output, personalization_eval, rtf_benchmark,
                      streaming_vs_offline)
from .metrics import DB_CAP, METRICS, REL_FLOOR, MetricReport, TsosConfig, bak_suppr, erle, si_sdr, tsos

__all__ = [
    "DB_CAP", "METRICS", "MetricReport", "PersonalizationResult", "REL_FLOOR", "TsosConfig", "align_output",
    "bak_suppr", "erle", "personalization_eval", "rtf_benchmark", "si_sdr", "streaming_vs_offline", "tsos",
]
