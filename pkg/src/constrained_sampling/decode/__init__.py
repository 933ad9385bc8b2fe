from .session import STRATEGIES, DecodeConfig, DecodeSession, QMap, SampleRecord
from .strategies import (
    ScanResult,
    acceptance_ratio,
    argmax,
    asap_sample,
    backtrack_sample,
    backtrack_sample_bounded,
    collect_sequence,
    draw,
    lazy_topp_validity_scan,
    q_path_probability,
    rejection_update,
    sample_constrained_greedy,
    sample_unconstrained,
)

__all__ = [
    "STRATEGIES",
    "DecodeConfig",
    "DecodeSession",
    "QMap",
    "SampleRecord",
    "ScanResult",
    "acceptance_ratio",
    "argmax",
    "asap_sample",
    "backtrack_sample",
    "backtrack_sample_bounded",
    "collect_sequence",
    "draw",
    "lazy_topp_validity_scan",
    "q_path_probability",
    "rejection_update",
    "sample_constrained_greedy",
    "sample_unconstrained",
]
