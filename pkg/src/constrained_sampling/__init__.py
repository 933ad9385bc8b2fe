"""Sampling from a sequence model under a prefix-checkable constraint, with backtracking."""

from .constrainers import (
    AcceptAll,
    Conjunction,
    DfaConstrainer,
    LengthCap,
    TrieConstrainer,
    build_dfa_from_pattern,
    build_trie,
    ingest_api_list,
)
from .core import (
    Constrainer,
    SequenceModel,
    Vocabulary,
    is_complete,
    joint_log_probability,
    joint_probability,
    valid_next_tokens,
)
from .decode import (
    STRATEGIES,
    DecodeConfig,
    DecodeSession,
    SampleRecord,
    backtrack_sample,
    backtrack_sample_bounded,
    lazy_topp_validity_scan,
)
from .errors import *  # noqa: F401,F403
from .models import NGramModel, RandomTableModel, TableModel, UniformModel
from .oracle import (
    EmpiricalDistribution,
    ExactDistribution,
    chi_square_test,
    em_at_k,
    enumerate_constrained,
    kl_divergence,
    pass_at_k,
    sliding_window_kl,
    tv_distance,
)

__version__ = "0.1.0"
