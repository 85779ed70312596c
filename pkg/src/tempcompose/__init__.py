"""Qualitative request composition under temporal conditional preferences.

Rank service configurations with per-interval preference networks, index the
rankings in k-d trees, and select the subset of long-term requests that best
matches the provider's temporal model — exactly (brute force, memoized
search), greedily, or with tabular reinforcement learning, optionally reusing
policies learned from similar historical request sets.
"""

__version__ = "0.1.0"

from .cpnet import (
    AttributeDef,
    Comparison,
    CPNet,
    CPT,
    CPTRow,
    InducedGraph,
    Interval,
    RankedOutcomeSet,
    Schema,
    SemanticTable,
    TempCPNet,
    assign_ranks,
    compare_outcomes,
    induce_graph,
    semantic_map,
)
from .errors import (
    CompositionError,
    DegenerateTreeError,
    LibraryError,
    ModelError,
    OutOfDomainError,
    RequestError,
    TempComposeError,
    WorkloadError,
)
from .kdindex import IndexedTempCPNet, RankIndex, build_index, global_rank, lookup_rank
from .modelfile import load_tempcp, load_tempcp_path
from .problem import CompositionProblem, EpisodeState
from .workload import (
    Request,
    RequestSet,
    WorkloadSpec,
    aggregate,
    generate_workload,
    overlap_ratio,
    segment,
)

__all__ = [name for name in dir() if not name.startswith("_")]
