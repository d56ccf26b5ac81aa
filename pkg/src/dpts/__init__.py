"""Parallel tree search over a batched expansion backend."""

from .backends import HttpBackend, HttpBackendConfig, SyntheticEnv, brute_force_best
from .baselines import (Algorithm, BaselineConfig, beam_run, best_of_n_run, exhaustive_run,
                        mcts_run)
from .core import (Budget, CandidatePool, Config, MemoryModel, Mode, Node, ParallelQueue,
                   ThresholdState, Tree, add_child, create_root)
from .errors import (BackendError, BackendUnavailable, DPTSError, EmptyBatch, EmptyTrace,
                     InvalidConfig, InvalidInput, IoError, LimitExceeded, NoBestPath, NotFound,
                     ProtocolViolation)
from .metrics import MetricsSummary, summarize
from .scheduler import (TransitionThresholds, compute_queue_size, compute_threshold, run,
                        search, transition)
from .streamline import assemble_batch, departition, partition_outputs
from .trace import RunResult, RunTrace, StopReason

__version__ = "0.1.0"

__all__ = [
    "Algorithm", "BackendError", "BackendUnavailable", "BaselineConfig", "Budget",
    "CandidatePool", "Config", "DPTSError", "EmptyBatch", "EmptyTrace", "HttpBackend",
    "HttpBackendConfig", "InvalidConfig", "InvalidInput", "IoError", "LimitExceeded",
    "MemoryModel", "MetricsSummary", "Mode", "NoBestPath", "Node", "NotFound",
    "ParallelQueue", "ProtocolViolation", "RunResult", "RunTrace", "StopReason",
    "SyntheticEnv", "ThresholdState", "TransitionThresholds", "Tree", "add_child",
    "assemble_batch", "beam_run", "best_of_n_run", "brute_force_best", "compute_queue_size",
    "compute_threshold", "create_root", "departition", "exhaustive_run", "mcts_run",
    "partition_outputs", "run", "search", "summarize", "transition",
]
