"""stacktriage: rank candidate developers for a crash from its stack trace
and version-control blame annotations."""

from .annotations import (
    Annotation,
    AnnotationLine,
    AnnotationStore,
    DeveloperStack,
    build_developer_stack,
    candidate_developers,
    parse_annotations,
)
from .evaluation import EvalResult, SplitSpec, bootstrap_diff, compute_metrics, split_by_time
from .features import IdfTable, compute_idf, frame_features, stack_features
from .ranker import ModelConfig, RankedList, RankingModel, rank, ranknet_loss, train
from .trace import (
    StackFrame,
    StackTrace,
    TokenSequence,
    compress_loops,
    parse_report,
    serialize_report,
    tokenize,
)

__version__ = "0.1.0"
