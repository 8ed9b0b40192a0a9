"""Evaluation protocol: time-ordered splits, Acc@k / MRR, paired bootstrap.

Reports are split by ascending timestamp (train prefix, validation middle,
test suffix) to avoid leaking future blame activity into training. Model
comparisons use a paired bootstrap over per-query target ranks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ranker import RankedList
from .trace import StackTrace

DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)

METRICS = ("mrr", "acc@1", "acc@5", "acc@10")


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[str, ...]
    validation_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def select(self, reports: Sequence[StackTrace], part: str) -> list[StackTrace]:
        ids = set(getattr(self, f"{part}_ids"))
        return [r for r in reports if r.report_id in ids]


def split_by_time(
    reports: Sequence[StackTrace], fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
) -> SplitSpec:
    """Stable sort by (timestamp, id), then floor(train), floor(validation),
    remainder test. Fewer than 3 reports cannot be partitioned."""
    if len(reports) < 3:
        raise ValueError(f"need at least 3 reports to split, got {len(reports)}")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    ordered = sorted(reports, key=lambda r: (r.timestamp, r.report_id))
    n = len(ordered)
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    ids = [r.report_id for r in ordered]
    return SplitSpec(
        train_ids=tuple(ids[:n_train]),
        validation_ids=tuple(ids[n_train : n_train + n_val]),
        test_ids=tuple(ids[n_train + n_val :]),
    )


@dataclass(frozen=True)
class EvalResult:
    acc1: float
    acc5: float
    acc10: float
    mrr: float
    ranks: tuple[int, ...]  # per-query rank of the target

    @property
    def n_queries(self) -> int:
        return len(self.ranks)

    def as_dict(self) -> dict:
        return {
            "acc@1": self.acc1,
            "acc@5": self.acc5,
            "acc@10": self.acc10,
            "mrr": self.mrr,
            "n_queries": self.n_queries,
        }


def metric_value(ranks: np.ndarray, metric: str) -> float:
    if metric == "mrr":
        return float((1.0 / ranks).mean())
    if metric.startswith("acc@"):
        k = int(metric.split("@")[1])
        return float((ranks <= k).mean())
    raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")


def metrics_from_ranks(ranks: Sequence[int]) -> EvalResult:
    if not ranks:
        raise ValueError("cannot compute metrics over an empty query set")
    arr = np.asarray(ranks, dtype=np.float64)
    return EvalResult(
        acc1=metric_value(arr, "acc@1"),
        acc5=metric_value(arr, "acc@5"),
        acc10=metric_value(arr, "acc@10"),
        mrr=metric_value(arr, "mrr"),
        ranks=tuple(int(r) for r in ranks),
    )


def compute_metrics(rankings: Sequence[RankedList], targets: Sequence[str]) -> EvalResult:
    """Acc@{1,5,10} and MRR over per-query rankings; every target must be
    present in its ranked list."""
    if len(rankings) != len(targets):
        raise ValueError("rankings and targets must be the same length")
    ranks = []
    for ranking, target in zip(rankings, targets):
        try:
            ranks.append(ranking.rank_of(target))
        except KeyError:
            raise ValueError(f"target {target!r} missing from its ranked list") from None
    return metrics_from_ranks(ranks)


@dataclass(frozen=True)
class BootstrapResult:
    lo: float
    hi: float
    significant: bool
    point_diff: float

    def as_dict(self) -> dict:
        return {
            "interval": [self.lo, self.hi],
            "significant": self.significant,
            "point_diff": self.point_diff,
        }


def bootstrap_diff(
    ranks_a: Sequence[int],
    ranks_b: Sequence[int],
    metric: str = "mrr",
    n_resamples: int = 100,
    level: float = 0.95,
    seed: int = 0,
) -> BootstrapResult:
    """Paired percentile bootstrap of metric(A) - metric(B).

    Query indices are resampled once per iteration and both models are
    evaluated on the same resample; the difference is judged significant
    when 0 falls outside the central `level` interval.
    """
    a = np.asarray(ranks_a, dtype=np.float64)
    b = np.asarray(ranks_b, dtype=np.float64)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("both models need ranks for the same non-empty query set")
    rng = np.random.default_rng(seed)
    n = a.size
    diffs = np.empty(n_resamples)
    for i in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        diffs[i] = metric_value(a[idx], metric) - metric_value(b[idx], metric)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(diffs, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapResult(
        lo=float(lo),
        hi=float(hi),
        significant=not (lo <= 0.0 <= hi),
        point_diff=metric_value(a, metric) - metric_value(b, metric),
    )
