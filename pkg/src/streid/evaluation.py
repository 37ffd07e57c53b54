"""Ranking metrics and cross-validated method evaluation.

Queries are ranked against a gallery under a chosen scoring method and
summarized as CMC rank-k accuracy and mean average precision, pooled over
all queries and broken down per cross-validation fold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .fusion import FusionModel, forward_batch, st_windows
from .observations import Observation
from .topology import TopologyModel

log = logging.getLogger(__name__)

METHOD_APPEARANCE = "appearance_only"
METHOD_PRODUCT = "product_baseline"
METHOD_FUSION = "fusion"


@dataclass
class SimilarityMatrix:
    """Dense appearance similarities between query and gallery images."""

    query_ids: list[str]
    gallery_ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.query_ids), len(self.gallery_ids)):
            raise InputError(
                f"similarity values shape {self.values.shape} does not match "
                f"{len(self.query_ids)} query ids x {len(self.gallery_ids)} gallery ids"
            )
        if not np.isfinite(self.values).all():
            raise InputError("similarity values must be finite")
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise InputError("similarity values must lie in [0, 1]")


@dataclass
class FoldMetrics:
    fold: int
    rank1: float
    rank5: float
    mean_ap: float
    n_queries: int


@dataclass
class EvalReport:
    """Metrics for one method: pooled over queries plus per-fold breakdown."""

    method: str
    rank_accuracy: dict[int, float]
    mean_ap: float
    per_fold: list[FoldMetrics] = field(default_factory=list)
    fold_mean: dict[str, float] | None = None
    fold_std: dict[str, float] | None = None
    num_queries: int = 0
    skipped_queries: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rank_accuracy": {str(k): v for k, v in sorted(self.rank_accuracy.items())},
            "mAP": self.mean_ap,
            "per_fold": [
                {
                    "fold": f.fold,
                    "rank1": f.rank1,
                    "rank5": f.rank5,
                    "mAP": f.mean_ap,
                    "queries": f.n_queries,
                }
                for f in self.per_fold
            ],
            "fold_mean": self.fold_mean,
            "fold_std": self.fold_std,
            "num_queries": self.num_queries,
            "skipped_queries": self.skipped_queries,
        }

    def format_table(self) -> str:
        lines = [
            f"method: {self.method}",
            f"queries evaluated: {self.num_queries} (skipped: {self.skipped_queries})",
            "",
            f"{'scope':<12}" + "".join(f"rank-{k:<6}" for k in sorted(self.rank_accuracy)) + "mAP",
        ]
        pooled = "".join(f"{self.rank_accuracy[k]:<11.4f}" for k in sorted(self.rank_accuracy))
        lines.append(f"{'pooled':<12}{pooled}{self.mean_ap:.4f}")
        for f in self.per_fold:
            lines.append(
                f"{'fold ' + str(f.fold):<12}{f.rank1:<11.4f}{f.rank5:<11.4f}{f.mean_ap:.4f}"
            )
        if self.fold_mean is not None:
            lines.append(
                f"{'fold mean':<12}{self.fold_mean['rank1']:<11.4f}"
                f"{self.fold_mean['rank5']:<11.4f}{self.fold_mean['mAP']:.4f}"
            )
        if self.fold_std is not None:
            lines.append(
                f"{'fold stdev':<12}{self.fold_std['rank1']:<11.4f}"
                f"{self.fold_std['rank5']:<11.4f}{self.fold_std['mAP']:.4f}"
            )
        return "\n".join(lines)


def rank_gallery(query: Observation, gallery: list[Observation], scores) -> list[int]:
    """Gallery indices sorted by score descending, ties by ascending image_id.

    Gallery entries sharing both camera and vehicle with the query are
    excluded before ranking. Returns an empty list when nothing survives.
    """
    if not gallery:
        raise InputError("gallery must be non-empty")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(gallery),):
        raise InputError(
            f"scores shape {scores.shape} does not match gallery size {len(gallery)}"
        )
    if not np.isfinite(scores).all():
        raise InputError("scores must be finite")
    keep = [
        k
        for k, g in enumerate(gallery)
        if not (g.camera_id == query.camera_id and g.vehicle_id == query.vehicle_id)
    ]
    return sorted(keep, key=lambda k: (-scores[k], gallery[k].image_id))


def cmc(rankings, k: int) -> float:
    """Fraction of queries with a true match inside the top k."""
    if not rankings:
        raise InputError("rankings must be non-empty")
    hits = sum(1 for flags in rankings if any(flags[:k]))
    return hits / len(rankings)


def average_precision(flags) -> float:
    hits = 0
    precisions = []
    for rank, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        raise InputError("average precision needs at least one relevant item")
    return sum(precisions) / len(precisions)


def mean_average_precision(rankings) -> float:
    """Mean over queries of average precision of the ranked relevance flags."""
    if not rankings:
        raise InputError("rankings must be non-empty")
    return sum(average_precision(flags) for flags in rankings) / len(rankings)


def make_folds(
    query_observations: list[Observation], n_folds: int = 5, seed: int = 0
) -> list[list[str]]:
    """Partition query vehicle ids into near-equal seeded folds.

    Splitting by identity rather than image keeps every vehicle's images on
    one side of each train/eval divide.
    """
    ids = sorted({q.vehicle_id for q in query_observations})
    if len(ids) < n_folds:
        raise InputError(
            f"need at least {n_folds} distinct vehicle ids, got {len(ids)}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    return [sorted(ids[i] for i in chunk) for chunk in np.array_split(order, n_folds)]


def _score_matrix(method, queries, gallery, similarity, topology, fold_models, fold_of):
    values = similarity.values
    if method == METHOD_APPEARANCE:
        return values.copy()

    g_cams = np.array([g.camera_id for g in gallery], dtype=np.int64)
    g_frames = np.array([g.frame for g in gallery], dtype=np.int64)
    scores = np.empty_like(values)
    if method == METHOD_PRODUCT:
        if topology is None:
            raise InputError("product_baseline requires a topology model")
        for qi, q in enumerate(queries):
            st0 = st_windows(topology, q.camera_id, q.frame, g_cams, g_frames, 0)[:, 0]
            scores[qi] = values[qi] * st0
        return scores

    if method == METHOD_FUSION:
        if topology is None or fold_models is None or fold_of is None:
            raise InputError("fusion requires a topology, fold models, and folds")
        for qi, q in enumerate(queries):
            if q.vehicle_id not in fold_of:
                raise InputError(
                    f"query vehicle {q.vehicle_id!r} has no fold assignment"
                )
            model = fold_models[fold_of[q.vehicle_id]]
            st = st_windows(
                topology, q.camera_id, q.frame, g_cams, g_frames, model.window
            )
            inputs = np.column_stack([values[qi], st])
            scores[qi] = forward_batch(model, inputs)
        return scores

    raise InputError(
        f"unknown method {method!r}; expected one of "
        f"{METHOD_APPEARANCE!r}, {METHOD_PRODUCT!r}, {METHOD_FUSION!r}"
    )


def evaluate_method(
    method: str,
    query_observations: list[Observation],
    gallery_observations: list[Observation],
    similarity: SimilarityMatrix,
    topology: TopologyModel | None = None,
    fold_models: list[FusionModel] | None = None,
    folds: list[list[str]] | None = None,
    ks: tuple[int, ...] = (1, 5),
) -> EvalReport:
    """Score, rank, and aggregate CMC/mAP for one method configuration.

    `query_observations` and `gallery_observations` must be aligned with the
    similarity matrix rows and columns. With `folds` given, metrics are also
    broken down per fold; for the fusion method each query is scored by the
    model of its own (held-out) fold.
    """
    if [q.image_id for q in query_observations] != similarity.query_ids:
        raise InputError("query observations are not aligned with similarity rows")
    if [g.image_id for g in gallery_observations] != similarity.gallery_ids:
        raise InputError("gallery observations are not aligned with similarity columns")

    fold_of = None
    if folds is not None:
        fold_of = {vid: f for f, ids in enumerate(folds) for vid in ids}

    scores = _score_matrix(
        method, query_observations, gallery_observations, similarity,
        topology, fold_models, fold_of,
    )

    label = method
    if method == METHOD_FUSION and fold_models:
        label = f"fusion(W={fold_models[0].window})"

    pooled: list[list[int]] = []
    fold_flags: dict[int, list[list[int]]] = {}
    skipped = 0
    for qi, q in enumerate(query_observations):
        order = rank_gallery(q, gallery_observations, scores[qi])
        flags = [
            1 if gallery_observations[k].vehicle_id == q.vehicle_id else 0
            for k in order
        ]
        if not any(flags):
            skipped += 1
            continue
        pooled.append(flags)
        if fold_of is not None:
            fold_flags.setdefault(fold_of[q.vehicle_id], []).append(flags)
    if skipped:
        log.warning("%d queries had no relevant gallery items and were skipped", skipped)
    if not pooled:
        raise InputError("no query had a relevant gallery item after filtering")

    report = EvalReport(
        method=label,
        rank_accuracy={k: cmc(pooled, k) for k in ks},
        mean_ap=mean_average_precision(pooled),
        num_queries=len(pooled),
        skipped_queries=skipped,
    )
    if folds is not None:
        for f in range(len(folds)):
            flags = fold_flags.get(f, [])
            if not flags:
                continue
            report.per_fold.append(
                FoldMetrics(
                    fold=f,
                    rank1=cmc(flags, 1),
                    rank5=cmc(flags, 5),
                    mean_ap=mean_average_precision(flags),
                    n_queries=len(flags),
                )
            )
        if report.per_fold:
            stacked = np.array(
                [[f.rank1, f.rank5, f.mean_ap] for f in report.per_fold]
            )
            ddof = 1 if stacked.shape[0] > 1 else 0
            mean = stacked.mean(axis=0)
            std = stacked.std(axis=0, ddof=ddof)
            report.fold_mean = {"rank1": mean[0], "rank5": mean[1], "mAP": mean[2]}
            report.fold_std = {"rank1": std[0], "rank5": std[1], "mAP": std[2]}
    return report
