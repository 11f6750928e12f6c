"""Precision-recall curves, (mean) average precision, and the
clean-vs-perturbed eigenbasis stability experiment.

The stability experiment trains one method's full pipeline twice, on clean
and on perturbed copies of the same videos with identical seeds, and
scores how well the two final compaction bases align. Zero perturbation
therefore returns the self-alignment value d exactly (up to float noise).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from math import fsum
from pathlib import Path

import numpy as np

from .aggregation import (
    METHOD_HP,
    METHOD_VLAC,
    METHOD_VLAD,
    ModelParams,
    split_gofs,
    train_hp,
    train_vlac,
    train_vlad,
)
from .core_math import ProjectionBasis, basis_alignment_score, pca_fit
from .errors import DataError, EmptyResults, NoRelevant
from .ingestion import PerturbationSpec, QueryManifest, perturb_videos

METHOD_SIFT_DIRECT = "sift"
STABILITY_METHODS = (METHOD_VLAD, METHOD_HP, METHOD_VLAC, METHOD_SIFT_DIRECT)

PR_CSV_COLUMNS = ("method", "D", "threshold", "precision", "recall")
MAP_CSV_COLUMNS = ("method", "D", "mAP")


@dataclass(frozen=True)
class GroundTruth:
    """query_id -> the set of video_ids relevant to it."""

    relevant: dict[str, frozenset[str]]

    def __post_init__(self):
        cleaned = {
            q: frozenset(ids) for q, ids in dict(self.relevant).items()
        }
        for q, ids in cleaned.items():
            if not ids:
                raise DataError(f"query {q!r} has no relevant videos")
        object.__setattr__(self, "relevant", cleaned)

    @classmethod
    def from_queries(cls, manifest: QueryManifest) -> "GroundTruth":
        return cls(
            relevant={
                q.query_id: frozenset({q.source_video_id})
                for q in manifest.queries
            }
        )


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


@dataclass(frozen=True)
class PRCurve:
    points: tuple[PRPoint, ...]


def pr_curve(results, truth: GroundTruth) -> PRCurve:
    """Precision/recall swept over every distinct score threshold.

    ``results`` maps query_id to its scored (video_id, score) pairs, which
    must cover the full store for recall to reach 1. The total relevant
    count comes from the ground truth, so unscored relevant pairs count as
    misses. Thresholds descend; points where nothing is retrieved are
    omitted (precision is undefined there).
    """
    pairs = []
    total_relevant = 0
    for query_id, scored in results.items():
        if query_id not in truth.relevant:
            raise DataError(f"query {query_id!r} is missing from ground truth")
        relevant = truth.relevant[query_id]
        total_relevant += len(relevant)
        for video_id, score in _scored_pairs(scored):
            pairs.append((float(score), video_id in relevant))
    if not pairs:
        raise EmptyResults("no scored pairs to evaluate")

    pairs.sort(key=lambda p: -p[0])
    scores = np.array([p[0] for p in pairs])
    rel = np.array([p[1] for p in pairs], dtype=np.int64)
    tp = np.cumsum(rel)
    retrieved = np.arange(1, len(pairs) + 1)

    points = []
    for i in range(len(pairs)):
        # only take the last pair of each distinct score: that is the full
        # "score >= threshold" retrieval set for this threshold
        if i + 1 < len(pairs) and scores[i + 1] == scores[i]:
            continue
        if retrieved[i] == 0:
            continue
        precision = tp[i] / retrieved[i]
        recall = tp[i] / total_relevant if total_relevant else 0.0
        points.append(
            PRPoint(
                threshold=float(scores[i]),
                precision=float(precision),
                recall=float(recall),
            )
        )
    return PRCurve(points=tuple(points))


def _scored_pairs(scored):
    matches = getattr(scored, "matches", None)
    if matches is not None:
        return [(m.video_id, m.score) for m in matches]
    return list(scored)


def average_precision(ranked) -> float:
    """Mean of precision-at-r over the relevant ranks r of a ranking.

    Accumulates in exact rational arithmetic (ranks are integers), so
    fixture values like 5/6 come back as the correctly rounded float.
    """
    flags = [bool(x) for x in ranked]
    if not any(flags):
        raise NoRelevant("ranking contains no relevant item")
    hits = 0
    total = Fraction(0)
    for rank, is_relevant in enumerate(flags, start=1):
        if is_relevant:
            hits += 1
            total += Fraction(hits, rank)
    return float(total / hits)


def mean_average_precision(aps) -> float:
    """Arithmetic mean of per-query average precisions."""
    aps = list(aps)
    if not aps:
        raise ValueError("mean_average_precision needs at least one query")
    return fsum(aps) / len(aps)


def relevance_flags(result, relevant) -> list[bool]:
    """Relevance flags of a retrieval ranking against a relevant-id set."""
    return [m.video_id in relevant for m in result.matches]


def map_from_retrievals(results, truth: GroundTruth) -> float:
    """mAP over per-query retrieval rankings."""
    aps = []
    for query_id, result in results.items():
        if query_id not in truth.relevant:
            raise DataError(f"query {query_id!r} is missing from ground truth")
        aps.append(
            average_precision(relevance_flags(result, truth.relevant[query_id]))
        )
    return mean_average_precision(aps)


def sign_aligned_alignment_score(a: ProjectionBasis, b: ProjectionBasis) -> float:
    """Alignment score after flipping each row of b onto its partner in a.

    Equals the sum of absolute per-row inner products; reported alongside
    the raw score because the raw one is sensitive to eigenvector sign.
    """
    if a.rows.shape != b.rows.shape:
        raise DataError(
            f"bases have shapes {a.rows.shape} and {b.rows.shape}"
        )
    return float(np.sum(np.abs(np.sum(a.rows * b.rows, axis=1))))


def _train_basis(videos, method: str, params: ModelParams) -> ProjectionBasis:
    if method == METHOD_SIFT_DIRECT:
        pooled = np.concatenate(
            [f.features for frames in videos for f in frames if f.count > 0]
        )
        return pca_fit(pooled, params.d)
    if method == METHOD_VLAD:
        frames = [f for frames in videos for f in frames]
        model = train_vlad(
            frames,
            params.j,
            params.d,
            params.seed,
            gof_size=params.gof_size,
            overlap=params.overlap,
            normalize=params.normalize,
        )
        return model.basis
    gofs = [
        g
        for frames in videos
        for g in split_gofs(frames, params.gof_size, params.overlap)
    ]
    if method == METHOD_VLAC:
        model = train_vlac(
            gofs,
            params.n,
            params.m,
            params.d,
            params.seed,
            gof_size=params.gof_size,
            overlap=params.overlap,
            normalize=params.normalize,
        )
        return model.basis
    if method == METHOD_HP:
        model = train_hp(
            gofs,
            params.alpha1,
            params.d0,
            params.alpha2,
            params.d,
            params.seed,
            h=params.h,
            gof_size=params.gof_size,
            overlap=params.overlap,
            normalize=params.normalize,
        )
        return model.basis
    raise DataError(f"unknown stability method {method!r}")


def stability_bases(
    videos,
    perturbation: PerturbationSpec,
    method: str,
    params: ModelParams,
) -> tuple[ProjectionBasis, ProjectionBasis]:
    """Final compaction bases of the clean and the perturbed pipeline."""
    noisy = perturb_videos(videos, perturbation)
    return (
        _train_basis(videos, method, params),
        _train_basis(noisy, method, params),
    )


def stability_experiment(
    videos,
    perturbation: PerturbationSpec,
    method: str,
    params: ModelParams,
) -> float:
    """Alignment score between clean-trained and perturbed-trained bases.

    ``method`` is one of vlad/vlac/hp/sift; sift fits PCA directly on the
    raw feature vectors. Deterministic under the seeds in ``params`` and
    ``perturbation``; zero magnitude returns d within float tolerance.
    """
    clean, noisy = stability_bases(videos, perturbation, method, params)
    return basis_alignment_score(clean, noisy)


# ---------------------------------------------------------------------------
# CSV / SVG emitters
# ---------------------------------------------------------------------------


def write_pr_csv(path, rows) -> None:
    """Write (method, D, threshold, precision, recall) rows."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PR_CSV_COLUMNS)
        for method, d, point in rows:
            writer.writerow(
                [method, d, point.threshold, point.precision, point.recall]
            )


def write_map_csv(path, rows) -> None:
    """Write (method, D, mAP) rows."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MAP_CSV_COLUMNS)
        for method, d, value in rows:
            writer.writerow([method, d, value])


def plot_pr_svg(path, curves) -> None:
    """Plot labelled PR curves to an SVG file (requires matplotlib)."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise DataError(
            "SVG plotting requires matplotlib (install vlac[plots])"
        ) from exc
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, curve in curves.items():
        recalls = [p.recall for p in curve.points]
        precisions = [p.precision for p in curve.points]
        ax.plot(recalls, precisions, marker="o", markersize=3, label=label)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.05)
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(Path(path), format="svg")
    plt.close(fig)
