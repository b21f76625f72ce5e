"""Clustering and prediction quality metrics.

Two families:

* cluster quality: per-nutrient intra/inter variance decompositions
  (image-weighted by default, with a literal unweighted reading behind
  a flag) and visual-distance summaries (worst within-cluster mean
  pairwise distance vs mean pairwise exemplar distance);
* prediction quality: accuracy and the nutrient mean absolute error of
  a prediction log against a category table, over all rows or over the
  mistaken rows only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .clustering import Hierarchy
from .errors import (
    AlignmentError,
    ConfigurationError,
    DegenerateInputError,
    FormatError,
    UndefinedMetricError,
    ValidationError,
)
from .nutrient_data import NUTRIENT_NAMES, CategoryTable, _read_rows
from .similarity import SimilarityMatrix

PREDICTIONS_HEADER = ("sample_id", "true_category", "predicted_category")

MAE_SCOPES = ("all", "mistakes_only")
VARIANCE_CONVENTIONS = ("weighted", "literal")


@dataclass
class DistanceMatrix:
    """Square labeled distance matrix: symmetric, zero diagonal, non-negative."""

    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        self.labels = tuple(str(c) for c in self.labels)
        self.values = np.asarray(self.values, dtype=float)
        k = len(self.labels)
        if len(set(self.labels)) != k:
            raise ValidationError("distance matrix labels are not unique")
        if self.values.shape != (k, k):
            raise ValidationError(
                f"distance matrix must be ({k}, {k}) to match its labels, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("distance matrix contains non-finite entries")
        if np.any(self.values < 0.0):
            raise ValidationError("distance matrix contains negative entries")
        if not np.array_equal(self.values, self.values.T):
            raise ValidationError("distance matrix is not exactly symmetric")
        if not np.all(np.diag(self.values) == 0.0):
            raise ValidationError("distance matrix diagonal must be exactly 0")

    def index(self, category: str) -> int:
        try:
            return self.labels.index(category)
        except ValueError:
            raise KeyError(f"unknown category {category!r}") from None


def visual_distance_matrix(sim: SimilarityMatrix) -> DistanceMatrix:
    """Distance as 1 - similarity. Unit self-similarity maps to distance 0."""
    return DistanceMatrix(sim.labels, 1.0 - sim.values)


@dataclass(frozen=True)
class VarianceEntry:
    intra: float
    inter: float

    @property
    def total(self) -> float:
        return self.intra + self.inter


@dataclass
class VarianceReport:
    convention: str
    per_nutrient: dict[str, VarianceEntry] = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "convention": self.convention,
            "nutrients": {
                n: {"intra": float(e.intra), "inter": float(e.inter), "total": float(e.total)}
                for n, e in self.per_nutrient.items()
            },
        }


def _check_partition(hierarchy: Hierarchy, table: CategoryTable) -> None:
    members = set(hierarchy.labels())
    categories = set(table.labels)
    if members != categories:
        missing = sorted(categories - members)[:5]
        extra = sorted(members - categories)[:5]
        raise AlignmentError(
            "hierarchy does not partition the category table "
            f"(missing from hierarchy: {missing}, unknown to table: {extra})"
        )


def cluster_variances(
    hierarchy: Hierarchy,
    table: CategoryTable,
    nutrients: Sequence[str] | None = None,
    convention: str = "weighted",
) -> VarianceReport:
    """Intra- and inter-cluster variance per nutrient.

    The weighted convention expands each category by its image count,
    so intra + inter equals the total per-image variance exactly. The
    literal convention instead contributes one term per category inside
    a cluster and uses unweighted cluster means, while keeping the 1/N
    image normalisation and the image-count factor on the inter term;
    its two parts do not decompose a total.
    """
    if convention not in VARIANCE_CONVENTIONS:
        raise ConfigurationError(
            f"unknown variance convention {convention!r}; expected one of {VARIANCE_CONVENTIONS}"
        )
    names = tuple(nutrients) if nutrients is not None else NUTRIENT_NAMES
    for n in names:
        if n not in NUTRIENT_NAMES:
            raise ConfigurationError(f"unknown nutrient {n!r}")
    _check_partition(hierarchy, table)
    counts = table.image_counts.astype(float)
    total_images = counts.sum()
    if total_images <= 0:
        raise DegenerateInputError("variance needs at least one image across the table")

    cluster_idx = [
        np.array([table.index(m) for m in cluster.members]) for cluster in hierarchy.clusters
    ]
    report = VarianceReport(convention=convention)
    for nutrient in names:
        x = table.values[:, NUTRIENT_NAMES.index(nutrient)]
        intra = 0.0
        inter = 0.0
        if convention == "weighted":
            grand_mean = float((counts * x).sum() / total_images)
            for idx in cluster_idx:
                c = counts[idx].sum()
                if c <= 0:
                    continue
                cluster_mean = float((counts[idx] * x[idx]).sum() / c)
                intra += float((counts[idx] * (x[idx] - cluster_mean) ** 2).sum())
                inter += float(c * (cluster_mean - grand_mean) ** 2)
        else:
            grand_mean = float(x.mean())
            for idx in cluster_idx:
                cluster_mean = float(x[idx].mean())
                intra += float(((x[idx] - cluster_mean) ** 2).sum())
                inter += float(counts[idx].sum() * (cluster_mean - grand_mean) ** 2)
        report.per_nutrient[nutrient] = VarianceEntry(
            intra=intra / total_images, inter=inter / total_images
        )
    return report


def _resolve_members(hierarchy: Hierarchy, dist: DistanceMatrix) -> None:
    known = set(dist.labels)
    unknown = sorted(set(hierarchy.labels()) - known)
    if unknown:
        raise AlignmentError(
            f"categories {unknown[:5]} from the hierarchy are absent from the distance matrix"
        )


def intra_cluster_distance(hierarchy: Hierarchy, dist: DistanceMatrix) -> float:
    """Worst cluster compactness: max over clusters of the mean pairwise distance.

    Singleton clusters have no pairs and are skipped; if every cluster
    is a singleton the metric is undefined.
    """
    _resolve_members(hierarchy, dist)
    means = []
    for cluster in hierarchy.clusters:
        idx = [dist.index(m) for m in cluster.members]
        if len(idx) < 2:
            continue
        pairs = [dist.values[a, b] for pos, a in enumerate(idx) for b in idx[pos + 1 :]]
        means.append(float(np.mean(pairs)))
    if not means:
        raise UndefinedMetricError(
            "intra-cluster distance is undefined: every cluster is a singleton"
        )
    return max(means)


def inter_cluster_distance(hierarchy: Hierarchy, dist: DistanceMatrix) -> float:
    """Mean pairwise distance between cluster exemplars."""
    _resolve_members(hierarchy, dist)
    idx = [dist.index(c.exemplar) for c in hierarchy.clusters]
    if len(idx) < 2:
        raise UndefinedMetricError(
            f"inter-cluster distance needs at least 2 clusters, got {len(idx)}"
        )
    pairs = [dist.values[a, b] for pos, a in enumerate(idx) for b in idx[pos + 1 :]]
    return float(np.mean(pairs))


@dataclass(frozen=True)
class DistanceReport:
    intra: float
    inter: float
    ratio: float

    def to_json_obj(self) -> dict:
        return {"intra": self.intra, "inter": self.inter, "ratio": self.ratio}


def distance_report(hierarchy: Hierarchy, dist: DistanceMatrix) -> DistanceReport:
    """Intra vs inter distance summary; ratio < 1 means compact, separated clusters."""
    intra = intra_cluster_distance(hierarchy, dist)
    inter = inter_cluster_distance(hierarchy, dist)
    if inter == 0.0:
        raise UndefinedMetricError("inter-cluster distance is zero; the ratio is undefined")
    return DistanceReport(intra=intra, inter=inter, ratio=intra / inter)


class PredictionRow(NamedTuple):
    sample_id: str
    true_category: str
    predicted_category: str


def parse_predictions_csv(path: str | Path) -> list[PredictionRow]:
    """Parse a prediction log with header sample_id,true_category,predicted_category."""
    name = str(path)
    rows: list[PredictionRow] = []
    seen: set[str] = set()
    for lineno, sample_id, true_cat, pred_cat in _read_rows(path, PREDICTIONS_HEADER):
        sample_id = sample_id.strip()
        if not sample_id or not true_cat.strip() or not pred_cat.strip():
            raise ValidationError(f"{name}: row {lineno}: empty field in prediction row")
        if sample_id in seen:
            raise ValidationError(f"{name}: row {lineno}: duplicate sample id {sample_id!r}")
        seen.add(sample_id)
        rows.append(PredictionRow(sample_id, true_cat.strip(), pred_cat.strip()))
    return rows


def write_predictions_csv(path: str | Path, rows: Iterable[PredictionRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTIONS_HEADER)
        for row in rows:
            writer.writerow(row)


def accuracy(rows: Sequence[PredictionRow]) -> float:
    """Fraction of rows whose predicted category equals the true one."""
    if not rows:
        raise DegenerateInputError("accuracy of an empty prediction log is undefined")
    hits = sum(1 for r in rows if r.true_category == r.predicted_category)
    return hits / len(rows)


def nutrient_mae(
    rows: Sequence[PredictionRow],
    table: CategoryTable,
    nutrient: str,
    scope: str = "all",
) -> float:
    """Mean absolute nutrient error of predicted vs true categories.

    With scope "all", correct predictions contribute an exact 0; with
    "mistakes_only" the mean runs over the mistaken rows, and a log
    without mistakes has no defined value.
    """
    if scope not in MAE_SCOPES:
        raise ConfigurationError(f"unknown MAE scope {scope!r}; expected one of {MAE_SCOPES}")
    if nutrient not in NUTRIENT_NAMES:
        raise ConfigurationError(f"unknown nutrient {nutrient!r}")
    if not rows:
        raise DegenerateInputError("nutrient MAE of an empty prediction log is undefined")
    col = table.values[:, NUTRIENT_NAMES.index(nutrient)]
    errors: list[float] = []
    for row in rows:
        try:
            true_idx = table.index(row.true_category)
            pred_idx = table.index(row.predicted_category)
        except KeyError as exc:
            raise AlignmentError(
                f"prediction log category not in the table: {exc.args[0]}"
            ) from None
        if scope == "mistakes_only" and row.true_category == row.predicted_category:
            continue
        errors.append(abs(col[pred_idx] - col[true_idx]))
    if not errors:
        raise UndefinedMetricError(
            "nutrient MAE over mistakes is undefined: the log has no mistakes"
        )
    return math.fsum(errors) / len(errors)


def relative_error_change(e_candidate: float, e_baseline: float) -> float:
    """Signed relative change (e_candidate - e_baseline) / e_baseline.

    Negative values mean the candidate improved on the baseline; the
    positive "reduction" often quoted is the negation of this value.
    """
    if not (np.isfinite(e_baseline) and e_baseline > 0.0):
        raise ValidationError(f"baseline error must be positive and finite, got {e_baseline!r}")
    if not (np.isfinite(e_candidate) and e_candidate >= 0.0):
        raise ValidationError(f"candidate error must be non-negative and finite, got {e_candidate!r}")
    return (e_candidate - e_baseline) / e_baseline
