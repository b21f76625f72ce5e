"""Cross-domain category similarity.

Three building blocks:

* a Gaussian (RBF) kernel per nutrient, scaled by the inter-class
  standard deviation of that nutrient, fused across nutrients with a
  weighted harmonic mean;
* a visual similarity built from per-category feature Gaussians via
  the overlap coefficient (shared area of two normal densities),
  averaged over feature dimensions;
* an equal-weight harmonic mean that combines the two matrices.

The harmonic mean is deliberate: one dissimilar domain (or nutrient)
should drag the fused score down, which an arithmetic mean would not.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import (
    AlignmentError,
    ConfigurationError,
    DegenerateInputError,
    FormatError,
    InsufficientDataError,
    ParseError,
    ShapeError,
    ValidationError,
)
from .nutrient_data import NUTRIENT_NAMES, CategoryTable, NutrientStats

# Kernel scores are clamped away from zero so harmonic-mean fusion
# never divides by zero; visual scores get a larger floor because the
# overlap of well-separated Gaussians underflows to exactly 0.
RBF_FLOOR = 1e-12
VISUAL_FLOOR = 1e-6
# Per-dimension feature stds are floored so a constant feature cannot
# produce a degenerate Gaussian.
STD_FLOOR = 1e-6


@dataclass
class SimilarityMatrix:
    """Square labeled similarity matrix with entries in (0, 1].

    Producers compute each unordered pair once and mirror it, so the
    matrix is symmetric bitwise, and the diagonal is exactly 1.
    """

    labels: tuple[str, ...]
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.labels = tuple(str(c) for c in self.labels)
        self.values = np.asarray(self.values, dtype=float)
        k = len(self.labels)
        if k == 0:
            raise ValidationError("similarity matrix has no labels")
        if len(set(self.labels)) != k:
            raise ValidationError("similarity matrix labels are not unique")
        if self.values.shape != (k, k):
            raise ValidationError(
                f"similarity matrix must be ({k}, {k}) to match its labels, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("similarity matrix contains non-finite entries")
        if np.any(self.values <= 0.0) or np.any(self.values > 1.0):
            raise ValidationError("similarity entries must lie in the half-open unit interval (0, 1]")
        if not np.array_equal(self.values, self.values.T):
            raise ValidationError("similarity matrix is not exactly symmetric")
        if not np.all(np.diag(self.values) == 1.0):
            raise ValidationError("similarity matrix diagonal must be exactly 1")

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, category: str) -> int:
        try:
            return self.labels.index(category)
        except ValueError:
            raise KeyError(f"unknown category {category!r}") from None

    def to_json_obj(self) -> dict:
        return {
            "labels": list(self.labels),
            "values": [[float(v) for v in row] for row in self.values],
            "provenance": self.provenance,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "SimilarityMatrix":
        try:
            labels = tuple(str(c) for c in obj["labels"])
            values = np.array(obj["values"], dtype=float)
            provenance = dict(obj.get("provenance", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed similarity matrix object: {exc}") from exc
        return cls(labels, values, provenance)


@dataclass(frozen=True)
class SimilarityConfig:
    """Which nutrients enter the nutrient kernel, and with what weights.

    Energy is a composite of the macronutrients, so by default it may
    only be used on its own; combining it with other nutrients needs
    an explicit opt-in.
    """

    nutrients: tuple[str, ...]
    weights: tuple[float, ...] | None = None
    allow_energy_mix: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "nutrients", tuple(self.nutrients))
        if not self.nutrients:
            raise ConfigurationError("similarity config needs at least one nutrient")
        for n in self.nutrients:
            if n not in NUTRIENT_NAMES:
                raise ConfigurationError(f"unknown nutrient {n!r}")
        if len(set(self.nutrients)) != len(self.nutrients):
            raise ConfigurationError(f"duplicate nutrient in selection {self.nutrients!r}")
        if "energy" in self.nutrients and len(self.nutrients) > 1 and not self.allow_energy_mix:
            raise ConfigurationError(
                "energy is used on its own, not combined with other nutrient "
                "information; pass allow_energy_mix=True to override"
            )
        if self.weights is not None:
            weights = tuple(float(w) for w in self.weights)
            object.__setattr__(self, "weights", weights)
            if len(weights) != len(self.nutrients):
                raise ConfigurationError(
                    f"got {len(weights)} weights for {len(self.nutrients)} nutrients"
                )
            if any(not np.isfinite(w) or w <= 0.0 for w in weights):
                raise ConfigurationError("nutrient weights must be positive and finite")

    def resolved_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(self.nutrients))
        return np.array(self.weights, dtype=float)


def rbf_similarity(x1: float, x2: float, sigma: float) -> float:
    """Gaussian kernel exp(-(x1-x2)^2 / (2 sigma^2)), clamped to [1e-12, 1]."""
    if not (np.isfinite(sigma) and sigma > 0.0):
        raise ValidationError(f"kernel sigma must be positive and finite, got {sigma!r}")
    if not (np.isfinite(x1) and np.isfinite(x2)):
        raise ValidationError("kernel inputs must be finite")
    gap = float(x1) - float(x2)
    value = float(np.exp(-(gap * gap) / (2.0 * sigma * sigma)))
    return min(1.0, max(value, RBF_FLOOR))


def weighted_harmonic_mean(
    scores: Sequence[float] | np.ndarray,
    weights: Sequence[float] | np.ndarray | None = None,
) -> float:
    """sum(w) / sum(w / s): the weighted harmonic mean of positive scores."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise DegenerateInputError("harmonic mean of an empty score set is undefined")
    if weights is None:
        w = np.ones_like(s)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != s.shape:
            raise ShapeError(f"got {w.size} weights for {s.size} scores")
    if not np.all(np.isfinite(s)) or np.any(s <= 0.0):
        raise ValidationError("harmonic mean requires strictly positive finite scores")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise ValidationError("harmonic mean requires strictly positive finite weights")
    return float(w.sum() / (w / s).sum())


def _mirror_upper(values: np.ndarray) -> np.ndarray:
    """Copy the strict upper triangle onto the lower one and set a unit diagonal."""
    k = values.shape[0]
    out = np.ones((k, k))
    iu = np.triu_indices(k, 1)
    out[iu] = values[iu]
    out[iu[1], iu[0]] = values[iu]
    return out


def nutrient_similarity_matrix(
    table: CategoryTable,
    stats: NutrientStats,
    config: SimilarityConfig,
) -> SimilarityMatrix:
    """Fused nutrient similarity over all category pairs.

    Per selected nutrient, a Gaussian kernel scaled by the inter-class
    sigma; kernels fuse with a weighted harmonic mean.
    """
    k = len(table)
    if k < 2:
        raise DegenerateInputError(f"similarity needs at least 2 categories, got {k}")
    kernels = []
    for nutrient in config.nutrients:
        sigma = stats.sigma_for(nutrient)
        if not (np.isfinite(sigma) and sigma > 0.0):
            raise ValidationError(
                f"nutrient {nutrient!r} has degenerate inter-class sigma {sigma!r}; "
                "it cannot scale a kernel"
            )
        x = table.values[:, NUTRIENT_NAMES.index(nutrient)]
        gaps = x[:, None] - x[None, :]
        kernels.append(np.clip(np.exp(-(gaps * gaps) / (2.0 * sigma * sigma)), RBF_FLOOR, 1.0))
    stack = np.array(kernels)
    w = config.resolved_weights()
    fused = w.sum() / (w[:, None, None] / stack).sum(axis=0)
    return SimilarityMatrix(
        table.labels,
        _mirror_upper(fused),
        provenance={
            "domains": list(config.nutrients),
            "weights": [float(x) for x in w],
            "clamps": {"floor": RBF_FLOOR, "ceiling": 1.0},
        },
    )


@dataclass
class FeatureStats:
    """Per-category diagonal Gaussians over feature space.

    mean and std are (K, d); std is a sample standard deviation
    (the images of a category are a sample of its appearance), floored
    at STD_FLOOR.
    """

    labels: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.labels = tuple(str(c) for c in self.labels)
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if len(set(self.labels)) != k:
            raise ValidationError("feature stats labels are not unique")
        if list(self.labels) != sorted(self.labels):
            raise ValidationError("feature stats labels must be sorted lexicographically")
        if self.mean.ndim != 2 or self.mean.shape[0] != k:
            raise ShapeError(f"feature means must be (K, d) with K={k}, got {self.mean.shape}")
        if self.std.shape != self.mean.shape:
            raise ShapeError("feature stds must match the shape of the means")
        if self.counts.shape != (k,):
            raise ShapeError("feature counts must be one per category")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise ValidationError("feature stats contain non-finite values")
        if np.any(self.std <= 0.0):
            raise ValidationError("feature stds must be strictly positive")

    @property
    def dim(self) -> int:
        return int(self.mean.shape[1])

    def to_json_obj(self) -> dict:
        return {
            "dim": self.dim,
            "categories": {
                c: {
                    "mean": [float(v) for v in self.mean[i]],
                    "std": [float(v) for v in self.std[i]],
                    "n": int(self.counts[i]),
                }
                for i, c in enumerate(self.labels)
            },
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "FeatureStats":
        try:
            dim = int(obj["dim"])
            cats = obj["categories"]
            labels = tuple(sorted(cats))
            mean = np.array([cats[c]["mean"] for c in labels], dtype=float).reshape(len(labels), dim)
            std = np.array([cats[c]["std"] for c in labels], dtype=float).reshape(len(labels), dim)
            counts = np.array([cats[c]["n"] for c in labels])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed feature stats object: {exc}") from exc
        return cls(labels, mean, std, counts)


def fit_feature_gaussians(rows: Iterable[tuple[str, Sequence[float]]]) -> FeatureStats:
    """Fit one diagonal Gaussian per category from (category, vector) rows."""
    grouped: dict[str, list[np.ndarray]] = {}
    dim: int | None = None
    for category, vector in rows:
        v = np.asarray(vector, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ShapeError(f"feature vectors must be non-empty 1-d, got shape {v.shape}")
        if dim is None:
            dim = v.size
        elif v.size != dim:
            raise ShapeError(
                f"feature vector for {category!r} has {v.size} dimensions, expected {dim}"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"feature vector for {category!r} contains non-finite values")
        grouped.setdefault(str(category), []).append(v)
    if not grouped:
        raise DegenerateInputError("no feature rows to fit")
    labels = tuple(sorted(grouped))
    for label in labels:
        if len(grouped[label]) < 2:
            raise InsufficientDataError(
                f"category {label!r} has {len(grouped[label])} feature sample(s); "
                "need at least 2 to estimate a std"
            )
    mean = np.array([np.mean(grouped[c], axis=0) for c in labels])
    std = np.array([np.std(grouped[c], axis=0, ddof=1) for c in labels])
    counts = np.array([len(grouped[c]) for c in labels])
    return FeatureStats(labels, mean, np.maximum(std, STD_FLOOR), counts)


def parse_features_csv(path: str | Path) -> list[tuple[str, np.ndarray]]:
    """Parse a features CSV with header category,f0,f1,...,f{d-1}."""
    name = str(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{name}: file is empty, expected a category,f0,... header") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header != ["category"] + [f"f{i}" for i in range(d)]:
            raise FormatError(
                f"{name}: row 1: bad header {','.join(header)!r}; expected "
                "'category,f0,f1,...' with consecutive dimension columns"
            )
        rows: list[tuple[str, np.ndarray]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise FormatError(f"{name}: row {lineno}: expected {d + 1} columns, got {len(row)}")
            category = row[0].strip()
            if not category:
                raise ValidationError(f"{name}: row {lineno}: empty category id")
            values = np.empty(d)
            for i, token in enumerate(row[1:]):
                try:
                    values[i] = float(token)
                except ValueError:
                    raise ParseError(
                        f"{name}: row {lineno}, column 'f{i}': cannot parse {token!r} as a number"
                    ) from None
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"{name}: row {lineno}: non-finite feature value")
            rows.append((category, values))
    return rows


def counts_from_features(rows: Iterable[tuple[str, np.ndarray]]) -> dict[str, int]:
    """Image counts per category derived from feature rows."""
    return dict(Counter(category for category, _ in rows))


def gaussian_ovl(mean1, std1, mean2, std2):
    """Overlap coefficient of two normal densities: the shared area under min(pdf1, pdf2).

    With equal stds this is 2 Phi(-|mu1-mu2| / (2 sigma)). Otherwise the
    densities cross exactly twice; the overlap is assembled from normal
    CDF segments split at the two crossing points, which come from the
    numerically stable form of the quadratic obtained by equating the
    log densities. Accepts scalars or broadcastable arrays.
    """
    m1, s1, m2, s2 = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (mean1, std1, mean2, std2))
    )
    scalar_in = m1.ndim == 0
    m1, s1, m2, s2 = np.atleast_1d(m1, s1, m2, s2)
    if not all(np.all(np.isfinite(a)) for a in (m1, s1, m2, s2)):
        raise ValidationError("overlap coefficient inputs must be finite")
    if np.any(s1 <= 0.0) or np.any(s2 <= 0.0):
        raise ValidationError("overlap coefficient requires positive stds")

    equal = s1 == s2
    ovl_equal = 2.0 * ndtr(-np.abs(m1 - m2) / (2.0 * s1))

    # Order each pair so density 1 is the narrow one: it is the smaller
    # density in both tails, the wider one is smaller between the roots.
    swap = s1 > s2
    a1 = np.where(swap, m2, m1)
    b1 = np.where(swap, s2, s1)
    a2 = np.where(swap, m1, m2)
    b2 = np.where(swap, s1, s2)
    b2 = np.where(equal, 2.0 * b1, b2)  # placeholder; equal entries use the closed form

    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        qa = 0.5 / (b1 * b1) - 0.5 / (b2 * b2)
        qb = a2 / (b2 * b2) - a1 / (b1 * b1)
        qc = 0.5 * (a1 * a1) / (b1 * b1) - 0.5 * (a2 * a2) / (b2 * b2) + np.log(b1 / b2)
        disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
        q = -0.5 * (qb + np.where(qb >= 0.0, 1.0, -1.0) * np.sqrt(disc))
        root_a = q / qa
        root_b = qc / np.where(q == 0.0, 1.0, q)
        lo = np.minimum(root_a, root_b)
        hi = np.maximum(root_a, root_b)
        ovl_unequal = (
            ndtr((lo - a1) / b1)
            + (ndtr((hi - a2) / b2) - ndtr((lo - a2) / b2))
            + (1.0 - ndtr((hi - a1) / b1))
        )

    out = np.clip(np.where(equal, ovl_equal, ovl_unequal), 0.0, 1.0)
    return float(out[0]) if scalar_in else out.reshape(np.broadcast_shapes(
        np.shape(mean1), np.shape(std1), np.shape(mean2), np.shape(std2)
    ))


def visual_similarity_matrix(stats: FeatureStats) -> SimilarityMatrix:
    """Visual similarity: per-dimension Gaussian overlap averaged over dimensions.

    Entries are clamped to [1e-6, 1] because fully separated categories
    otherwise underflow to an exact zero.
    """
    k = len(stats.labels)
    if k < 2:
        raise DegenerateInputError(f"similarity needs at least 2 categories, got {k}")
    values = np.ones((k, k))
    for j in range(k):
        for l in range(j + 1, k):
            per_dim = gaussian_ovl(stats.mean[j], stats.std[j], stats.mean[l], stats.std[l])
            entry = min(1.0, max(float(np.mean(per_dim)), VISUAL_FLOOR))
            values[j, l] = entry
            values[l, j] = entry
    return SimilarityMatrix(
        stats.labels,
        values,
        provenance={
            "domains": ["visual"],
            "weights": None,
            "clamps": {"floor": VISUAL_FLOOR, "ceiling": 1.0},
            "aggregation": "arithmetic mean of per-dimension overlap",
        },
    )


def combine_similarity(first: SimilarityMatrix, second: SimilarityMatrix) -> SimilarityMatrix:
    """Equal-weight harmonic mean of two similarity matrices: 2ab / (a + b)."""
    if first.labels != second.labels:
        raise AlignmentError(
            "cannot combine similarity matrices over different category sets: "
            f"{len(first.labels)} labels vs {len(second.labels)} labels"
        )
    a, b = first.values, second.values
    values = 2.0 * a * b / (a + b)
    floors = [
        m.provenance.get("clamps", {}).get("floor")
        for m in (first, second)
        if isinstance(m.provenance.get("clamps"), dict)
    ]
    floors = [f for f in floors if f is not None]
    provenance = {
        "domains": list(first.provenance.get("domains", [])) + list(second.provenance.get("domains", [])),
        "weights": [1.0, 1.0],
        "clamps": {"floor": min(floors), "ceiling": 1.0} if floors else {},
        "fusion": "equal-weight harmonic mean",
    }
    return SimilarityMatrix(first.labels, values, provenance)
