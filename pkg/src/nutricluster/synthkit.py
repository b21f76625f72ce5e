"""Deterministic synthetic data generators.

generate_planted_dataset builds a category universe with known cluster
structure in both feature space and nutrient space, rendered in the
same file formats the rest of the package consumes. Group feature
centers are drawn with a per-dimension scale equal to the separation so
that every feature dimension carries group signal (the visual
similarity averages per-dimension overlaps, so signal confined to one
axis would wash out).

Nutrient centers are spaced so the inter-class energy spread lands near
the ~100 kcal magnitude seen in real category tables. By default the
nutrient profile follows the visual group; setting nutrient_levels
decouples the two by assigning profiles round-robin within each group,
which plants structure that visual features alone cannot see.

generate_confusion_log simulates a classifier at a fixed error rate,
either confusing categories only within their cluster ("better
mistakes") or uniformly across the menu.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .clustering import Cluster, Hierarchy
from .errors import AlignmentError, ConfigurationError, ValidationError
from .evaluation import PREDICTIONS_HEADER, PredictionRow
from .nutrient_data import (
    COUNTS_HEADER,
    ITEM_HEADER,
    CategoryTable,
    FoodItem,
    aggregate_categories,
)

# Per-level nutrient profile: base + level * step for
# (energy kcal, carbohydrate g, fat g, protein g).
NUTRIENT_BASE = np.array([150.0, 8.0, 4.0, 5.0])
NUTRIENT_STEP = np.array([120.0, 12.0, 8.0, 6.0])

CONFUSION_MODES = ("within_cluster", "uniform")


@dataclass(frozen=True)
class PlantedConfig:
    """Parameters of a planted-cluster instance.

    Feature space: `groups` centers `separation` apart, category means
    jittered by `spread` inside each group, and `images_per_category`
    samples per category at noise `sample_noise`. Nutrient space: one
    profile per group (or per level when `nutrient_levels` is set),
    jittered by `nutrient_jitter` in units of the profile step / 60.
    """

    groups: int = 4
    per_group: int = 5
    dim: int = 8
    separation: float = 10.0
    spread: float = 0.5
    sample_noise: float = 2.0
    images_per_category: int = 25
    nutrient_jitter: float = 1.0
    nutrient_levels: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.groups < 2:
            raise ConfigurationError("at least two planted groups are required")
        if self.per_group < 1:
            raise ConfigurationError("per_group must be at least 1")
        if self.dim < 1:
            raise ConfigurationError("dim must be at least 1")
        if self.images_per_category < 1:
            raise ConfigurationError("images_per_category must be at least 1")
        if self.spread < 0 or self.sample_noise <= 0:
            raise ConfigurationError("spread must be >= 0 and sample_noise > 0")
        if not self.separation > self.spread:
            raise ConfigurationError(
                "separation must exceed spread for a recoverable instance"
            )
        if self.nutrient_jitter < 0:
            raise ConfigurationError("nutrient_jitter must be non-negative")
        if self.nutrient_levels is not None and not (
            2 <= self.nutrient_levels <= self.per_group
        ):
            raise ConfigurationError(
                "nutrient_levels must be between 2 and per_group"
            )


def _render_csv(header, rows) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


@dataclass
class PlantedDataset:
    """A generated instance plus its serialized artifacts."""

    config: PlantedConfig
    table: CategoryTable
    items: tuple[FoodItem, ...]
    feature_rows: list[tuple[str, np.ndarray]]
    nutrient_csv: str
    counts_csv: str
    features_csv: str
    expected_partition: tuple[tuple[str, ...], ...]
    group_of: dict[str, int] = field(default_factory=dict)
    level_of: dict[str, int] = field(default_factory=dict)

    def ground_truth_json_obj(self) -> dict:
        return {
            "partition": [list(group) for group in self.expected_partition],
            "groups": dict(self.group_of),
            "levels": dict(self.level_of),
        }


def generate_planted_dataset(config: PlantedConfig) -> PlantedDataset:
    """Draw a planted instance; the same config yields bitwise-equal output."""
    rng = np.random.default_rng(config.seed)
    group_centers = rng.normal(0.0, config.separation, size=(config.groups, config.dim))
    jitter_scale = config.nutrient_jitter * NUTRIENT_STEP / 60.0

    items: list[FoodItem] = []
    counts: dict[str, int] = {}
    feature_rows: list[tuple[str, np.ndarray]] = []
    group_of: dict[str, int] = {}
    level_of: dict[str, int] = {}
    for g in range(config.groups):
        for j in range(config.per_group):
            label = f"g{g:02d}c{j:02d}"
            level = g if config.nutrient_levels is None else j % config.nutrient_levels
            group_of[label] = g
            level_of[label] = level
            nutrients = NUTRIENT_BASE + level * NUTRIENT_STEP + rng.normal(size=4) * jitter_scale
            nutrients = np.maximum(nutrients, 0.0)
            items.append(FoodItem(f"{label}_00", label, tuple(float(v) for v in nutrients)))
            counts[label] = config.images_per_category
            mean = group_centers[g] + rng.normal(0.0, config.spread, size=config.dim)
            samples = mean + rng.normal(0.0, config.sample_noise,
                                        size=(config.images_per_category, config.dim))
            feature_rows.extend((label, sample) for sample in samples)

    table = aggregate_categories(items, counts)
    partition = tuple(
        tuple(sorted(label for label, g in group_of.items() if g == group))
        for group in range(config.groups)
    )
    nutrient_csv = _render_csv(
        ITEM_HEADER,
        [[item.food_code, item.category, *[str(v) for v in item.nutrients]] for item in items],
    )
    counts_csv = _render_csv(COUNTS_HEADER, [[label, counts[label]] for label in table.labels])
    features_header = ["category", *[f"f{i}" for i in range(config.dim)]]
    features_csv = _render_csv(
        features_header,
        [[label, *[str(float(v)) for v in vector]] for label, vector in feature_rows],
    )
    return PlantedDataset(
        config=config,
        table=table,
        items=tuple(items),
        feature_rows=feature_rows,
        nutrient_csv=nutrient_csv,
        counts_csv=counts_csv,
        features_csv=features_csv,
        expected_partition=partition,
        group_of=group_of,
        level_of=level_of,
    )


def hierarchy_from_partition(partition) -> Hierarchy:
    """Wrap a plain partition (iterable of member groups) as a Hierarchy.

    Each group's lexicographically smallest member stands in as the
    exemplar; clusters are ordered by exemplar as usual.
    """
    groups = [tuple(sorted(group)) for group in partition]
    if not groups or any(not group for group in groups):
        raise ValidationError("partition must consist of non-empty groups")
    groups.sort(key=lambda members: members[0])
    clusters = tuple(
        Cluster(id=i, exemplar=members[0], members=members)
        for i, members in enumerate(groups)
    )
    return Hierarchy(clusters=clusters, config={"source": "ground_truth"},
                     converged=True, iterations=0)


def render_predictions_csv(rows) -> str:
    """Prediction log rows as CSV text (the same format parse/write use)."""
    return _render_csv(PREDICTIONS_HEADER, [list(row) for row in rows])


def generate_confusion_log(
    table: CategoryTable,
    hierarchy: Hierarchy,
    error_rate: float,
    mode: str,
    seed: int = 0,
) -> list[PredictionRow]:
    """Simulate a classifier's prediction log at a fixed error rate.

    One sample is drawn per image. A sample is wrong with probability
    error_rate; a wrong prediction is drawn uniformly from the true
    category's other cluster members (within_cluster) or from all other
    categories (uniform). In within_cluster mode a singleton cluster
    leaves no wrong choice, so those samples stay correct.
    """
    if mode not in CONFUSION_MODES:
        raise ConfigurationError(f"unknown confusion mode {mode!r}; expected one of {CONFUSION_MODES}")
    if not np.isfinite(error_rate) or not 0.0 <= error_rate <= 1.0:
        raise ValidationError("error rate must lie in [0, 1]")
    table_labels = set(table.labels)
    hierarchy_labels = set(hierarchy.labels())
    if table_labels != hierarchy_labels:
        missing = sorted(table_labels - hierarchy_labels)
        extra = sorted(hierarchy_labels - table_labels)
        raise AlignmentError(
            f"hierarchy does not partition the table (missing {missing}, extra {extra})"
        )
    if int(np.sum(table.image_counts)) == 0:
        raise ValidationError("table has no images to sample predictions from")

    alternatives: dict[str, tuple[str, ...]] = {}
    for cluster in hierarchy.clusters:
        for label in cluster.members:
            if mode == "within_cluster":
                alternatives[label] = tuple(m for m in cluster.members if m != label)
            else:
                alternatives[label] = tuple(m for m in table.labels if m != label)

    rng = np.random.default_rng(seed)
    log: list[PredictionRow] = []
    for label, count in zip(table.labels, table.image_counts):
        options = alternatives[label]
        for i in range(int(count)):
            predicted = label
            if options and rng.random() < error_rate:
                predicted = options[rng.integers(len(options))]
            log.append(PredictionRow(f"{label}#{i:04d}", label, predicted))
    return log
